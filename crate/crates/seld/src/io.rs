//! File formats: 4-channel WAV audio, flat binary tensors and the encoded
//! target-tensor container. All binary payloads are little-endian; writes go
//! through a temp file and rename so partial output never lands in place.

use std::path::Path;

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::features::{AudioClip, FOA_CHANNELS};
use crate::repr::{ReprFormat, TargetTensor};
use crate::scalar::Scalar;

const TENSOR_MAGIC: &[u8; 4] = b"STNS";
const TARGET_MAGIC: &[u8; 4] = b"STGT";
const FORMAT_VERSION: u16 = 1;

const DTYPE_F32: u8 = 4;
const DTYPE_F64: u8 = 8;

fn dtype_of<S: Scalar>() -> u8 {
    match std::mem::size_of::<S>() {
        4 => DTYPE_F32,
        _ => DTYPE_F64,
    }
}

/// Writes `bytes` to `path` atomically (temp file + rename).
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Writes a FOA clip as a 32-bit float WAV (ACN channel order, interleaved).
pub fn write_wav<S: Scalar>(path: &Path, clip: &AudioClip<S>) -> Result<()> {
    let spec = hound::WavSpec {
        channels: FOA_CHANNELS as u16,
        sample_rate: clip.sample_rate(),
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let tmp = path.with_extension("tmp");
    {
        let mut writer =
            hound::WavWriter::create(&tmp, spec).map_err(|e| wav_error(&tmp, e))?;
        for i in 0..clip.num_samples() {
            for ch in 0..FOA_CHANNELS {
                writer
                    .write_sample(clip.samples()[(ch, i)].as_f64() as f32)
                    .map_err(|e| wav_error(&tmp, e))?;
            }
        }
        writer.finalize().map_err(|e| wav_error(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Reads a 4-channel WAV (PCM 16/24/32-bit or 32-bit float).
pub fn read_wav<S: Scalar>(path: &Path) -> Result<AudioClip<S>> {
    let mut reader = hound::WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    if spec.channels as usize != FOA_CHANNELS {
        return Err(Error::AudioFormat(format!(
            "{} has {} channels, FOA needs {FOA_CHANNELS}",
            path.display(),
            spec.channels
        )));
    }
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from).map_err(|e| wav_error(path, e)))
            .collect::<Result<_>>()?,
        hound::SampleFormat::Int => {
            let scale = match spec.bits_per_sample {
                16 => 1.0 / 32768.0,
                24 => 1.0 / 8388608.0,
                32 => 1.0 / 2147483648.0,
                other => {
                    return Err(Error::AudioFormat(format!(
                        "{}: unsupported PCM width {other}",
                        path.display()
                    )))
                }
            };
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale).map_err(|e| wav_error(path, e)))
                .collect::<Result<_>>()?
        }
    };
    let frames = interleaved.len() / FOA_CHANNELS;
    if frames == 0 {
        return Err(Error::AudioFormat(format!("{} is empty", path.display())));
    }
    let mut samples = ndarray::Array2::zeros((FOA_CHANNELS, frames));
    for (i, value) in interleaved.iter().enumerate() {
        samples[(i % FOA_CHANNELS, i / FOA_CHANNELS)] = S::cast(*value);
    }
    AudioClip::new(samples, spec.sample_rate)
}

fn wav_error(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::AudioFormat(format!("{}: {other}", path.display())),
    }
}

struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    fn new() -> Self {
        Self { buf: Vec::new() }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn scalars<S: Scalar, I: IntoIterator<Item = S>>(&mut self, values: I) {
        if dtype_of::<S>() == DTYPE_F32 {
            for v in values {
                self.buf
                    .extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
        } else {
            for v in values {
                self.buf.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
    }
}

pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(buf: &'a [u8], path: &'a Path) -> Self {
        Self { buf, pos: 0, path }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::AudioFormat(format!(
                "{}: truncated file",
                self.path.display()
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn scalars<S: Scalar>(&mut self, dtype: u8, count: usize) -> Result<Vec<S>> {
        let mut out = Vec::with_capacity(count);
        match dtype {
            DTYPE_F32 => {
                let raw = self.take(4 * count)?;
                for chunk in raw.chunks_exact(4) {
                    out.push(S::cast(f64::from(f32::from_le_bytes(
                        chunk.try_into().unwrap(),
                    ))));
                }
            }
            DTYPE_F64 => {
                let raw = self.take(8 * count)?;
                for chunk in raw.chunks_exact(8) {
                    out.push(S::cast(f64::from_le_bytes(chunk.try_into().unwrap())));
                }
            }
            other => {
                return Err(Error::AudioFormat(format!(
                    "{}: unknown dtype code {other}",
                    self.path.display()
                )))
            }
        }
        Ok(out)
    }
}

/// Dumps a 3-D tensor (e.g. extracted features) with a dims/dtype header.
pub fn write_tensor3<S: Scalar>(path: &Path, tensor: &Array3<S>) -> Result<()> {
    let mut w = ByteWriter::new();
    w.buf.extend_from_slice(TENSOR_MAGIC);
    w.u16(FORMAT_VERSION);
    w.u8(dtype_of::<S>());
    w.u8(3);
    for d in tensor.shape() {
        w.u64(*d as u64);
    }
    w.scalars(tensor.iter().copied());
    write_atomic(path, &w.buf)
}

/// Reads a tensor written by [`write_tensor3`].
pub fn read_tensor3<S: Scalar>(path: &Path) -> Result<Array3<S>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = ByteReader::new(&bytes, path);
    if r.take(4)? != TENSOR_MAGIC {
        return Err(Error::AudioFormat(format!(
            "{}: not a tensor file",
            path.display()
        )));
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(Error::AudioFormat(format!(
            "{}: unsupported tensor version {version}",
            path.display()
        )));
    }
    let dtype = r.u8()?;
    let ndim = r.u8()?;
    if ndim != 3 {
        return Err(Error::AudioFormat(format!(
            "{}: expected a 3-D tensor, got {ndim}-D",
            path.display()
        )));
    }
    let dims = [r.u64()? as usize, r.u64()? as usize, r.u64()? as usize];
    let data = r.scalars::<S>(dtype, dims[0] * dims[1] * dims[2])?;
    Array3::from_shape_vec(dims, data)
        .map_err(|e| Error::AudioFormat(format!("{}: {e}", path.display())))
}

/// Serializes an encoded/predicted [`TargetTensor`] (per-branch blocks).
pub fn write_target_tensor<S: Scalar>(path: &Path, tensor: &TargetTensor<S>) -> Result<()> {
    let mut w = ByteWriter::new();
    w.buf.extend_from_slice(TARGET_MAGIC);
    w.u16(FORMAT_VERSION);
    w.u8(dtype_of::<S>());
    w.u8(tensor.format().code());
    w.u64(tensor.num_classes() as u64);
    w.u64(tensor.num_frames() as u64);
    w.u8(tensor.branches().len() as u8);
    for branch in tensor.branches() {
        w.u64(branch.nrows() as u64);
        w.u64(branch.ncols() as u64);
        w.scalars(branch.iter().copied());
    }
    write_atomic(path, &w.buf)
}

/// Reads a tensor written by [`write_target_tensor`].
pub fn read_target_tensor<S: Scalar>(path: &Path) -> Result<TargetTensor<S>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = ByteReader::new(&bytes, path);
    if r.take(4)? != TARGET_MAGIC {
        return Err(Error::AudioFormat(format!(
            "{}: not a target-tensor file",
            path.display()
        )));
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(Error::AudioFormat(format!(
            "{}: unsupported version {version}",
            path.display()
        )));
    }
    let dtype = r.u8()?;
    let format = ReprFormat::from_code(r.u8()?)?;
    let num_classes = r.u64()? as usize;
    let _num_frames = r.u64()? as usize;
    let branch_count = r.u8()? as usize;
    let mut branches = Vec::with_capacity(branch_count);
    for _ in 0..branch_count {
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        let data = r.scalars::<S>(dtype, rows * cols)?;
        branches.push(
            ndarray::Array2::from_shape_vec((rows, cols), data)
                .map_err(|e| Error::AudioFormat(format!("{}: {e}", path.display())))?,
        );
    }
    TargetTensor::new(format, num_classes, branches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn wav_round_trip_is_exact_for_f32_payloads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.wav");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // Values representable in f32 so the float WAV round trip is bit-exact.
        let samples =
            Array2::from_shape_fn((4, 480), |_| f64::from(rng.gen_range(-1.0_f32..1.0)));
        let clip = AudioClip::<f64>::new(samples, 24000).unwrap();
        write_wav(&path, &clip).unwrap();
        let back = read_wav::<f64>(&path).unwrap();
        assert_eq!(back.sample_rate(), 24000);
        assert_eq!(back.samples(), clip.samples());
    }

    #[test]
    fn read_wav_rejects_wrong_channel_count() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stereo.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 24000,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for _ in 0..64 {
            w.write_sample(0.1_f32).unwrap();
        }
        w.finalize().unwrap();
        assert!(read_wav::<f64>(&path).is_err());
    }

    #[test]
    fn tensor3_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("feat.tns");
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let tensor = Array3::from_shape_fn((5, 7, 3), |_| rng.gen_range(-4.0..4.0));
        write_tensor3::<f64>(&path, &tensor).unwrap();
        let back = read_tensor3::<f64>(&path).unwrap();
        assert_eq!(back, tensor);
    }

    #[test]
    fn target_tensor_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pred.stt");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for format in ReprFormat::ALL {
            let mut tensor = TargetTensor::<f64>::zeros(format, 3, 6);
            for q in 0..format.branch_count() {
                tensor
                    .branch_mut(q)
                    .mapv_inplace(|_| rng.gen_range(-2.0..2.0));
            }
            write_target_tensor(&path, &tensor).unwrap();
            let back = read_target_tensor::<f64>(&path).unwrap();
            assert_eq!(back, tensor, "{}", format.name());
        }
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.tns");
        std::fs::write(&path, b"XXXXjunk").unwrap();
        assert!(read_tensor3::<f64>(&path).is_err());
        assert!(read_target_tensor::<f64>(&path).is_err());
        assert!(read_tensor3::<f64>(&dir.path().join("missing.tns")).is_err());
    }
}
