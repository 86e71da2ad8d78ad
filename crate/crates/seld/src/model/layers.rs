//! Network building blocks with cached forward state and hand-written
//! backward passes. Every layer accumulates parameter gradients in place and
//! exposes them through `for_each_param` in a fixed visit order.

use ndarray::{Array1, Array2, Array3, Array4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Callback over (values, grads) of every parameter tensor.
pub type ParamFn<'a, S> = &'a mut dyn FnMut(&mut [S], &mut [S]);

fn uniform_fan_in<S: Scalar>(rng: &mut ChaCha8Rng, fan_in: usize) -> S {
    let bound = 1.0 / (fan_in as f64).sqrt();
    S::cast(rng.gen_range(-bound..bound))
}

fn missing_cache(layer: &str) -> Error {
    Error::validation(format!("{layer}: backward called without a cached forward pass"))
}

/// 3x3 same-padding convolution over (channel, time, frequency) maps.
pub struct Conv2d<S: Scalar> {
    weight: Array4<S>, // (c_out, c_in, 3, 3)
    bias: Array1<S>,
    w_grad: Array4<S>,
    b_grad: Array1<S>,
    cached_input: Option<Array3<S>>,
}

impl<S: Scalar> Conv2d<S> {
    pub fn new(c_in: usize, c_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = c_in * 9;
        let weight = Array4::from_shape_fn((c_out, c_in, 3, 3), |_| uniform_fan_in(rng, fan_in));
        Self {
            weight,
            bias: Array1::zeros(c_out),
            w_grad: Array4::zeros((c_out, c_in, 3, 3)),
            b_grad: Array1::zeros(c_out),
            cached_input: None,
        }
    }

    pub fn forward(&mut self, x: &Array3<S>) -> Array3<S> {
        let (c_in, t_len, f_len) = x.dim();
        let c_out = self.weight.dim().0;
        debug_assert_eq!(c_in, self.weight.dim().1);
        let mut y = Array3::zeros((c_out, t_len, f_len));
        for o in 0..c_out {
            for t in 0..t_len {
                for f in 0..f_len {
                    let mut acc = self.bias[o];
                    for i in 0..c_in {
                        for kt in 0..3 {
                            let ti = t + kt;
                            if ti < 1 || ti > t_len {
                                continue;
                            }
                            for kf in 0..3 {
                                let fi = f + kf;
                                if fi < 1 || fi > f_len {
                                    continue;
                                }
                                acc += self.weight[(o, i, kt, kf)] * x[(i, ti - 1, fi - 1)];
                            }
                        }
                    }
                    y[(o, t, f)] = acc;
                }
            }
        }
        self.cached_input = Some(x.clone());
        y
    }

    pub fn backward(&mut self, gy: &Array3<S>) -> Result<Array3<S>> {
        let x = self.cached_input.as_ref().ok_or_else(|| missing_cache("conv2d"))?;
        let (c_in, t_len, f_len) = x.dim();
        let c_out = self.weight.dim().0;
        let mut gx = Array3::zeros((c_in, t_len, f_len));
        for o in 0..c_out {
            for t in 0..t_len {
                for f in 0..f_len {
                    let g = gy[(o, t, f)];
                    if g == S::zero() {
                        continue;
                    }
                    self.b_grad[o] += g;
                    for i in 0..c_in {
                        for kt in 0..3 {
                            let ti = t + kt;
                            if ti < 1 || ti > t_len {
                                continue;
                            }
                            for kf in 0..3 {
                                let fi = f + kf;
                                if fi < 1 || fi > f_len {
                                    continue;
                                }
                                self.w_grad[(o, i, kt, kf)] += g * x[(i, ti - 1, fi - 1)];
                                gx[(i, ti - 1, fi - 1)] += g * self.weight[(o, i, kt, kf)];
                            }
                        }
                    }
                }
            }
        }
        Ok(gx)
    }

    pub fn for_each_param(&mut self, f: ParamFn<S>) {
        f(
            self.weight.as_slice_mut().unwrap(),
            self.w_grad.as_slice_mut().unwrap(),
        );
        f(
            self.bias.as_slice_mut().unwrap(),
            self.b_grad.as_slice_mut().unwrap(),
        );
    }
}

/// Elementwise max(0, x) on 3-D maps.
pub struct Relu3<S: Scalar> {
    mask: Option<Array3<bool>>,
    _phantom: std::marker::PhantomData<S>,
}

impl<S: Scalar> Relu3<S> {
    pub fn new() -> Self {
        Self {
            mask: None,
            _phantom: std::marker::PhantomData,
        }
    }

    pub fn forward(&mut self, mut x: Array3<S>) -> Array3<S> {
        let mask = x.mapv(|v| v > S::zero());
        x.mapv_inplace(|v| v.max(S::zero()));
        self.mask = Some(mask);
        x
    }

    pub fn backward(&mut self, mut gy: Array3<S>) -> Result<Array3<S>> {
        let mask = self.mask.as_ref().ok_or_else(|| missing_cache("relu"))?;
        for (g, &m) in gy.iter_mut().zip(mask.iter()) {
            if !m {
                *g = S::zero();
            }
        }
        Ok(gy)
    }
}

/// Mean pooling by integer factors over the (time, frequency) axes.
/// Trailing rows/columns that do not fill a window are dropped.
pub struct AvgPool2d<S: Scalar> {
    pub time_factor: usize,
    pub freq_factor: usize,
    input_dim: Option<(usize, usize, usize)>,
    _phantom: std::marker::PhantomData<S>,
}

impl<S: Scalar> AvgPool2d<S> {
    pub fn new(time_factor: usize, freq_factor: usize) -> Self {
        Self {
            time_factor: time_factor.max(1),
            freq_factor: freq_factor.max(1),
            input_dim: None,
            _phantom: std::marker::PhantomData,
        }
    }

    pub fn forward(&mut self, x: &Array3<S>) -> Array3<S> {
        let (c, t_len, f_len) = x.dim();
        let (pt, pf) = (self.time_factor, self.freq_factor);
        let (t_out, f_out) = (t_len / pt, f_len / pf);
        let scale = S::one() / S::cast((pt * pf) as f64);
        let mut y = Array3::zeros((c, t_out, f_out));
        for ch in 0..c {
            for t in 0..t_out {
                for f in 0..f_out {
                    let mut acc = S::zero();
                    for dt in 0..pt {
                        for df in 0..pf {
                            acc += x[(ch, t * pt + dt, f * pf + df)];
                        }
                    }
                    y[(ch, t, f)] = acc * scale;
                }
            }
        }
        self.input_dim = Some((c, t_len, f_len));
        y
    }

    pub fn backward(&mut self, gy: &Array3<S>) -> Result<Array3<S>> {
        let (c, t_len, f_len) = self.input_dim.ok_or_else(|| missing_cache("avg_pool"))?;
        let (pt, pf) = (self.time_factor, self.freq_factor);
        let scale = S::one() / S::cast((pt * pf) as f64);
        let mut gx = Array3::zeros((c, t_len, f_len));
        let (_, t_out, f_out) = gy.dim();
        for ch in 0..c {
            for t in 0..t_out {
                for f in 0..f_out {
                    let g = gy[(ch, t, f)] * scale;
                    for dt in 0..pt {
                        for df in 0..pf {
                            gx[(ch, t * pt + dt, f * pf + df)] = g;
                        }
                    }
                }
            }
        }
        Ok(gx)
    }
}

/// Pools an arbitrary time length down to a fixed frame count by averaging
/// over `floor(j*T/out) .. floor((j+1)*T/out)` segments, then flattens the
/// channel/frequency axes: `(C, T, F) -> (out, C*F)`.
pub struct SegmentPoolFlatten<S: Scalar> {
    input_dim: Option<(usize, usize, usize)>,
    out_frames: usize,
    _phantom: std::marker::PhantomData<S>,
}

impl<S: Scalar> SegmentPoolFlatten<S> {
    pub fn new() -> Self {
        Self {
            input_dim: None,
            out_frames: 0,
            _phantom: std::marker::PhantomData,
        }
    }

    fn bounds(t_in: usize, t_out: usize, j: usize) -> (usize, usize) {
        (j * t_in / t_out, (j + 1) * t_in / t_out)
    }

    pub fn forward(&mut self, x: &Array3<S>, out_frames: usize) -> Result<Array2<S>> {
        let (c, t_len, f_len) = x.dim();
        if t_len < out_frames || out_frames == 0 {
            return Err(Error::shape(format!(
                "cannot pool {t_len} feature frames down to {out_frames} label frames"
            )));
        }
        let mut y = Array2::zeros((out_frames, c * f_len));
        for j in 0..out_frames {
            let (lo, hi) = Self::bounds(t_len, out_frames, j);
            let scale = S::one() / S::cast((hi - lo) as f64);
            for ch in 0..c {
                for f in 0..f_len {
                    let mut acc = S::zero();
                    for t in lo..hi {
                        acc += x[(ch, t, f)];
                    }
                    y[(j, ch * f_len + f)] = acc * scale;
                }
            }
        }
        self.input_dim = Some((c, t_len, f_len));
        self.out_frames = out_frames;
        Ok(y)
    }

    pub fn backward(&mut self, gy: &Array2<S>) -> Result<Array3<S>> {
        let (c, t_len, f_len) = self.input_dim.ok_or_else(|| missing_cache("segment_pool"))?;
        let mut gx = Array3::zeros((c, t_len, f_len));
        for j in 0..self.out_frames {
            let (lo, hi) = Self::bounds(t_len, self.out_frames, j);
            let scale = S::one() / S::cast((hi - lo) as f64);
            for ch in 0..c {
                for f in 0..f_len {
                    let g = gy[(j, ch * f_len + f)] * scale;
                    for t in lo..hi {
                        gx[(ch, t, f)] += g;
                    }
                }
            }
        }
        Ok(gx)
    }
}

/// Fully connected layer applied per time step: `(T, in) -> (T, out)`.
pub struct Linear<S: Scalar> {
    weight: Array2<S>, // (out, in)
    bias: Array1<S>,
    w_grad: Array2<S>,
    b_grad: Array1<S>,
    cached_input: Option<Array2<S>>,
}

impl<S: Scalar> Linear<S> {
    pub fn new(dim_in: usize, dim_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let weight = Array2::from_shape_fn((dim_out, dim_in), |_| uniform_fan_in(rng, dim_in));
        Self {
            weight,
            bias: Array1::zeros(dim_out),
            w_grad: Array2::zeros((dim_out, dim_in)),
            b_grad: Array1::zeros(dim_out),
            cached_input: None,
        }
    }

    /// All-zero parameters: final head layers start at the activation origin.
    pub fn zeroed(dim_in: usize, dim_out: usize) -> Self {
        Self {
            weight: Array2::zeros((dim_out, dim_in)),
            bias: Array1::zeros(dim_out),
            w_grad: Array2::zeros((dim_out, dim_in)),
            b_grad: Array1::zeros(dim_out),
            cached_input: None,
        }
    }

    pub fn forward(&mut self, x: &Array2<S>) -> Array2<S> {
        let (t_len, dim_in) = x.dim();
        let dim_out = self.weight.nrows();
        debug_assert_eq!(dim_in, self.weight.ncols());
        let mut y = Array2::zeros((t_len, dim_out));
        for t in 0..t_len {
            for o in 0..dim_out {
                let mut acc = self.bias[o];
                for i in 0..dim_in {
                    acc += self.weight[(o, i)] * x[(t, i)];
                }
                y[(t, o)] = acc;
            }
        }
        self.cached_input = Some(x.clone());
        y
    }

    pub fn backward(&mut self, gy: &Array2<S>) -> Result<Array2<S>> {
        let x = self.cached_input.as_ref().ok_or_else(|| missing_cache("linear"))?;
        let (t_len, dim_in) = x.dim();
        let dim_out = self.weight.nrows();
        let mut gx = Array2::zeros((t_len, dim_in));
        for t in 0..t_len {
            for o in 0..dim_out {
                let g = gy[(t, o)];
                if g == S::zero() {
                    continue;
                }
                self.b_grad[o] += g;
                for i in 0..dim_in {
                    self.w_grad[(o, i)] += g * x[(t, i)];
                    gx[(t, i)] += g * self.weight[(o, i)];
                }
            }
        }
        Ok(gx)
    }

    pub fn for_each_param(&mut self, f: ParamFn<S>) {
        f(
            self.weight.as_slice_mut().unwrap(),
            self.w_grad.as_slice_mut().unwrap(),
        );
        f(
            self.bias.as_slice_mut().unwrap(),
            self.b_grad.as_slice_mut().unwrap(),
        );
    }
}

fn sigmoid<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

struct GruStepCache<S: Scalar> {
    x: Vec<S>,
    h_prev: Vec<S>,
    z: Vec<S>,
    r: Vec<S>,
    h_hat: Vec<S>,
}

/// Single-layer unidirectional gated recurrent unit: `(T, in) -> (T, H)`.
pub struct Gru<S: Scalar> {
    dim_in: usize,
    hidden: usize,
    // Gate weights, input-to-hidden (H, in) and hidden-to-hidden (H, H).
    w: [Array2<S>; 3], // z, r, h
    u: [Array2<S>; 3],
    b: [Array1<S>; 3],
    w_grad: [Array2<S>; 3],
    u_grad: [Array2<S>; 3],
    b_grad: [Array1<S>; 3],
    cache: Option<Vec<GruStepCache<S>>>,
}

impl<S: Scalar> Gru<S> {
    pub fn new(dim_in: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let w = std::array::from_fn(|_| {
            Array2::from_shape_fn((hidden, dim_in), |_| uniform_fan_in(rng, dim_in))
        });
        let u = std::array::from_fn(|_| {
            Array2::from_shape_fn((hidden, hidden), |_| uniform_fan_in(rng, hidden))
        });
        Self {
            dim_in,
            hidden,
            w,
            u,
            b: std::array::from_fn(|_| Array1::zeros(hidden)),
            w_grad: std::array::from_fn(|_| Array2::zeros((hidden, dim_in))),
            u_grad: std::array::from_fn(|_| Array2::zeros((hidden, hidden))),
            b_grad: std::array::from_fn(|_| Array1::zeros(hidden)),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array2<S>) -> Array2<S> {
        let (t_len, dim_in) = x.dim();
        debug_assert_eq!(dim_in, self.dim_in);
        let h_dim = self.hidden;
        let mut outputs = Array2::zeros((t_len, h_dim));
        let mut cache = Vec::with_capacity(t_len);
        let mut h_prev = vec![S::zero(); h_dim];

        for t in 0..t_len {
            let xt: Vec<S> = (0..dim_in).map(|i| x[(t, i)]).collect();
            let gate = |w: &Array2<S>, u: &Array2<S>, b: &Array1<S>, h: &[S]| -> Vec<S> {
                (0..h_dim)
                    .map(|o| {
                        let mut acc = b[o];
                        for i in 0..dim_in {
                            acc += w[(o, i)] * xt[i];
                        }
                        for i in 0..h_dim {
                            acc += u[(o, i)] * h[i];
                        }
                        acc
                    })
                    .collect()
            };
            let z: Vec<S> = gate(&self.w[0], &self.u[0], &self.b[0], &h_prev)
                .into_iter()
                .map(sigmoid)
                .collect();
            let r: Vec<S> = gate(&self.w[1], &self.u[1], &self.b[1], &h_prev)
                .into_iter()
                .map(sigmoid)
                .collect();
            let rh: Vec<S> = (0..h_dim).map(|i| r[i] * h_prev[i]).collect();
            let h_hat: Vec<S> = gate(&self.w[2], &self.u[2], &self.b[2], &rh)
                .into_iter()
                .map(|v| v.tanh())
                .collect();
            let h: Vec<S> = (0..h_dim)
                .map(|i| (S::one() - z[i]) * h_prev[i] + z[i] * h_hat[i])
                .collect();
            for (i, &v) in h.iter().enumerate() {
                outputs[(t, i)] = v;
            }
            cache.push(GruStepCache {
                x: xt,
                h_prev: h_prev.clone(),
                z,
                r,
                h_hat,
            });
            h_prev = h;
        }
        self.cache = Some(cache);
        outputs
    }

    pub fn backward(&mut self, gy: &Array2<S>) -> Result<Array2<S>> {
        let cache = self.cache.as_ref().ok_or_else(|| missing_cache("gru"))?;
        let t_len = cache.len();
        let h_dim = self.hidden;
        let dim_in = self.dim_in;
        let mut gx = Array2::zeros((t_len, dim_in));
        let mut dh_next = vec![S::zero(); h_dim];

        for t in (0..t_len).rev() {
            let step = &cache[t];
            let dh: Vec<S> = (0..h_dim).map(|i| gy[(t, i)] + dh_next[i]).collect();

            // Gate pre-activation gradients.
            let dz: Vec<S> = (0..h_dim)
                .map(|i| {
                    dh[i] * (step.h_hat[i] - step.h_prev[i])
                        * step.z[i]
                        * (S::one() - step.z[i])
                })
                .collect();
            let dh_hat: Vec<S> = (0..h_dim)
                .map(|i| dh[i] * step.z[i] * (S::one() - step.h_hat[i] * step.h_hat[i]))
                .collect();

            // Through the candidate state: U_h sees r (.) h_prev.
            let rh: Vec<S> = (0..h_dim).map(|i| step.r[i] * step.h_prev[i]).collect();
            let mut d_rh = vec![S::zero(); h_dim];
            for o in 0..h_dim {
                let g = dh_hat[o];
                if g == S::zero() {
                    continue;
                }
                self.b_grad[2][o] += g;
                for i in 0..dim_in {
                    self.w_grad[2][(o, i)] += g * step.x[i];
                }
                for i in 0..h_dim {
                    self.u_grad[2][(o, i)] += g * rh[i];
                    d_rh[i] += g * self.u[2][(o, i)];
                }
            }
            let dr: Vec<S> = (0..h_dim)
                .map(|i| d_rh[i] * step.h_prev[i] * step.r[i] * (S::one() - step.r[i]))
                .collect();

            let mut dh_prev: Vec<S> = (0..h_dim)
                .map(|i| dh[i] * (S::one() - step.z[i]) + d_rh[i] * step.r[i])
                .collect();

            for (gate, dg) in [(0, &dz), (1, &dr)] {
                for o in 0..h_dim {
                    let g = dg[o];
                    if g == S::zero() {
                        continue;
                    }
                    self.b_grad[gate][o] += g;
                    for i in 0..dim_in {
                        self.w_grad[gate][(o, i)] += g * step.x[i];
                    }
                    for i in 0..h_dim {
                        self.u_grad[gate][(o, i)] += g * step.h_prev[i];
                        dh_prev[i] += g * self.u[gate][(o, i)];
                    }
                }
            }

            for i in 0..dim_in {
                let mut acc = S::zero();
                for o in 0..h_dim {
                    acc += self.w[0][(o, i)] * dz[o]
                        + self.w[1][(o, i)] * dr[o]
                        + self.w[2][(o, i)] * dh_hat[o];
                }
                gx[(t, i)] = acc;
            }
            dh_next = dh_prev;
        }
        Ok(gx)
    }

    pub fn for_each_param(&mut self, f: ParamFn<S>) {
        for k in 0..3 {
            f(
                self.w[k].as_slice_mut().unwrap(),
                self.w_grad[k].as_slice_mut().unwrap(),
            );
            f(
                self.u[k].as_slice_mut().unwrap(),
                self.u_grad[k].as_slice_mut().unwrap(),
            );
            f(
                self.b[k].as_slice_mut().unwrap(),
                self.b_grad[k].as_slice_mut().unwrap(),
            );
        }
    }
}

/// Elementwise branch activation with cached outputs for the backward pass.
pub struct BranchActivation<S: Scalar> {
    kind: crate::repr::Activation,
    cached_output: Option<Array2<S>>,
}

impl<S: Scalar> BranchActivation<S> {
    pub fn new(kind: crate::repr::Activation) -> Self {
        Self {
            kind,
            cached_output: None,
        }
    }

    pub fn forward(&mut self, mut x: Array2<S>) -> Array2<S> {
        use crate::repr::Activation::*;
        match self.kind {
            Sigmoid => x.mapv_inplace(sigmoid),
            Tanh => x.mapv_inplace(|v| v.tanh()),
            ReLU => x.mapv_inplace(|v| v.max(S::zero())),
            Linear => {}
        }
        self.cached_output = Some(x.clone());
        x
    }

    pub fn backward(&mut self, gy: &Array2<S>) -> Result<Array2<S>> {
        use crate::repr::Activation::*;
        let y = self
            .cached_output
            .as_ref()
            .ok_or_else(|| missing_cache("activation"))?;
        let mut gx = gy.clone();
        match self.kind {
            Sigmoid => {
                for (g, &o) in gx.iter_mut().zip(y.iter()) {
                    *g = *g * o * (S::one() - o);
                }
            }
            Tanh => {
                for (g, &o) in gx.iter_mut().zip(y.iter()) {
                    *g = *g * (S::one() - o * o);
                }
            }
            ReLU => {
                for (g, &o) in gx.iter_mut().zip(y.iter()) {
                    if o <= S::zero() {
                        *g = S::zero();
                    }
                }
            }
            Linear => {}
        }
        Ok(gx)
    }
}

/// ReLU over sequence matrices, used between the two head FC layers.
pub struct Relu2<S: Scalar> {
    mask: Option<Array2<bool>>,
    _phantom: std::marker::PhantomData<S>,
}

impl<S: Scalar> Relu2<S> {
    pub fn new() -> Self {
        Self {
            mask: None,
            _phantom: std::marker::PhantomData,
        }
    }

    pub fn forward(&mut self, mut x: Array2<S>) -> Array2<S> {
        let mask = x.mapv(|v| v > S::zero());
        x.mapv_inplace(|v| v.max(S::zero()));
        self.mask = Some(mask);
        x
    }

    pub fn backward(&mut self, mut gy: Array2<S>) -> Result<Array2<S>> {
        let mask = self.mask.as_ref().ok_or_else(|| missing_cache("relu"))?;
        for (g, &m) in gy.iter_mut().zip(mask.iter()) {
            if !m {
                *g = S::zero();
            }
        }
        Ok(gy)
    }
}
