//! End-to-end checks of the `seld` binary: exit codes, determinism, and a
//! small simulate -> augment -> extract -> train -> predict -> evaluate run.

use std::path::Path;
use std::process::{Command, Output};

fn seld(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seld"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        stdout(out),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn score_reproduces_published_composites() {
    let out = seld(&["score", "--f1", "0.44", "--doae", "16.7", "--rde", "0.32"]);
    assert_success(&out);
    let text = stdout(&out);
    let value: f64 = text
        .trim()
        .strip_prefix("seld_score=")
        .expect("seld_score line")
        .parse()
        .unwrap();
    assert!((value - 0.324).abs() < 5e-4, "{text}");

    let out = seld(&["score", "--f1", "0.62", "--rde", "0.26"]);
    assert_success(&out);
    let value: f64 = stdout(&out)
        .trim()
        .strip_prefix("sed_sde_score=")
        .expect("sed_sde_score line")
        .parse()
        .unwrap();
    assert!((value - 0.320).abs() < 5e-4);
}

#[test]
fn score_validates_inputs() {
    let out = seld(&["score", "--f1", "1.5", "--doae", "10", "--rde", "0.2"]);
    assert_eq!(out.status.code(), Some(1));
    let out = seld(&["score", "--f1", "0.5"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_flags_and_bad_set_keys_fail_fast() {
    let out = seld(&["score", "--f1", "0.5", "--rde", "0.2", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    let out = seld(&["--set", "no.such.key=1", "score", "--f1", "0.5", "--rde", "0.2"]);
    assert_eq!(out.status.code(), Some(1));
    let out = seld(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn missing_input_gives_io_exit_code() {
    let out = seld(&["--config", "/nonexistent/seld.conf", "score", "--f1", "1", "--rde", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    entries.sort();
    entries
        .into_iter()
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect()
}

#[test]
fn simulate_is_bit_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out_dir in [&a, &b] {
        let out = seld(&[
            "--set",
            "sim.duration=1.0",
            "simulate",
            "--out",
            out_dir.to_str().unwrap(),
            "--clips",
            "3",
            "--seed",
            "7",
        ]);
        assert_success(&out);
    }
    assert_eq!(tree_bytes(&a), tree_bytes(&b));
}

#[test]
fn evaluate_of_identical_dirs_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = seld(&[
        "--set",
        "sim.duration=1.5",
        "simulate",
        "--out",
        data.to_str().unwrap(),
        "--clips",
        "2",
        "--seed",
        "3",
    ]);
    assert_success(&out);

    let out = seld(&[
        "evaluate",
        "--gt",
        data.to_str().unwrap(),
        "--pred",
        data.to_str().unwrap(),
        "--format",
        "kv",
    ]);
    assert_success(&out);
    let text = stdout(&out);
    let field = |name: &str| -> f64 {
        text.lines()
            .find_map(|l| l.strip_prefix(&format!("{name}=")))
            .unwrap_or_else(|| panic!("missing {name} in {text}"))
            .parse()
            .unwrap()
    };
    assert_eq!(field("f1"), 1.0);
    assert!(field("doae_deg") < 1e-5);
    assert_eq!(field("rde"), 0.0);
    assert!(field("seld_score") < 1e-5);
    assert_eq!(field("fp"), 0.0);
    assert_eq!(field("fn"), 0.0);
}

#[test]
fn pipeline_smoke_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let aug = dir.path().join("aug");
    let feats = dir.path().join("feats");
    let preds = dir.path().join("preds");
    let ckpt = dir.path().join("model.ckpt");

    // Tiny everything: this is a wiring check, not a training-quality check.
    let small: &[&str] = &[
        "--set",
        "sim.duration=1.0",
        "--set",
        "sim.events=2",
        "--set",
        "sim.classes=2",
        "--set",
        "stft.n_mels=16",
        "--set",
        "model.conv_channels=4",
        "--set",
        "model.pool_factors=2:2",
        "--set",
        "model.seq_hidden=8",
        "--set",
        "model.head_hidden=8",
        "--set",
        "train.steps=5",
        "--set",
        "train.batch=2",
    ];

    let mut args: Vec<&str> = small.to_vec();
    args.extend(["simulate", "--out", data.to_str().unwrap(), "--clips", "2", "--seed", "1"]);
    assert_success(&seld(&args));

    let mut args: Vec<&str> = small.to_vec();
    args.extend([
        "augment",
        "--input",
        data.to_str().unwrap(),
        "--out",
        aug.to_str().unwrap(),
        "--variants",
        "0,4",
    ]);
    assert_success(&seld(&args));
    assert!(aug.join("clip_0000_acs0.wav").is_file());
    assert!(aug.join("clip_0000_acs4.csv").is_file());

    let mut args: Vec<&str> = small.to_vec();
    args.extend(["extract", "--input", data.to_str().unwrap(), "--out", feats.to_str().unwrap()]);
    assert_success(&seld(&args));
    assert!(feats.join("clip_0000.tns").is_file());

    let mut args: Vec<&str> = small.to_vec();
    args.extend([
        "train",
        "--data",
        data.to_str().unwrap(),
        "--format",
        "sed-doa",
        "--out",
        ckpt.to_str().unwrap(),
        "--seed",
        "2",
    ]);
    assert_success(&seld(&args));
    assert!(ckpt.is_file());
    assert!(ckpt.with_extension("log").is_file());

    let mut args: Vec<&str> = small.to_vec();
    args.extend([
        "predict",
        "--model",
        ckpt.to_str().unwrap(),
        "--input",
        data.to_str().unwrap(),
        "--out",
        preds.to_str().unwrap(),
        "--dump-tensors",
    ]);
    assert_success(&seld(&args));
    assert!(preds.join("clip_0000.csv").is_file());
    assert!(preds.join("clip_0000.stt").is_file());

    // An undertrained model may predict nothing; evaluation must still run,
    // with the DOA-variant flag dropping the distance requirement.
    let mut args: Vec<&str> = small.to_vec();
    args.extend([
        "evaluate",
        "--gt",
        data.to_str().unwrap(),
        "--pred",
        preds.to_str().unwrap(),
        "--no-distance",
        "--format",
        "kv",
    ]);
    assert_success(&seld(&args));
}

#[test]
fn predict_on_empty_directory_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let empty = dir.path().join("empty");
    let preds = dir.path().join("preds");
    std::fs::create_dir_all(&empty).unwrap();

    // Train a throwaway checkpoint first.
    let small: &[&str] = &[
        "--set",
        "sim.duration=1.0",
        "--set",
        "sim.classes=2",
        "--set",
        "stft.n_mels=16",
        "--set",
        "model.conv_channels=4",
        "--set",
        "model.pool_factors=2:2",
        "--set",
        "model.seq_hidden=8",
        "--set",
        "model.head_hidden=8",
        "--set",
        "train.steps=2",
        "--set",
        "train.batch=1",
    ];
    let mut args: Vec<&str> = small.to_vec();
    args.extend(["simulate", "--out", data.to_str().unwrap(), "--clips", "1", "--seed", "5"]);
    assert_success(&seld(&args));
    let ckpt = dir.path().join("m.ckpt");
    let mut args: Vec<&str> = small.to_vec();
    args.extend([
        "train",
        "--data",
        data.to_str().unwrap(),
        "--format",
        "sed-sde",
        "--out",
        ckpt.to_str().unwrap(),
    ]);
    assert_success(&seld(&args));

    let out = seld(&[
        "predict",
        "--model",
        ckpt.to_str().unwrap(),
        "--input",
        empty.to_str().unwrap(),
        "--out",
        preds.to_str().unwrap(),
    ]);
    assert_success(&out);
    assert!(stdout(&out).contains("predicted 0"));
}
