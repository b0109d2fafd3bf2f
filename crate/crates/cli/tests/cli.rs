//! End-to-end checks of the `vsegan` binary: subcommand behavior,
//! determinism of generated trees, and the documented exit codes
//! (0 success, 2 usage, 3 contract, 4 integrity).

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vsegan"))
}

fn work_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("vsegan_cli_{name}_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

/// Order-independent digest of every file under a directory.
fn tree_digest(root: &Path) -> u64 {
    fn walk(dir: &Path, files: &mut Vec<PathBuf>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(&p, files);
            } else {
                files.push(p);
            }
        }
    }
    let mut files = Vec::new();
    walk(root, &mut files);
    files.sort();
    let mut h: u64 = 0xcbf29ce484222325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    };
    for f in &files {
        eat(f.strip_prefix(root).unwrap().to_string_lossy().as_bytes());
        eat(&std::fs::read(f).unwrap());
    }
    h
}

fn synth_corpus(dir: &Path, n: (usize, usize, usize), seed: u64) {
    let out = run(bin().args([
        "synth-data",
        "--out",
        dir.to_str().unwrap(),
        "--train",
        &n.0.to_string(),
        "--val",
        &n.1.to_string(),
        "--test",
        &n.2.to_string(),
        "--seed",
        &seed.to_string(),
    ]));
    assert_eq!(code(&out), 0, "synth-data failed: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_data_counts_determinism_and_usage_error() {
    let dir = work_dir("synth");
    synth_corpus(&dir.join("a"), (6, 2, 2), 5);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("a/train.json")).unwrap()).unwrap();
    assert_eq!(manifest["entries"].as_array().unwrap().len(), 6);
    let val: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("a/val.json")).unwrap()).unwrap();
    assert_eq!(val["entries"].as_array().unwrap().len(), 2);

    synth_corpus(&dir.join("b"), (6, 2, 2), 5);
    assert_eq!(tree_digest(&dir.join("a")), tree_digest(&dir.join("b")), "same seed, same tree");

    let out = run(bin().args(["synth-data", "--train", "3"]));
    assert_eq!(code(&out), 2, "missing --out must be a usage error");
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn default_config_and_validation() {
    let out = run(bin().args(["train", "--print-default-config"]));
    assert_eq!(code(&out), 0);
    let cfg: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(cfg["lr"], 1e-4);
    assert_eq!(cfg["epochs"], 70);
    assert_eq!(cfg["batch_size"], 8);
    assert_eq!(cfg["lambda"], 100.0);

    let dir = work_dir("badcfg");
    let path = dir.join("bad.json");
    std::fs::write(&path, r#"{"lambda": -1.0}"#).unwrap();
    let out = run(bin().args(["train", "--config", path.to_str().unwrap()]));
    assert_eq!(code(&out), 3, "negative lambda is a config validation error");
    assert!(String::from_utf8_lossy(&out.stderr).contains("lambda"));

    std::fs::write(&path, r#"{"lambda": 100.0, "turbo": true}"#).unwrap();
    let out = run(bin().args(["train", "--config", path.to_str().unwrap()]));
    assert_eq!(code(&out), 3, "unknown config keys are rejected");
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn train_enhance_evaluate_round_trip() {
    let dir = work_dir("pipeline");
    let corpus = dir.join("corpus");
    synth_corpus(&corpus, (4, 2, 2), 9);

    let cfg_path = dir.join("cfg.json");
    std::fs::write(
        &cfg_path,
        format!(
            r#"{{
  "epochs": 2,
  "batch_size": 4,
  "width_scale": 6,
  "seed": 7,
  "train_manifest": "{}",
  "val_manifest": "{}",
  "out_dir": "{}"
}}"#,
            corpus.join("train.json").display(),
            corpus.join("val.json").display(),
            dir.join("run").display()
        ),
    )
    .unwrap();
    let out = run(bin().args(["train", "--config", cfg_path.to_str().unwrap()]));
    assert_eq!(code(&out), 0, "train failed: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("config train"), "resolved config is echoed");
    let metrics = std::fs::read_to_string(dir.join("run/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3, "header + one row per epoch");

    let ckpt = dir.join("run/ckpt_epoch_0002.vsgn");
    // ids in the test split start at seed*1_000_000 + 600_000
    let test_id = "utt_9600000";
    let wav = corpus.join(format!("audio/{test_id}.wav"));
    let frames = corpus.join(format!("frames/{test_id}"));
    let enhanced = dir.join("enhanced.wav");
    let out = run(bin().args([
        "enhance",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--wav",
        wav.to_str().unwrap(),
        "--frames",
        frames.to_str().unwrap(),
        "--out",
        enhanced.to_str().unwrap(),
    ]));
    assert_eq!(code(&out), 0, "enhance failed: {}", String::from_utf8_lossy(&out.stderr));
    // 1.05 s input truncates to 5 whole segments = 1.0 s = 16000 samples
    let bytes = std::fs::read(&enhanced).unwrap();
    assert_eq!(bytes.len(), 44 + 2 * 16000, "16-bit mono wav of 16000 samples");

    let out = run(bin().args([
        "enhance",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--wav",
        wav.to_str().unwrap(),
        "--frames",
        dir.join("nonexistent").to_str().unwrap(),
        "--out",
        enhanced.to_str().unwrap(),
    ]));
    assert_eq!(code(&out), 3, "missing frames dir is a contract violation");

    let csv = dir.join("eval.csv");
    let out = run(bin().args([
        "evaluate",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--manifest",
        corpus.join("test.json").to_str().unwrap(),
        "--snr",
        "-5,0",
        "--out",
        csv.to_str().unwrap(),
    ]));
    assert_eq!(code(&out), 0, "evaluate failed: {}", String::from_utf8_lossy(&out.stderr));
    let rows = std::fs::read_to_string(&csv).unwrap();
    // header + |manifest| x |snr| x 2 conditions
    assert_eq!(rows.lines().count(), 1 + 2 * 2 * 2);
    assert!(rows.lines().nth(1).unwrap().contains("-5"));

    let out = run(bin().args([
        "evaluate",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--manifest",
        corpus.join("test.json").to_str().unwrap(),
        "--snr",
        "five,0",
        "--out",
        csv.to_str().unwrap(),
    ]));
    assert_eq!(code(&out), 2, "malformed snr list is a usage error");

    // corrupted checkpoint -> integrity exit code
    let mut corrupt = std::fs::read(&ckpt).unwrap();
    let mid = corrupt.len() / 2;
    corrupt[mid] ^= 0x01;
    let bad = dir.join("bad.vsgn");
    std::fs::write(&bad, &corrupt).unwrap();
    let out = run(bin().args([
        "enhance",
        "--ckpt",
        bad.to_str().unwrap(),
        "--wav",
        wav.to_str().unwrap(),
        "--frames",
        frames.to_str().unwrap(),
        "--out",
        enhanced.to_str().unwrap(),
    ]));
    assert_eq!(code(&out), 4, "corrupted checkpoint is an integrity error");

    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn export_spec_writes_80_row_pgm() {
    let dir = work_dir("spec");
    let corpus = dir.join("corpus");
    synth_corpus(&corpus, (1, 1, 1), 3);
    let wav = corpus.join("audio/utt_3000000.wav");
    let pgm = dir.join("spec.pgm");
    let out = run(bin().args([
        "export-spec",
        "--wav",
        wav.to_str().unwrap(),
        "--out",
        pgm.to_str().unwrap(),
    ]));
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let bytes = std::fs::read(&pgm).unwrap();
    let header = String::from_utf8_lossy(&bytes[..20]);
    // 1.05 s at hop 160: floor((16800 - 640)/160) + 1 = 102 frames
    assert!(header.starts_with("P5\n102 80\n255\n"), "header was {header:?}");
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn gradcheck_exits_zero_within_budget() {
    let t0 = Instant::now();
    let out = run(bin().args(["gradcheck", "--scale", "8"]));
    let secs = t0.elapsed().as_secs_f64();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().filter(|l| l.starts_with("PASS")).count() >= 17);
    assert!(!stdout.contains("FAIL"));
    assert!(secs < 60.0, "gradcheck took {secs:.1} s (budget 60 s)");
}
