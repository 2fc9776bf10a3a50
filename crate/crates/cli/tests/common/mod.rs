//! Helpers for driving the compiled binary in integration tests.
// Each test binary compiles this module separately and uses its own subset.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

/// The binary under test, with the output-root env var cleared so tests are
/// insensitive to the caller's environment.
pub fn amps() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_amps"));
    c.env_remove("AMPS_OUT_ROOT");
    c
}

pub fn run_ok(args: &[String]) -> Output {
    let out = amps().args(args).output().expect("spawn amps");
    assert!(
        out.status.success(),
        "amps {args:?} failed ({:?}):\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn run_expecting(args: &[String], want_code: i32) -> Output {
    let out = amps().args(args).output().expect("spawn amps");
    assert_eq!(
        out.status.code(),
        Some(want_code),
        "amps {args:?}:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn args(parts: &[&str]) -> Vec<String> {
    parts.iter().map(|s| s.to_string()).collect()
}

pub fn read_bytes(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

pub fn read_text(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&read_text(path))
        .unwrap_or_else(|e| panic!("parse {}: {e}", path.display()))
}

/// A corpus small enough that every command over it finishes in well under a
/// second, while keeping all three splits non-trivial.
pub fn tiny_corpus_flags() -> Vec<String> {
    args(&[
        "--corpus.n_train=20",
        "--corpus.n_valid=5",
        "--corpus.n_test=5",
        "--corpus.frame_dim=8",
    ])
}

/// A model sized for test speed; widths chosen so every sublayer is present.
pub fn tiny_model_flags() -> Vec<String> {
    args(&[
        "--model.d_model=16",
        "--model.adapter_dim=8",
        "--model.ffn_dim=32",
        "--model.n_heads=2",
        "--model.n_speech_layers=1",
        "--model.n_text_layers=1",
        "--model.n_decoder_layers=1",
        "--model.max_seq_len=96",
    ])
}

/// Generates the tiny corpus into `dir` and returns the flags later commands
/// need to read it back.
pub fn gen_tiny(dir: &Path) -> Vec<String> {
    let mut a = args(&["gen"]);
    a.push(format!("--out.dir={}", dir.display()));
    a.extend(tiny_corpus_flags());
    run_ok(&a);
    data_flags(dir)
}

pub fn data_flags(dir: &Path) -> Vec<String> {
    vec![
        format!("--data.manifest={}", dir.join("corpus.manifest.jsonl").display()),
        format!("--data.vocab={}", dir.join("vocab.json").display()),
    ]
}

/// `amps train` into `out`, reading the corpus described by `data`.
pub fn train_tiny(out: &Path, data: &[String], extra: &[&str]) -> PathBuf {
    let mut a = args(&["train"]);
    a.push(format!("--out.dir={}", out.display()));
    a.extend_from_slice(data);
    a.extend(tiny_model_flags());
    a.extend(args(&["--train.epochs=2", "--train.batch_size=8"]));
    a.extend(args(extra));
    run_ok(&a);
    out.join("checkpoint_final.amps")
}
