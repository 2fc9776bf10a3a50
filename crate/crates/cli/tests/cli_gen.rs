//! Corpus generation through the binary: determinism, reporting, error
//! handling, and output-root resolution.

mod common;

use common::*;
use tempfile::TempDir;

#[test]
fn generation_is_byte_reproducible_per_seed() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let c = tmp.path().join("c");
    for dir in [&a, &b] {
        let mut cmd = args(&["gen"]);
        cmd.push(format!("--out.dir={}", dir.display()));
        cmd.extend(tiny_corpus_flags());
        run_ok(&cmd);
    }
    let mut cmd = args(&["gen"]);
    cmd.push(format!("--out.dir={}", c.display()));
    cmd.extend(tiny_corpus_flags());
    cmd.push("--corpus.seed=8".to_string());
    run_ok(&cmd);

    for name in ["corpus.manifest.jsonl", "corpus.manifest.frames", "vocab.json", "gen_summary.json"]
    {
        assert_eq!(
            read_bytes(&a.join(name)),
            read_bytes(&b.join(name)),
            "{name} differs between identical runs"
        );
    }
    assert_ne!(
        read_bytes(&a.join("corpus.manifest.jsonl")),
        read_bytes(&c.join("corpus.manifest.jsonl")),
        "a different seed must change the corpus"
    );
}

#[test]
fn summary_reports_mixture_and_filter_counters() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("run");
    let mut cmd = args(&["gen"]);
    cmd.push(format!("--out.dir={}", dir.display()));
    cmd.extend(tiny_corpus_flags());
    run_ok(&cmd);

    let summary = read_json(&dir.join("gen_summary.json"));
    let total = summary["total"].as_u64().unwrap();
    let spont = summary["spontaneous"].as_u64().unwrap();
    assert_eq!(total, 30);
    assert_eq!(
        summary["spont_frac_observed"].as_f64().unwrap(),
        spont as f64 / total as f64
    );
    assert!(summary["drift_rejections"].is_u64());
    assert_eq!(
        summary["train"].as_u64().unwrap()
            + summary["valid"].as_u64().unwrap()
            + summary["test"].as_u64().unwrap(),
        total
    );
}

#[test]
fn invalid_spec_fails_before_any_file_is_written() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("never");
    let mut cmd = args(&["gen", "--corpus.spont_frac=1.5"]);
    cmd.push(format!("--out.dir={}", dir.display()));
    let out = run_expecting(&cmd, 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("spont_frac"));
    assert!(!dir.exists(), "a rejected spec must not create the output directory");
}

#[test]
fn resolved_config_echo_captures_overrides() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("run");
    let mut cmd = args(&["gen", "--corpus.drift_threshold=0.25"]);
    cmd.push(format!("--out.dir={}", dir.display()));
    cmd.extend(tiny_corpus_flags());
    run_ok(&cmd);

    let echo = read_text(&dir.join("resolved_gen.cfg"));
    assert!(echo.contains("corpus.drift_threshold = 0.25"));
    assert!(echo.contains("corpus.n_train = 20"));
    // Defaults that were not overridden appear too: the echo is complete.
    assert!(echo.contains("train.mode = asr"));
}

#[test]
fn config_file_values_lose_to_flags() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("lab.cfg");
    std::fs::write(
        &cfg,
        "# comment lines and blanks are skipped\n\ncorpus.n_train = 11\ncorpus.seed = 3\n",
    )
    .unwrap();
    let dir = tmp.path().join("run");
    let mut cmd = args(&["gen"]);
    cmd.push(format!("--config={}", cfg.display()));
    cmd.push("--corpus.n_train=12".to_string());
    cmd.push(format!("--out.dir={}", dir.display()));
    run_ok(&cmd);

    let echo = read_text(&dir.join("resolved_gen.cfg"));
    assert!(echo.contains("corpus.n_train = 12"), "flag must override the file");
    assert!(echo.contains("corpus.seed = 3"), "file must override the default");
}

#[test]
fn env_var_supplies_the_default_output_root() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path().join("root");
    let mut cmd = amps();
    cmd.env("AMPS_OUT_ROOT", &root);
    cmd.arg("gen").args(tiny_corpus_flags());
    let out = cmd.output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(root.join("corpus.manifest.jsonl").exists());
    assert!(root.join("gen_summary.json").exists());
}

#[test]
fn malformed_config_files_are_usage_errors() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("bad.cfg");
    std::fs::write(&cfg, "corpus.n_train 11\n").unwrap();
    let mut cmd = args(&["gen"]);
    cmd.push(format!("--config={}", cfg.display()));
    let out = run_expecting(&cmd, 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.cfg:1"));

    std::fs::write(&cfg, "corpus.frobnicate = 1\n").unwrap();
    let mut cmd = args(&["gen"]);
    cmd.push(format!("--config={}", cfg.display()));
    let out = run_expecting(&cmd, 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("corpus.frobnicate"));
}
