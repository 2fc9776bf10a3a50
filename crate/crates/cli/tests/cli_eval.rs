//! Evaluation and report rendering through the binary: row counts, single
//! versus comparison shapes, significance output, and artifact re-rendering.

mod common;

use common::*;
use tempfile::TempDir;

/// One generated corpus plus two short trainings, shared by the tests below.
struct Fixture {
    _tmp: TempDir,
    data: Vec<String>,
    ck_a: std::path::PathBuf,
    ck_b: std::path::PathBuf,
    root: std::path::PathBuf,
}

fn fixture() -> Fixture {
    let tmp = TempDir::new().unwrap();
    let data = gen_tiny(&tmp.path().join("corpus"));
    let ck_a = train_tiny(&tmp.path().join("a"), &data, &["--mode", "asr", "--train.epochs=1"]);
    let ck_b = train_tiny(&tmp.path().join("b"), &data, &["--mode", "amps", "--train.epochs=3"]);
    let root = tmp.path().to_path_buf();
    Fixture { _tmp: tmp, data, ck_a, ck_b, root }
}

fn eval_cmd(f: &Fixture, out: &std::path::Path, extra: &[&str], checkpoints: &[&std::path::Path]) -> Vec<String> {
    let mut cmd = args(&["eval"]);
    cmd.push(format!("--out.dir={}", out.display()));
    cmd.extend_from_slice(&f.data);
    cmd.extend(args(extra));
    for ck in checkpoints {
        cmd.push(ck.display().to_string());
    }
    cmd
}

#[test]
fn single_system_covers_the_split_and_omits_deltas() {
    let f = fixture();
    let out = f.root.join("eval_one");
    run_ok(&eval_cmd(&f, &out, &["--eval.label_a=baseline"], &[&f.ck_a]));

    let report = read_json(&out.join("eval_report.json"));
    assert_eq!(report["n"].as_u64().unwrap(), 5, "one row per test utterance");
    assert_eq!(report["rows"].as_array().unwrap().len(), 5);
    assert!(report.get("delta_all").is_none(), "single-system output has no deltas");
    assert!(report.get("mapsswe").is_none());

    let rows = read_text(&out.join("eval_rows.jsonl"));
    assert_eq!(rows.lines().count(), 5);
    let csv = read_text(&out.join("eval_rows.csv"));
    assert_eq!(csv.lines().count(), 6, "header plus one line per utterance");
    assert!(csv.starts_with("id,ref_len,errors,subs,ins,dels,wer,meteor"));

    let text = read_text(&out.join("eval_report.txt"));
    assert!(text.contains("system: baseline"));
    assert!(!text.contains("B-A"));
}

#[test]
fn comparison_reports_deltas_and_significance() {
    let f = fixture();
    let out = f.root.join("eval_two");
    run_ok(&eval_cmd(
        &f,
        &out,
        &["--eval.hard_n=3", "--eval.label_a=plain", "--eval.label_b=joint"],
        &[&f.ck_a, &f.ck_b],
    ));

    let cmp = read_json(&out.join("comparison.json"));
    assert_eq!(cmp["n"].as_u64().unwrap(), 5);
    assert_eq!(cmp["hard_n"].as_u64().unwrap(), 3);
    assert_eq!(cmp["hard_ids"].as_array().unwrap().len(), 3);
    let p = cmp["mapsswe"]["p"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p), "p = {p}");
    for key in ["all_a", "all_b", "hard_a", "hard_b", "delta_all", "delta_hard"] {
        assert!(cmp.get(key).is_some(), "comparison must carry `{key}`");
    }

    let text = read_text(&out.join("comparison.txt"));
    assert!(text.contains("baseline A = plain, system B = joint"));
    assert!(text.contains("matched pairs: z ="));
    assert!(text.contains("significant at p < 0.05:"));

    assert_eq!(read_text(&out.join("eval_rows_a.jsonl")).lines().count(), 5);
    assert_eq!(read_text(&out.join("eval_rows_b.jsonl")).lines().count(), 5);
}

#[test]
fn split_selection_and_beam_width_are_respected() {
    let f = fixture();
    let out = f.root.join("eval_valid");
    run_ok(&eval_cmd(&f, &out, &["--eval.split=valid", "--eval.beam_width=2"], &[&f.ck_a]));
    let report = read_json(&out.join("eval_report.json"));
    assert_eq!(report["n"].as_u64().unwrap(), 5, "the validation split has 5 utterances");
}

#[test]
fn incompatible_checkpoint_is_a_data_error() {
    let f = fixture();
    // A second corpus with a different frame width cannot feed the model.
    let narrow = f.root.join("narrow");
    let mut cmd = args(&["gen", "--corpus.frame_dim=12"]);
    cmd.push(format!("--out.dir={}", narrow.display()));
    cmd.extend(args(&["--corpus.n_train=4", "--corpus.n_valid=2", "--corpus.n_test=2"]));
    run_ok(&cmd);

    let mut cmd = args(&["eval"]);
    cmd.push(format!("--out.dir={}", f.root.join("eval_bad").display()));
    cmd.extend(data_flags(&narrow));
    cmd.push(f.ck_a.display().to_string());
    let out = run_expecting(&cmd, 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("frame width"));
}

#[test]
fn eval_usage_errors_exit_2() {
    let f = fixture();
    // No checkpoints.
    let cmd = eval_cmd(&f, &f.root.join("none"), &[], &[]);
    run_expecting(&cmd, 2);
    // Three checkpoints.
    let cmd = eval_cmd(&f, &f.root.join("three"), &[], &[&f.ck_a, &f.ck_b, &f.ck_a]);
    run_expecting(&cmd, 2);
    // Zero beam width.
    let cmd = eval_cmd(&f, &f.root.join("width"), &["--eval.beam_width=0"], &[&f.ck_a]);
    run_expecting(&cmd, 2);
}

#[test]
fn report_rerenders_saved_artifacts() {
    let f = fixture();
    let out = f.root.join("eval_two");
    run_ok(&eval_cmd(&f, &out, &["--eval.hard_n=2"], &[&f.ck_a, &f.ck_b]));
    let single = f.root.join("eval_one");
    run_ok(&eval_cmd(&f, &single, &[], &[&f.ck_a]));

    let shown = run_ok(&args(&[
        "report",
        &out.join("comparison.json").display().to_string(),
        "--eval.label_a=old",
        "--eval.label_b=new",
    ]));
    let text = String::from_utf8_lossy(&shown.stdout);
    assert!(text.contains("baseline A = old, system B = new"));
    assert!(text.contains("significant at p < 0.05:"));

    let shown = run_ok(&args(&[
        "report",
        &single.join("eval_report.json").display().to_string(),
    ]));
    assert!(String::from_utf8_lossy(&shown.stdout).contains("wer"));

    // Garbage input is a data error; missing files too.
    let junk = f.root.join("junk.json");
    std::fs::write(&junk, "{\"what\": 1}").unwrap();
    run_expecting(&args(&["report", &junk.display().to_string()]), 3);
    run_expecting(&args(&["report", "/does/not/exist.json"]), 3);
    // And exactly one path is required.
    run_expecting(&args(&["report"]), 2);
}
