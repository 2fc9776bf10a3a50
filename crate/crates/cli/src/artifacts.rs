//! Artifact plumbing shared by the commands: fixed file names, deterministic
//! writers, data loading, and the sweep table renderer.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use amps_core::corpus::{read_manifest, Split, Utterance, Vocab};
use amps_core::error::{AmpsError, Result};
use amps_core::model::MultimodalModel;
use amps_core::train::{StepRecord, SweepReport};

use crate::config::RunPaths;

pub const GEN_SUMMARY_FILE: &str = "gen_summary.json";
pub const STEPS_FILE: &str = "steps.jsonl";
pub const CHECKPOINT_FINAL: &str = "checkpoint_final.amps";
pub const CHECKPOINT_BEST: &str = "checkpoint_best.amps";
pub const TRAIN_SUMMARY_FILE: &str = "train_summary.json";
pub const SWEEP_JSON: &str = "sweep.json";
pub const SWEEP_TXT: &str = "sweep.txt";
pub const CHECKPOINT_SELECTED: &str = "checkpoint_selected.amps";
pub const SWEEP_CANDIDATE_CHECKPOINT: &str = "checkpoint.amps";
pub const EVAL_REPORT_JSON: &str = "eval_report.json";
pub const EVAL_ROWS_JSONL: &str = "eval_rows.jsonl";
pub const EVAL_ROWS_CSV: &str = "eval_rows.csv";
pub const EVAL_REPORT_TXT: &str = "eval_report.txt";
pub const COMPARISON_JSON: &str = "comparison.json";
pub const COMPARISON_TXT: &str = "comparison.txt";

/// Per-command resolved-config echo, e.g. `resolved_train.cfg`.
pub fn resolved_cfg_name(command: &str) -> String {
    format!("resolved_{command}.cfg")
}

/// Subdirectory holding one sweep candidate's artifacts.
pub fn sweep_candidate_dir(index: usize, tau: f64) -> String {
    format!("tau_{index}_{tau}")
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    Ok(())
}

/// Pretty JSON with a trailing newline; byte-stable for a fixed value.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| AmpsError::data(format!("cannot serialize {}: {e}", path.display())))?;
    text.push('\n');
    write_text(path, &text)
}

/// One step record per line, in processing order.
pub fn write_steps(path: &Path, records: &[StepRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(
            &serde_json::to_string(r).map_err(|e| AmpsError::data(e.to_string()))?,
        );
        out.push('\n');
    }
    write_text(path, &out)
}

/// A corpus as read back from disk, with everything commands need to run.
pub struct LoadedCorpus {
    pub utts: Vec<Utterance>,
    pub frame_dim: usize,
    pub vocab: Vocab,
}

impl LoadedCorpus {
    pub fn split(&self, split: Split) -> Vec<Utterance> {
        self.utts.iter().filter(|u| u.split == split).cloned().collect()
    }
}

pub fn load_corpus(paths: &RunPaths) -> Result<LoadedCorpus> {
    let (utts, frame_dim) = read_manifest(&paths.manifest).map_err(|e| match e {
        AmpsError::Io(io) => {
            AmpsError::data(format!("cannot read manifest {}: {io}", paths.manifest.display()))
        }
        other => other,
    })?;
    let text = fs::read_to_string(&paths.vocab).map_err(|e| {
        AmpsError::data(format!("cannot read vocabulary {}: {e}", paths.vocab.display()))
    })?;
    let vocab = Vocab::from_json(&text)?;
    Ok(LoadedCorpus { utts, frame_dim, vocab })
}

pub fn load_checkpoint(path: &Path) -> Result<MultimodalModel> {
    let (model, _) = amps_core::model::checkpoint::load(path).map_err(map_checkpoint_io(path))?;
    Ok(model)
}

/// Missing checkpoint files surface as data errors, not raw I/O.
pub fn map_checkpoint_io(path: &Path) -> impl Fn(AmpsError) -> AmpsError + '_ {
    move |e| match e {
        AmpsError::Io(io) => {
            AmpsError::data(format!("cannot read checkpoint {}: {io}", path.display()))
        }
        other => other,
    }
}

/// The loaded model must fit the corpus it will be run against.
pub fn check_model_against_data(model: &MultimodalModel, data: &LoadedCorpus) -> Result<()> {
    if model.config.frame_dim != data.frame_dim {
        return Err(AmpsError::data(format!(
            "model frame width {} does not match manifest frame width {}",
            model.config.frame_dim, data.frame_dim
        )));
    }
    if model.config.vocab_size != data.vocab.len() {
        return Err(AmpsError::data(format!(
            "model vocabulary size {} does not match vocabulary file size {}",
            model.config.vocab_size,
            data.vocab.len()
        )));
    }
    Ok(())
}

/// Decode budget: explicit override, else longest reference plus slack,
/// always capped by the model's sequence limit.
pub fn decode_budget(requested: usize, utts: &[Utterance], max_seq_len: usize) -> usize {
    let auto = utts.iter().map(|u| u.transcript.len()).max().unwrap_or(8) + 4;
    let budget = if requested == 0 { auto } else { requested };
    budget.min(max_seq_len)
}

/// Fixed-width sweep table; the selected row is starred.
pub fn render_sweep(report: &SweepReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "threshold sweep over {} candidates (selected: tau = {})\n",
        report.entries.len(),
        report.selected_tau
    ));
    out.push_str("   tau        valid_wer   gate_rate   final_loss\n");
    for (i, e) in report.entries.iter().enumerate() {
        let mark = if i == report.selected_index { '*' } else { ' ' };
        out.push_str(&format!(
            "{mark}  {:<9} {:>9.4}  {:>9.4}  {:>11.4}\n",
            e.tau, e.valid_wer, e.gate_fire_rate, e.final_epoch_loss
        ));
    }
    out
}

/// `out_dir` plus a fixed artifact name.
pub fn under(out_dir: &Path, name: &str) -> PathBuf {
    out_dir.join(name)
}

// ─────────────────────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;
    use amps_core::train::SweepEntry;

    #[test]
    fn sweep_table_stars_the_selected_row() {
        let report = SweepReport {
            entries: vec![
                SweepEntry { tau: 3.2, valid_wer: 0.5, gate_fire_rate: 0.9, final_epoch_loss: 2.0 },
                SweepEntry { tau: 3.4, valid_wer: 0.4, gate_fire_rate: 0.7, final_epoch_loss: 2.1 },
            ],
            selected_tau: 3.4,
            selected_index: 1,
        };
        let table = render_sweep(&report);
        assert!(table.contains("selected: tau = 3.4"));
        let starred: Vec<&str> = table.lines().filter(|l| l.starts_with('*')).collect();
        assert_eq!(starred.len(), 1);
        assert!(starred[0].contains("3.4"));
    }

    #[test]
    fn decode_budget_caps_and_overrides() {
        let utt = |len: usize| Utterance {
            id: 0,
            kind: amps_core::corpus::UttKind::Read,
            split: Split::Test,
            transcript: vec![5; len],
            paraphrase: None,
            frames: vec![0.0; 4],
            noise_sigma: 0.1,
        };
        let utts = vec![utt(6), utt(9)];
        assert_eq!(decode_budget(0, &utts, 160), 13);
        assert_eq!(decode_budget(0, &utts, 10), 10);
        assert_eq!(decode_budget(7, &utts, 160), 7);
        assert_eq!(decode_budget(999, &utts, 160), 160);
    }

    #[test]
    fn candidate_dirs_and_echo_names_are_stable() {
        assert_eq!(sweep_candidate_dir(0, 3.2), "tau_0_3.2");
        assert_eq!(sweep_candidate_dir(3, f64::INFINITY), "tau_3_inf");
        assert_eq!(resolved_cfg_name("gen"), "resolved_gen.cfg");
    }
}
