//! Flat key-value configuration: a config file and `--section.key=value`
//! flags over one schema, merged as defaults < file < flags.
//!
//! The file format is line-oriented: `section.key = value` per line, blank
//! lines skipped, lines whose first non-space character is `#` skipped.
//! There is no quoting and no trailing-comment syntax, so values (paths in
//! particular) are taken verbatim after trimming.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use amps_core::corpus::{CorpusSpec, FrameProfile, ParaphraseMode, Sampling, Split};
use amps_core::error::{AmpsError, Result};
use amps_core::model::ModelConfig;
use amps_core::train::{Mode, PhaseTarget, TrainConfig};

/// Every knob the CLI understands: `(key, default, help)`. The schema is the
/// single source of truth — unknown keys are rejected wherever they appear.
pub const SCHEMA: &[(&str, &str, &str)] = &[
    ("corpus.n_train", "2000", "training utterances"),
    ("corpus.n_valid", "200", "validation utterances"),
    ("corpus.n_test", "300", "test utterances"),
    ("corpus.spont_frac", "0.3", "fraction drawn as spontaneous speech"),
    ("corpus.frame_dim", "16", "speech frame width"),
    ("corpus.sigma_read", "0.08", "noise sigma for read speech"),
    ("corpus.sigma_spont", "0.45", "noise sigma for spontaneous speech"),
    ("corpus.dropout_p", "0.1", "spontaneous frame-dropout probability"),
    ("corpus.filler_p", "0.05", "spontaneous filler-frame probability"),
    ("corpus.mode", "roundtrip", "paraphrase source: roundtrip | lexsub"),
    ("corpus.sampling", "nucleus:0.95", "roundtrip sampling: beam1 | topk:K | nucleus:P"),
    ("corpus.p_sub", "0.15", "lexsub per-word substitution probability"),
    ("corpus.drift_threshold", "0.3", "maximum admitted word-order drift"),
    ("corpus.max_attempts", "16", "paraphrase resampling attempts"),
    ("corpus.vocab_seed", "11", "vocabulary construction seed"),
    ("corpus.seed", "7", "corpus generation seed"),
    ("model.frame_dim", "0", "input frame width (0 = take from the manifest)"),
    ("model.d_model", "64", "residual stream width"),
    ("model.adapter_dim", "32", "adapter bottleneck width"),
    ("model.ffn_dim", "128", "feed-forward hidden width"),
    ("model.n_heads", "4", "attention heads"),
    ("model.n_speech_layers", "2", "speech encoder layers"),
    ("model.n_text_layers", "2", "text encoder layers"),
    ("model.n_decoder_layers", "2", "decoder layers"),
    ("model.conv_width", "3", "speech depthwise convolution width (odd)"),
    ("model.vocab_size", "0", "vocabulary size (0 = take from the vocab file)"),
    ("model.max_seq_len", "160", "longest supported sequence"),
    ("model.adapter_only", "false", "partition recorded in the checkpoint"),
    ("model.seed", "0", "parameter initialization seed"),
    ("train.mode", "asr", "asr | amps | amps-tau | weighted | seq-pretrain"),
    ("train.tau", "3.6", "gate threshold (inf and -inf are legal)"),
    ("train.weight_pivot", "3.6", "weighted mode: loss pivot"),
    ("train.weight_lo", "0.5", "weighted mode: lower clamp"),
    ("train.weight_hi", "2.0", "weighted mode: upper clamp"),
    ("train.epochs", "4", "total epochs, including epochs done before a resume"),
    ("train.batch_size", "16", "utterances per optimizer step"),
    ("train.learning_rate", "0.001", "Adam step size"),
    ("train.beta1", "0.9", "Adam first-moment decay"),
    ("train.beta2", "0.999", "Adam second-moment decay"),
    ("train.eps", "1e-8", "Adam denominator floor"),
    ("train.seed", "0", "shuffle seed"),
    ("train.adapter_only", "true", "update adapter parameters only"),
    ("train.update_text_encoder", "true", "allow text-encoder updates"),
    ("train.s2t_target", "transcript", "asr-mode speech target: transcript | paraphrase"),
    ("train.phase_targets", "transcript,transcript", "seq-pretrain speech targets, two entries"),
    ("train.phase_epochs", "2,2", "seq-pretrain epochs per phase, two entries"),
    ("train.resume", "", "checkpoint to continue from (empty = fresh start)"),
    ("train.init", "", "checkpoint whose weights seed the model; optimizer starts fresh and model.* is ignored"),
    ("train.stop_after", "0", "epochs to run in this invocation (0 = all remaining)"),
    ("sweep.grid", "3.2,3.4,3.6,3.8", "thresholds to try, comma-separated"),
    ("eval.split", "test", "split to score: train | valid | test"),
    ("eval.beam_width", "1", "beam width (1 = greedy)"),
    ("eval.max_len", "0", "decode budget (0 = longest reference + 4)"),
    ("eval.hard_n", "100", "hard-subset size for two-system comparisons"),
    ("eval.label_a", "A", "display label for the first system"),
    ("eval.label_b", "B", "display label for the second system"),
    ("data.manifest", "", "manifest to read (empty = <out.dir>/corpus.manifest.jsonl)"),
    ("data.vocab", "", "vocabulary to read (empty = <out.dir>/vocab.json)"),
    ("out.dir", "", "output directory (empty = $AMPS_OUT_ROOT, else ./amps-out)"),
];

/// Environment variable supplying the default output root.
pub const OUT_ROOT_ENV: &str = "AMPS_OUT_ROOT";

/// Fallback output directory when neither `out.dir` nor the env var is set.
pub const OUT_DIR_FALLBACK: &str = "amps-out";

/// Short aliases kept for the common sweep-scripting flags.
const FLAG_ALIASES: &[(&str, &str)] = &[("mode", "train.mode"), ("tau", "train.tau")];

/// The merged configuration. Keys are fixed by [`SCHEMA`]; values are the
/// raw strings last written, parsed on access.
#[derive(Clone, Debug)]
pub struct Settings {
    map: BTreeMap<String, String>,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            map: SCHEMA.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

impl Settings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.map.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(AmpsError::config(format!("unknown configuration key `{key}`"))),
        }
    }

    /// Overlays `section.key = value` lines from a config file.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            AmpsError::config(format!("cannot read config file {}: {e}", path.display()))
        })?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                AmpsError::config(format!(
                    "{}:{}: expected `section.key = value`, got `{line}`",
                    path.display(),
                    lineno + 1
                ))
            })?;
            self.set(key.trim(), value.trim()).map_err(|e| {
                AmpsError::config(format!("{}:{}: {e}", path.display(), lineno + 1))
            })?;
        }
        Ok(())
    }

    /// Applies one `--key=value` flag; `key` may be a [`FLAG_ALIASES`] name.
    pub fn apply_flag(&mut self, key: &str, value: &str) -> Result<()> {
        let key = FLAG_ALIASES
            .iter()
            .find(|(alias, _)| *alias == key)
            .map_or(key, |(_, full)| *full);
        self.set(key, value)
    }

    /// The fully resolved configuration, one sorted `key = value` line each.
    /// Written verbatim into the output directory before a command works.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.map {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn str_(&self, key: &str) -> &str {
        self.map.get(key).map(String::as_str).unwrap_or_else(|| {
            unreachable!("key `{key}` is in SCHEMA");
        })
    }

    pub fn usize_(&self, key: &str) -> Result<usize> {
        self.str_(key)
            .parse()
            .map_err(|_| bad_value(key, self.str_(key), "a non-negative integer"))
    }

    pub fn u64_(&self, key: &str) -> Result<u64> {
        self.str_(key)
            .parse()
            .map_err(|_| bad_value(key, self.str_(key), "a non-negative integer"))
    }

    pub fn f64_(&self, key: &str) -> Result<f64> {
        self.str_(key).parse().map_err(|_| bad_value(key, self.str_(key), "a number"))
    }

    pub fn bool_(&self, key: &str) -> Result<bool> {
        match self.str_(key) {
            "true" => Ok(true),
            "false" => Ok(false),
            other => Err(bad_value(key, other, "true or false")),
        }
    }

    pub fn f64_list(&self, key: &str) -> Result<Vec<f64>> {
        self.str_(key)
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|t| t.parse().map_err(|_| bad_value(key, t, "a number")))
            .collect()
    }
}

fn bad_value(key: &str, value: &str, wanted: &str) -> AmpsError {
    AmpsError::config(format!("{key}: expected {wanted}, got `{value}`"))
}

/// Resolved input/output locations.
#[derive(Clone, Debug)]
pub struct RunPaths {
    pub out_dir: PathBuf,
    pub manifest: PathBuf,
    pub vocab: PathBuf,
}

/// Fixed artifact names under the output directory.
pub const MANIFEST_FILE: &str = "corpus.manifest.jsonl";
pub const VOCAB_FILE: &str = "vocab.json";

/// Resolves output and data paths. `env_root` is the value of
/// [`OUT_ROOT_ENV`], injected so the resolution stays a pure function.
pub fn resolve_paths(s: &Settings, env_root: Option<&str>) -> RunPaths {
    let out_dir = match s.str_("out.dir") {
        "" => match env_root {
            Some(root) if !root.is_empty() => PathBuf::from(root),
            _ => PathBuf::from(OUT_DIR_FALLBACK),
        },
        dir => PathBuf::from(dir),
    };
    let manifest = match s.str_("data.manifest") {
        "" => out_dir.join(MANIFEST_FILE),
        p => PathBuf::from(p),
    };
    let vocab = match s.str_("data.vocab") {
        "" => out_dir.join(VOCAB_FILE),
        p => PathBuf::from(p),
    };
    RunPaths { out_dir, manifest, vocab }
}

pub fn corpus_spec(s: &Settings) -> Result<CorpusSpec> {
    let mode = match s.str_("corpus.mode") {
        "roundtrip" => ParaphraseMode::Roundtrip(parse_sampling(s.str_("corpus.sampling"))?),
        "lexsub" => ParaphraseMode::LexSub { p_sub: s.f64_("corpus.p_sub")? },
        other => return Err(bad_value("corpus.mode", other, "roundtrip or lexsub")),
    };
    Ok(CorpusSpec {
        n_train: s.usize_("corpus.n_train")?,
        n_valid: s.usize_("corpus.n_valid")?,
        n_test: s.usize_("corpus.n_test")?,
        spont_frac: s.f64_("corpus.spont_frac")?,
        profile: FrameProfile {
            frame_dim: s.usize_("corpus.frame_dim")?,
            sigma_read: s.f64_("corpus.sigma_read")?,
            sigma_spont: s.f64_("corpus.sigma_spont")?,
            dropout_p: s.f64_("corpus.dropout_p")?,
            filler_p: s.f64_("corpus.filler_p")?,
        },
        mode,
        drift_threshold: s.f64_("corpus.drift_threshold")?,
        max_attempts: s.usize_("corpus.max_attempts")?,
    })
}

fn parse_sampling(text: &str) -> Result<Sampling> {
    if text == "beam1" {
        return Ok(Sampling::Beam1);
    }
    if let Some(k) = text.strip_prefix("topk:") {
        return k
            .parse()
            .map(Sampling::TopK)
            .map_err(|_| bad_value("corpus.sampling", text, "topk:<positive integer>"));
    }
    if let Some(p) = text.strip_prefix("nucleus:") {
        return p
            .parse()
            .map(Sampling::Nucleus)
            .map_err(|_| bad_value("corpus.sampling", text, "nucleus:<number in (0, 1]>"));
    }
    Err(bad_value("corpus.sampling", text, "beam1, topk:K, or nucleus:P"))
}

/// Model shape plus its initialization seed. `frame_dim` and `vocab_size`
/// may still be 0 here ("derive from the data"); commands fill them in once
/// the manifest and vocabulary are loaded.
pub fn model_config(s: &Settings) -> Result<(ModelConfig, u64)> {
    let config = ModelConfig {
        frame_dim: s.usize_("model.frame_dim")?,
        d_model: s.usize_("model.d_model")?,
        adapter_dim: s.usize_("model.adapter_dim")?,
        ffn_dim: s.usize_("model.ffn_dim")?,
        n_heads: s.usize_("model.n_heads")?,
        n_speech_layers: s.usize_("model.n_speech_layers")?,
        n_text_layers: s.usize_("model.n_text_layers")?,
        n_decoder_layers: s.usize_("model.n_decoder_layers")?,
        conv_width: s.usize_("model.conv_width")?,
        vocab_size: s.usize_("model.vocab_size")?,
        max_seq_len: s.usize_("model.max_seq_len")?,
        adapter_only: s.bool_("model.adapter_only")?,
    };
    Ok((config, s.u64_("model.seed")?))
}

pub fn train_config(s: &Settings) -> Result<TrainConfig> {
    Ok(TrainConfig {
        mode: parse_mode(s.str_("train.mode"))?,
        tau: s.f64_("train.tau")?,
        weight_pivot: s.f64_("train.weight_pivot")?,
        weight_lo: s.f64_("train.weight_lo")?,
        weight_hi: s.f64_("train.weight_hi")?,
        epochs: s.usize_("train.epochs")?,
        batch_size: s.usize_("train.batch_size")?,
        learning_rate: s.f64_("train.learning_rate")?,
        beta1: s.f64_("train.beta1")?,
        beta2: s.f64_("train.beta2")?,
        eps: s.f64_("train.eps")?,
        seed: s.u64_("train.seed")?,
        adapter_only: s.bool_("train.adapter_only")?,
        update_text_encoder: s.bool_("train.update_text_encoder")?,
        s2t_target: parse_target("train.s2t_target", s.str_("train.s2t_target"))?,
        phase_targets: parse_phase_targets(s.str_("train.phase_targets"))?,
        phase_epochs: parse_phase_epochs(s.str_("train.phase_epochs"))?,
    })
}

fn parse_mode(text: &str) -> Result<Mode> {
    // Hyphens and underscores are interchangeable in mode names.
    match text.replace('-', "_").as_str() {
        "asr" => Ok(Mode::Asr),
        "amps" => Ok(Mode::Amps),
        "amps_tau" => Ok(Mode::AmpsTau),
        "weighted" => Ok(Mode::Weighted),
        "seq_pretrain" => Ok(Mode::SeqPretrain),
        _ => Err(bad_value("train.mode", text, "asr, amps, amps-tau, weighted, or seq-pretrain")),
    }
}

fn parse_target(key: &str, text: &str) -> Result<PhaseTarget> {
    match text {
        "transcript" => Ok(PhaseTarget::Transcript),
        "paraphrase" => Ok(PhaseTarget::Paraphrase),
        _ => Err(bad_value(key, text, "transcript or paraphrase")),
    }
}

fn parse_phase_targets(text: &str) -> Result<[PhaseTarget; 2]> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(bad_value("train.phase_targets", text, "exactly two entries"));
    }
    Ok([
        parse_target("train.phase_targets", parts[0])?,
        parse_target("train.phase_targets", parts[1])?,
    ])
}

fn parse_phase_epochs(text: &str) -> Result<[usize; 2]> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(bad_value("train.phase_epochs", text, "exactly two entries"));
    }
    let a = parts[0]
        .parse()
        .map_err(|_| bad_value("train.phase_epochs", text, "two non-negative integers"))?;
    let b = parts[1]
        .parse()
        .map_err(|_| bad_value("train.phase_epochs", text, "two non-negative integers"))?;
    Ok([a, b])
}

/// Evaluation knobs shared by `eval` and `report`.
#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub split: Split,
    pub beam_width: usize,
    pub max_len: usize,
    pub hard_n: usize,
    pub label_a: String,
    pub label_b: String,
}

pub fn eval_options(s: &Settings) -> Result<EvalOptions> {
    let split = match s.str_("eval.split") {
        "train" => Split::Train,
        "valid" => Split::Valid,
        "test" => Split::Test,
        other => return Err(bad_value("eval.split", other, "train, valid, or test")),
    };
    Ok(EvalOptions {
        split,
        beam_width: s.usize_("eval.beam_width")?,
        max_len: s.usize_("eval.max_len")?,
        hard_n: s.usize_("eval.hard_n")?,
        label_a: s.str_("eval.label_a").to_string(),
        label_b: s.str_("eval.label_b").to_string(),
    })
}

// ─────────────────────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_their_own_echo() {
        let s = Settings::default();
        let echo = s.echo();
        let mut rebuilt = Settings::default();
        for line in echo.lines() {
            let (k, v) = line.split_once('=').unwrap();
            rebuilt.set(k.trim(), v.trim()).unwrap();
        }
        assert_eq!(rebuilt.echo(), echo);
        assert_eq!(echo.lines().count(), SCHEMA.len());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let mut s = Settings::default();
        let e = s.set("train.typo", "1").unwrap_err();
        assert!(e.to_string().contains("train.typo"), "{e}");
        s.set("train.batch_size", "eight").unwrap();
        let e = s.usize_("train.batch_size").unwrap_err();
        assert!(e.to_string().contains("train.batch_size"), "{e}");
    }

    #[test]
    fn flags_accept_aliases_and_infinities() {
        let mut s = Settings::default();
        s.apply_flag("mode", "amps-tau").unwrap();
        s.apply_flag("tau", "inf").unwrap();
        let cfg = train_config(&s).unwrap();
        assert_eq!(cfg.mode, Mode::AmpsTau);
        assert!(cfg.tau.is_infinite() && cfg.tau > 0.0);
        s.apply_flag("tau", "-inf").unwrap();
        assert!(train_config(&s).unwrap().tau < 0.0);
    }

    #[test]
    fn sampling_and_mode_strings_parse() {
        assert_eq!(parse_sampling("beam1").unwrap(), Sampling::Beam1);
        assert_eq!(parse_sampling("topk:5").unwrap(), Sampling::TopK(5));
        assert_eq!(parse_sampling("nucleus:0.9").unwrap(), Sampling::Nucleus(0.9));
        assert!(parse_sampling("topk").is_err());
        assert_eq!(parse_mode("amps_tau").unwrap(), Mode::AmpsTau);
        assert_eq!(parse_mode("seq-pretrain").unwrap(), Mode::SeqPretrain);
        assert!(parse_mode("gated").is_err());
    }

    #[test]
    fn path_resolution_prefers_explicit_then_env_then_fallback() {
        let mut s = Settings::default();
        let p = resolve_paths(&s, Some("/tmp/root"));
        assert_eq!(p.out_dir, PathBuf::from("/tmp/root"));
        assert_eq!(p.manifest, PathBuf::from("/tmp/root").join(MANIFEST_FILE));
        let p = resolve_paths(&s, None);
        assert_eq!(p.out_dir, PathBuf::from(OUT_DIR_FALLBACK));
        s.set("out.dir", "runs/x").unwrap();
        s.set("data.vocab", "elsewhere/v.json").unwrap();
        let p = resolve_paths(&s, Some("/tmp/root"));
        assert_eq!(p.out_dir, PathBuf::from("runs/x"));
        assert_eq!(p.vocab, PathBuf::from("elsewhere/v.json"));
        assert_eq!(p.manifest, PathBuf::from("runs/x").join(MANIFEST_FILE));
    }
}
