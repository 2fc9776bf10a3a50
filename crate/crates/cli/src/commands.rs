//! The five subcommands. Each validates its configuration first, echoes the
//! fully resolved configuration into the output directory, then works; all
//! writes land under `out.dir` and machine-readable outputs are
//! byte-reproducible for a fixed configuration and seed.

use std::fs;
use std::path::Path;

use serde::Serialize;

use amps_core::corpus::{generate_corpus, write_manifest, Split};
use amps_core::error::{AmpsError, Result};
use amps_core::eval::{
    compare_systems, evaluate, render_comparison, render_report, rows_to_csv, rows_to_jsonl,
    BeamDecoder, ComparisonReport, EvalReport, GreedyDecoder, Transcriber,
};
use amps_core::model::checkpoint::{load, save, save_with_trainer, TrainerState};
use amps_core::model::MultimodalModel;
use amps_core::train::{
    sweep_tau_candidates, train_resumed, train_sequential, BestSnapshot, Mode, StepRecord,
    SweepReport, TrainConfig,
};

use crate::artifacts::*;
use crate::config::{
    corpus_spec, eval_options, model_config, train_config, EvalOptions, RunPaths, Settings,
    MANIFEST_FILE, VOCAB_FILE,
};

/// Creates the output directory and echoes the resolved configuration.
/// Called only after the command's configuration has validated.
fn open_out_dir(s: &Settings, paths: &RunPaths, command: &str) -> Result<()> {
    fs::create_dir_all(&paths.out_dir)?;
    write_text(&under(&paths.out_dir, &resolved_cfg_name(command)), &s.echo())
}

// ─── gen ─────────────────────────────────────────────────────────────────────

#[derive(Serialize)]
struct GenSummary {
    total: usize,
    train: usize,
    valid: usize,
    test: usize,
    spontaneous: usize,
    spont_frac_observed: f64,
    drift_rejections: usize,
    identity_fallbacks: usize,
    unk_passthroughs: usize,
}

pub fn cmd_gen(s: &Settings, paths: &RunPaths) -> Result<()> {
    let spec = corpus_spec(s)?;
    // Validate before the output directory is even created: an invalid spec
    // must not leave partial artifacts behind.
    spec.validate()?;
    let vocab_seed = s.u64_("corpus.vocab_seed")?;
    let seed = s.u64_("corpus.seed")?;
    open_out_dir(s, paths, "gen")?;

    let (utts, report, vocab) = generate_corpus(&spec, vocab_seed, seed)?;
    let manifest = under(&paths.out_dir, MANIFEST_FILE);
    write_manifest(&manifest, &utts, spec.profile.frame_dim)?;
    write_text(&under(&paths.out_dir, VOCAB_FILE), &vocab.to_json())?;

    let count = |split| utts.iter().filter(|u| u.split == split).count();
    let summary = GenSummary {
        total: report.total,
        train: count(Split::Train),
        valid: count(Split::Valid),
        test: count(Split::Test),
        spontaneous: report.spontaneous,
        spont_frac_observed: report.spontaneous as f64 / report.total as f64,
        drift_rejections: report.drift_rejections,
        identity_fallbacks: report.identity_fallbacks,
        unk_passthroughs: report.unk_passthroughs,
    };
    write_json(&under(&paths.out_dir, GEN_SUMMARY_FILE), &summary)?;
    println!(
        "generated {} utterances ({} spontaneous, {} drift rejections) into {}",
        summary.total,
        summary.spontaneous,
        summary.drift_rejections,
        paths.out_dir.display()
    );
    Ok(())
}

// ─── train ───────────────────────────────────────────────────────────────────

#[derive(Serialize)]
struct TrainSummary {
    mode: Mode,
    /// Epochs recorded in the final optimizer state (includes prior runs).
    epochs_done: u64,
    global_step: u64,
    n_train: usize,
    n_valid: usize,
    /// Mean utterance objective per epoch run in this invocation.
    epoch_mean_loss: Vec<f64>,
    /// Mean validation speech loss after each epoch of this invocation.
    valid_losses: Vec<f64>,
    best_epoch: Option<u64>,
    best_valid_loss: Option<f64>,
    /// Utterance passes whose paraphrase loss entered the objective.
    gate_fired: usize,
    gate_fire_rate: f64,
}

/// What every training flavor hands back for persistence.
struct FinishedRun {
    model: MultimodalModel,
    state: TrainerState,
    records: Vec<StepRecord>,
    epoch_mean_loss: Vec<f64>,
    valid_losses: Vec<f64>,
    best: Option<BestSnapshot>,
}

pub fn cmd_train(s: &Settings, paths: &RunPaths) -> Result<()> {
    let cfg = train_config(s)?;
    cfg.validate()?;
    let resume = s.str_("train.resume").to_string();
    let init = s.str_("train.init").to_string();
    let stop_after = s.usize_("train.stop_after")?;
    if !resume.is_empty() && !init.is_empty() {
        return Err(AmpsError::config(
            "train.resume continues a run and train.init only seeds the weights; set at most one",
        ));
    }
    if cfg.mode == Mode::SeqPretrain && (!resume.is_empty() || stop_after != 0) {
        return Err(AmpsError::config(
            "seq-pretrain manages its own phases; train.resume and train.stop_after must be unset",
        ));
    }
    open_out_dir(s, paths, "train")?;

    let data = load_corpus(paths)?;
    let train_utts = data.split(Split::Train);
    let valid_utts = data.split(Split::Valid);

    let run = if cfg.mode == Mode::SeqPretrain {
        let mut model = init_model(s, &data, &init)?;
        let out = train_sequential(&mut model, &train_utts, &valid_utts, &cfg)?;
        let mut records = out.first.records;
        records.extend(out.second.records);
        let mut epoch_mean_loss = out.first.epoch_mean_loss;
        epoch_mean_loss.extend(out.second.epoch_mean_loss);
        let mut valid_losses = out.first.valid_losses;
        valid_losses.extend(out.second.valid_losses);
        // Validation always scores the transcript speech loss, so bests from
        // the two phases are comparable; ties keep the earlier phase.
        let best = match (out.first.best, out.second.best) {
            (Some(a), Some(b)) => Some(if b.valid_loss < a.valid_loss { b } else { a }),
            (a, b) => a.or(b),
        };
        FinishedRun {
            model,
            state: out.second.state,
            records,
            epoch_mean_loss,
            valid_losses,
            best,
        }
    } else if !resume.is_empty() {
        let resume_path = Path::new(&resume);
        let (mut model, state) = load(resume_path).map_err(map_checkpoint_io(resume_path))?;
        let state = state.ok_or_else(|| {
            AmpsError::data(format!("{resume}: checkpoint carries no optimizer state to resume"))
        })?;
        check_model_against_data(&model, &data)?;
        let done = state.epochs_done as usize;
        if done >= cfg.epochs {
            return Err(AmpsError::config(format!(
                "checkpoint already trained {done} epochs; train.epochs = {} counts those",
                cfg.epochs
            )));
        }
        let epochs = cap_epochs(cfg.epochs - done, stop_after);
        let run_cfg = TrainConfig { epochs, ..cfg.clone() };
        let out = train_resumed(&mut model, &train_utts, &valid_utts, &run_cfg, Some(state))?;
        FinishedRun {
            model,
            state: out.state,
            records: out.records,
            epoch_mean_loss: out.epoch_mean_loss,
            valid_losses: out.valid_losses,
            best: out.best,
        }
    } else {
        let mut model = init_model(s, &data, &init)?;
        let epochs = cap_epochs(cfg.epochs, stop_after);
        let run_cfg = TrainConfig { epochs, ..cfg.clone() };
        let out = train_resumed(&mut model, &train_utts, &valid_utts, &run_cfg, None)?;
        FinishedRun {
            model,
            state: out.state,
            records: out.records,
            epoch_mean_loss: out.epoch_mean_loss,
            valid_losses: out.valid_losses,
            best: out.best,
        }
    };

    write_steps(&under(&paths.out_dir, STEPS_FILE), &run.records)?;
    save_with_trainer(&run.model, Some(&run.state), &under(&paths.out_dir, CHECKPOINT_FINAL))?;
    if let Some(best) = &run.best {
        let mut best_model = run.model.clone();
        amps_core::train::apply_snapshot(&mut best_model, best)?;
        save(&best_model, &under(&paths.out_dir, CHECKPOINT_BEST))?;
    }
    let gate_fired = run.records.iter().filter(|r| r.gate_fired).count();
    let summary = TrainSummary {
        mode: cfg.mode,
        epochs_done: run.state.epochs_done,
        global_step: run.state.global_step,
        n_train: train_utts.len(),
        n_valid: valid_utts.len(),
        epoch_mean_loss: run.epoch_mean_loss.clone(),
        valid_losses: run.valid_losses.clone(),
        best_epoch: run.best.as_ref().map(|b| b.epoch),
        best_valid_loss: run.best.as_ref().map(|b| b.valid_loss),
        gate_fired,
        gate_fire_rate: gate_fired as f64 / run.records.len().max(1) as f64,
    };
    write_json(&under(&paths.out_dir, TRAIN_SUMMARY_FILE), &summary)?;
    println!(
        "trained through epoch {} ({} optimizer steps); last epoch mean loss {}",
        summary.epochs_done,
        summary.global_step,
        run.epoch_mean_loss.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn cap_epochs(remaining: usize, stop_after: usize) -> usize {
    if stop_after > 0 {
        remaining.min(stop_after)
    } else {
        remaining
    }
}

/// The starting model: fresh when `init` is empty, otherwise the weights of
/// the named checkpoint (its optimizer state, if any, is discarded and the
/// `model.*` settings are ignored).
fn init_model(s: &Settings, data: &LoadedCorpus, init: &str) -> Result<MultimodalModel> {
    if init.is_empty() {
        return fresh_model(s, data);
    }
    let model = load_checkpoint(Path::new(init))?;
    check_model_against_data(&model, data)?;
    Ok(model)
}

/// Builds a fresh model, filling width/vocabulary from the data when the
/// configuration leaves them at 0, and checking explicit values against it.
fn fresh_model(s: &Settings, data: &LoadedCorpus) -> Result<MultimodalModel> {
    let (mut config, seed) = model_config(s)?;
    if config.frame_dim == 0 {
        config.frame_dim = data.frame_dim;
    }
    if config.vocab_size == 0 {
        config.vocab_size = data.vocab.len();
    }
    let model = MultimodalModel::new(config, seed)?;
    check_model_against_data(&model, data)?;
    Ok(model)
}

// ─── sweep ───────────────────────────────────────────────────────────────────

pub fn cmd_sweep(s: &Settings, paths: &RunPaths) -> Result<()> {
    let cfg = train_config(s)?;
    let grid = s.f64_list("sweep.grid")?;
    if grid.is_empty() {
        return Err(AmpsError::config("sweep.grid must name at least one threshold"));
    }
    if grid.iter().any(|t| !t.is_finite()) {
        return Err(AmpsError::config(
            "sweep.grid thresholds must be finite; run train with mode asr or amps for the \
             infinite endpoints",
        ));
    }
    if !s.str_("train.resume").is_empty() {
        return Err(AmpsError::config(
            "the sweep trains every candidate from the same starting point; use train.init \
             to supply a warm one",
        ));
    }
    // The sweep forces the gated mode per candidate; validate that shape now
    // so a bad optimizer setting fails before any training starts.
    TrainConfig { mode: Mode::AmpsTau, tau: grid[0], ..cfg.clone() }.validate()?;
    open_out_dir(s, paths, "sweep")?;

    let data = load_corpus(paths)?;
    let train_utts = data.split(Split::Train);
    let valid_utts = data.split(Split::Valid);
    if valid_utts.is_empty() {
        return Err(AmpsError::data("validation split is empty; the sweep selects by it"));
    }
    let model_init = init_model(s, &data, s.str_("train.init"))?;

    let (report, candidates) =
        sweep_tau_candidates(&model_init, &train_utts, &valid_utts, &grid, &cfg)?;
    for (i, c) in candidates.iter().enumerate() {
        let dir = paths.out_dir.join(sweep_candidate_dir(i, grid[i]));
        fs::create_dir_all(&dir)?;
        save_with_trainer(&c.model, Some(&c.outcome.state), &dir.join(SWEEP_CANDIDATE_CHECKPOINT))?;
        write_steps(&dir.join(STEPS_FILE), &c.outcome.records)?;
    }
    let selected = &candidates[report.selected_index];
    save_with_trainer(
        &selected.model,
        Some(&selected.outcome.state),
        &under(&paths.out_dir, CHECKPOINT_SELECTED),
    )?;
    write_json(&under(&paths.out_dir, SWEEP_JSON), &report)?;
    let table = render_sweep(&report);
    write_text(&under(&paths.out_dir, SWEEP_TXT), &table)?;
    print!("{table}");
    Ok(())
}

// ─── eval ────────────────────────────────────────────────────────────────────

pub fn cmd_eval(s: &Settings, paths: &RunPaths, checkpoints: &[String]) -> Result<()> {
    let opts = eval_options(s)?;
    if checkpoints.is_empty() || checkpoints.len() > 2 {
        return Err(AmpsError::config("eval takes one or two checkpoint paths"));
    }
    if opts.beam_width == 0 {
        return Err(AmpsError::config("eval.beam_width must be >= 1"));
    }
    if checkpoints.len() == 2 && opts.hard_n == 0 {
        return Err(AmpsError::config("eval.hard_n must be >= 1 for a comparison"));
    }
    open_out_dir(s, paths, "eval")?;

    let data = load_corpus(paths)?;
    let utts = data.split(opts.split);
    if utts.is_empty() {
        return Err(AmpsError::data(format!("the {} split is empty", s.str_("eval.split"))));
    }

    let model_a = load_checkpoint(Path::new(&checkpoints[0]))?;
    check_model_against_data(&model_a, &data)?;

    if checkpoints.len() == 1 {
        let budget = decode_budget(opts.max_len, &utts, model_a.config.max_seq_len);
        let report = score(&model_a, &utts, &data, &opts, budget)?;
        write_json(&under(&paths.out_dir, EVAL_REPORT_JSON), &report)?;
        write_text(&under(&paths.out_dir, EVAL_ROWS_JSONL), &rows_to_jsonl(&report.rows)?)?;
        write_text(&under(&paths.out_dir, EVAL_ROWS_CSV), &rows_to_csv(&report.rows))?;
        let text = render_report(&report, &opts.label_a);
        write_text(&under(&paths.out_dir, EVAL_REPORT_TXT), &text)?;
        print!("{text}");
    } else {
        let model_b = load_checkpoint(Path::new(&checkpoints[1]))?;
        check_model_against_data(&model_b, &data)?;
        // One budget for both systems keeps the comparison fair.
        let cap = model_a.config.max_seq_len.min(model_b.config.max_seq_len);
        let budget = decode_budget(opts.max_len, &utts, cap);
        let report_a = score(&model_a, &utts, &data, &opts, budget)?;
        let report_b = score(&model_b, &utts, &data, &opts, budget)?;
        let cmp = compare_systems(&report_a, &report_b, opts.hard_n)?;
        write_json(&under(&paths.out_dir, COMPARISON_JSON), &cmp)?;
        write_text(&under(&paths.out_dir, "eval_rows_a.jsonl"), &rows_to_jsonl(&report_a.rows)?)?;
        write_text(&under(&paths.out_dir, "eval_rows_b.jsonl"), &rows_to_jsonl(&report_b.rows)?)?;
        let text = render_comparison(&cmp, &opts.label_a, &opts.label_b);
        write_text(&under(&paths.out_dir, COMPARISON_TXT), &text)?;
        print!("{text}");
    }
    Ok(())
}

fn score(
    model: &MultimodalModel,
    utts: &[amps_core::corpus::Utterance],
    data: &LoadedCorpus,
    opts: &EvalOptions,
    budget: usize,
) -> Result<EvalReport> {
    let decoder: Box<dyn Transcriber> = if opts.beam_width == 1 {
        Box::new(GreedyDecoder { model, max_len: budget })
    } else {
        Box::new(BeamDecoder { model, width: opts.beam_width, max_len: budget })
    };
    evaluate(decoder.as_ref(), utts, &data.vocab)
}

// ─── report ──────────────────────────────────────────────────────────────────

/// Renders a saved machine-readable artifact (evaluation report, two-system
/// comparison, or sweep table) as text on stdout. Writes nothing.
pub fn cmd_report(s: &Settings, path: &Path) -> Result<()> {
    let opts = eval_options(s)?;
    let text = fs::read_to_string(path)
        .map_err(|e| AmpsError::data(format!("cannot read {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| AmpsError::data(format!("{}: not JSON: {e}", path.display())))?;

    let rendered = if value.get("mapsswe").is_some() {
        let c: ComparisonReport = typed(value, path)?;
        render_comparison(&c, &opts.label_a, &opts.label_b)
    } else if value.get("selected_tau").is_some() {
        let r: SweepReport = typed(value, path)?;
        render_sweep(&r)
    } else if value.get("rows").is_some() {
        let r: EvalReport = typed(value, path)?;
        render_report(&r, &opts.label_a)
    } else {
        return Err(AmpsError::data(format!(
            "{}: not a recognized report artifact (expected an evaluation report, a comparison, \
             or a sweep table)",
            path.display()
        )));
    };
    print!("{rendered}");
    Ok(())
}

fn typed<T: serde::de::DeserializeOwned>(value: serde_json::Value, path: &Path) -> Result<T> {
    serde_json::from_value(value)
        .map_err(|e| AmpsError::data(format!("{}: malformed report: {e}", path.display())))
}
