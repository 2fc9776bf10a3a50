//! Autoregressive decoding from acoustic frames.
//!
//! Both decoders run the full speech-to-text forward pass once per emitted
//! token and are exact rather than fast: greedy takes the stepwise argmax,
//! beam search keeps the `width` best prefixes by cumulative log-probability
//! and finally ranks finished candidates by length-normalized score. All tie
//! breaks are deterministic — smaller token id for greedy, lexicographically
//! smaller sequence for beam — so decoding is a pure function of the model
//! and the frames.

use crate::error::{AmpsError, Result};
use crate::model::{MultimodalModel, EOS};
use crate::tensor::{Reduce, Tape};

/// Greedy decode: from BOS, append the argmax token (ties favor the smaller
/// id) until EOS is emitted or `max_len` tokens have been produced.
///
/// The output excludes BOS and includes the terminating EOS when one was
/// emitted within the budget.
pub fn decode_greedy(model: &MultimodalModel, frames: &[f64], max_len: usize) -> Result<Vec<u32>> {
    check_budget(model, max_len)?;
    let mut out: Vec<u32> = Vec::new();
    loop {
        let lp = next_token_logprobs(model, frames, &out)?;
        let tok = argmax_smallest(&lp);
        out.push(tok);
        if tok == EOS || out.len() == max_len {
            return Ok(out);
        }
    }
}

/// One beam-search hypothesis: emitted tokens and their cumulative
/// log-probability.
#[derive(Clone, Debug)]
pub struct BeamHypothesis {
    /// Emitted tokens, BOS excluded.
    pub tokens: Vec<u32>,
    /// Sum of per-token log-probabilities.
    pub logp: f64,
}

impl BeamHypothesis {
    /// Length-normalized score: mean log-probability per emitted token.
    pub fn score(&self) -> f64 {
        self.logp / self.tokens.len() as f64
    }
}

/// Beam decode with deterministic tie handling.
///
/// Prefixes are pruned by cumulative log-probability (ties: lexicographically
/// smaller token sequence). A hypothesis finishes when it emits EOS or
/// reaches `max_len`; the winner among finished hypotheses is the one with
/// the highest mean per-token log-probability, again breaking ties toward
/// the lexicographically smaller sequence. `decode_beam` with width 1 emits
/// exactly the greedy sequence.
pub fn decode_beam(
    model: &MultimodalModel,
    frames: &[f64],
    width: usize,
    max_len: usize,
) -> Result<BeamHypothesis> {
    check_budget(model, max_len)?;
    if width == 0 {
        return Err(AmpsError::DegenerateExtent { op: "decode_beam", extent: 0, shape: vec![0] });
    }

    let mut active = vec![BeamHypothesis { tokens: Vec::new(), logp: 0.0 }];
    let mut finished: Vec<BeamHypothesis> = Vec::new();
    for _ in 0..max_len {
        let mut candidates: Vec<BeamHypothesis> = Vec::new();
        for hyp in &active {
            let lp = next_token_logprobs(model, frames, &hyp.tokens)?;
            for (v, &l) in lp.iter().enumerate() {
                let mut tokens = Vec::with_capacity(hyp.tokens.len() + 1);
                tokens.extend_from_slice(&hyp.tokens);
                tokens.push(v as u32);
                candidates.push(BeamHypothesis { tokens, logp: hyp.logp + l });
            }
        }
        candidates.sort_by(|a, b| {
            b.logp.total_cmp(&a.logp).then_with(|| a.tokens.cmp(&b.tokens))
        });
        candidates.truncate(width);

        active.clear();
        for cand in candidates {
            if *cand.tokens.last().expect("candidate has one token") == EOS {
                finished.push(cand);
            } else {
                active.push(cand);
            }
        }
        if active.is_empty() {
            break;
        }
    }
    // Whatever is still active has hit the length budget.
    finished.extend(active);
    finished.sort_by(|a, b| {
        b.score().total_cmp(&a.score()).then_with(|| a.tokens.cmp(&b.tokens))
    });
    Ok(finished.into_iter().next().expect("at least one hypothesis per step"))
}

/// Mean per-token log-probability the model assigns to `tokens` given
/// `frames`, i.e. the length-normalized teacher-forced score used by beam
/// ranking.
pub fn sequence_score(model: &MultimodalModel, frames: &[f64], tokens: &[u32]) -> Result<f64> {
    if tokens.is_empty() {
        return Err(AmpsError::EmptyInput { op: "sequence_score", what: "tokens" });
    }
    let tape = Tape::new();
    let session = model.session(&tape);
    let logits = session.forward_s2t(frames, &crate::model::teacher_input(tokens))?;
    let nll = logits.cross_entropy_nll(tokens, Reduce::Mean)?;
    Ok(-nll.values()[0])
}

fn check_budget(model: &MultimodalModel, max_len: usize) -> Result<()> {
    if max_len == 0 || max_len > model.config.max_seq_len {
        return Err(AmpsError::Config(format!(
            "decode budget must be in 1..={}, got {max_len}",
            model.config.max_seq_len
        )));
    }
    Ok(())
}

/// Log-probabilities over the next token after the emitted prefix.
fn next_token_logprobs(model: &MultimodalModel, frames: &[f64], prefix: &[u32]) -> Result<Vec<f64>> {
    let tape = Tape::new();
    let session = model.session(&tape);
    let mut y_in = Vec::with_capacity(prefix.len() + 1);
    y_in.push(crate::model::BOS);
    y_in.extend_from_slice(prefix);
    let logits = session.forward_s2t(frames, &y_in)?;
    let shape = logits.shape();
    let row = &logits.values()[(shape[0] - 1) * shape[1]..];
    Ok(log_softmax(row))
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    row.iter().map(|x| x - max - lse).collect()
}

fn argmax_smallest(row: &[f64]) -> u32 {
    let mut best = 0usize;
    for (i, &x) in row.iter().enumerate().skip(1) {
        if x > row[best] {
            best = i;
        }
    }
    best as u32
}
