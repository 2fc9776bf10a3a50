//! Word error rate via minimal-cost edit alignment.
//!
//! The aligner minimizes `(substitutions + insertions + deletions)` and, among
//! all minimal-cost alignments, maximizes the number of exact matches. That
//! secondary objective pins the individual counts: with `N` reference words,
//! `H` hypothesis words, cost `C`, and matches `M`, the identities
//! `N = M + S + D` and `H = M + S + I` give `S = N + H - 2M - C`, so every
//! backtrace of an optimal table reports the same `(S, I, D)` triple. It also
//! makes the counts symmetric — swapping reference and hypothesis swaps
//! insertions with deletions and leaves substitutions unchanged.

use crate::error::{AmpsError, Result};

/// One cell of an edit alignment, in reference order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EditOp {
    /// Reference and hypothesis words agree.
    Match,
    /// A reference word was replaced by a different hypothesis word.
    Sub,
    /// The hypothesis contains a word absent from the reference.
    Ins,
    /// A reference word is missing from the hypothesis.
    Del,
}

/// A minimal-cost alignment between a reference and a hypothesis.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Alignment {
    /// Edit operations in order; reference indices advance on everything but
    /// `Ins`, hypothesis indices on everything but `Del`.
    pub ops: Vec<EditOp>,
    /// Substitution count.
    pub subs: usize,
    /// Insertion count.
    pub ins: usize,
    /// Deletion count.
    pub dels: usize,
    /// Exact-match count.
    pub matches: usize,
    /// Reference length in words.
    pub ref_len: usize,
}

impl Alignment {
    /// Total edit cost `S + I + D`.
    pub fn errors(&self) -> usize {
        self.subs + self.ins + self.dels
    }

    /// Word error rate `(S + I + D) / N`.
    pub fn rate(&self) -> f64 {
        self.errors() as f64 / self.ref_len as f64
    }
}

/// Aligns `hyp` against `reference` and returns `(rate, alignment)`.
///
/// The rate is `(S + I + D) / N` with `N` the reference length; it exceeds
/// 1.0 when the hypothesis carries more errors than the reference has words.
/// An empty reference has no well-defined rate and is rejected.
pub fn wer(reference: &[u32], hyp: &[u32]) -> Result<(f64, Alignment)> {
    if reference.is_empty() {
        return Err(AmpsError::EmptyInput { op: "wer", what: "reference" });
    }
    let n = reference.len();
    let h = hyp.len();

    // cost[i][j] = minimal edits aligning reference[..i] with hyp[..j];
    // hits[i][j] = maximal matches among alignments achieving cost[i][j].
    let width = h + 1;
    let mut cost = vec![0usize; (n + 1) * width];
    let mut hits = vec![0usize; (n + 1) * width];
    for j in 0..=h {
        cost[j] = j;
    }
    for i in 1..=n {
        cost[i * width] = i;
    }
    for i in 1..=n {
        for j in 1..=h {
            let eq = reference[i - 1] == hyp[j - 1];
            let diag_cost = cost[(i - 1) * width + (j - 1)] + usize::from(!eq);
            let diag_hits = hits[(i - 1) * width + (j - 1)] + usize::from(eq);
            let del_cost = cost[(i - 1) * width + j] + 1;
            let del_hits = hits[(i - 1) * width + j];
            let ins_cost = cost[i * width + (j - 1)] + 1;
            let ins_hits = hits[i * width + (j - 1)];

            let mut best = (diag_cost, diag_hits);
            for cand in [(del_cost, del_hits), (ins_cost, ins_hits)] {
                if cand.0 < best.0 || (cand.0 == best.0 && cand.1 > best.1) {
                    best = cand;
                }
            }
            cost[i * width + j] = best.0;
            hits[i * width + j] = best.1;
        }
    }

    // Backtrace, preferring moves that reproduce the (cost, hits) pair; the
    // counts are identical for every valid backtrace, so the preference order
    // only fixes the op sequence itself.
    let mut ops = Vec::with_capacity(n.max(h));
    let (mut i, mut j) = (n, h);
    while i > 0 || j > 0 {
        let c = cost[i * width + j];
        let m = hits[i * width + j];
        if i > 0 && j > 0 {
            let eq = reference[i - 1] == hyp[j - 1];
            if cost[(i - 1) * width + (j - 1)] + usize::from(!eq) == c
                && hits[(i - 1) * width + (j - 1)] + usize::from(eq) == m
            {
                ops.push(if eq { EditOp::Match } else { EditOp::Sub });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && cost[(i - 1) * width + j] + 1 == c && hits[(i - 1) * width + j] == m {
            ops.push(EditOp::Del);
            i -= 1;
            continue;
        }
        ops.push(EditOp::Ins);
        j -= 1;
    }
    ops.reverse();

    let mut out = Alignment { ops, subs: 0, ins: 0, dels: 0, matches: 0, ref_len: n };
    for op in &out.ops {
        match op {
            EditOp::Match => out.matches += 1,
            EditOp::Sub => out.subs += 1,
            EditOp::Ins => out.ins += 1,
            EditOp::Del => out.dels += 1,
        }
    }
    debug_assert_eq!(out.matches + out.subs + out.dels, n);
    debug_assert_eq!(out.matches + out.subs + out.ins, h);
    Ok((out.rate(), out))
}

/// Corpus-level WER: summed errors over summed reference lengths.
///
/// Each entry is `(errors, ref_len)` for one utterance. Weighting by length
/// keeps the aggregate equal to the rate of the concatenated corpus, unlike a
/// mean of per-utterance rates.
pub fn corpus_wer(per_utt: &[(usize, usize)]) -> Result<f64> {
    let total_ref: usize = per_utt.iter().map(|&(_, n)| n).sum();
    if total_ref == 0 {
        return Err(AmpsError::EmptyInput { op: "corpus_wer", what: "reference words" });
    }
    let total_err: usize = per_utt.iter().map(|&(e, _)| e).sum();
    Ok(total_err as f64 / total_ref as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_alignment_counts() {
        // ref: a b c, hyp: a x c -> one substitution, rate 1/3.
        let (rate, al) = wer(&[10, 11, 12], &[10, 99, 12]).unwrap();
        assert_eq!((al.subs, al.ins, al.dels, al.matches), (1, 0, 0, 2));
        assert!((rate - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(al.ops, vec![EditOp::Match, EditOp::Sub, EditOp::Match]);
    }

    #[test]
    fn empty_hypothesis_is_all_deletions() {
        let (rate, al) = wer(&[5, 6, 7, 8], &[]).unwrap();
        assert_eq!(al.dels, 4);
        assert_eq!(al.errors(), 4);
        assert_eq!(rate, 1.0);
    }

    #[test]
    fn rate_can_exceed_one() {
        let (rate, al) = wer(&[5], &[6, 7, 8]).unwrap();
        assert_eq!(al.errors(), 3);
        assert_eq!(rate, 3.0);
    }

    #[test]
    fn empty_reference_is_rejected() {
        assert!(matches!(wer(&[], &[1]), Err(AmpsError::EmptyInput { .. })));
    }

    #[test]
    fn ops_walk_both_sequences() {
        let (_, al) = wer(&[1, 2, 3, 4, 5], &[9, 2, 4, 5, 9, 9]).unwrap();
        let ref_steps = al.ops.iter().filter(|o| **o != EditOp::Ins).count();
        let hyp_steps = al.ops.iter().filter(|o| **o != EditOp::Del).count();
        assert_eq!(ref_steps, 5);
        assert_eq!(hyp_steps, 6);
    }

    #[test]
    fn corpus_rate_weights_by_length() {
        // One short bad utterance plus one long clean one: corpus WER is
        // 2/12, not the 0.5 a macro average would report.
        let agg = corpus_wer(&[(2, 2), (0, 10)]).unwrap();
        assert!((agg - 2.0 / 12.0).abs() < 1e-15);
        assert!(matches!(corpus_wer(&[]), Err(AmpsError::EmptyInput { .. })));
    }
}
