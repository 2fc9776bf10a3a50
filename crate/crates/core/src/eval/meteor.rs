//! Unigram similarity score with staged matching.
//!
//! Hypothesis and reference words are matched in three passes of decreasing
//! strictness — identical token, same synonym class, same stem — with each
//! pass restricted to words the earlier passes left unmatched, so an exact
//! match is never displaced by a looser one. Each pass takes the longest
//! crossing-free pairing available to it. The score combines recall-weighted
//! harmonic precision/recall with a fragmentation penalty and is scaled to
//! [0, 100].

use crate::corpus::vocab::{stem, Vocab};
use crate::error::{AmpsError, Result};

/// Match statistics behind a [`meteor_lite`] score.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeteorBreakdown {
    /// Total matched word pairs across all stages.
    pub matches: usize,
    /// Contiguous runs of matched pairs (both sides adjacent).
    pub chunks: usize,
    /// Pairs from the identical-token stage.
    pub exact: usize,
    /// Pairs from the synonym-class stage.
    pub synonym: usize,
    /// Pairs from the stem stage.
    pub stem: usize,
    /// Matched fraction of the hypothesis.
    pub precision: f64,
    /// Matched fraction of the reference.
    pub recall: f64,
    /// Final score in [0, 100].
    pub score: f64,
}

/// Scores `hyp` against `reference`, returning a value in [0, 100].
///
/// An empty reference is rejected; a hypothesis with no matched words scores
/// zero. A hypothesis identical to an `n`-word reference scores
/// `100 * (1 - 0.5 / n^3)` — one chunk covering everything, with the residual
/// fragmentation penalty vanishing as the reference grows.
pub fn meteor_lite(reference: &[u32], hyp: &[u32], vocab: &Vocab) -> Result<f64> {
    meteor_breakdown(reference, hyp, vocab).map(|b| b.score)
}

/// [`meteor_lite`] with the per-stage match counts exposed.
pub fn meteor_breakdown(reference: &[u32], hyp: &[u32], vocab: &Vocab) -> Result<MeteorBreakdown> {
    if reference.is_empty() {
        return Err(AmpsError::EmptyInput { op: "meteor_lite", what: "reference" });
    }
    for &t in reference.iter().chain(hyp) {
        if t as usize >= vocab.len() {
            return Err(AmpsError::TokenOutOfVocab { op: "meteor_lite", id: t, vocab: vocab.len() });
        }
    }

    let mut used_r = vec![false; reference.len()];
    let mut used_h = vec![false; hyp.len()];
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    let mut by_stage = [0usize; 3];

    let stems_r: Vec<&str> = reference.iter().map(|&t| stem(vocab.surface(t).unwrap())).collect();
    let stems_h: Vec<&str> = hyp.iter().map(|&t| stem(vocab.surface(t).unwrap())).collect();

    for stage in 0..3 {
        let eligible = |ri: usize, hi: usize| -> bool {
            if used_r[ri] || used_h[hi] {
                return false;
            }
            match stage {
                0 => reference[ri] == hyp[hi],
                1 => match (vocab.class_of(reference[ri]), vocab.class_of(hyp[hi])) {
                    (Some(a), Some(b)) => a == b,
                    _ => false,
                },
                _ => stems_r[ri] == stems_h[hi],
            }
        };
        let stage_pairs = longest_monotone_matching(reference.len(), hyp.len(), eligible);
        by_stage[stage] = stage_pairs.len();
        for &(ri, hi) in &stage_pairs {
            used_r[ri] = true;
            used_h[hi] = true;
        }
        pairs.extend(stage_pairs);
    }

    let matches = pairs.len();
    if matches == 0 {
        return Ok(MeteorBreakdown {
            matches: 0,
            chunks: 0,
            exact: 0,
            synonym: 0,
            stem: 0,
            precision: 0.0,
            recall: 0.0,
            score: 0.0,
        });
    }

    // A chunk is a maximal run of pairs adjacent on both sides at once.
    pairs.sort_unstable();
    let mut chunks = 1usize;
    for w in pairs.windows(2) {
        if w[1].0 != w[0].0 + 1 || w[1].1 != w[0].1 + 1 {
            chunks += 1;
        }
    }

    let precision = matches as f64 / hyp.len() as f64;
    let recall = matches as f64 / reference.len() as f64;
    let fmean = 10.0 * precision * recall / (recall + 9.0 * precision);
    let frag = chunks as f64 / matches as f64;
    let penalty = 0.5 * frag * frag * frag;
    Ok(MeteorBreakdown {
        matches,
        chunks,
        exact: by_stage[0],
        synonym: by_stage[1],
        stem: by_stage[2],
        precision,
        recall,
        score: 100.0 * fmean * (1.0 - penalty),
    })
}

/// Longest crossing-free set of `(ref, hyp)` index pairs under `eligible`,
/// by the usual longest-common-subsequence recurrence.
fn longest_monotone_matching(
    n: usize,
    h: usize,
    eligible: impl Fn(usize, usize) -> bool,
) -> Vec<(usize, usize)> {
    let width = h + 1;
    let mut dp = vec![0usize; (n + 1) * width];
    for i in 1..=n {
        for j in 1..=h {
            let mut best = dp[(i - 1) * width + j].max(dp[i * width + (j - 1)]);
            if eligible(i - 1, j - 1) {
                best = best.max(dp[(i - 1) * width + (j - 1)] + 1);
            }
            dp[i * width + j] = best;
        }
    }
    let mut out = Vec::new();
    let (mut i, mut j) = (n, h);
    while i > 0 && j > 0 {
        let cur = dp[i * width + j];
        if eligible(i - 1, j - 1) && dp[(i - 1) * width + (j - 1)] + 1 == cur {
            out.push((i - 1, j - 1));
            i -= 1;
            j -= 1;
        } else if dp[(i - 1) * width + j] == cur {
            i -= 1;
        } else {
            j -= 1;
        }
    }
    out.reverse();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v() -> Vocab {
        Vocab::synthetic(7)
    }

    #[test]
    fn identical_pair_matches_the_closed_form() {
        let vocab = v();
        for n in 1..=8usize {
            let seq: Vec<u32> = (0..n as u32).map(|i| 14 + i).collect();
            let got = meteor_lite(&seq, &seq, &vocab).unwrap();
            let want = 100.0 * (1.0 - 0.5 / (n as f64).powi(3));
            assert!((got - want).abs() < 1e-12, "n={n}: {got} vs {want}");
        }
    }

    #[test]
    fn no_overlap_scores_zero() {
        let vocab = v();
        // Words from distant classes with unrelated surfaces.
        let r = [14u32, 15, 16];
        let h = [190u32, 191];
        let b = meteor_breakdown(&r, &h, &vocab).unwrap();
        if b.matches == 0 {
            assert_eq!(b.score, 0.0);
        }
        assert_eq!(meteor_lite(&r, &[], &vocab).unwrap(), 0.0);
    }

    #[test]
    fn empty_reference_is_rejected() {
        let vocab = v();
        assert!(matches!(
            meteor_lite(&[], &[14], &vocab),
            Err(AmpsError::EmptyInput { .. })
        ));
    }

    #[test]
    fn synonyms_outscore_unrelated_words() {
        let vocab = v();
        let class0: Vec<u32> = vocab.classes()[0].clone();
        let class9: Vec<u32> = vocab.classes()[9].clone();
        let reference = [class0[0], class0[1], 4];
        // Same length; one swaps in class-mates, the other distant words.
        let synonym_hyp = [class0[2], class0[3], 4];
        let unrelated_hyp = [class9[0], class9[1], 5];
        let s_syn = meteor_lite(&reference, &synonym_hyp, &vocab).unwrap();
        let s_bad = meteor_lite(&reference, &unrelated_hyp, &vocab).unwrap();
        assert!(
            s_syn > s_bad,
            "synonym hyp {s_syn} should beat unrelated hyp {s_bad}"
        );
    }

    #[test]
    fn exact_matches_claim_words_before_synonyms() {
        let vocab = v();
        let class3 = vocab.classes()[3].clone();
        let (a, a_syn) = (class3[0], class3[1]);
        // The hypothesis offers both a synonym and the exact word; the exact
        // stage must consume the reference word first.
        let b = meteor_breakdown(&[a], &[a_syn, a], &vocab).unwrap();
        assert_eq!((b.exact, b.synonym, b.stem), (1, 0, 0));
        assert_eq!(b.matches, 1);
    }

    #[test]
    fn stem_stage_links_suffixed_forms() {
        use crate::corpus::vocab::SPECIAL_SURFACES;
        // Hand-built vocab where two content words share a stem.
        let surfaces: Vec<String> = SPECIAL_SURFACES
            .iter()
            .map(|s| s.to_string())
            .chain(["zo", "bakuna", "bakute", "mipo", "gesa"].map(String::from))
            .collect();
        let vocab = Vocab::from_parts(
            surfaces,
            vec![4],
            vec![vec![5, 7], vec![6, 8]], // bakuna/bakute land in different classes
        )
        .unwrap();
        assert_eq!(stem("bakuna"), "baku");
        assert_eq!(stem("bakute"), "baku");
        let b = meteor_breakdown(&[5], &[6], &vocab).unwrap();
        assert_eq!((b.exact, b.synonym, b.stem), (0, 0, 1));
        assert!(b.score > 0.0);
    }

    #[test]
    fn fragmentation_lowers_the_score() {
        let vocab = v();
        let reference: Vec<u32> = vec![14, 15, 16, 17, 18, 19];
        let contiguous = reference.clone();
        // Same six matches, scrambled into many chunks.
        let scrambled: Vec<u32> = vec![15, 14, 17, 16, 19, 18];
        let s_one = meteor_lite(&reference, &contiguous, &vocab).unwrap();
        let s_many = meteor_lite(&reference, &scrambled, &vocab).unwrap();
        assert!(s_one > s_many);
    }
}
