//! Corpus-level evaluation: per-utterance rows, aggregates, and two-system
//! comparison with a hard-subset breakdown.
//!
//! Aggregate WER is corpus-level (summed errors over summed reference words)
//! so it equals the rate of the concatenated corpus; the macro mean of
//! per-utterance rates is also reported since the two diverge on mixed-length
//! sets. Every aggregate is recomputable from the raw rows.

use serde::{Deserialize, Serialize};

use crate::corpus::{Utterance, Vocab};
use crate::error::{AmpsError, Result};
use crate::eval::mapsswe::{mapsswe, MapsweReport};
use crate::eval::meteor::meteor_lite;
use crate::eval::wer::{corpus_wer, wer};
use crate::model::{BOS, EOS, PAD};

/// Anything that turns an utterance into a token hypothesis. Implemented by
/// the model decoders; tests substitute stubs with known behavior.
pub trait Transcriber {
    fn transcribe(&self, utt: &Utterance) -> Result<Vec<u32>>;
}

/// Greedy model decoding over an utterance's frames.
pub struct GreedyDecoder<'m> {
    pub model: &'m crate::model::MultimodalModel,
    pub max_len: usize,
}

impl Transcriber for GreedyDecoder<'_> {
    fn transcribe(&self, utt: &Utterance) -> Result<Vec<u32>> {
        crate::eval::decode::decode_greedy(self.model, &utt.frames, self.max_len)
    }
}

/// Beam-search model decoding over an utterance's frames.
pub struct BeamDecoder<'m> {
    pub model: &'m crate::model::MultimodalModel,
    pub width: usize,
    pub max_len: usize,
}

impl Transcriber for BeamDecoder<'_> {
    fn transcribe(&self, utt: &Utterance) -> Result<Vec<u32>> {
        crate::eval::decode::decode_beam(self.model, &utt.frames, self.width, self.max_len)
            .map(|hyp| hyp.tokens)
    }
}

/// Scores for one utterance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub id: u64,
    /// Reference length in scoreable words (structural tokens stripped).
    pub ref_len: usize,
    /// Edit errors `subs + ins + dels`.
    pub errors: usize,
    pub subs: usize,
    pub ins: usize,
    pub dels: usize,
    /// Per-utterance word error rate.
    pub wer: f64,
    /// Per-utterance similarity score in [0, 100].
    pub meteor: f64,
    /// Raw hypothesis tokens as emitted (terminator included).
    pub hyp: Vec<u32>,
}

/// Evaluation of one system over one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    /// Corpus-level WER: summed errors over summed reference words.
    pub wer: f64,
    /// Mean of per-utterance rates.
    pub wer_macro: f64,
    /// Mean per-utterance similarity score.
    pub meteor: f64,
    pub n: usize,
}

/// Scores `transcriber` over `utts`, one row per utterance in input order.
pub fn evaluate<T: Transcriber + ?Sized>(
    transcriber: &T,
    utts: &[Utterance],
    vocab: &Vocab,
) -> Result<EvalReport> {
    if utts.is_empty() {
        return Err(AmpsError::EmptyInput { op: "evaluate", what: "utterances" });
    }
    let mut rows = Vec::with_capacity(utts.len());
    for utt in utts {
        let hyp = transcriber.transcribe(utt)?;
        let reference = strip_structural(&utt.transcript);
        let hyp_words = strip_structural(&hyp);
        let (rate, al) = wer(&reference, &hyp_words)?;
        let meteor = meteor_lite(&reference, &hyp_words, vocab)?;
        rows.push(EvalRow {
            id: utt.id,
            ref_len: al.ref_len,
            errors: al.errors(),
            subs: al.subs,
            ins: al.ins,
            dels: al.dels,
            wer: rate,
            meteor,
            hyp,
        });
    }
    aggregate_rows(rows)
}

/// Rebuilds an [`EvalReport`] from raw rows, recomputing every aggregate.
pub fn aggregate_rows(rows: Vec<EvalRow>) -> Result<EvalReport> {
    if rows.is_empty() {
        return Err(AmpsError::EmptyInput { op: "aggregate_rows", what: "rows" });
    }
    let per_utt: Vec<(usize, usize)> = rows.iter().map(|r| (r.errors, r.ref_len)).collect();
    let wer = corpus_wer(&per_utt)?;
    let n = rows.len();
    let wer_macro = rows.iter().map(|r| r.wer).sum::<f64>() / n as f64;
    let meteor = rows.iter().map(|r| r.meteor).sum::<f64>() / n as f64;
    Ok(EvalReport { rows, wer, wer_macro, meteor, n })
}

/// Drops padding and sequence delimiters, keeping every scoreable word.
pub fn strip_structural(seq: &[u32]) -> Vec<u32> {
    seq.iter().copied().filter(|&t| t != PAD && t != BOS && t != EOS).collect()
}

/// Aggregates for one system over one utterance subset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetMetrics {
    /// Corpus-level WER over the subset.
    pub wer: f64,
    /// Mean of per-utterance rates over the subset.
    pub wer_macro: f64,
    /// Mean similarity score over the subset.
    pub meteor: f64,
}

/// Two-system comparison: whole-split and hard-subset aggregates, their
/// differences, and a paired significance test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub n: usize,
    /// Effective hard-subset size, `min(requested, n)`.
    pub hard_n: usize,
    /// Utterances hardest for system A: sorted by A's per-utterance WER
    /// descending, ties toward the smaller id.
    pub hard_ids: Vec<u64>,
    pub all_a: SubsetMetrics,
    pub all_b: SubsetMetrics,
    pub hard_a: SubsetMetrics,
    pub hard_b: SubsetMetrics,
    /// `B - A` differences per metric over the whole split.
    pub delta_all: SubsetMetrics,
    /// `B - A` differences per metric over the hard subset.
    pub delta_hard: SubsetMetrics,
    /// Matched-pairs test over per-utterance error counts.
    pub mapsswe: MapsweReport,
}

/// Compares system B against baseline A on the same utterances.
///
/// The hard subset is the `hard_n` utterances with the highest baseline
/// (system A) WER, ties broken toward the smaller utterance id, so it is
/// invariant to row order. Deltas are `B - A`: for WER a negative delta
/// means B improves on A.
pub fn compare_systems(
    a: &EvalReport,
    b: &EvalReport,
    hard_n: usize,
) -> Result<ComparisonReport> {
    if a.rows.len() != b.rows.len()
        || a.rows.iter().zip(&b.rows).any(|(ra, rb)| ra.id != rb.id)
    {
        return Err(AmpsError::data(
            "compare_systems: reports cover different utterances or orders",
        ));
    }
    if hard_n == 0 {
        return Err(AmpsError::DegenerateExtent {
            op: "compare_systems",
            extent: 0,
            shape: vec![a.rows.len()],
        });
    }

    let mut order: Vec<usize> = (0..a.rows.len()).collect();
    order.sort_by(|&x, &y| {
        a.rows[y]
            .wer
            .total_cmp(&a.rows[x].wer)
            .then_with(|| a.rows[x].id.cmp(&a.rows[y].id))
    });
    let hard_n = hard_n.min(a.rows.len());
    let hard: Vec<usize> = order[..hard_n].to_vec();
    let hard_ids: Vec<u64> = hard.iter().map(|&i| a.rows[i].id).collect();
    let all: Vec<usize> = (0..a.rows.len()).collect();

    let all_a = subset_metrics(&a.rows, &all)?;
    let all_b = subset_metrics(&b.rows, &all)?;
    let hard_a = subset_metrics(&a.rows, &hard)?;
    let hard_b = subset_metrics(&b.rows, &hard)?;

    let err_a: Vec<i64> = a.rows.iter().map(|r| r.errors as i64).collect();
    let err_b: Vec<i64> = b.rows.iter().map(|r| r.errors as i64).collect();

    Ok(ComparisonReport {
        n: a.rows.len(),
        hard_n,
        hard_ids,
        all_a,
        all_b,
        hard_a,
        hard_b,
        delta_all: delta(all_a, all_b),
        delta_hard: delta(hard_a, hard_b),
        mapsswe: mapsswe(&err_a, &err_b)?,
    })
}

fn subset_metrics(rows: &[EvalRow], idx: &[usize]) -> Result<SubsetMetrics> {
    let per_utt: Vec<(usize, usize)> =
        idx.iter().map(|&i| (rows[i].errors, rows[i].ref_len)).collect();
    let n = idx.len() as f64;
    Ok(SubsetMetrics {
        wer: corpus_wer(&per_utt)?,
        wer_macro: idx.iter().map(|&i| rows[i].wer).sum::<f64>() / n,
        meteor: idx.iter().map(|&i| rows[i].meteor).sum::<f64>() / n,
    })
}

fn delta(a: SubsetMetrics, b: SubsetMetrics) -> SubsetMetrics {
    SubsetMetrics {
        wer: b.wer - a.wer,
        wer_macro: b.wer_macro - a.wer_macro,
        meteor: b.meteor - a.meteor,
    }
}

/// Rows as JSON lines, one utterance per line.
pub fn rows_to_jsonl(rows: &[EvalRow]) -> Result<String> {
    let mut out = String::new();
    for row in rows {
        out.push_str(&serde_json::to_string(row).map_err(|e| AmpsError::data(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

/// Rows as CSV with a header, suitable for plotting.
pub fn rows_to_csv(rows: &[EvalRow]) -> String {
    let mut out = String::from("id,ref_len,errors,subs,ins,dels,wer,meteor\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.id, r.ref_len, r.errors, r.subs, r.ins, r.dels, r.wer, r.meteor
        ));
    }
    out
}

/// Single-system aggregate summary as a fixed-width text table.
pub fn render_report(report: &EvalReport, label: &str) -> String {
    let mut out = String::new();
    out.push_str(&format!("system: {label}  (n = {})\n", report.n));
    out.push_str("metric        value\n");
    out.push_str(&format!("wer          {:>7.4}\n", report.wer));
    out.push_str(&format!("wer_macro    {:>7.4}\n", report.wer_macro));
    out.push_str(&format!("meteor       {:>8.3}\n", report.meteor));
    out
}

/// Two-system comparison as a fixed-width text table.
pub fn render_comparison(c: &ComparisonReport, label_a: &str, label_b: &str) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "baseline A = {label_a}, system B = {label_b}  (n = {}, hard = {})\n",
        c.n, c.hard_n
    ));
    out.push_str("subset  metric      A          B          B-A\n");
    for (name, a, b, d) in [
        ("all ", c.all_a, c.all_b, c.delta_all),
        ("hard", c.hard_a, c.hard_b, c.delta_hard),
    ] {
        out.push_str(&format!(
            "{name}    wer      {:>9.4}  {:>9.4}  {:>+9.4}\n",
            a.wer, b.wer, d.wer
        ));
        out.push_str(&format!(
            "{name}    meteor   {:>9.3}  {:>9.3}  {:>+9.3}\n",
            a.meteor, b.meteor, d.meteor
        ));
    }
    // z can be ±inf (degenerate constant gap) or NaN after a JSON round trip
    // of that case; the sign always survives in mean_diff.
    let z = if c.mapsswe.z.is_finite() {
        format!("{:.4}", c.mapsswe.z)
    } else if c.mapsswe.mean_diff > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    };
    out.push_str(&format!(
        "matched pairs: z = {z}, p = {:.4} over {} segments\n",
        c.mapsswe.p, c.mapsswe.n
    ));
    out.push_str(&format!(
        "significant at p < 0.05: {}\n",
        if c.mapsswe.p < 0.05 { "yes" } else { "no" }
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Split, UttKind};
    use crate::model::EOS;

    /// Returns the reference transcript verbatim.
    struct Echo;
    impl Transcriber for Echo {
        fn transcribe(&self, utt: &Utterance) -> Result<Vec<u32>> {
            Ok(utt.transcript.clone())
        }
    }

    /// Corrupts the first word of utterances whose id divides by `every`.
    struct Degrade {
        every: u64,
    }
    impl Transcriber for Degrade {
        fn transcribe(&self, utt: &Utterance) -> Result<Vec<u32>> {
            let mut out = utt.transcript.clone();
            if utt.id % self.every == 0 {
                out[0] = crate::model::UNK;
            }
            Ok(out)
        }
    }

    fn utt(id: u64, words: &[u32]) -> Utterance {
        let mut transcript = words.to_vec();
        transcript.push(EOS);
        Utterance {
            id,
            kind: UttKind::Read,
            split: Split::Test,
            transcript,
            paraphrase: None,
            frames: Vec::new(),
            noise_sigma: 0.0,
        }
    }

    fn small_split() -> (Vec<Utterance>, Vocab) {
        let vocab = Vocab::synthetic(3);
        let utts = (0..12u64)
            .map(|id| {
                let base = 14 + (id as u32 % 40);
                utt(id, &[base, 4 + (id as u32 % 10), base + 41, base + 19])
            })
            .collect();
        (utts, vocab)
    }

    #[test]
    fn perfect_transcriber_scores_zero_wer() {
        let (utts, vocab) = small_split();
        let report = evaluate(&Echo, &utts, &vocab).unwrap();
        assert_eq!(report.n, utts.len());
        assert_eq!(report.rows.len(), utts.len());
        assert_eq!(report.wer, 0.0);
        assert_eq!(report.wer_macro, 0.0);
        // Four-word references: echo scores the identical-pair closed form.
        let expected = 100.0 * (1.0 - 0.5 / 64.0);
        assert!((report.meteor - expected).abs() < 1e-10);
        assert!(report.rows.iter().all(|r| r.errors == 0 && r.ref_len == 4));
    }

    #[test]
    fn aggregates_recompute_from_rows() {
        let (utts, vocab) = small_split();
        let report = evaluate(&Degrade { every: 3 }, &utts, &vocab).unwrap();
        let rebuilt = aggregate_rows(report.rows.clone()).unwrap();
        assert_eq!(report, rebuilt);
        // Corpus WER by hand: ids 0,3,6,9 get one substitution in 4 words.
        assert!((report.wer - 4.0 / 48.0).abs() < 1e-15);
    }

    #[test]
    fn rows_survive_the_jsonl_round_trip() {
        let (utts, vocab) = small_split();
        let report = evaluate(&Degrade { every: 2 }, &utts, &vocab).unwrap();
        let text = rows_to_jsonl(&report.rows).unwrap();
        let parsed: Vec<EvalRow> = text
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(parsed, report.rows);
        let csv = rows_to_csv(&report.rows);
        assert_eq!(csv.lines().count(), report.rows.len() + 1);
        assert!(csv.starts_with("id,ref_len"));
    }

    #[test]
    fn identical_systems_compare_as_ties() {
        let (utts, vocab) = small_split();
        let a = evaluate(&Degrade { every: 4 }, &utts, &vocab).unwrap();
        let b = a.clone();
        let cmp = compare_systems(&a, &b, 5).unwrap();
        assert_eq!(cmp.delta_all, SubsetMetrics { wer: 0.0, wer_macro: 0.0, meteor: 0.0 });
        assert_eq!(cmp.delta_hard, SubsetMetrics { wer: 0.0, wer_macro: 0.0, meteor: 0.0 });
        assert_eq!(cmp.mapsswe.p, 1.0);
    }

    #[test]
    fn oversized_hard_subset_collapses_to_all() {
        let (utts, vocab) = small_split();
        let a = evaluate(&Degrade { every: 3 }, &utts, &vocab).unwrap();
        let b = evaluate(&Echo, &utts, &vocab).unwrap();
        let cmp = compare_systems(&a, &b, 500).unwrap();
        assert_eq!(cmp.hard_n, utts.len());
        assert_eq!(cmp.delta_all, cmp.delta_hard);
        // B fixes baseline errors, so the WER delta is negative.
        assert!(cmp.delta_all.wer < 0.0);
    }

    #[test]
    fn hard_subset_tracks_baseline_difficulty() {
        let (utts, vocab) = small_split();
        let a = evaluate(&Degrade { every: 3 }, &utts, &vocab).unwrap();
        let b = evaluate(&Echo, &utts, &vocab).unwrap();
        let cmp = compare_systems(&a, &b, 4).unwrap();
        // Exactly ids 0, 3, 6, 9 carry baseline errors; ties resolve by id.
        assert_eq!(cmp.hard_ids, vec![0, 3, 6, 9]);
        assert!(cmp.hard_a.wer > cmp.all_a.wer);
        assert_eq!(cmp.hard_b.wer, 0.0);
    }

    #[test]
    fn comparison_is_invariant_to_row_order() {
        let (mut utts, vocab) = small_split();
        let a1 = evaluate(&Degrade { every: 3 }, &utts, &vocab).unwrap();
        let b1 = evaluate(&Echo, &utts, &vocab).unwrap();
        let cmp1 = compare_systems(&a1, &b1, 4).unwrap();
        utts.reverse();
        let a2 = evaluate(&Degrade { every: 3 }, &utts, &vocab).unwrap();
        let b2 = evaluate(&Echo, &utts, &vocab).unwrap();
        let cmp2 = compare_systems(&a2, &b2, 4).unwrap();
        assert_eq!(cmp1.hard_ids, cmp2.hard_ids);
        assert_eq!(cmp1.delta_hard, cmp2.delta_hard);
        assert_eq!(cmp1.delta_all, cmp2.delta_all);
    }

    #[test]
    fn misaligned_reports_are_rejected() {
        let (utts, vocab) = small_split();
        let a = evaluate(&Echo, &utts, &vocab).unwrap();
        let mut b = a.clone();
        b.rows[0].id = 999;
        assert!(compare_systems(&a, &b, 4).is_err());
        let mut shorter = a.clone();
        shorter.rows.pop();
        assert!(compare_systems(&a, &shorter, 4).is_err());
        assert!(compare_systems(&a, &a.clone(), 0).is_err());
    }

    #[test]
    fn tables_render_the_key_numbers() {
        let (utts, vocab) = small_split();
        let a = evaluate(&Degrade { every: 3 }, &utts, &vocab).unwrap();
        let b = evaluate(&Echo, &utts, &vocab).unwrap();
        let single = render_report(&a, "baseline");
        assert!(single.contains("baseline") && single.contains("wer"));
        let cmp = compare_systems(&a, &b, 4).unwrap();
        let table = render_comparison(&cmp, "baseline", "candidate");
        assert!(table.contains("hard"));
        assert!(table.contains("matched pairs"));
    }
}
