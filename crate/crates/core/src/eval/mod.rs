//! Recognition quality metrics, significance testing, and decoding.
//!
//! The metric layer is deliberately exact and deterministic: edit alignments
//! carry a secondary objective that makes their counts unique, decoding ties
//! are broken by token order, and aggregates are derivable from the raw
//! per-utterance rows they summarize.

pub mod decode;
pub mod mapsswe;
pub mod meteor;
pub mod report;
pub mod wer;

pub use decode::{decode_beam, decode_greedy, sequence_score, BeamHypothesis};
pub use mapsswe::{mapsswe, MapsweReport};
pub use meteor::{meteor_breakdown, meteor_lite, MeteorBreakdown};
pub use report::{
    aggregate_rows, compare_systems, evaluate, render_comparison, render_report, rows_to_csv,
    rows_to_jsonl, strip_structural, BeamDecoder, ComparisonReport, EvalReport, EvalRow,
    GreedyDecoder, SubsetMetrics, Transcriber,
};
pub use wer::{corpus_wer, wer, Alignment, EditOp};
