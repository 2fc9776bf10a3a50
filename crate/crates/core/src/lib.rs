//! Desk-scale laboratory for threshold-gated paraphrase supervision in
//! multimodal ASR.
//!
//! The crate is organised as five subsystems:
//!
//! * [`tensor`] — reverse-mode autodiff on a Wengert tape (f64 throughout),
//!   plus a finite-difference checker so every gradient is machine-checkable.
//! * [`model`] — a small speech/text encoder + shared decoder with
//!   bottleneck adapters, checkpointable bit-exactly.
//! * [`corpus`] — synthetic utterance generator: template grammar, frame
//!   synthesis, round-trip / lexical-substitution paraphrases, manifests.
//! * [`train`] — ASR / joint / threshold-gated / weighted training loops,
//!   Adam, sequential pretraining, threshold sweeps.
//! * [`eval`] — greedy & beam decoding, word error rate, a METEOR-style
//!   similarity score, hard-subset and matched-pairs significance reports.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{AmpsError, Result};
