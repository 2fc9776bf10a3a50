//! Frame synthesis: every token emits a short run of its prototype vector
//! plus Gaussian noise; spontaneous speech additionally drops frames and
//! inserts filler frames.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::UttKind;
use crate::corpus::vocab::Vocab;
use crate::error::{AmpsError, Result};
use crate::tensor::gradcheck::standard_normal;

/// Surface form whose prototype is used for inserted filler frames.
pub const FILLER_SURFACE: &str = "<uh>";

/// Knobs for the acoustic channel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameProfile {
    pub frame_dim: usize,
    /// Per-dimension noise σ for read speech.
    pub sigma_read: f64,
    /// Per-dimension noise σ for spontaneous speech (larger).
    pub sigma_spont: f64,
    /// Spontaneous-only: probability a frame is dropped.
    pub dropout_p: f64,
    /// Spontaneous-only: probability a filler frame precedes a frame.
    pub filler_p: f64,
}

impl FrameProfile {
    pub fn desk() -> Self {
        FrameProfile {
            frame_dim: 16,
            sigma_read: 0.08,
            sigma_spont: 0.45,
            dropout_p: 0.10,
            filler_p: 0.05,
        }
    }

    pub fn sigma_for(&self, kind: UttKind) -> f64 {
        match kind {
            UttKind::Read => self.sigma_read,
            UttKind::Spontaneous => self.sigma_spont,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_dim == 0 {
            return Err(AmpsError::config("frame_dim must be positive"));
        }
        for (name, v) in [
            ("sigma_read", self.sigma_read),
            ("sigma_spont", self.sigma_spont),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(AmpsError::config(format!("{name} must be finite and >= 0")));
            }
        }
        for (name, p) in [("dropout_p", self.dropout_p), ("filler_p", self.filler_p)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(AmpsError::config(format!("{name} must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}

/// FNV-1a over bytes; stable across platforms and releases, unlike the
/// standard library's default hasher.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Fixed per-surface prototype vector: equal surfaces, equal prototypes.
pub fn token_prototype(surface: &str, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a64(surface.as_bytes()));
    (0..dim).map(|_| standard_normal(&mut rng)).collect()
}

/// Synthesize `[L × frame_dim]` row-major frames for a transcript. Each token
/// emits 2–4 noisy copies of its prototype; spontaneous utterances then pass
/// through frame dropout and filler insertion. Pure function of its inputs.
pub fn synthesize_frames(
    vocab: &Vocab,
    y: &[u32],
    kind: UttKind,
    profile: &FrameProfile,
    seed: u64,
) -> Result<Vec<f64>> {
    if y.is_empty() {
        return Err(AmpsError::EmptyInput {
            op: "synthesize_frames",
            what: "transcript",
        });
    }
    profile.validate()?;
    let d = profile.frame_dim;
    let sigma = profile.sigma_for(kind);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(3 * y.len());
    for &tok in y {
        let proto = token_prototype(vocab.surface(tok)?, d);
        let reps = rng.gen_range(2..=4usize);
        for _ in 0..reps {
            rows.push(
                proto
                    .iter()
                    .map(|p| p + sigma * standard_normal(&mut rng))
                    .collect(),
            );
        }
    }

    if kind == UttKind::Spontaneous {
        let mut kept: Vec<Vec<f64>> = Vec::with_capacity(rows.len());
        for row in &rows {
            if rng.gen::<f64>() >= profile.dropout_p {
                kept.push(row.clone());
            }
        }
        if kept.is_empty() {
            kept.push(rows[0].clone()); // never emit an empty utterance
        }
        let filler = token_prototype(FILLER_SURFACE, d);
        let mut out: Vec<Vec<f64>> = Vec::with_capacity(kept.len() + 2);
        for row in kept {
            if rng.gen::<f64>() < profile.filler_p {
                out.push(
                    filler
                        .iter()
                        .map(|p| p + sigma * standard_normal(&mut rng))
                        .collect(),
                );
            }
            out.push(row);
        }
        rows = out;
    }

    Ok(rows.into_iter().flatten().collect())
}

// ─────────────────────────────────────────────────────────────────────────────
