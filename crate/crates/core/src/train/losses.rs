//! Per-utterance training objectives.
//!
//! All losses are mean per-token negative log-likelihoods, so their values
//! are comparable across utterance lengths and across the speech and text
//! pathways; combined objectives add them unweighted. The threshold gate and
//! the loss-dependent weight are computed from the *value* of the speech
//! loss on the current step — no gradient flows through either decision.

use crate::corpus::Utterance;
use crate::error::{AmpsError, Result};
use crate::model::{teacher_input, MultimodalModel, Session};
use crate::tensor::{Reduce, Tape, Tensor};

/// What the speech pathway is trained to emit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseTarget {
    /// Ground-truth transcript.
    Transcript,
    /// The utterance's paraphrase.
    Paraphrase,
}

/// Fully resolved per-utterance objective, derived from the run mode.
#[derive(Clone, Copy, Debug)]
pub(crate) enum Objective {
    /// Speech loss only, toward the given target.
    Plain(PhaseTarget),
    /// Speech loss plus paraphrase loss for every utterance.
    Joint,
    /// Speech loss, plus paraphrase loss when the speech loss exceeds `tau`.
    Gated { tau: f64 },
    /// Speech loss scaled by `clamp(l_speech / pivot, lo, hi)`.
    Scaled { pivot: f64, lo: f64, hi: f64 },
}

/// One utterance's contribution to a training step.
pub(crate) struct UttLoss<'t> {
    /// Loss tensor to backpropagate.
    pub loss: Tensor<'t>,
    /// Detached loss value (what `loss` evaluates to).
    pub total: f64,
    /// Speech-pathway loss value.
    pub l_asr: f64,
    /// Paraphrase-pathway loss value; present only when that pass ran.
    pub l_par: Option<f64>,
    /// Whether the paraphrase pass contributed to `loss`.
    pub gate_fired: bool,
}

/// Builds the objective for one utterance on the session's tape. The text
/// pathway runs only when the objective actually needs it.
pub(crate) fn utt_loss<'m, 't>(
    session: &Session<'m, 't>,
    utt: &Utterance,
    objective: Objective,
) -> Result<UttLoss<'t>> {
    let speech_target: &[u32] = match objective {
        Objective::Plain(PhaseTarget::Paraphrase) => require_paraphrase(utt)?,
        _ => &utt.transcript,
    };
    if speech_target.is_empty() {
        return Err(AmpsError::EmptyInput { op: "utt_loss", what: "transcript" });
    }
    let logits = session.forward_s2t(&utt.frames, &teacher_input(speech_target))?;
    let asr = logits.cross_entropy_nll(speech_target, Reduce::Mean)?;
    let l_asr = asr.values()[0];

    let fire = match objective {
        Objective::Plain(_) | Objective::Scaled { .. } => false,
        Objective::Joint => true,
        Objective::Gated { tau } => l_asr > tau,
    };

    if fire {
        let paraphrase = require_paraphrase(utt)?;
        let logits = session.forward_t2t(&utt.transcript, &teacher_input(paraphrase))?;
        let par = logits.cross_entropy_nll(paraphrase, Reduce::Mean)?;
        let l_par = par.values()[0];
        let loss = asr.add(par)?;
        return Ok(UttLoss {
            total: loss.values()[0],
            loss,
            l_asr,
            l_par: Some(l_par),
            gate_fired: true,
        });
    }

    if let Objective::Scaled { pivot, lo, hi } = objective {
        let w = (l_asr / pivot).clamp(lo, hi);
        if !(w > 0.0) {
            return Err(AmpsError::config(format!(
                "loss weight must be positive, got {w} (l_asr {l_asr}, pivot {pivot})"
            )));
        }
        let loss = asr.scale(w);
        return Ok(UttLoss { total: loss.values()[0], loss, l_asr, l_par: None, gate_fired: false });
    }

    Ok(UttLoss { total: l_asr, loss: asr, l_asr, l_par: None, gate_fired: false })
}

fn require_paraphrase(utt: &Utterance) -> Result<&[u32]> {
    utt.paraphrase
        .as_deref()
        .ok_or_else(|| AmpsError::data(format!("utterance {} has no paraphrase", utt.id)))
}

/// Mean per-token NLL of the transcript under the speech pathway.
pub fn loss_asr(model: &MultimodalModel, utt: &Utterance) -> Result<f64> {
    let tape = Tape::new();
    let session = model.session(&tape);
    Ok(utt_loss(&session, utt, Objective::Plain(PhaseTarget::Transcript))?.l_asr)
}

/// Mean per-token NLL of the paraphrase under the text pathway, conditioned
/// on the transcript.
pub fn loss_par(model: &MultimodalModel, utt: &Utterance) -> Result<f64> {
    let paraphrase = require_paraphrase(utt)?;
    let tape = Tape::new();
    let session = model.session(&tape);
    let logits = session.forward_t2t(&utt.transcript, &teacher_input(paraphrase))?;
    Ok(logits.cross_entropy_nll(paraphrase, Reduce::Mean)?.values()[0])
}

/// Threshold-gated objective: speech loss, plus the paraphrase loss exactly
/// when the utterance's current speech loss exceeds `tau`.
///
/// `tau` may be infinite — `+inf` never fires and `-inf` always fires, which
/// collapses the objective to the plain and joint variants respectively.
/// Only NaN is rejected (the comparison would be vacuous).
pub fn loss_amps_tau(model: &MultimodalModel, utt: &Utterance, tau: f64) -> Result<(f64, bool)> {
    if tau.is_nan() {
        return Err(AmpsError::config("tau must not be NaN"));
    }
    let tape = Tape::new();
    let session = model.session(&tape);
    let out = utt_loss(&session, utt, Objective::Gated { tau })?;
    Ok((out.total, out.gate_fired))
}

/// Loss-weighted objective: `w * l_asr` with
/// `w = clamp(l_asr / pivot, lo, hi)` treated as a constant.
pub fn loss_weighted(
    model: &MultimodalModel,
    utt: &Utterance,
    pivot: f64,
    lo: f64,
    hi: f64,
) -> Result<f64> {
    let tape = Tape::new();
    let session = model.session(&tape);
    Ok(utt_loss(&session, utt, Objective::Scaled { pivot, lo, hi })?.total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Split, UttKind};
    use crate::model::ModelConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model_with_vocab(vocab_size: usize, seed: u64) -> MultimodalModel {
        let config = ModelConfig {
            frame_dim: 4,
            d_model: 8,
            adapter_dim: 4,
            ffn_dim: 12,
            n_heads: 2,
            n_speech_layers: 1,
            n_text_layers: 1,
            n_decoder_layers: 1,
            conv_width: 3,
            vocab_size,
            max_seq_len: 16,
            adapter_only: true,
        };
        MultimodalModel::new(config, seed).unwrap()
    }

    fn utterance(frame_dim: usize, transcript: &[u32], paraphrase: Option<&[u32]>) -> Utterance {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        Utterance {
            id: 7,
            kind: UttKind::Read,
            split: Split::Train,
            transcript: transcript.to_vec(),
            paraphrase: paraphrase.map(<[u32]>::to_vec),
            frames: (0..6 * frame_dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            noise_sigma: 0.0,
        }
    }

    fn fixture() -> (MultimodalModel, Utterance) {
        let model = model_with_vocab(16, 3);
        let utt = utterance(4, &[5, 9, 12, 2], Some(&[6, 9, 12, 2]));
        (model, utt)
    }

    #[test]
    fn fresh_model_losses_sit_near_the_uniform_baseline() {
        // Zero-initialized output bias and small head weights put the
        // predictive distribution near uniform, so the per-token NLL is
        // close to ln(vocab size).
        let (model, utt) = fixture();
        assert!((loss_asr(&model, &utt).unwrap() - 16f64.ln()).abs() < 0.2);
        assert!((loss_par(&model, &utt).unwrap() - 16f64.ln()).abs() < 0.2);

        let desk = MultimodalModel::new(ModelConfig::desk(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let big = Utterance {
            frames: (0..12 * 16).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            ..utterance(16, &[14, 60, 101, 7, 2], Some(&[15, 60, 101, 7, 2]))
        };
        let l = loss_asr(&desk, &big).unwrap();
        assert!((l - 5.2983).abs() < 0.2, "desk init loss {l}");
    }

    #[test]
    fn losses_are_stateless() {
        let (model, utt) = fixture();
        assert_eq!(
            loss_asr(&model, &utt).unwrap().to_bits(),
            loss_asr(&model, &utt).unwrap().to_bits()
        );
        assert_eq!(
            loss_par(&model, &utt).unwrap().to_bits(),
            loss_par(&model, &utt).unwrap().to_bits()
        );
    }

    #[test]
    fn loss_asr_is_exactly_the_mean_nll_of_the_speech_logits() {
        let (model, utt) = fixture();
        let tape = Tape::new();
        let session = model.session(&tape);
        let logits = session
            .forward_s2t(&utt.frames, &teacher_input(&utt.transcript))
            .unwrap();
        let manual = logits
            .cross_entropy_nll(&utt.transcript, Reduce::Mean)
            .unwrap()
            .values()[0];
        assert_eq!(loss_asr(&model, &utt).unwrap().to_bits(), manual.to_bits());
    }

    #[test]
    fn loss_par_is_exactly_the_mean_nll_of_the_text_logits() {
        let (model, utt) = fixture();
        let paraphrase = utt.paraphrase.clone().unwrap();
        let tape = Tape::new();
        let session = model.session(&tape);
        let logits = session
            .forward_t2t(&utt.transcript, &teacher_input(&paraphrase))
            .unwrap();
        let manual = logits
            .cross_entropy_nll(&paraphrase, Reduce::Mean)
            .unwrap()
            .values()[0];
        assert_eq!(loss_par(&model, &utt).unwrap().to_bits(), manual.to_bits());
    }

    #[test]
    fn gate_identity_holds_exactly() {
        let (model, utt) = fixture();
        let l_asr = loss_asr(&model, &utt).unwrap();
        let l_par = loss_par(&model, &utt).unwrap();
        // Brackets around the init loss (~ln 16): below fires, above does not.
        for tau in [1.0, 2.5, 3.0, 4.0] {
            let (total, fired) = loss_amps_tau(&model, &utt, tau).unwrap();
            assert_eq!(fired, l_asr > tau);
            let expected = if fired { l_asr + l_par } else { l_asr };
            assert_eq!(total.to_bits(), expected.to_bits(), "tau {tau}");
        }
    }

    #[test]
    fn infinite_thresholds_collapse_the_gate() {
        let (model, utt) = fixture();
        let l_asr = loss_asr(&model, &utt).unwrap();
        let l_par = loss_par(&model, &utt).unwrap();
        let (never, fired) = loss_amps_tau(&model, &utt, f64::INFINITY).unwrap();
        assert!(!fired);
        assert_eq!(never.to_bits(), l_asr.to_bits());
        let (always, fired) = loss_amps_tau(&model, &utt, f64::NEG_INFINITY).unwrap();
        assert!(fired);
        assert_eq!(always.to_bits(), (l_asr + l_par).to_bits());
        assert!(loss_amps_tau(&model, &utt, f64::NAN).is_err());
    }

    #[test]
    fn weight_clamps_at_both_ends_and_is_one_at_the_pivot() {
        let (model, utt) = fixture();
        let l_asr = loss_asr(&model, &utt).unwrap();
        // Huge pivot drives the raw ratio below lo; tiny pivot above hi.
        let low = loss_weighted(&model, &utt, 1e12, 0.5, 2.0).unwrap();
        assert_eq!(low.to_bits(), (l_asr * 0.5).to_bits());
        let high = loss_weighted(&model, &utt, 1e-12, 0.5, 2.0).unwrap();
        assert_eq!(high.to_bits(), (l_asr * 2.0).to_bits());
        // Pivot equal to the loss: w = l/l = 1 exactly.
        let unit = loss_weighted(&model, &utt, l_asr, 0.5, 2.0).unwrap();
        assert_eq!(unit.to_bits(), l_asr.to_bits());
        // Mid-range: w = l/pivot applied as a plain factor.
        let mid = loss_weighted(&model, &utt, 2.0, 0.5, 2.0).unwrap();
        assert_eq!(mid.to_bits(), (l_asr * (l_asr / 2.0)).to_bits());
    }

    #[test]
    fn unit_weight_band_is_bitwise_plain_asr() {
        let (model, utt) = fixture();
        let plain = loss_asr(&model, &utt).unwrap();
        let weighted = loss_weighted(&model, &utt, 3.6, 1.0, 1.0).unwrap();
        assert_eq!(weighted.to_bits(), plain.to_bits());
    }

    #[test]
    fn missing_paraphrase_is_an_error_where_required() {
        let model = model_with_vocab(16, 3);
        let bare = utterance(4, &[5, 9, 12, 2], None);
        assert!(loss_par(&model, &bare).is_err());
        // A firing gate needs the paraphrase; a never-firing gate does not.
        assert!(loss_amps_tau(&model, &bare, f64::NEG_INFINITY).is_err());
        assert!(loss_amps_tau(&model, &bare, f64::INFINITY).is_ok());
        assert!(loss_asr(&model, &bare).is_ok());
    }

    #[test]
    fn empty_transcript_is_rejected() {
        let model = model_with_vocab(16, 3);
        let empty = utterance(4, &[], Some(&[6, 2]));
        assert!(matches!(
            loss_asr(&model, &empty),
            Err(AmpsError::EmptyInput { .. })
        ));
    }
}
