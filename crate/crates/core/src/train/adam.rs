//! Adam optimizer over a fixed trainable subset of the parameter store.
//!
//! Moments live in [`TrainerState`] keyed by parameter name, so an
//! interrupted run resumes bit-exactly after a checkpoint round trip and a
//! second training phase continues the first phase's step count and moment
//! history instead of restarting them.

use crate::error::{AmpsError, Result};
use crate::model::checkpoint::{MomentEntry, TrainerState};
use crate::model::{ParamId, ParamStore};

/// Hyperparameters for one optimizer step.
#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// Fresh zeroed moments for `trainable`, in that order.
pub fn fresh_state(store: &ParamStore, trainable: &[ParamId]) -> TrainerState {
    TrainerState {
        adam_t: 0,
        epochs_done: 0,
        global_step: 0,
        entries: trainable
            .iter()
            .map(|&id| {
                let p = store.get(id);
                MomentEntry { name: p.name.clone(), m: vec![0.0; p.numel()], v: vec![0.0; p.numel()] }
            })
            .collect(),
    }
}

/// Checks that `state` was built for exactly this trainable set.
pub fn check_state(store: &ParamStore, trainable: &[ParamId], state: &TrainerState) -> Result<()> {
    if state.entries.len() != trainable.len() {
        return Err(AmpsError::data(format!(
            "trainer state covers {} parameters, run trains {}",
            state.entries.len(),
            trainable.len()
        )));
    }
    for (&id, entry) in trainable.iter().zip(&state.entries) {
        let p = store.get(id);
        if entry.name != p.name || entry.m.len() != p.numel() || entry.v.len() != p.numel() {
            return Err(AmpsError::data(format!(
                "trainer state entry {} does not match parameter {}",
                entry.name, p.name
            )));
        }
    }
    Ok(())
}

/// One in-place Adam update of the trainable parameters.
///
/// `grads` is aligned with `trainable`; `state` advances its step counter
/// and moment buffers. Zero gradients leave parameters bit-identical: both
/// moments stay zero, so the update term is exactly `0 / (0 + eps)`.
pub fn optimizer_step(
    store: &mut ParamStore,
    trainable: &[ParamId],
    grads: &[Vec<f64>],
    state: &mut TrainerState,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.len() != trainable.len() {
        return Err(AmpsError::ShapeMismatch {
            op: "optimizer_step",
            lhs: vec![grads.len()],
            rhs: vec![trainable.len()],
        });
    }
    check_state(store, trainable, state)?;
    for (k, &id) in trainable.iter().enumerate() {
        if grads[k].len() != store.get(id).numel() {
            return Err(AmpsError::ShapeMismatch {
                op: "optimizer_step",
                lhs: vec![grads[k].len()],
                rhs: vec![store.get(id).numel()],
            });
        }
    }

    state.adam_t += 1;
    let t = state.adam_t as i32;
    let bias1 = 1.0 - cfg.beta1.powi(t);
    let bias2 = 1.0 - cfg.beta2.powi(t);
    for (k, &id) in trainable.iter().enumerate() {
        let entry = &mut state.entries[k];
        let param = store.get_mut(id);
        for (i, &g) in grads[k].iter().enumerate() {
            entry.m[i] = cfg.beta1 * entry.m[i] + (1.0 - cfg.beta1) * g;
            entry.v[i] = cfg.beta2 * entry.v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = entry.m[i] / bias1;
            let v_hat = entry.v[i] / bias2;
            param.values[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
