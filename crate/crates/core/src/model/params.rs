//! Parameter storage: named f64 buffers with gradient accumulators.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Init, ParamKind, ParamSpec, Scope};
use crate::tensor::gradcheck::standard_normal;

pub type ParamId = usize;

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    pub scope: Scope,
    pub values: Vec<f64>,
    /// Gradient accumulator, same length as `values`.
    pub grad: Vec<f64>,
}

impl Param {
    pub fn numel(&self) -> usize {
        self.values.len()
    }
}

/// All model parameters in registration (plan) order. Iteration order is the
/// plan order, so every walk over parameters is deterministic.
#[derive(Clone, Debug)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    /// Materialize a plan. Each parameter draws from its own seeded RNG
    /// stream, so values depend only on (seed, position in plan).
    pub fn build(plan: &[ParamSpec], seed: u64) -> Self {
        let mut params = Vec::with_capacity(plan.len());
        let mut by_name = HashMap::with_capacity(plan.len());
        for (idx, spec) in plan.iter().enumerate() {
            let n = spec.numel();
            let values = match spec.init {
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
                Init::Normal(std) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(idx as u64);
                    (0..n).map(|_| standard_normal(&mut rng) * std).collect()
                }
            };
            by_name.insert(spec.name.clone(), idx);
            params.push(Param {
                name: spec.name.clone(),
                shape: spec.shape.clone(),
                kind: spec.kind,
                scope: spec.scope,
                values,
                grad: vec![0.0; n],
            });
        }
        ParamStore { params, by_name }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate()
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.iter_mut() {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Total squared L2 norm of all gradient accumulators (diagnostics).
    pub fn grad_sq_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.grad.iter())
            .map(|g| g * g)
            .sum()
    }
}
