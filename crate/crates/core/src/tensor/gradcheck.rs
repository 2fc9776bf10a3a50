//! Central finite-difference gradient checking.
//!
//! The numeric side only ever re-runs the forward computation at perturbed
//! leaf values, so it is independent of the reverse-mode code it checks.
//! A graph under test is supplied as a closure that rebuilds the computation
//! from scratch on a fresh tape given leaf values; this lets one closure
//! serve both the analytic pass (build + backward) and the numeric pass
//! (build at `x ± h`).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor};
use crate::error::Result;

/// Default step for central differences.
pub const FD_STEP: f64 = 1e-5;
/// Default acceptance threshold on the worst relative error.
pub const FD_TOL: f64 = 1e-4;

/// Shape + initial values for one differentiable leaf.
#[derive(Clone)]
pub struct LeafSpec {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl LeafSpec {
    pub fn new(shape: &[usize], values: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), values.len());
        LeafSpec {
            shape: shape.to_vec(),
            values,
        }
    }

    /// Leaf filled with standard-normal draws from a seeded stream.
    pub fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let n: usize = shape.iter().product();
        let values = (0..n).map(|_| standard_normal(rng)).collect();
        LeafSpec {
            shape: shape.to_vec(),
            values,
        }
    }
}

/// Box–Muller standard normal draw (two uniform draws per sample).
pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Relative error with a small floor so near-zero pairs compare sanely.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / f64::max(1e-4, f64::max(a.abs(), n.abs()))
}

/// Worst relative error between analytic gradients and central differences
/// over every coordinate of every leaf. `build` must return a scalar.
pub fn check<F>(build: F, leaves: &[LeafSpec], h: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Tensor<'t>]) -> Result<Tensor<'t>>,
{
    let analytic = analytic_grads(&build, leaves)?;
    let mut worst = 0.0f64;
    for li in 0..leaves.len() {
        for ci in 0..leaves[li].values.len() {
            let numeric = central_diff_at(&build, leaves, li, ci, h)?;
            worst = worst.max(rel_err(analytic[li][ci], numeric));
        }
    }
    Ok(worst)
}

/// Like [`check`] but only probes `per_leaf` seeded-random coordinates of
/// each leaf — the road to checking big parameter sets in bounded time.
/// Every leaf is still touched.
pub fn check_sampled<F>(
    build: F,
    leaves: &[LeafSpec],
    h: f64,
    per_leaf: usize,
    seed: u64,
) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Tensor<'t>]) -> Result<Tensor<'t>>,
{
    let analytic = analytic_grads(&build, leaves)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for li in 0..leaves.len() {
        let n = leaves[li].values.len();
        for _ in 0..per_leaf.min(n) {
            let ci = rng.gen_range(0..n);
            let numeric = central_diff_at(&build, leaves, li, ci, h)?;
            worst = worst.max(rel_err(analytic[li][ci], numeric));
        }
    }
    Ok(worst)
}

fn analytic_grads<F>(build: &F, leaves: &[LeafSpec]) -> Result<Vec<Vec<f64>>>
where
    F: for<'t> Fn(&'t Tape, &[Tensor<'t>]) -> Result<Tensor<'t>>,
{
    let tape = Tape::new();
    let handles: Vec<Tensor<'_>> = leaves
        .iter()
        .map(|l| tape.leaf(&l.shape, l.values.clone()))
        .collect::<Result<_>>()?;
    let out = build(&tape, &handles)?;
    tape.backward(out)?;
    Ok(handles
        .iter()
        .zip(leaves.iter())
        .map(|(t, l)| t.grad().unwrap_or_else(|| vec![0.0; l.values.len()]))
        .collect())
}

/// Identity helper that pins a closure to the higher-ranked graph-builder
/// signature (plain inference cannot name the tape lifetime).
pub fn graph_fn<F>(f: F) -> F
where
    F: for<'t> Fn(&'t Tape, &[Tensor<'t>]) -> Result<Tensor<'t>>,
{
    f
}

/// Result of checking one operation family.
pub struct OpCheck {
    pub name: &'static str,
    pub instances: usize,
    pub worst_rel_err: f64,
}

/// Run the full per-operation gradient check battery: `instances` random
/// instances of every differentiable operation, each compared coordinate by
/// coordinate against central differences with step `h`.
pub fn op_suite(seed: u64, instances: usize, h: f64) -> Result<Vec<OpCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<OpCheck> = Vec::new();

    // Scalar readout that exercises non-uniform upstream gradients: sum of an
    // elementwise product with fixed random weights.
    fn readout<'t>(t: Tensor<'t>, tape: &'t Tape, w: &[f64]) -> Result<Tensor<'t>> {
        let c = tape.constant(&t.shape(), w.to_vec())?;
        Ok(t.mul(c)?.sum())
    }
    fn weights(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| standard_normal(rng)).collect()
    }

    macro_rules! run {
        ($name:expr, $leaves:expr, $build:expr) => {{
            let mut worst = 0.0f64;
            let mut count = 0usize;
            for _ in 0..instances {
                let leaves = $leaves(&mut rng);
                let build = $build(&mut rng);
                worst = worst.max(check(&build, &leaves, h)?);
                count += 1;
            }
            out.push(OpCheck {
                name: $name,
                instances: count,
                worst_rel_err: worst,
            });
        }};
    }

    run!(
        "add",
        |rng: &mut ChaCha8Rng| vec![
            LeafSpec::random(&[3, 4], rng),
            LeafSpec::random(&[3, 4], rng)
        ],
        |rng: &mut ChaCha8Rng| {
            let w = weights(12, rng);
            graph_fn(move |tape, l| readout(l[0].add(l[1])?, tape, &w))
        }
    );
    run!(
        "add_bias",
        |rng: &mut ChaCha8Rng| vec![
            LeafSpec::random(&[4, 3], rng),
            LeafSpec::random(&[3], rng)
        ],
        |rng: &mut ChaCha8Rng| {
            let w = weights(12, rng);
            graph_fn(move |tape, l| readout(l[0].add_bias(l[1])?, tape, &w))
        }
    );
    run!(
        "mul",
        |rng: &mut ChaCha8Rng| vec![
            LeafSpec::random(&[3, 4], rng),
            LeafSpec::random(&[3, 4], rng)
        ],
        |rng: &mut ChaCha8Rng| {
            let w = weights(12, rng);
            graph_fn(move |tape, l| readout(l[0].mul(l[1])?, tape, &w))
        }
    );
    run!(
        "scale",
        |rng: &mut ChaCha8Rng| vec![LeafSpec::random(&[3, 4], rng)],
        |rng: &mut ChaCha8Rng| {
            let c = standard_normal(rng) * 2.0;
            let w = weights(12, rng);
            graph_fn(move |tape, l| readout(l[0].scale(c), tape, &w))
        }
    );
    run!(
        "matmul",
        |rng: &mut ChaCha8Rng| vec![
            LeafSpec::random(&[3, 4], rng),
            LeafSpec::random(&[4, 5], rng)
        ],
        |rng: &mut ChaCha8Rng| {
            let w = weights(15, rng);
            graph_fn(move |tape, l| readout(l[0].matmul(l[1])?, tape, &w))
        }
    );
    run!(
        "transpose",
        |rng: &mut ChaCha8Rng| vec![LeafSpec::random(&[3, 5], rng)],
        |rng: &mut ChaCha8Rng| {
            let w = weights(15, rng);
            graph_fn(move |tape, l| readout(l[0].transpose()?, tape, &w))
        }
    );
    run!(
        "softmax",
        |rng: &mut ChaCha8Rng| vec![LeafSpec::random(&[4, 5], rng)],
        |rng: &mut ChaCha8Rng| {
            let axis = rng.gen_range(0..2usize);
            let w = weights(20, rng);
            graph_fn(move |tape, l| readout(l[0].softmax(axis)?, tape, &w))
        }
    );
    run!(
        "gelu",
        |rng: &mut ChaCha8Rng| {
            let mut l = LeafSpec::random(&[3, 4], rng);
            for v in l.values.iter_mut() {
                *v *= 2.0;
            }
            vec![l]
        },
        |rng: &mut ChaCha8Rng| {
            let w = weights(12, rng);
            graph_fn(move |tape, l| readout(l[0].gelu(), tape, &w))
        }
    );
    run!(
        "layernorm",
        |rng: &mut ChaCha8Rng| vec![
            LeafSpec::random(&[4, 6], rng),
            LeafSpec::random(&[6], rng),
            LeafSpec::random(&[6], rng)
        ],
        |rng: &mut ChaCha8Rng| {
            let w = weights(24, rng);
            graph_fn(move |tape, l| {
                readout(l[0].layernorm(l[1], l[2], 1e-5)?, tape, &w)
            })
        }
    );
    run!(
        "depthwise_conv1d",
        |rng: &mut ChaCha8Rng| vec![
            LeafSpec::random(&[7, 3], rng),
            LeafSpec::random(&[3, 3], rng)
        ],
        |rng: &mut ChaCha8Rng| {
            let w = weights(21, rng);
            graph_fn(move |tape, l| readout(l[0].depthwise_conv1d(l[1])?, tape, &w))
        }
    );
    run!(
        "embed",
        |rng: &mut ChaCha8Rng| vec![LeafSpec::random(&[7, 4], rng)],
        |rng: &mut ChaCha8Rng| {
            let ids: Vec<u32> = (0..5).map(|_| rng.gen_range(0..7u32)).collect();
            let w = weights(20, rng);
            graph_fn(move |tape, l| readout(tape.embed(l[0], &ids)?, tape, &w))
        }
    );
    run!(
        "cross_entropy_nll",
        |rng: &mut ChaCha8Rng| vec![LeafSpec::random(&[5, 7], rng)],
        |rng: &mut ChaCha8Rng| {
            let targets: Vec<u32> = (0..5).map(|_| rng.gen_range(0..7u32)).collect();
            let reduce = if rng.gen_range(0..2) == 0 {
                super::Reduce::Mean
            } else {
                super::Reduce::Sum
            };
            let c = 1.0 + standard_normal(rng).abs();
            graph_fn(move |_tape, l| {
                Ok(l[0].cross_entropy_nll(&targets, reduce)?.scale(c))
            })
        }
    );
    run!(
        "sum",
        |rng: &mut ChaCha8Rng| vec![LeafSpec::random(&[3, 4], rng)],
        |rng: &mut ChaCha8Rng| {
            let c = standard_normal(rng);
            graph_fn(move |_tape, l| Ok(l[0].sum().scale(c)))
        }
    );
    run!(
        "slice_cols",
        |rng: &mut ChaCha8Rng| vec![LeafSpec::random(&[4, 6], rng)],
        |rng: &mut ChaCha8Rng| {
            let start = rng.gen_range(0..3usize);
            let len = rng.gen_range(1..=3usize);
            let w = weights(4 * len, rng);
            graph_fn(move |tape, l| readout(l[0].slice_cols(start, len)?, tape, &w))
        }
    );
    run!(
        "concat_cols",
        |rng: &mut ChaCha8Rng| vec![
            LeafSpec::random(&[4, 2], rng),
            LeafSpec::random(&[4, 3], rng)
        ],
        |rng: &mut ChaCha8Rng| {
            let w = weights(20, rng);
            graph_fn(move |tape, l| {
                readout(tape.concat_cols(&[l[0], l[1]])?, tape, &w)
            })
        }
    );
    // Composite chain touching most ops end to end.
    run!(
        "composite_chain",
        |rng: &mut ChaCha8Rng| vec![
            LeafSpec::random(&[3, 4], rng),
            LeafSpec::random(&[4, 6], rng),
            LeafSpec::random(&[6], rng),
            LeafSpec::random(&[6], rng),
            LeafSpec::random(&[6], rng),
        ],
        |rng: &mut ChaCha8Rng| {
            let targets: Vec<u32> = (0..3).map(|_| rng.gen_range(0..6u32)).collect();
            graph_fn(move |_tape, l| {
                let h = l[0].matmul(l[1])?.add_bias(l[2])?.gelu();
                let n = h.layernorm(l[3], l[4], 1e-5)?;
                n.cross_entropy_nll(&targets, super::Reduce::Mean)
            })
        }
    );

    Ok(out)
}

/// ∂out/∂leaves[li][ci] by central difference; rebuilds the graph twice.
fn central_diff_at<F>(
    build: &F,
    leaves: &[LeafSpec],
    li: usize,
    ci: usize,
    h: f64,
) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Tensor<'t>]) -> Result<Tensor<'t>>,
{
    let eval_at = |delta: f64| -> Result<f64> {
        let tape = Tape::new();
        let handles: Vec<Tensor<'_>> = leaves
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let mut vals = l.values.clone();
                if i == li {
                    vals[ci] += delta;
                }
                tape.leaf(&l.shape, vals)
            })
            .collect::<Result<_>>()?;
        Ok(build(&tape, &handles)?.value())
    };
    let plus = eval_at(h)?;
    let minus = eval_at(-h)?;
    Ok((plus - minus) / (2.0 * h))
}
