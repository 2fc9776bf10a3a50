//! Matched-pairs segment-level significance test for two systems.
//!
//! Each utterance contributes the difference between the two systems' error
//! counts. Under the null hypothesis the differences have zero mean, so the
//! studentized mean difference is referred to a standard normal and reported
//! as a two-sided p-value.

use serde::{Deserialize, Serialize};

use crate::error::{AmpsError, Result};

/// Outcome of a matched-pairs error comparison.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapsweReport {
    /// Number of paired segments.
    pub n: usize,
    /// Mean of `err_a[i] - err_b[i]`.
    pub mean_diff: f64,
    /// Sample standard deviation of the differences.
    pub sd: f64,
    /// Studentized statistic `mean / (sd / sqrt(n))`. Infinite in the
    /// degenerate constant-gap case; JSON stores that as `null`, which reads
    /// back as NaN — renderers recover the sign from `mean_diff`.
    #[serde(deserialize_with = "f64_lossy")]
    pub z: f64,
    /// Two-sided p-value `2 * (1 - Phi(|z|))`.
    pub p: f64,
}

/// Accepts `null` (how JSON spells a non-finite f64) as NaN.
fn f64_lossy<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

/// Compares per-utterance error counts of systems A and B.
///
/// The vectors must be aligned (same utterances, same order) and hold at
/// least two segments; otherwise no variance estimate exists. When every
/// difference is identical the statistic degenerates: equal systems give
/// `p = 1`, a constant nonzero gap gives `p = 0`.
pub fn mapsswe(err_a: &[i64], err_b: &[i64]) -> Result<MapsweReport> {
    if err_a.len() != err_b.len() {
        return Err(AmpsError::ShapeMismatch {
            op: "mapsswe",
            lhs: vec![err_a.len()],
            rhs: vec![err_b.len()],
        });
    }
    let n = err_a.len();
    if n < 2 {
        return Err(AmpsError::DegenerateExtent { op: "mapsswe", extent: n, shape: vec![n] });
    }

    let diffs: Vec<f64> = err_a.iter().zip(err_b).map(|(&a, &b)| (a - b) as f64).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let ss: f64 = diffs.iter().map(|d| (d - mean) * (d - mean)).sum();
    let sd = (ss / (n as f64 - 1.0)).sqrt();

    let (z, p) = if sd == 0.0 {
        if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (f64::INFINITY.copysign(mean), 0.0)
        }
    } else {
        let z = mean / (sd / (n as f64).sqrt());
        (z, 2.0 * (1.0 - normal_cdf(z.abs())))
    };
    Ok(MapsweReport { n, mean_diff: mean, sd, z, p })
}

/// Standard normal CDF.
fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

#[cfg(test)]
mod tests {
    use super::*;

    // Error counts whose differences are [2, 0, 1, -1, 2, 1, 0, 1].
    const ERR_A: [i64; 8] = [3, 1, 2, 0, 3, 2, 1, 2];
    const ERR_B: [i64; 8] = [1, 1, 1, 1, 1, 1, 1, 1];

    #[test]
    fn hand_worked_case() {
        let r = mapsswe(&ERR_A, &ERR_B).unwrap();
        assert_eq!(r.n, 8);
        assert!((r.mean_diff - 0.75).abs() < 1e-12);
        assert!((r.sd - 1.0351).abs() < 1e-4);
        assert!((r.z - 2.0494).abs() < 1e-4, "z = {}", r.z);
        assert!((r.p - 0.0404).abs() < 1e-4, "p = {}", r.p);
    }

    #[test]
    fn swapping_systems_negates_z_and_keeps_p() {
        let fwd = mapsswe(&ERR_A, &ERR_B).unwrap();
        let rev = mapsswe(&ERR_B, &ERR_A).unwrap();
        assert_eq!(fwd.z, -rev.z);
        assert_eq!(fwd.p, rev.p);
    }

    #[test]
    fn shifting_both_systems_changes_nothing() {
        let shifted_a: Vec<i64> = ERR_A.iter().map(|e| e + 5).collect();
        let shifted_b: Vec<i64> = ERR_B.iter().map(|e| e + 5).collect();
        let base = mapsswe(&ERR_A, &ERR_B).unwrap();
        let moved = mapsswe(&shifted_a, &shifted_b).unwrap();
        assert_eq!(base, moved);
    }

    #[test]
    fn degenerate_differences() {
        // Identical systems: no evidence either way.
        let tied = mapsswe(&[2, 2, 3], &[2, 2, 3]).unwrap();
        assert_eq!((tied.z, tied.p), (0.0, 1.0));
        // Constant nonzero gap: zero variance, unambiguous direction.
        let gap = mapsswe(&[3, 3, 3], &[1, 1, 1]).unwrap();
        assert_eq!(gap.z, f64::INFINITY);
        assert_eq!(gap.p, 0.0);
        let gap = mapsswe(&[1, 1, 1], &[3, 3, 3]).unwrap();
        assert_eq!(gap.z, f64::NEG_INFINITY);
        assert_eq!(gap.p, 0.0);
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        assert!(matches!(
            mapsswe(&[1, 2], &[1, 2, 3]),
            Err(AmpsError::ShapeMismatch { .. })
        ));
        assert!(matches!(
            mapsswe(&[1], &[1]),
            Err(AmpsError::DegenerateExtent { .. })
        ));
        assert!(matches!(mapsswe(&[], &[]), Err(AmpsError::DegenerateExtent { .. })));
    }
}
