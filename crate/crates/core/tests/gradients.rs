//! Analytic-vs-numeric gradient battery over every differentiable operation.
//!
//! Central differences (h = 1e-5) recompute the forward pass only, so they
//! are an oracle that cannot share bugs with the reverse sweep.

use amps_core::tensor::gradcheck::{self, FD_STEP, FD_TOL};

#[test]
fn every_op_matches_central_differences() {
    let checks = gradcheck::op_suite(7, 20, FD_STEP).expect("suite construction");
    assert!(checks.len() >= 15, "expected full op coverage");
    for c in &checks {
        println!(
            "op {:<18} instances {:>3}  worst rel err {:.3e}",
            c.name, c.instances, c.worst_rel_err
        );
        assert_eq!(c.instances, 20);
        assert!(
            c.worst_rel_err <= FD_TOL,
            "{}: worst rel err {} exceeds {}",
            c.name,
            c.worst_rel_err,
            FD_TOL
        );
    }
}
