//! Central finite-difference checks of every differentiable operation.

mod common;

use relgraph::loss::LossVariant;

use common::fd::{
    encoder_forward_error, full_loss_gradient_error, op_cases, worst_over_seeds, SEEDS, TOL,
};

#[test]
fn every_tape_operation() {
    for (name, case) in op_cases() {
        let err = worst_over_seeds(&case);
        assert!(err <= TOL, "{name}: relative error {err:e}");
    }
}

#[test]
fn encoder_forward() {
    for seed in 0..SEEDS {
        let err = encoder_forward_error(seed);
        assert!(err <= TOL, "encoder seed {seed}: relative error {err:e}");
    }
}

#[test]
fn full_pairwise_loss() {
    for seed in 0..SEEDS {
        let err = full_loss_gradient_error(LossVariant::Pair, seed);
        assert!(err <= TOL, "pairwise seed {seed}: {err:e}");
    }
}

#[test]
fn full_listwise_loss() {
    for seed in 0..SEEDS {
        let err = full_loss_gradient_error(LossVariant::List, seed);
        assert!(err <= TOL, "listwise seed {seed}: {err:e}");
    }
}
