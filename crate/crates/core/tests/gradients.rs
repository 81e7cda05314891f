//! Hand-written gradients against central finite differences.

mod common;

#[test]
fn backward_matches_finite_differences_over_100_seeds() {
    for seed in 0..100u64 {
        let err = common::backward_fd_error(seed);
        assert!(err <= 1e-4, "seed {seed}: relative error {err}");
    }
}

#[test]
fn output_gradient_matches_finite_differences_of_the_lagrangian() {
    for seed in 0..100u64 {
        let err = common::output_gradient_fd_error(seed);
        assert!(err <= 1e-6, "seed {seed}: relative error {err}");
    }
}
