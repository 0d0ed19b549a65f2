//! Monte-Carlo check of the closed-form LSN population gradients against
//! hinge-loss minibatch gradients of a real one-hidden-layer network.

mod common;

use common::mc::*;

#[test]
fn output_weights_have_opposite_signs() {
    let m = network(settings(1)[0]);
    let v = m.output_weights();
    assert!(v[0] * v[1] < 0.0);
    assert!((v[0].abs() - 0.5f64.sqrt()).abs() < 1e-15);
}

#[test]
fn large_sample_gradients_match_closed_forms() {
    let n = 1_000_000;
    let tol = 5.0 * ((n as f64).ln() / n as f64).sqrt();
    let worst = worst_error(50, n);
    assert!(worst < tol, "error {worst} exceeds {tol}");
}

#[test]
fn error_decays_with_sample_size() {
    let slope = error_slope(50, &[1_000, 10_000, 100_000, 1_000_000]);
    assert!(slope <= -0.4, "log-log slope {slope}");
}
