//! Reverse-mode gradients against central finite differences, one test per
//! group of ops.

mod common;

use common::gradsuite::{self, Records, TOL};

/// Single layers are held to a tighter bound than composite objectives.
const LAYER_TOL: f64 = 1e-5;

fn run(group: fn(&mut Records)) {
    run_within(group, TOL);
}

fn run_within(group: fn(&mut Records), tol: f64) {
    let mut out = Records::new();
    group(&mut out);
    assert!(!out.is_empty());
    let bad: Vec<_> = out.iter().filter(|(_, e)| !(*e <= tol)).collect();
    assert!(bad.is_empty(), "relative error above {tol:e}: {bad:?}");
}

#[test]
fn elementwise_ops() {
    run(gradsuite::elementwise_ops);
}

#[test]
fn prelu() {
    run(gradsuite::prelu_input_and_slope);
}

#[test]
fn reductions_and_shapes() {
    run(gradsuite::reductions_and_shapes);
}

#[test]
fn matrix_ops() {
    run(gradsuite::matrix_ops);
}

#[test]
fn convolution() {
    run_within(gradsuite::convolution, LAYER_TOL);
}

#[test]
fn rearrangements() {
    run(gradsuite::rearrangements);
}

#[test]
fn cosine_rows() {
    run(gradsuite::cosine_rows);
}

#[test]
fn shared_subexpressions() {
    run(gradsuite::shared_subexpressions_sum_path_gradients);
}

#[test]
fn hetconv_layer() {
    run_within(gradsuite::hetconv_layer, LAYER_TOL);
}

#[test]
fn residual_block() {
    run_within(gradsuite::residual_block, LAYER_TOL);
}

#[test]
fn content_and_edge_losses() {
    run(gradsuite::content_and_edge_losses);
}

#[test]
fn critic_scores() {
    run_within(gradsuite::critic_scores, LAYER_TOL);
}

#[test]
fn gradient_penalty() {
    run(gradsuite::gradient_penalty_through_critic_parameters);
}

#[test]
fn full_generator_objective() {
    run(gradsuite::full_generator_objective);
}

#[test]
fn groups_cover_every_check() {
    assert_eq!(gradsuite::GROUPS.len(), 14);
}
