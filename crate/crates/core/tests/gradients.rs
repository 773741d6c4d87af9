mod support;

use support::fd;

#[test]
fn sage_layer_gradients() {
    fd::sage_layer().unwrap();
}

#[test]
fn graph_norm_gradients() {
    fd::graph_norm_layer().unwrap();
}

#[test]
fn lstm_step_gradients() {
    fd::lstm_step_layer().unwrap();
}

#[test]
fn linear_head_gradients() {
    fd::linear_head().unwrap();
}

#[test]
fn full_model_gradients() {
    fd::full_model().unwrap();
}

#[test]
fn replay_is_bit_identical() {
    assert!(fd::replay_is_bit_identical());
}
