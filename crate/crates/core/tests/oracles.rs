mod support;

use support::oracle;

#[test]
fn sage_forward_matches_oracle() {
    oracle::sage().unwrap();
}

#[test]
fn graph_norm_matches_oracle() {
    oracle::graph_norm().unwrap();
}

#[test]
fn lstm_step_matches_oracle() {
    oracle::lstm_step().unwrap();
}

#[test]
fn two_day_three_node_model_matches_oracle() {
    oracle::two_day_three_node_model().unwrap();
}

#[test]
fn ten_node_default_model_matches_oracle() {
    oracle::ten_node_default_model().unwrap();
}
