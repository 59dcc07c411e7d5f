mod common;

#[test]
fn linear() {
    common::grad_suite::linear();
}

#[test]
fn elementwise() {
    common::grad_suite::elementwise();
}

#[test]
fn layer_norm() {
    common::grad_suite::layer_norm();
}

#[test]
fn activations() {
    common::grad_suite::activations();
}

#[test]
fn multi_head_attention() {
    common::grad_suite::multi_head_attention();
}

#[test]
fn biased_attention() {
    common::grad_suite::biased_attention();
}

#[test]
fn relative_bias() {
    common::grad_suite::relative_bias();
}

#[test]
fn embedding_and_mse() {
    common::grad_suite::embedding_and_mse();
}

#[test]
fn full_encoder_adapter_path() {
    common::grad_suite::full_encoder_adapter_path();
}
