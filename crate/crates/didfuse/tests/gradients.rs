//! Analytic gradients vs central finite differences, at f64 precision:
//! every differentiable operation individually (tolerance 1e-4) and the full
//! composite objective through a width-8 network on a two-pair 16x16 batch
//! (tolerance 1e-3). The check routines live in `common::grads` so the
//! acceptance suite can run them too.

mod common;

use common::grads;

#[test]
fn conv3x3_gradients_both_paddings() {
    grads::check_conv3x3_both_paddings();
}

#[test]
fn window_conv_gradients() {
    grads::check_window_conv();
}

#[test]
fn batch_norm_gradients_train_mode() {
    grads::check_batch_norm_train_mode();
}

#[test]
fn activation_gradients() {
    grads::check_activations();
}

#[test]
fn elementwise_and_reduction_gradients() {
    grads::check_elementwise_and_reductions();
}

#[test]
fn concat_and_diff_gradients() {
    grads::check_concat_and_diffs();
}

#[test]
fn loss_component_gradients() {
    grads::check_loss_components();
}

#[test]
fn full_network_objective_gradients() {
    grads::check_full_network_objective();
}
