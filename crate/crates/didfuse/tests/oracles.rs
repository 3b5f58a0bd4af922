//! Randomized equivalence checks against independent brute-force
//! implementations. The reference implementations and trial runners live in
//! `common::oracle` so the acceptance suite can run them too.

mod common;

use common::oracle;

#[test]
fn conv3x3_matches_brute_force() {
    oracle::conv3x3_trials();
}

#[test]
fn box_blur_matches_brute_force() {
    oracle::box_blur_trials();
}

#[test]
fn guided_filter_matches_brute_force() {
    oracle::guided_filter_trials();
}

#[test]
fn saliency_matches_pairwise_form() {
    oracle::saliency_trials();
}

#[test]
fn ssim_matches_scalar_reference() {
    oracle::ssim_trials();
}

#[test]
fn scalar_metrics_match_direct_loops() {
    oracle::scalar_metric_trials();
}

#[test]
fn vif_matches_independent_implementation() {
    oracle::vif_trials();
}
