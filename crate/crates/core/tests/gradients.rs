mod common;

use common::{layer_suite, model_check, straight_through_error};

#[test]
fn every_layer_matches_finite_differences() {
    let failed: Vec<String> = layer_suite()
        .into_iter()
        .filter(|(_, r)| !r.passed())
        .map(|(name, r)| format!("{name}: {:?}", r.failures()))
        .collect();
    assert!(failed.is_empty(), "{failed:#?}");
}

#[test]
fn micro_model_matches_finite_differences() {
    let r = model_check();
    assert!(r.passed(), "{:?}", r.failures());
}

#[test]
fn quantizer_stop_gradients_match_closed_form() {
    let err = straight_through_error();
    assert!(err < 1e-12, "{err:e}");
}
