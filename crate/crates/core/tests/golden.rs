mod common;

use common::{golden_error, write_golden, GOLDEN_TOL};

/// Rewrites the stored vectors: `cargo test --test golden -- --ignored`.
#[test]
#[ignore]
fn regenerate_golden_vectors() {
    write_golden();
}

#[test]
fn single_precision_matches_golden_vectors() {
    let err = golden_error();
    assert!(err < GOLDEN_TOL, "max deviation {err:e}");
}
