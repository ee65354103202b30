mod common;

use common::{gradient_suite, INSTANCES};

#[test]
fn every_differentiable_op_matches_finite_differences() {
    let suite = gradient_suite().unwrap();
    assert_eq!(suite.len(), 9);
    for (op, err) in suite {
        assert!(
            err < 1e-6,
            "{op}: worst relative error {err:e} over {INSTANCES} instances"
        );
    }
}
