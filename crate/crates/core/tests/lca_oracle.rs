mod common;

use common::oracles::lca_lasso_gap;
use proptest::prelude::*;
use scene_factor::lca::{soft_threshold, LcaParams, LcaState};

#[test]
fn lca_matches_coordinate_descent_lasso() {
    for trial in 0..20u64 {
        let gap = lca_lasso_gap(trial);
        assert!(gap < 1e-4, "trial {trial}: largest coefficient gap {gap}");
    }
}

proptest! {
    #[test]
    fn threshold_shrinks_toward_zero(u in prop::collection::vec(-5.0f64..5.0, 1..40), lambda in 0.0f64..2.0) {
        let x = soft_threshold(&u, lambda, false);
        for (a, b) in u.iter().zip(&x) {
            prop_assert!(b.abs() <= a.abs());
            prop_assert!(*b == 0.0 || b.signum() == a.signum());
            prop_assert!((a - b).abs() <= lambda + 1e-12);
        }
        let pos = soft_threshold(&u, lambda, true);
        prop_assert!(pos.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn from_output_reproduces_output(x in prop::collection::vec(-3.0f64..3.0, 1..30), lambda in 0.01f64..1.0) {
        let params = LcaParams { lambda, delta: 0.05, nonnegative: false };
        let st = LcaState::<f64>::from_output(&x, params);
        for (a, b) in st.x.iter().zip(&x) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
