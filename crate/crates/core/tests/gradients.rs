use cgm_core::selfcheck::{model_gradient, op_gradients, NONLINEAR_TOL};

const TRIALS: u64 = 5;

#[test]
fn every_op_matches_finite_differences() {
    for t in 0..TRIALS {
        for c in op_gradients(t).unwrap() {
            assert!(c.passed(), "trial {t}, {}: {:?} (tolerance {})", c.op, c.report, c.tolerance());
            assert!(c.report.checked > 0);
        }
    }
}

#[test]
fn full_model_loss_matches_finite_differences() {
    for t in 0..3 {
        let worst = model_gradient(t).unwrap();
        assert!(worst <= NONLINEAR_TOL, "trial {t}: max relative error {worst}");
    }
}
