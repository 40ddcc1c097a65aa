use viewfuse::model::gradcheck::{check_gradients, run_suite, Tolerance};
use viewfuse::model::Tensor;

#[test]
fn every_head_and_loss_matches_finite_differences() {
    let results = run_suite(20, 11, Tolerance::default()).unwrap();
    assert_eq!(results.len(), 12);
    for (name, r) in &results {
        assert!(r.passed(), "{name}: {r:?}");
    }
}

#[test]
fn checker_flags_a_wrong_gradient() {
    // detach hides the dependence from the tape, so the analytic gradient is
    // zero while the numeric one is 2x.
    let x = Tensor::from_vec(1, 3, vec![0.5, -1.0, 2.0]).unwrap();
    let r = check_gradients(
        std::slice::from_ref(&x),
        |g, v| {
            let d = g.detach(v[0]);
            let p = g.mul(v[0], d);
            g.mean(p)
        },
        Tolerance::default(),
        3,
    );
    assert_eq!(r.checked, 3);
    assert_eq!(r.failures, 3);
}
