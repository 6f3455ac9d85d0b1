mod oracles;

use oracles::grad::{check_case, CASES};

#[test]
fn every_op_and_loss_matches_finite_differences() {
    let mut worst = (0.0, "", 0);
    for name in CASES {
        for seed in 0..12 {
            let report =
                check_case(name, seed).unwrap_or_else(|e| panic!("{name} seed {seed}: {e}"));
            let err = report.max_rel_error();
            assert!(err < 1e-3, "{name} seed {seed}: relative error {err:.3e}");
            if err > worst.0 {
                worst = (err, name, seed);
            }
        }
    }
    eprintln!(
        "worst relative error {:.2e} ({} seed {})",
        worst.0, worst.1, worst.2
    );
}

#[test]
fn a_broken_rule_is_caught() {
    // Dropping the chain rule through sigmoid must show up in the checker.
    use canopy_core::gradcheck::{check, DEFAULT_STEP};
    use canopy_core::Tensor;
    let x = Tensor::new([3], vec![0.3, -1.2, 2.0]).unwrap();
    let report = check(
        &[x],
        |t, v| {
            let s = v[0].sigmoid()?;
            // Detach: the tape sees a constant, the finite difference does not.
            let c = t.constant(s.value().as_ref().clone());
            c.mul(v[0])?.sum()
        },
        DEFAULT_STEP,
    )
    .unwrap();
    assert!(report.max_rel_error() > 1e-2);
}
