use dgen::gradcheck::{run_suite, SuiteOptions, TOLERANCE};
use dgen::tensor::OpKind;

#[test]
fn full_suite_passes_and_covers_every_operation() {
    let report = run_suite(SuiteOptions::default()).unwrap();
    for check in &report.checks {
        println!("{check}");
    }
    assert!(report.uncovered.is_empty(), "uncovered: {:?}", report.uncovered);
    assert!(report.passed());
}

#[test]
fn suite_passes_under_another_seed() {
    let report = run_suite(SuiteOptions {
        seed: 17,
        ..SuiteOptions::default()
    })
    .unwrap();
    let worst = report.checks.iter().map(|c| c.max_error).fold(0.0, f64::max);
    assert!(report.passed(), "worst error {worst}");
    assert!(worst < TOLERANCE);
}

#[test]
fn corrupted_adjoints_are_named() {
    for (kind, check) in [
        (OpKind::Exp, "exp"),
        (OpKind::SegmentSoftmax, "softmax_over_segments"),
        (OpKind::LeakyRelu, "leaky_relu"),
        (OpKind::BceWithLogits, "bce_with_logits"),
    ] {
        let report = run_suite(SuiteOptions {
            corrupt: Some(kind),
            ..SuiteOptions::default()
        })
        .unwrap();
        assert!(!report.passed());
        let failing: Vec<_> = report.failures().map(|c| c.name).collect();
        assert!(failing.contains(&check), "{kind}: {failing:?}");
        assert!(!failing.contains(&"transpose"), "{kind}: {failing:?}");
    }
}
