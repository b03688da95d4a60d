use joint_asr::gradcheck::{run_all, run_suite, SUITES};

#[test]
fn every_suite_passes() {
    let reports = run_all(None).unwrap();
    assert_eq!(reports.len(), SUITES.len());
    for r in &reports {
        println!("{:<20} n={:<5} max_rel_err={:.3e} tol={:.0e}", r.name, r.checked, r.max_rel_err, r.tolerance);
    }
    let failed: Vec<_> = reports.iter().filter(|r| !r.passed).map(|r| &r.name).collect();
    assert!(failed.is_empty(), "failed: {failed:?}");
}

#[test]
fn unknown_suite_is_an_error() {
    assert!(run_suite("nope").is_err());
}
