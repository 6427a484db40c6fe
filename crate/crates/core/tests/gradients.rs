mod support;

use support::gradient_suite::{run_all, TOLERANCE};

#[test]
fn every_op_loss_and_objective_matches_finite_differences() {
    let results = run_all().unwrap();
    let failures: Vec<String> = results
        .iter()
        .filter(|r| !(r.max_error < TOLERANCE))
        .map(|r| format!("{}: {:.3e}", r.name, r.max_error))
        .collect();
    assert!(failures.is_empty(), "gradient mismatches: {failures:?}");
}

