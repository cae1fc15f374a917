//! Sweep the whole finite-difference registry. Slow-ish but the single most
//! load-bearing correctness check in the workspace.

use micseg_train::{run_cases, GRADCHECK_TOL};

#[test]
fn every_registered_operation_passes_two_trials() {
    let outcomes = run_cases("all", 2, 0, GRADCHECK_TOL).unwrap();
    let mut failed = Vec::new();
    for o in &outcomes {
        println!(
            "{:24} trials {} checked {:5} worst {:.3e} at {}",
            o.name, o.trials, o.checked, o.worst_rel, o.worst_param
        );
        if !o.passed {
            failed.push(o.name);
        }
    }
    assert!(failed.is_empty(), "failing cases: {failed:?}");
}
