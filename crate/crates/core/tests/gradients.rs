mod common;

use common::{all_passed, attack_objective_check, primitive_checks, total_loss_check};

#[test]
fn every_primitive_matches_finite_differences() {
    for (name, c) in primitive_checks() {
        assert!(all_passed(&c), "{name}: {}/{} passed, max rel err {:.2e}", c.passed, c.checked, c.max_rel_err);
    }
}

#[test]
fn total_loss_matches_finite_differences() {
    let c = total_loss_check(5);
    assert!(all_passed(&c), "{}/{} passed, max rel err {:.2e}", c.passed, c.checked, c.max_rel_err);
}

#[test]
fn attack_objective_matches_finite_differences_through_degrees() {
    for frozen in [false, true] {
        let c = attack_objective_check(6, frozen);
        assert!(all_passed(&c), "frozen={frozen}: {}/{} passed, max rel err {:.2e}", c.passed, c.checked, c.max_rel_err);
    }
}
