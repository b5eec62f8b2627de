mod common;

#[test]
fn linear_groups_match_enumeration() {
    let feasible = common::oracle_suite(11, 150, 0).unwrap();
    assert!(feasible > 50, "only {feasible} feasible cases");
}

#[test]
fn ensemble_groups_match_enumeration() {
    let feasible = common::oracle_suite(23, 0, 80).unwrap();
    assert!(feasible > 20, "only {feasible} feasible cases");
}
