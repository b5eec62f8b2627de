mod common;

use groupcf::analysis::explain_separable;
use groupcf::domain::{FeasibleSet, FeatureSpec, InstanceGroup};
use groupcf::scorers::{LinearModel, Scorer};

#[test]
fn separable_equals_collective_without_global_term() {
    common::separable_suite(5, 120).unwrap();
}

#[test]
fn selection_is_by_sorted_individual_cost() {
    // Distances 0.5, 1.0 and 2.0 to the halfspace x >= 0 give squared costs
    // 0.25, 1 and 4; the two cheapest are kept.
    let g = InstanceGroup::<f64>::from_rows(&[vec![-0.5], vec![-1.0], vec![-2.0]]).unwrap();
    let fs = FeasibleSet::new(vec![FeatureSpec::continuous("a", -3.0, 3.0)]).unwrap();
    let s = Scorer::Linear(LinearModel::new(vec![1.0], 0.0, 0.0).unwrap());
    let e = explain_separable(&g, &s, &fs, 0.0, 2, &common::options()).unwrap();
    assert!((e.total_cost().unwrap() - 1.25).abs() < 1e-6);
    assert_eq!(e.selected, vec![true, true, false]);
    assert_eq!(e.counterfactual.unwrap().row(2), &[-2.0]);

    let all = explain_separable(&g, &s, &fs, 0.0, 3, &common::options()).unwrap();
    assert!((all.total_cost().unwrap() - 5.25).abs() < 1e-6);
}

#[test]
fn linking_rows_are_refused() {
    use groupcf::domain::{LinkingRow, Sense};
    let g = InstanceGroup::<f64>::from_rows(&[vec![-0.5]]).unwrap();
    let fs = FeasibleSet::with_linking(
        vec![FeatureSpec::continuous("a", -3.0, 3.0)],
        vec![LinkingRow {
            coefficients: vec![(0, 1.0)],
            sense: Sense::Le,
            rhs: 1.0,
        }],
    )
    .unwrap();
    let s = Scorer::Linear(LinearModel::new(vec![1.0], 0.0, 0.0).unwrap());
    assert!(explain_separable(&g, &s, &fs, 0.0, 1, &common::options()).is_err());
}
