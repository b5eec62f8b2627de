mod common;

use groupcf::analysis::{explain_collective, pareto_sweep};
use groupcf::domain::{changed_features, cost_of, CostParams};
use groupcf::formulation::{audit_big_m, VarKind, VarTag};
use groupcf::scorers::{ancestor_splits, ensemble_score, leaf_of, linear_score, Scorer};
use groupcf::solver::{solve_miqp, solve_relaxation, SolveStatus};
use groupcf::Matrix;
use proptest::prelude::*;
use rand::Rng;

fn matrices(seed: u64) -> (Matrix<f64>, Matrix<f64>) {
    let mut r = common::rng(seed);
    let (n, j) = (r.gen_range(1..5), r.gen_range(1..5));
    let x0: Vec<Vec<f64>> = (0..n).map(|_| (0..j).map(|_| r.gen_range(-2.0..2.0)).collect()).collect();
    let x: Vec<Vec<f64>> = x0
        .iter()
        .map(|row| {
            row.iter()
                .map(|&v| if r.gen_bool(0.4) { v + r.gen_range(-1.0..1.0) } else { v })
                .collect()
        })
        .collect();
    (Matrix::from_rows(&x0).unwrap(), Matrix::from_rows(&x).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cost_is_zero_only_without_changes(seed in any::<u64>(), li in 0.0f64..1.0, lg in 0.0f64..1.0) {
        let (x0, x) = matrices(seed);
        let p = CostParams::new(li, lg).unwrap();
        prop_assert_eq!(cost_of(&x0, &x0, &p).unwrap(), 0.0);
        let moved = x0.as_slice().iter().zip(x.as_slice()).any(|(a, b)| (a - b).abs() > p.tau);
        prop_assert_eq!(cost_of(&x0, &x, &p).unwrap() > 0.0, moved);
    }

    #[test]
    fn cost_grows_with_both_weights(seed in any::<u64>(), li in 0.0f64..1.0, lg in 0.0f64..1.0, d in 0.0f64..1.0) {
        let (x0, x) = matrices(seed);
        let base = cost_of(&x0, &x, &CostParams::new(li, lg).unwrap()).unwrap();
        prop_assert!(cost_of(&x0, &x, &CostParams::new(li + d, lg).unwrap()).unwrap() >= base);
        prop_assert!(cost_of(&x0, &x, &CostParams::new(li, lg + d).unwrap()).unwrap() >= base);
    }

    #[test]
    fn global_term_counts_changed_columns(seed in any::<u64>()) {
        let (x0, x) = matrices(seed);
        let p = CostParams::new(0.0, 1.0).unwrap();
        let q: f64 = x0.as_slice().iter().zip(x.as_slice()).map(|(a, b)| (a - b) * (a - b)).sum();
        let columns = (0..x0.ncols())
            .filter(|&j| (0..x0.nrows()).any(|i| (x0.get(i, j) - x.get(i, j)).abs() > p.tau))
            .count();
        prop_assert!((cost_of(&x0, &x, &p).unwrap() - q - columns as f64).abs() < 1e-12);
        prop_assert_eq!(changed_features(&x0, &x, p.tau).unwrap().global_count(), columns);
    }

    #[test]
    fn cost_ignores_row_order(seed in any::<u64>(), li in 0.0f64..1.0, lg in 0.0f64..1.0) {
        let (x0, x) = matrices(seed);
        let rev = |m: &Matrix<f64>| {
            let rows: Vec<Vec<f64>> = (0..m.nrows()).rev().map(|i| m.row(i).to_vec()).collect();
            Matrix::from_rows(&rows).unwrap()
        };
        let p = CostParams::new(li, lg).unwrap();
        let a = cost_of(&x0, &x, &p).unwrap();
        let b = cost_of(&rev(&x0), &rev(&x), &p).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }

    #[test]
    fn ensemble_score_sums_positive_votes(seed in any::<u64>(), x in prop::collection::vec(-1.5f64..1.5, 3)) {
        let mut r = common::rng(seed);
        let e = common::random_ensemble(&mut r, 3, 3, 3);
        let mut want = 0.0;
        for t in &e.trees {
            let leaf = leaf_of(&t.root, &x);
            let hits: Vec<_> = t.root.leaves().into_iter().filter(|&(id, _)| id == leaf).collect();
            prop_assert_eq!(hits.len(), 1);
            if hits[0].1 == 1 {
                want += t.weight;
            }
            let path = ancestor_splits(&t.root, leaf).unwrap();
            prop_assert!(path.left.iter().all(|s| x[s.feature] <= s.threshold));
            prop_assert!(path.right.iter().all(|s| x[s.feature] > s.threshold));
        }
        prop_assert!((ensemble_score(&e, &x) - want).abs() < 1e-12);
    }

    #[test]
    fn linear_score_is_affine(seed in any::<u64>(), a in -2.0f64..2.0) {
        let c = common::random_linear_case(&mut common::rng(seed), 2, 4, false);
        let m = c.linear();
        let (x, y) = (c.group.instance(0), c.fs.features().iter().map(|f| f.upper).collect::<Vec<_>>());
        let mix: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + (1.0 - a) * v).collect();
        let lhs = linear_score(m, &mix).unwrap();
        let rhs = a * linear_score(m, x).unwrap() + (1.0 - a) * linear_score(m, &y).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn big_m_rows_switch_off(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let case = if seed % 2 == 0 {
            common::random_linear_case(&mut r, 4, 5, true)
        } else {
            common::random_ensemble_case(&mut r, 3, 4, 3, 3)
        };
        let bad = audit_big_m(&case.problem(), 1e-9);
        prop_assert!(bad.is_empty(), "{:?}", bad);
    }

    #[test]
    fn fixing_a_binary_never_lowers_the_relaxation(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let case = common::random_ensemble_case(&mut r, 2, 3, 2, 2);
        let p = case.problem();
        let opts = common::options();
        let root = solve_relaxation(&p, &[], &opts).unwrap();
        let binaries: Vec<usize> = (0..p.n_vars()).filter(|&k| p.vars.get(k).kind == VarKind::Binary).collect();
        let k = binaries[r.gen_range(0..binaries.len())];
        for v in [0.0, 1.0] {
            if v < p.vars.get(k).lower || v > p.vars.get(k).upper {
                continue;
            }
            let child = solve_relaxation(&p, &[(k, v)], &opts).unwrap();
            if root.feasible && child.feasible {
                prop_assert!(child.value >= root.value - 1e-6, "{} < {}", child.value, root.value);
            }
            if !root.feasible {
                prop_assert!(!child.feasible);
            }
        }
    }

    #[test]
    fn search_is_deterministic_and_feasible(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let case = if seed % 2 == 0 {
            common::random_linear_case(&mut r, 3, 4, true)
        } else {
            common::random_ensemble_case(&mut r, 3, 3, 2, 2)
        };
        let p = case.problem();
        let a = solve_miqp(&p, &common::options()).unwrap();
        let b = solve_miqp(&p, &common::options()).unwrap();
        prop_assert_eq!(a.status, b.status);
        prop_assert_eq!(a.objective, b.objective);
        prop_assert_eq!(a.nodes, b.nodes);
        if let Some(v) = &a.incumbent {
            prop_assert!(p.max_violation(v) <= 1e-6);
            prop_assert!(p.is_integral_at(v, 1e-6));
            if a.status == SolveStatus::Optimal {
                let gap = (a.objective.unwrap() - a.bound) / a.objective.unwrap().abs().max(1.0);
                prop_assert!(gap <= 1e-6);
            }
            if let Scorer::Linear(m) = &case.scorer {
                // Product variables equal selection times score.
                for i in 0..case.group.n_instances() {
                    let Some(u) = p.value_of(v, VarTag::ScoreProduct { instance: i }) else { continue };
                    let y = p.value_of(v, VarTag::Select { instance: i }).unwrap_or(1.0);
                    let x = common::decode_x(&p, v);
                    let s = linear_score(m, x.row(i)).unwrap();
                    prop_assert!((u - y * s).abs() < 1e-6, "u {} vs {}", u, y * s);
                }
            }
        }
    }

    #[test]
    fn untouched_rows_and_validity(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let case = if seed % 2 == 0 {
            common::random_linear_case(&mut r, 4, 3, false)
        } else {
            common::random_ensemble_case(&mut r, 3, 3, 2, 2)
        };
        let e = explain_collective(&case.group, &case.scorer, &case.fs, &case.cost, case.i_star, &common::options()).unwrap();
        if e.status == SolveStatus::Optimal {
            let x = e.counterfactual.as_ref().unwrap();
            let bad = common::validity_problems(case.group.x0(), x, &e.selected, &case.scorer, case.i_star);
            prop_assert!(bad.is_empty(), "{:?}", bad);
            prop_assert!(e.validity_violations(&case.scorer).is_empty());
        }
    }

    #[test]
    fn pareto_front_is_monotone(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let case = common::random_linear_case(&mut r, 3, 4, false);
        let j = case.group.n_features();
        let range: Vec<usize> = (0..=j).collect();
        let pts = pareto_sweep(&case.group, case.linear(), &case.fs, common::TAU, case.i_star, &range, &common::options()).unwrap();
        let mut seen_feasible = false;
        let mut last = f64::INFINITY;
        for p in &pts {
            match p.status {
                SolveStatus::Optimal => {
                    seen_feasible = true;
                    let c = p.quadratic_cost.unwrap();
                    prop_assert!(c <= last + 1e-6 * last.abs().max(1.0), "F={} cost {} after {}", p.f_max, c, last);
                    prop_assert!(p.changed_features.len() <= p.f_max);
                    last = c;
                }
                SolveStatus::Infeasible => prop_assert!(!seen_feasible, "F={} infeasible after a feasible point", p.f_max),
                s => prop_assert!(false, "unexpected {:?}", s),
            }
        }
    }
}
