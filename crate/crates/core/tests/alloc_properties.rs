use multifair::alloc::{
    bmf_oracle, check_bmf, check_properties, kkt_residual, solve_bmf, solve_drf, solve_pf,
};
use multifair::{normalize, solve, AllocObjective, RequirementMatrix, TOL};
use proptest::prelude::*;

/// Random normalized matrix; entries are sometimes exactly zero.
fn matrix(max_k: usize, max_j: usize) -> impl Strategy<Value = RequirementMatrix> {
    (1..=max_k, 1..=max_j).prop_flat_map(|(k, j)| {
        prop::collection::vec(
            prop::collection::vec(prop_oneof![1 => Just(0.0), 4 => 0.01f64..1.0], j),
            k,
        )
        .prop_map(|mut rows| {
            for (i, row) in rows.iter_mut().enumerate() {
                let col = i % row.len();
                row[col] = row[col].max(0.05);
            }
            normalize(&rows).unwrap().matrix
        })
    })
}

fn with_mult(max_k: usize, max_j: usize, max_n: u32) -> impl Strategy<Value = (RequirementMatrix, Vec<u32>)> {
    matrix(max_k, max_j).prop_flat_map(move |m| {
        let k = m.classes();
        (Just(m), prop::collection::vec(1..=max_n, k))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn every_objective_is_feasible_efficient_and_incentive_compatible((req, mult) in with_mult(5, 5, 4)) {
        for objective in AllocObjective::ALL {
            let alloc = solve(objective, &req, &mult).unwrap();
            let report = check_properties(&req, &alloc);
            prop_assert!(report.capacity, "{objective}: {report:?}");
            prop_assert!(report.pareto_efficient, "{objective}: {report:?}");
            prop_assert!(report.sharing_incentive, "{objective}: {report:?}");
            prop_assert!(report.passes(objective), "{objective}: {report:?}");
        }
    }

    #[test]
    fn pf_kkt_residuals_are_tight((req, mult) in with_mult(5, 5, 20)) {
        let alloc = solve_pf(&req, &mult).unwrap();
        let kkt = kkt_residual(&req, &alloc).unwrap();
        prop_assert!(kkt.stationarity <= 1e-8, "{kkt:?}");
        prop_assert!(kkt.complementarity <= 1e-8, "{kkt:?}");
        prop_assert!(kkt.dual_infeasibility == 0.0);
    }

    #[test]
    fn solvers_handle_crowded_states((req, mult) in with_mult(4, 4, 2000)) {
        for objective in AllocObjective::ALL {
            let alloc = solve(objective, &req, &mult).unwrap();
            prop_assert!(check_properties(&req, &alloc).passes(objective), "{objective}");
        }
    }

    #[test]
    fn pf_has_no_improving_feasible_direction(
        (req, mult) in with_mult(4, 4, 3),
        seeds in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 1000),
    ) {
        let alloc = solve_pf(&req, &mult).unwrap();
        for delta in seeds {
            let trial: Vec<f64> = alloc.phi.iter().zip(&delta).map(|(p, d)| (p * (1.0 + d)).max(0.0)).collect();
            // pull the perturbed point back inside the capacity region
            let worst = req.resource_loads(&trial, &mult).into_iter().fold(0.0, f64::max);
            let scale = if worst > 1.0 { 1.0 / worst } else { 1.0 };
            let change: f64 = trial
                .iter()
                .zip(&alloc.phi)
                .zip(&mult)
                .map(|((t, p), &n)| f64::from(n) * (t * scale - p) / p)
                .sum();
            prop_assert!(change <= 1e-8, "proportional change {change}");
        }
    }

    #[test]
    fn bmf_equals_pf_on_two_by_two(req in matrix(2, 2).prop_filter("2x2", |m| m.classes() == 2 && m.resources() == 2)) {
        let bmf = solve_bmf(&req, &[1, 1]).unwrap();
        let pf = solve_pf(&req, &[1, 1]).unwrap();
        for (a, b) in bmf.allocation.phi.iter().zip(&pf.phi) {
            prop_assert!((a - b).abs() <= 1e-6, "bmf {:?} pf {:?}", bmf.allocation.phi, pf.phi);
        }
    }

    #[test]
    fn single_resource_gives_equal_slot_shares(mult in prop::collection::vec(1u32..6, 1..6)) {
        let req = RequirementMatrix::new(&vec![vec![1.0]; mult.len()]).unwrap();
        let n: u32 = mult.iter().sum();
        for objective in AllocObjective::ALL {
            let alloc = solve(objective, &req, &mult).unwrap();
            for phi in &alloc.phi {
                prop_assert!((phi - 1.0 / f64::from(n)).abs() <= TOL);
            }
        }
    }

    #[test]
    fn bmf_output_passes_checker_and_mapping_is_consistent((req, mult) in with_mult(5, 4, 5)) {
        let sol = solve_bmf(&req, &mult).unwrap();
        let phi = &sol.allocation.phi;
        prop_assert!(check_bmf(&req, &mult, phi, TOL, TOL).satisfied);
        let loads = sol.allocation.loads(&req);
        for (k, &j) in sol.mapping.resource.iter().enumerate() {
            prop_assert!(loads[j] >= 1.0 - 1e-7);
            let top = (0..req.classes()).map(|i| phi[i] * req.get(i, j)).fold(0.0, f64::max);
            prop_assert!(phi[k] * req.get(k, j) >= top - 1e-7);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn bmf_lies_near_an_oracle_point(req in matrix(3, 3)) {
        let mult = vec![1; req.classes()];
        let step = 1.0 / 100.0;
        let sol = solve_bmf(&req, &mult).unwrap();
        let grid = bmf_oracle(&req, &mult, step).unwrap();
        let d = grid.nearest_distance(&sol.allocation.phi).unwrap();
        prop_assert!(d <= step, "distance {d}");
    }

    #[test]
    fn two_resource_oracle_has_one_cluster(req in matrix(3, 2).prop_filter("two resources", |m| m.resources() == 2)) {
        let mult = vec![1; req.classes()];
        let grid = bmf_oracle(&req, &mult, 1.0 / 100.0).unwrap();
        prop_assert!(!grid.is_empty());
        prop_assert_eq!(grid.clusters(), 1);
    }
}

#[test]
fn drf_is_not_gamed_by_the_pf_manipulation() {
    // the PF manipulation from the two-transaction example does not help under DRF
    let truthful = RequirementMatrix::new(&[vec![0.5, 1.0], vec![1.0, 0.5]]).unwrap();
    let lying = RequirementMatrix::new(&[vec![2.0 / 3.0, 1.0], vec![1.0, 0.5]]).unwrap();
    let t = solve_drf(&truthful, &[1, 1]).unwrap();
    let l = solve_drf(&lying, &[1, 1]).unwrap();
    assert!(l.phi[0] <= t.phi[0] + TOL);

    let t = solve_pf(&truthful, &[1, 1]).unwrap();
    let l = solve_pf(&lying, &[1, 1]).unwrap();
    assert!(l.phi[0] > t.phi[0]);
}
