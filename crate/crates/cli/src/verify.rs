//! Self-contained oracle checks behind the `verify` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use multifair::alloc::{bmf_oracle, check_properties, solve_bmf};
use multifair::dynamics::{scale_to_max_load, simulate, stationary_solve, FluidSimConfig, StationaryOptions};
use multifair::packetsim::{measure_static, StaticConfig};
use multifair::{normalize, solve, AllocObjective, RequirementMatrix, WorkloadSpec};

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// A random normalized matrix with up to `max_k` classes and `max_j`
/// resources; about one entry in five is zero.
pub fn random_matrix(rng: &mut impl Rng, max_k: usize, max_j: usize) -> RequirementMatrix {
    let k = rng.random_range(1..=max_k);
    let j = rng.random_range(1..=max_j);
    let rows: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            let mut row: Vec<f64> = (0..j)
                .map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.05..=1.0) })
                .collect();
            if row.iter().all(|&a| a == 0.0) {
                row[rng.random_range(0..j)] = 1.0;
            }
            row
        })
        .collect();
    normalize(&rows).expect("rows have a positive entry").matrix
}

fn outcome(name: &'static str, failures: Vec<String>, total: usize) -> CheckOutcome {
    CheckOutcome {
        name,
        passed: failures.is_empty(),
        detail: if failures.is_empty() {
            format!("{total} cases")
        } else {
            format!("{} of {total} failed; first: {}", failures.len(), failures[0])
        },
    }
}

/// Solver properties and PF KKT residuals on random instances.
fn properties(seed: u64, instances: usize) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cases: Vec<(RequirementMatrix, Vec<u32>)> = (0..instances)
        .map(|_| {
            let req = random_matrix(&mut rng, 5, 5);
            let mult = (0..req.classes()).map(|_| rng.random_range(1..=5)).collect();
            (req, mult)
        })
        .collect();
    let failures: Vec<String> = cases
        .par_iter()
        .flat_map_iter(|(req, mult)| {
            AllocObjective::ALL.into_iter().filter_map(move |o| match solve(o, req, mult) {
                Ok(alloc) if check_properties(req, &alloc).passes(o) => None,
                Ok(alloc) => Some(format!("{o} on {:?} x {mult:?}: {:?}", req.to_rows(), check_properties(req, &alloc))),
                Err(e) => Some(format!("{o} on {:?}: {e}", req.to_rows())),
            })
        })
        .collect();
    outcome("solver properties and KKT residuals", failures, cases.len() * 3)
}

/// BMF solutions lie within one grid step of an exhaustive grid oracle point.
fn oracle(seed: u64, instances: usize) -> CheckOutcome {
    let step = 1.0 / 100.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let cases: Vec<RequirementMatrix> = (0..instances).map(|_| random_matrix(&mut rng, 3, 3)).collect();
    let failures: Vec<String> = cases
        .par_iter()
        .filter_map(|req| {
            let mult = vec![1; req.classes()];
            let phi = match solve_bmf(req, &mult) {
                Ok(sol) => sol.allocation.phi,
                Err(e) => return Some(format!("{:?}: {e}", req.to_rows())),
            };
            let grid = match bmf_oracle(req, &mult, step) {
                Ok(g) => g,
                Err(e) => return Some(format!("{:?}: {e}", req.to_rows())),
            };
            match grid.nearest_distance(&phi) {
                Some(d) if d <= step => None,
                d => Some(format!("{:?}: {phi:?} is {d:?} from the grid", req.to_rows())),
            }
        })
        .collect();
    outcome("BMF against the grid oracle", failures, cases.len())
}

/// Little's law inside the fluid simulator, and the M/M/1 closed form for
/// the stationary solver.
fn little(seed: u64) -> CheckOutcome {
    let req = RequirementMatrix::new(&[vec![0.1, 1.0], vec![1.0, 0.1], vec![1.0, 1.0]]).unwrap();
    let workload = scale_to_max_load(&req, &[1.0; 3], &[1.0; 3], 0.5).unwrap();
    let mut failures: Vec<String> = AllocObjective::ALL
        .par_iter()
        .flat_map_iter(|&o| {
            let sim = FluidSimConfig {
                horizon: 200_000,
                seed,
                ..FluidSimConfig::new(req.clone(), workload.clone(), o)
            };
            match simulate(&sim) {
                Ok(est) => est
                    .classes
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| !c.little_consistent())
                    .map(|(k, c)| format!("{o} class {k}: {c:?}"))
                    .collect(),
                Err(e) => vec![format!("{o}: {e}")],
            }
        })
        .collect();
    let single = RequirementMatrix::new(&[vec![1.0]]).unwrap();
    let mm1 = WorkloadSpec::new(vec![0.5], vec![1.0]).unwrap();
    match stationary_solve(&single, &mm1, AllocObjective::Pf, &StationaryOptions::with_n_max(200)) {
        Ok(r) if (r.mean_counts[0] - 1.0).abs() <= 1e-6 => {}
        Ok(r) => failures.push(format!("M/M/1 stationary mean {} instead of 1", r.mean_counts[0])),
        Err(e) => failures.push(format!("M/M/1 stationary: {e}")),
    }
    outcome("Little's law and M/M/1 calibration", failures, 10)
}

/// Persistent packet flows settle on the fluid allocation.
fn static_packets() -> CheckOutcome {
    let matrices = [
        RequirementMatrix::new(&[vec![0.1, 1.0], vec![1.0, 0.1], vec![1.0, 1.0]]).unwrap(),
        RequirementMatrix::new(&[vec![0.5, 1.0], vec![1.0, 0.5]]).unwrap(),
    ];
    let jobs: Vec<_> = matrices
        .iter()
        .flat_map(|req| AllocObjective::ALL.map(|o| (req, o)))
        .collect();
    let failures: Vec<String> = jobs
        .par_iter()
        .filter_map(|&(req, o)| {
            let mult = vec![1; req.classes()];
            let want = solve(o, req, &mult).ok()?.phi;
            let got = match measure_static(&StaticConfig::new(req.clone(), o, (0..req.classes()).collect())) {
                Ok(r) => r.throughput,
                Err(e) => return Some(format!("{o}: {e}")),
            };
            let close = got.iter().zip(&want).all(|(g, w)| (g - w).abs() <= 0.05 * w);
            (!close).then(|| format!("{o} on {:?}: packet {got:?} vs fluid {want:?}", req.to_rows()))
        })
        .collect();
    outcome("static packet convergence", failures, jobs.len())
}

pub fn run_checks(seed: u64, instances: usize) -> Vec<CheckOutcome> {
    vec![
        properties(seed, instances),
        oracle(seed, (instances / 10).max(1)),
        little(seed),
        static_packets(),
    ]
}
