use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::model::{Allocation, RequirementMatrix, TOL};

use super::{validate_multiplicities, AllocError};

/// Resource assigned to each class as its bottleneck.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BottleneckMapping {
    pub resource: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BmfSolution {
    pub allocation: Allocation,
    pub mapping: BottleneckMapping,
    /// True when the point came from the iterative fallback rather than
    /// mapping enumeration.
    pub heuristic: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct BmfOptions {
    /// Largest `K · J^K` for which mappings are enumerated.
    pub enumeration_budget: u64,
    pub fallback_max_sweeps: usize,
    pub fallback_tolerance: f64,
}

impl Default for BmfOptions {
    fn default() -> Self {
        Self {
            enumeration_budget: 10_000_000,
            fallback_max_sweeps: 10_000,
            fallback_tolerance: 1e-10,
        }
    }
}

/// Outcome of testing the bottleneck-max conditions on a candidate point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BmfCheck {
    pub satisfied: bool,
    /// Classes without a saturated resource on which their share is maximal.
    pub violating_classes: Vec<usize>,
    /// Worst per-class residual: for each class, the best over its resources
    /// of `max((1 − load_j)⁺, (max share on j − own share on j)⁺)`; also
    /// includes capacity overshoot.
    pub residual: f64,
}

/// Test the bottleneck max fairness conditions: capacity holds and every
/// class has a saturated resource on which its per-transaction share
/// `φ_k a_kj` is the largest of any class.
pub fn check_bmf(
    req: &RequirementMatrix,
    mult: &[u32],
    phi: &[f64],
    load_tol: f64,
    share_tol: f64,
) -> BmfCheck {
    let loads = req.resource_loads(phi, mult);
    let overshoot = loads.iter().map(|l| (l - 1.0).max(0.0)).fold(0.0, f64::max);
    let max_share: Vec<f64> = (0..req.resources())
        .map(|j| {
            (0..req.classes())
                .map(|k| phi[k] * req.get(k, j))
                .fold(0.0, f64::max)
        })
        .collect();

    let mut violating_classes = Vec::new();
    let mut residual = overshoot;
    for k in 0..req.classes() {
        let mut ok = false;
        let mut best = f64::INFINITY;
        for j in 0..req.resources() {
            let a = req.get(k, j);
            if a <= 0.0 {
                continue;
            }
            let unsat = (1.0 - loads[j]).max(0.0);
            let gap = (max_share[j] - phi[k] * a).max(0.0);
            best = best.min(unsat.max(gap));
            ok |= unsat <= load_tol && gap <= share_tol;
        }
        residual = residual.max(best);
        if !ok {
            violating_classes.push(k);
        }
    }
    BmfCheck {
        satisfied: overshoot <= load_tol && violating_classes.is_empty(),
        violating_classes,
        residual,
    }
}

pub fn solve_bmf(req: &RequirementMatrix, mult: &[u32]) -> Result<BmfSolution, AllocError> {
    solve_bmf_with(req, mult, BmfOptions::default())
}

/// Bottleneck max fairness.
///
/// Class→resource mappings are tried in lexicographic order. For each, the
/// mapped resources are forced to saturate with equal per-transaction shares
/// among the classes mapped to them; the first mapping whose solution is
/// feasible and passes [`check_bmf`] wins. When `K·J^K` exceeds the budget, or
/// no mapping works, per-resource weighted max-min water filling is iterated
/// to a fixed point instead and the result is flagged as heuristic.
pub fn solve_bmf_with(
    req: &RequirementMatrix,
    mult: &[u32],
    opts: BmfOptions,
) -> Result<BmfSolution, AllocError> {
    validate_multiplicities(req, mult)?;
    let classes = req.classes();
    if classes == 0 {
        return Ok(BmfSolution {
            allocation: Allocation::empty(),
            mapping: BottleneckMapping { resource: Vec::new() },
            heuristic: false,
        });
    }

    let within_budget = enumeration_cost(classes, req.resources())
        .is_some_and(|cost| cost <= u128::from(opts.enumeration_budget));
    if within_budget {
        if let Some((phi, solved)) = enumerate_mappings(req, mult) {
            // the solved mapping fixes the point; report a bottleneck each class
            // actually has there (it may hold a maximal share elsewhere)
            let mapping = mapping_of(req, mult, &phi);
            log::trace!("bmf: mapping {solved:?} gives {phi:?} for multiplicities {mult:?}");
            return Ok(BmfSolution {
                allocation: Allocation::new(req, phi, mult.to_vec(), None),
                mapping: BottleneckMapping { resource: mapping },
                heuristic: false,
            });
        }
        log::warn!("bmf: no feasible mapping for multiplicities {mult:?}; using iterative fallback");
    }

    let phi = iterate_local_max_min(req, mult, opts)?;
    let check = check_bmf(req, mult, &phi, 1e-7, 1e-7);
    if !check.satisfied {
        return Err(AllocError::BmfNotFound {
            reason: format!(
                "fallback fixed point fails the bottleneck conditions (residual {:e})",
                check.residual
            ),
        });
    }
    let mapping = mapping_of(req, mult, &phi);
    log::debug!("bmf: heuristic point {phi:?} mapping {mapping:?}");
    Ok(BmfSolution {
        allocation: Allocation::new(req, phi, mult.to_vec(), None),
        mapping: BottleneckMapping { resource: mapping },
        heuristic: true,
    })
}

fn enumeration_cost(classes: usize, resources: usize) -> Option<u128> {
    (resources as u128)
        .checked_pow(u32::try_from(classes).ok()?)?
        .checked_mul(classes as u128)
}

fn enumerate_mappings(req: &RequirementMatrix, mult: &[u32]) -> Option<(Vec<f64>, Vec<usize>)> {
    let classes = req.classes();
    let resources = req.resources();
    // candidate bottlenecks per class: resources it actually uses
    let choices: Vec<Vec<usize>> = (0..classes)
        .map(|k| (0..resources).filter(|&j| req.get(k, j) > 0.0).collect())
        .collect();
    let mut odometer = vec![0usize; classes];
    loop {
        let mapping: Vec<usize> = odometer.iter().zip(&choices).map(|(&i, c)| c[i]).collect();
        if let Some(phi) = solve_mapping(req, mult, &mapping) {
            if check_bmf(req, mult, &phi, TOL, TOL).satisfied {
                return Some((phi, mapping));
            }
        }
        // advance, last class fastest, so mappings come out in lexicographic order
        let mut k = classes;
        loop {
            if k == 0 {
                return None;
            }
            k -= 1;
            odometer[k] += 1;
            if odometer[k] < choices[k].len() {
                break;
            }
            odometer[k] = 0;
        }
    }
}

/// Solve the saturation and equal-share equations induced by a mapping.
///
/// With `s_u` the common share on mapped resource `u`, class k gets
/// `φ_k = s_{m(k)} / a_{k,m(k)}` and each mapped resource j must satisfy
/// `Σ_k n_k a_kj s_{m(k)} / a_{k,m(k)} = 1`.
fn solve_mapping(req: &RequirementMatrix, mult: &[u32], mapping: &[usize]) -> Option<Vec<f64>> {
    let mut used: Vec<usize> = mapping.to_vec();
    used.sort_unstable();
    used.dedup();
    let index = |j: usize| used.binary_search(&j).ok();

    let size = used.len();
    let mut system = DMatrix::<f64>::zeros(size, size);
    for (k, &m) in mapping.iter().enumerate() {
        let col = index(m)?;
        let per_share = f64::from(mult[k]) / req.get(k, m);
        for (row, &j) in used.iter().enumerate() {
            system[(row, col)] += per_share * req.get(k, j);
        }
    }
    let shares = system.lu().solve(&DVector::from_element(size, 1.0))?;
    if shares.iter().any(|s| !s.is_finite() || *s <= 0.0) {
        return None;
    }
    Some(
        mapping
            .iter()
            .enumerate()
            .map(|(k, &m)| shares[index(m).expect("mapped")] / req.get(k, m))
            .collect(),
    )
}

/// Gauss-Seidel sweeps of per-resource water filling. Resource j grants each
/// transaction a share level `x_j`; class k then progresses at
/// `min_j x_j / a_kj`. A resource whose demand, capped by the other
/// resources, fits within capacity imposes no level.
fn iterate_local_max_min(
    req: &RequirementMatrix,
    mult: &[u32],
    opts: BmfOptions,
) -> Result<Vec<f64>, AllocError> {
    let classes = req.classes();
    let resources = req.resources();
    let mut level = vec![f64::INFINITY; resources];
    let rate = |level: &[f64], k: usize, skip: Option<usize>| {
        (0..resources)
            .filter(|&j| Some(j) != skip && req.get(k, j) > 0.0)
            .map(|j| level[j] / req.get(k, j))
            .fold(f64::INFINITY, f64::min)
    };
    let mut phi: Vec<f64> = vec![0.0; classes];

    for _ in 0..opts.fallback_max_sweeps {
        for j in 0..resources {
            // per-transaction share cap for each user of j
            let mut users: Vec<(f64, f64)> = (0..classes)
                .filter(|&k| req.get(k, j) > 0.0)
                .map(|k| (rate(&level, k, Some(j)) * req.get(k, j), f64::from(mult[k])))
                .collect();
            users.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut remaining = 1.0;
            let mut weight: f64 = users.iter().map(|u| u.1).sum();
            level[j] = f64::INFINITY;
            for &(cap, n) in &users {
                if cap * weight >= remaining {
                    level[j] = remaining / weight;
                    break;
                }
                remaining -= cap * n;
                weight -= n;
            }
        }
        let next: Vec<f64> = (0..classes).map(|k| rate(&level, k, None)).collect();
        let change = next
            .iter()
            .zip(&phi)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        phi = next;
        if change < opts.fallback_tolerance {
            return Ok(phi);
        }
    }
    Err(AllocError::BmfNotFound {
        reason: format!(
            "iterative fallback did not converge in {} sweeps",
            opts.fallback_max_sweeps
        ),
    })
}

/// Pick, for each class, the first resource meeting the bottleneck-max conditions.
fn mapping_of(req: &RequirementMatrix, mult: &[u32], phi: &[f64]) -> Vec<usize> {
    let loads = req.resource_loads(phi, mult);
    (0..req.classes())
        .map(|k| {
            (0..req.resources())
                .filter(|&j| req.get(k, j) > 0.0)
                .min_by(|&x, &y| {
                    let score = |j: usize| {
                        let top = (0..req.classes())
                            .map(|i| phi[i] * req.get(i, j))
                            .fold(0.0, f64::max);
                        (1.0 - loads[j]).max(0.0).max(top - phi[k] * req.get(k, j))
                    };
                    score(x).total_cmp(&score(y))
                })
                .expect("every class uses a resource")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alloc::solve_pf;

    fn three_resource_example() -> RequirementMatrix {
        RequirementMatrix::new(&[
            vec![1.0, 1.0, 1.0],
            vec![1.0, 0.5, 0.75],
            vec![0.5, 1.0, 0.75],
        ])
        .unwrap()
    }

    #[test]
    fn three_resource_example_and_its_continuum() {
        let req = three_resource_example();
        let sol = solve_bmf(&req, &[1, 1, 1]).unwrap();
        assert!(!sol.heuristic);
        for p in &sol.allocation.phi {
            assert!((p - 0.4).abs() < 1e-12);
        }
        assert_eq!(sol.mapping.resource, vec![0, 0, 1]);
        for i in 0..=10 {
            let x = f64::from(i) / 10.0;
            let phi = [0.4 - x / 15.0, 0.4 + 2.0 * x / 45.0, 0.4 + 2.0 * x / 45.0];
            let c = check_bmf(&req, &[1, 1, 1], &phi, TOL, TOL);
            assert!(c.satisfied, "x = {x}: {c:?}");
        }
    }

    #[test]
    fn coincides_with_pf_on_two_by_two() {
        let req = RequirementMatrix::new(&[vec![0.5, 1.0], vec![1.0, 0.5]]).unwrap();
        let sol = solve_bmf(&req, &[1, 1]).unwrap();
        for p in &sol.allocation.phi {
            assert!((p - 2.0 / 3.0).abs() < 1e-12);
        }
        let pf = solve_pf(&req, &[1, 1]).unwrap();
        for (a, b) in sol.allocation.phi.iter().zip(&pf.phi) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn single_resource_equal_split() {
        let req = RequirementMatrix::new(&[vec![1.0]]).unwrap();
        let sol = solve_bmf(&req, &[3]).unwrap();
        assert!((sol.allocation.phi[0] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(sol.allocation.bottlenecks, vec![0]);
    }

    #[test]
    fn checker_rejects_non_maximal_shares() {
        let req = RequirementMatrix::new(&[vec![0.5, 1.0], vec![1.0, 0.5]]).unwrap();
        // saturates resource 0 but class 0 is not maximal there nor is resource 1 full
        let c = check_bmf(&req, &[1, 1], &[0.2, 0.9], TOL, TOL);
        assert!(!c.satisfied);
        assert_eq!(c.violating_classes, vec![0]);
        assert!(c.residual > 0.0);
    }

    #[test]
    fn fallback_reaches_bmf_point() {
        let req = three_resource_example();
        let opts = BmfOptions {
            enumeration_budget: 0,
            ..BmfOptions::default()
        };
        let sol = solve_bmf_with(&req, &[1, 1, 1], opts).unwrap();
        assert!(sol.heuristic);
        assert!(check_bmf(&req, &[1, 1, 1], &sol.allocation.phi, 1e-7, 1e-7).satisfied);

        let two = RequirementMatrix::new(&[vec![0.5, 1.0], vec![1.0, 0.5]]).unwrap();
        let sol = solve_bmf_with(&two, &[1, 1], opts).unwrap();
        for p in &sol.allocation.phi {
            assert!((p - 2.0 / 3.0).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_entries_are_never_mapped() {
        let req = RequirementMatrix::new(&[vec![1.0, 0.0], vec![0.3, 1.0]]).unwrap();
        let sol = solve_bmf(&req, &[2, 1]).unwrap();
        assert_eq!(sol.mapping.resource[0], 0);
        assert!(check_bmf(&req, &[2, 1], &sol.allocation.phi, TOL, TOL).satisfied);
    }
}
