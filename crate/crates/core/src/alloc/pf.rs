use nalgebra::{DMatrix, DVector};

use crate::model::{Allocation, RequirementMatrix};

use super::check::kkt_residual;
use super::{validate_multiplicities, AllocError};

#[derive(Debug, Clone, Copy)]
pub struct PfOptions {
    pub max_iterations: usize,
    /// Final barrier weight times the resource count (the duality gap).
    pub tolerance: f64,
    /// Largest KKT residual accepted.
    pub accept: f64,
}

impl Default for PfOptions {
    fn default() -> Self {
        Self {
            max_iterations: 1000,
            tolerance: 1e-10,
            accept: 1e-10,
        }
    }
}

pub fn solve_pf(req: &RequirementMatrix, mult: &[u32]) -> Result<Allocation, AllocError> {
    solve_pf_with(req, mult, PfOptions::default())
}

/// Proportional fairness: maximize `Σ_k n_k log φ_k` subject to the capacity
/// constraints, with the constraint multipliers returned as duals.
///
/// Works on class aggregates `ψ_k = n_k φ_k` with weights `w_k = n_k / N`,
/// which keeps the iterates of order one however many transactions are
/// present; the duals scale back by `N`. Log-barrier method: Newton with
/// backtracking on `−Σ w_k log ψ_k − μ Σ log s_j` (where `s_j` is the spare
/// capacity of resource j) for a decreasing sequence of μ, with duals
/// `ν_j = μ / s_j`. The final iterate is refined on its active set. At the
/// optimum `1/φ_k = Σ_j a_kj ν_j`.
pub fn solve_pf_with(
    req: &RequirementMatrix,
    mult: &[u32],
    opts: PfOptions,
) -> Result<Allocation, AllocError> {
    validate_multiplicities(req, mult)?;
    let classes = req.classes();
    let resources = req.resources();
    if classes == 0 {
        return Ok(Allocation::empty());
    }

    let total: f64 = mult.iter().map(|&m| f64::from(m)).sum();
    let w: Vec<f64> = mult.iter().map(|&m| f64::from(m) / total).collect();
    // usage[j][k] = a_kj
    let usage = DMatrix::from_fn(resources, classes, |j, k| req.get(k, j));
    let widest = (0..resources)
        .map(|j| usage.row(j).sum())
        .fold(1.0, f64::max);
    let spare = |psi: &DVector<f64>| DVector::from_element(resources, 1.0) - &usage * psi;
    let barrier = |psi: &DVector<f64>, mu: f64| -> f64 {
        let s = spare(psi);
        if psi.iter().any(|p| *p <= 0.0) || s.iter().any(|v| *v <= 0.0) {
            return f64::INFINITY;
        }
        -(0..classes).map(|k| w[k] * psi[k].ln()).sum::<f64>() - mu * s.iter().map(|v| v.ln()).sum::<f64>()
    };

    let mut psi = DVector::from_element(classes, 0.5 / widest);
    let mut mu = 1.0;
    let mut iterations = 0;
    loop {
        // centering
        let mut inner = 0;
        while iterations < opts.max_iterations && inner < 60 {
            iterations += 1;
            inner += 1;
            let s = spare(&psi);
            let inv_s = s.map(|v| 1.0 / v);
            let grad = DVector::from_fn(classes, |k, _| -w[k] / psi[k]) + mu * usage.transpose() * &inv_s;
            let weighted = DMatrix::from_fn(resources, classes, |j, k| usage[(j, k)] * inv_s[j]);
            let mut hess = mu * weighted.transpose() * &weighted;
            for k in 0..classes {
                hess[(k, k)] += w[k] / (psi[k] * psi[k]);
            }
            let step = match hess.clone().cholesky() {
                Some(c) => -c.solve(&grad),
                None => match hess.lu().solve(&(-&grad)) {
                    Some(d) => d,
                    None => break,
                },
            };
            let decrement = -grad.dot(&step);
            if decrement < 1e-16 {
                break;
            }
            let current = barrier(&psi, mu);
            let mut t = 1.0;
            while t > 1e-12 {
                let trial = &psi + t * &step;
                if barrier(&trial, mu) <= current - 0.25 * t * decrement {
                    break;
                }
                t *= 0.5;
            }
            psi += t * &step;
            if t <= 1e-12 {
                break;
            }
        }
        if mu * (resources.max(1) as f64) < opts.tolerance || iterations >= opts.max_iterations {
            break;
        }
        mu *= 0.1;
    }

    let slack = spare(&psi);
    let price = slack.map(|v| mu / v);
    let partitions: [Vec<usize>; 3] = [
        (0..resources).filter(|&j| price[j] > slack[j]).collect(),
        (0..resources).filter(|&j| slack[j] < 1e-6).collect(),
        (0..resources).filter(|&j| price[j] > 1e-6).collect(),
    ];
    let (psi, prices) = partitions
        .iter()
        .find_map(|active| polish(req, &w, &psi, &price, active))
        .unwrap_or_else(|| (psi.iter().copied().collect(), price.iter().copied().collect()));
    let phi = psi.iter().zip(mult).map(|(p, &m)| p / f64::from(m)).collect();
    let duals = prices.iter().map(|v| v * total).collect();
    let allocation = Allocation::new(req, phi, mult.to_vec(), Some(duals));
    let kkt = kkt_residual(req, &allocation).expect("duals present");
    let residual = kkt.max();
    if residual > opts.accept {
        return Err(AllocError::PfNotConverged {
            iterations,
            residual,
        });
    }
    Ok(allocation)
}

/// Newton refinement on a guessed active set: solve `Σ_k a_kj ψ_k = 1` for
/// the active duals with `ψ_k = w_k / Σ_j a_kj ν_j`.
///
/// Interior-point iterates approach degenerate vertices (a saturated resource
/// whose dual is zero) only linearly; this recovers full precision. Returns
/// `None` when the active set does not yield a KKT point.
fn polish(
    req: &RequirementMatrix,
    w: &[f64],
    psi: &DVector<f64>,
    price: &DVector<f64>,
    active: &[usize],
) -> Option<(Vec<f64>, Vec<f64>)> {
    let classes = req.classes();
    let resources = req.resources();
    let active = &independent(req, price, active);
    let mut nu: Vec<f64> = active.iter().map(|&j| price[j]).collect();
    let rates = |nu: &[f64]| -> Option<Vec<f64>> {
        (0..classes)
            .map(|k| {
                let p: f64 = active.iter().zip(nu).map(|(&j, v)| req.get(k, j) * v).sum();
                (p > 0.0).then(|| w[k] / p)
            })
            .collect()
    };

    let mut current = rates(&nu)?;
    for _ in 0..50 {
        let size = active.len();
        let mut residual = DVector::zeros(size);
        let mut jacobian = DMatrix::zeros(size, size);
        for (r, &j) in active.iter().enumerate() {
            residual[r] = (0..classes).map(|k| req.get(k, j) * current[k]).sum::<f64>() - 1.0;
            for (c, &i) in active.iter().enumerate() {
                jacobian[(r, c)] = -(0..classes)
                    .map(|k| req.get(k, j) * req.get(k, i) * current[k] * current[k] / w[k])
                    .sum::<f64>();
            }
        }
        if residual.amax() < 1e-15 {
            break;
        }
        let delta = jacobian.lu().solve(&(-residual))?;
        for (v, d) in nu.iter_mut().zip(delta.iter()) {
            *v += d;
        }
        current = rates(&nu)?;
    }

    if nu.iter().any(|v| *v < -1e-12) {
        return None;
    }
    for j in 0..resources {
        let load: f64 = (0..classes).map(|k| req.get(k, j) * current[k]).sum();
        if load > 1.0 + 1e-12 {
            return None;
        }
    }
    // keep the interior-point answer if the polish wandered off
    let drift = current
        .iter()
        .zip(psi.iter())
        .map(|(a, b)| (a - b).abs() / b)
        .fold(0.0, f64::max);
    if drift > 1e-4 {
        return None;
    }
    let mut duals = vec![0.0; resources];
    for (&j, v) in active.iter().zip(&nu) {
        duals[j] = v.max(0.0);
    }
    Some((current, duals))
}

/// Greedy subset of `active` (highest price first) whose capacity rows are
/// linearly independent. A tight constraint that depends on the kept ones is
/// satisfied automatically and gets a zero dual.
fn independent(req: &RequirementMatrix, price: &DVector<f64>, active: &[usize]) -> Vec<usize> {
    let mut order = active.to_vec();
    order.sort_by(|&a, &b| price[b].total_cmp(&price[a]).then(a.cmp(&b)));
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut kept = Vec::new();
    for j in order {
        let row = DVector::from_fn(req.classes(), |k, _| req.get(k, j));
        let scale = row.norm();
        let mut rest = row;
        for b in &basis {
            let c = rest.dot(b);
            rest -= c * b;
        }
        let norm = rest.norm();
        if norm > 1e-9 * scale {
            basis.push(rest / norm);
            kept.push(j);
        }
    }
    kept.sort_unstable();
    kept
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: &[&[f64]]) -> RequirementMatrix {
        RequirementMatrix::new(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn assert_phi(a: &Allocation, expected: &[f64], tol: f64) {
        for (p, e) in a.phi.iter().zip(expected) {
            assert!((p - e).abs() <= tol, "phi {:?} != {expected:?}", a.phi);
        }
    }

    #[test]
    fn two_transaction_example() {
        let a = solve_pf(&matrix(&[&[0.5, 1.0], &[1.0, 0.5]]), &[1, 1]).unwrap();
        assert_phi(&a, &[2.0 / 3.0, 2.0 / 3.0], 1e-10);
        assert_eq!(a.bottlenecks, vec![0, 1]);
    }

    #[test]
    fn falsified_declaration_gains() {
        let a = solve_pf(&matrix(&[&[2.0 / 3.0, 1.0], &[1.0, 0.5]]), &[1, 1]).unwrap();
        assert_phi(&a, &[0.75, 0.5], 1e-10);
    }

    #[test]
    fn falsified_declaration_loses_against_two() {
        let truthful = solve_pf(&matrix(&[&[0.5, 1.0], &[1.0, 0.5]]), &[1, 2]).unwrap();
        assert_phi(&truthful, &[2.0 / 3.0, 1.0 / 3.0], 1e-10);
        let lying = solve_pf(&matrix(&[&[2.0 / 3.0, 1.0], &[1.0, 0.5]]), &[1, 2]).unwrap();
        assert_phi(&lying, &[0.5, 1.0 / 3.0], 1e-10);
    }

    #[test]
    fn overstating_everything_hurts_both() {
        let a = solve_pf(&matrix(&[&[1.0, 1.0], &[1.0, 0.5]]), &[1, 1]).unwrap();
        assert_phi(&a, &[0.5, 0.5], 1e-10);
    }

    #[test]
    fn three_class_matches_stationarity_and_grid() {
        let req = matrix(&[&[0.1, 1.0], &[1.0, 0.1], &[1.0, 1.0]]);
        let a = solve_pf(&req, &[1, 1, 1]).unwrap();
        // symmetric classes 1,2 at x, class 3 at 1 - 1.1x; d/dx[2 log x + log(1 - 1.1x)] = 0
        let x = 2.0 / 3.3;
        assert_phi(&a, &[x, x, 1.0 - 1.1 * x], 1e-10);

        // independent grid search over the feasible polytope
        let step = 1.0 / 600.0;
        let mut best = (f64::NEG_INFINITY, [0.0; 3]);
        for i in 1..=600 {
            for l in 1..=600 {
                let (p1, p2) = (i as f64 * step, l as f64 * step);
                let cap = (1.0 - 0.1 * p1 - p2).min(1.0 - p1 - 0.1 * p2);
                if cap <= 0.0 {
                    continue;
                }
                let v = p1.ln() + p2.ln() + cap.ln();
                if v > best.0 {
                    best = (v, [p1, p2, cap]);
                }
            }
        }
        assert_phi(&a, &best.1, 2.0 * step);
    }

    #[test]
    fn single_resource_equal_slots() {
        let req = matrix(&[&[1.0], &[1.0], &[1.0]]);
        let a = solve_pf(&req, &[1, 2, 3]).unwrap();
        assert_phi(&a, &[1.0 / 6.0; 3], 1e-12);
    }

    #[test]
    fn unused_resource_and_zero_entries() {
        let req = RequirementMatrix::new(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]).unwrap();
        let a = solve_pf(&req, &[2, 1]).unwrap();
        assert_phi(&a, &[0.5, 1.0], 1e-10);
        let duals = a.duals.unwrap();
        assert!(duals[2].abs() < 1e-10);
    }

    #[test]
    fn redundant_tight_constraints() {
        let a = solve_pf(&matrix(&[&[1.0, 1.0]]), &[1]).unwrap();
        assert_phi(&a, &[1.0], 1e-12);
        let a = solve_pf(&matrix(&[&[1.0, 1.0, 0.5], &[0.5, 0.5, 1.0]]), &[2, 1]).unwrap();
        let kkt = kkt_residual(&matrix(&[&[1.0, 1.0, 0.5], &[0.5, 0.5, 1.0]]), &a).unwrap();
        assert!(kkt.max() < 1e-10, "{kkt:?}");
    }

    #[test]
    fn crowded_single_resource() {
        let req = matrix(&[&[1.0], &[1.0]]);
        let a = solve_pf(&req, &[173, 446]).unwrap();
        assert_phi(&a, &[1.0 / 619.0; 2], 1e-15);
    }

    #[test]
    fn large_multiplicities_converge() {
        let req = matrix(&[&[0.1, 1.0], &[1.0, 0.1], &[1.0, 1.0]]);
        let a = solve_pf(&req, &[150, 3, 40]).unwrap();
        let kkt = kkt_residual(&req, &a).unwrap();
        assert!(kkt.stationarity < 1e-10 && kkt.complementarity < 1e-10);
    }
}
