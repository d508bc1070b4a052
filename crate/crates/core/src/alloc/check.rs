use serde::Serialize;

use crate::model::{Allocation, RequirementMatrix, TOL};

use super::bmf::{check_bmf, BmfCheck};
use super::AllocObjective;

/// Residuals of the PF optimality system for a given allocation and duals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KktResidual {
    /// `max_k |1 − φ_k Σ_j a_kj ν_j|`
    pub stationarity: f64,
    /// `max_j ν_j (1 − load_j)`
    pub complementarity: f64,
    /// `max_j (load_j − 1)⁺`
    pub capacity_violation: f64,
    /// most negative dual, as a positive number (0 when all duals are ≥ 0)
    pub dual_infeasibility: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.complementarity)
            .max(self.capacity_violation)
            .max(self.dual_infeasibility)
    }
}

/// KKT residual, or `None` if the allocation carries no duals.
pub fn kkt_residual(req: &RequirementMatrix, alloc: &Allocation) -> Option<KktResidual> {
    let duals = alloc.duals.as_ref()?;
    let loads = alloc.loads(req);
    let stationarity = req
        .rows()
        .zip(&alloc.phi)
        .map(|(row, phi)| {
            let price: f64 = row.iter().zip(duals).map(|(a, v)| a * v).sum();
            (1.0 - phi * price).abs()
        })
        .fold(0.0, f64::max);
    let complementarity = duals
        .iter()
        .zip(&loads)
        .map(|(v, l)| (v * (1.0 - l)).abs())
        .fold(0.0, f64::max);
    let capacity_violation = loads.iter().map(|l| (l - 1.0).max(0.0)).fold(0.0, f64::max);
    let dual_infeasibility = duals.iter().map(|v| (-v).max(0.0)).fold(0.0, f64::max);
    Some(KktResidual {
        stationarity,
        complementarity,
        capacity_violation,
        dual_infeasibility,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyReport {
    pub capacity: bool,
    /// `max_j (load_j − 1)⁺`
    pub capacity_violation: f64,
    pub pareto_efficient: bool,
    /// Classes that touch no saturated resource.
    pub unblocked_classes: Vec<usize>,
    pub sharing_incentive: bool,
    /// `min_k φ_k`, which is the smallest dominant share under normalized rows.
    pub min_dominant_share: f64,
    /// `1/n`
    pub fair_share: f64,
    /// Only evaluated when there is a single resource.
    pub single_resource_fair: Option<bool>,
    /// Present when the allocation has duals.
    pub kkt: Option<KktResidual>,
    pub bmf: BmfCheck,
}

impl PropertyReport {
    /// The generic properties every objective must satisfy.
    pub fn basic_ok(&self) -> bool {
        self.capacity
            && self.pareto_efficient
            && self.sharing_incentive
            && self.single_resource_fair.unwrap_or(true)
    }

    /// Generic properties plus the objective's own optimality conditions.
    pub fn passes(&self, objective: AllocObjective) -> bool {
        self.basic_ok()
            && match objective {
                AllocObjective::Drf => true,
                AllocObjective::Pf => self.kkt.is_some_and(|k| k.max() <= 1e-8),
                AllocObjective::Bmf => self.bmf.satisfied,
            }
    }
}

/// Evaluate the allocation's fairness and efficiency properties.
///
/// Pareto efficiency is tested as "no single φ_k can grow with the others
/// fixed": every class must use some saturated resource.
pub fn check_properties(req: &RequirementMatrix, alloc: &Allocation) -> PropertyReport {
    let loads = alloc.loads(req);
    let capacity_violation = loads.iter().map(|l| (l - 1.0).max(0.0)).fold(0.0, f64::max);
    let unblocked_classes: Vec<usize> = (0..req.classes())
        .filter(|&k| {
            !(0..req.resources()).any(|j| req.get(k, j) > 0.0 && loads[j] >= 1.0 - TOL)
        })
        .collect();
    let n = alloc.transactions();
    let fair_share = if n == 0 { 0.0 } else { 1.0 / n as f64 };
    let min_dominant_share = req
        .rows()
        .zip(&alloc.phi)
        .map(|(row, phi)| phi * row.iter().copied().fold(0.0, f64::max))
        .fold(f64::INFINITY, f64::min);
    let single_resource_fair = (req.resources() == 1).then(|| {
        alloc
            .phi
            .iter()
            .zip(req.rows())
            .all(|(phi, row)| (phi * row[0] - fair_share).abs() <= TOL)
    });
    PropertyReport {
        capacity: capacity_violation <= TOL,
        capacity_violation,
        pareto_efficient: unblocked_classes.is_empty(),
        unblocked_classes,
        sharing_incentive: req.classes() == 0 || min_dominant_share >= fair_share - TOL,
        min_dominant_share,
        fair_share,
        single_resource_fair,
        kkt: kkt_residual(req, alloc),
        bmf: check_bmf(req, &alloc.multiplicities, &alloc.phi, TOL, TOL),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alloc::{solve_drf, solve_pf};

    #[test]
    fn drf_single_resource_passes_everything() {
        let req = RequirementMatrix::new(&[vec![1.0], vec![1.0]]).unwrap();
        let a = solve_drf(&req, &[1, 1]).unwrap();
        let r = check_properties(&req, &a);
        assert!(r.basic_ok());
        assert_eq!(r.single_resource_fair, Some(true));
        assert!(r.passes(AllocObjective::Drf));
        assert!(r.bmf.satisfied);
    }

    #[test]
    fn dominated_point_is_not_pareto() {
        let req = RequirementMatrix::new(&[vec![0.5, 1.0], vec![1.0, 0.5]]).unwrap();
        let a = Allocation::new(&req, vec![0.1, 0.1], vec![1, 1], None);
        let r = check_properties(&req, &a);
        assert!(r.capacity);
        assert!(!r.pareto_efficient);
        assert_eq!(r.unblocked_classes, vec![0, 1]);
        assert!(!r.sharing_incentive);
    }

    #[test]
    fn pf_fig1_sharing_incentive_is_tight() {
        let req = RequirementMatrix::new(&[vec![0.1, 1.0], vec![1.0, 0.1], vec![1.0, 1.0]]).unwrap();
        let a = solve_pf(&req, &[1, 1, 1]).unwrap();
        let r = check_properties(&req, &a);
        assert!(r.sharing_incentive);
        assert!((r.min_dominant_share - 1.0 / 3.0).abs() < 1e-10);
        assert!(r.passes(AllocObjective::Pf));
        assert_eq!(r.single_resource_fair, None);
    }

    #[test]
    fn capacity_violation_is_reported() {
        let req = RequirementMatrix::new(&[vec![1.0]]).unwrap();
        let a = Allocation::new(&req, vec![1.5], vec![1], Some(vec![1.0]));
        let r = check_properties(&req, &a);
        assert!(!r.capacity);
        assert!((r.capacity_violation - 0.5).abs() < 1e-12);
        assert!(r.kkt.unwrap().stationarity > 0.4);
    }
}
