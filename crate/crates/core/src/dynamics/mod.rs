//! Flow-level dynamics: transactions arrive as Poisson processes, bring
//! exponential amounts of work, and share resources according to one of the
//! allocation objectives, re-solved whenever the population changes.
//!
//! The population vector is a Markov process with class-k birth rate `λ_k`
//! and death rate `n_k φ_k(n) μ_k`. [`simulate`] runs it; [`stationary_solve`]
//! computes its stationary law on a truncated lattice. Both report the mean
//! service rate `γ_k`, mean work over mean completion time, which by Little's
//! law is `ρ_k / E[n_k]` (`λ_k / E[n_k]` for unit mean work).

mod replay;
mod simulate;
mod stationary;
pub(crate) mod stats;
mod sweep;

use std::collections::HashMap;

use serde::Serialize;
use thiserror::Error;

use crate::alloc::{self, AllocError, AllocObjective};
use crate::model::{ModelError, RequirementMatrix, SystemState, TOL};

pub use replay::{replay, TraceArrival};
pub use simulate::{simulate, FluidSimConfig};
pub use stationary::{stationary_solve, StationaryDistribution, StationaryOptions, StationaryResult};
pub use sweep::{scale_to_max_load, sweep, SweepConfig, SweepRow};

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("allocation solver failed in state {:?}: {source}", state.counts)]
    Solver {
        state: SystemState,
        #[source]
        source: AllocError,
    },
    #[error("state space of {states} states exceeds the cap of {cap}")]
    StateSpaceTooLarge { states: u128, cap: u64 },
    #[error("stationary solver did not converge after {sweeps} sweeps (residual {residual:e})")]
    NotConverged { sweeps: usize, residual: f64 },
}

/// Per-class performance estimates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassEstimate {
    /// `ρ_k / E[n_k]`; `None` when the class was never present.
    pub gamma: Option<f64>,
    pub gamma_ci: Option<f64>,
    /// Mean work over mean completion time, from individual sojourns.
    pub gamma_direct: Option<f64>,
    pub gamma_direct_ci: Option<f64>,
    /// Time-average number in progress.
    pub mean_count: f64,
    pub mean_count_ci: Option<f64>,
    /// Completed transactions that contributed to the direct estimate.
    pub completed: u64,
}

impl ClassEstimate {
    /// Whether the two γ estimators agree within their combined 95% widths.
    pub fn little_consistent(&self) -> bool {
        match (self.gamma, self.gamma_direct) {
            (Some(a), Some(b)) => {
                let width = self.gamma_ci.unwrap_or(0.0) + self.gamma_direct_ci.unwrap_or(0.0);
                (a - b).abs() <= width
            }
            _ => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ServiceRateEstimate {
    pub classes: Vec<ClassEstimate>,
    /// Simulated time covered by the measurement window.
    pub measured_time: f64,
    /// Distinct population states whose allocation was solved.
    pub solved_states: usize,
}

impl ServiceRateEstimate {
    pub fn gammas(&self) -> Vec<Option<f64>> {
        self.classes.iter().map(|c| c.gamma).collect()
    }
}

/// Memoized per-state allocation: `rates(n)[k]` is the per-transaction
/// progress rate `φ_k` in state `n` (0 for absent classes).
pub struct AllocationCache {
    req: RequirementMatrix,
    objective: AllocObjective,
    solved: HashMap<Vec<u32>, Box<[f64]>>,
}

impl AllocationCache {
    pub fn new(req: RequirementMatrix, objective: AllocObjective) -> Self {
        Self {
            req,
            objective,
            solved: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.solved.len()
    }

    pub fn is_empty(&self) -> bool {
        self.solved.is_empty()
    }

    pub fn rates(&mut self, counts: &[u32]) -> Result<&[f64], DynamicsError> {
        if !self.solved.contains_key(counts) {
            let phi = state_rates(&self.req, self.objective, counts)?;
            self.solved.insert(counts.to_vec(), phi);
        }
        Ok(&self.solved[counts])
    }
}

/// Per-transaction rates in one population state, solving only over the
/// classes present.
pub(crate) fn state_rates(
    req: &RequirementMatrix,
    objective: AllocObjective,
    counts: &[u32],
) -> Result<Box<[f64]>, DynamicsError> {
    let active: Vec<usize> = (0..counts.len()).filter(|&k| counts[k] > 0).collect();
    let mut phi = vec![0.0; counts.len()];
    if active.is_empty() {
        return Ok(phi.into_boxed_slice());
    }
    let sub = req.select(&active);
    let mult: Vec<u32> = active.iter().map(|&k| counts[k]).collect();
    let failed = |source| DynamicsError::Solver {
        state: SystemState {
            counts: counts.to_vec(),
        },
        source,
    };
    let allocation = if objective == AllocObjective::Bmf {
        let sol = alloc::solve_bmf(&sub, &mult).map_err(failed)?;
        log::debug!(
            "bmf state {counts:?}: phi {:?} via mapping {:?}{}",
            sol.allocation.phi,
            sol.mapping.resource,
            if sol.heuristic { " (heuristic)" } else { "" }
        );
        sol.allocation
    } else {
        alloc::solve(objective, &sub, &mult).map_err(failed)?
    };
    debug_assert!(
        allocation
            .loads(&sub)
            .iter()
            .any(|&l| l >= 1.0 - 1e3 * TOL),
        "allocation in state {counts:?} saturates no resource"
    );
    for (&k, p) in active.iter().zip(&allocation.phi) {
        phi[k] = *p;
    }
    Ok(phi.into_boxed_slice())
}
