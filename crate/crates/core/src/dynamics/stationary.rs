use rayon::prelude::*;
use serde::Serialize;

use crate::alloc::AllocObjective;
use crate::model::{RequirementMatrix, WorkloadSpec};

use super::{state_rates, DynamicsError};

#[derive(Debug, Clone)]
pub struct StationaryOptions {
    /// Truncation bound per class; classes with zero arrival rate get 0.
    pub n_max: u32,
    pub state_cap: u64,
    pub max_sweeps: usize,
    /// Stop when no mass changes by more than this (relative) in a sweep.
    pub tolerance: f64,
}

impl Default for StationaryOptions {
    fn default() -> Self {
        Self {
            n_max: 30,
            state_cap: 1_000_000,
            max_sweeps: 200_000,
            tolerance: 1e-14,
        }
    }
}

impl StationaryOptions {
    pub fn with_n_max(n_max: u32) -> Self {
        Self {
            n_max,
            ..Self::default()
        }
    }
}

/// Stationary law of the population chain truncated to `0 ≤ n_k ≤ bounds[k]`.
/// Arrivals that would leave the box are blocked.
#[derive(Debug, Clone, Serialize)]
pub struct StationaryDistribution {
    pub bounds: Vec<u32>,
    /// Masses in mixed-radix order, class 0 varying fastest.
    pub mass: Vec<f64>,
    /// Probability of sitting on the truncation boundary, i.e. of the
    /// states whose blocked arrivals would have left the box.
    pub deficit: f64,
}

impl StationaryDistribution {
    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    /// Mass of a state, 0 outside the box.
    pub fn prob(&self, counts: &[u32]) -> f64 {
        let mut idx = 0usize;
        let mut stride = 1usize;
        for (&n, &b) in counts.iter().zip(&self.bounds) {
            if n > b {
                return 0.0;
            }
            idx += n as usize * stride;
            stride *= b as usize + 1;
        }
        self.mass[idx]
    }

    pub fn mean_counts(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.bounds.len()];
        let mut counts = vec![0u32; self.bounds.len()];
        for &p in &self.mass {
            for (m, &n) in means.iter_mut().zip(&counts) {
                *m += p * f64::from(n);
            }
            advance(&mut counts, &self.bounds);
        }
        means
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StationaryResult {
    pub distribution: StationaryDistribution,
    pub mean_counts: Vec<f64>,
    /// `ρ_k / E[n_k]` on the truncated chain; `None` for idle classes.
    pub gammas: Vec<Option<f64>>,
    pub sweeps: usize,
    /// Max-norm of `πQ` at the returned distribution.
    pub residual: f64,
}

fn advance(counts: &mut [u32], bounds: &[u32]) {
    for (n, &b) in counts.iter_mut().zip(bounds) {
        if *n < b {
            *n += 1;
            return;
        }
        *n = 0;
    }
}

/// Solves `πQ = 0` on the truncated lattice by Gauss–Seidel sweeps,
/// alternating direction.
pub fn stationary_solve(
    req: &RequirementMatrix,
    load: &WorkloadSpec,
    objective: AllocObjective,
    options: &StationaryOptions,
) -> Result<StationaryResult, DynamicsError> {
    let classes = req.classes();
    if load.classes() != classes {
        return Err(DynamicsError::InvalidConfig(format!(
            "{classes} requirement rows but {} workload classes",
            load.classes()
        )));
    }
    let lambda = &load.arrival_rates;
    let bounds: Vec<u32> = lambda
        .iter()
        .map(|&l| if l > 0.0 { options.n_max } else { 0 })
        .collect();
    let states = bounds
        .iter()
        .try_fold(1u128, |acc, &b| acc.checked_mul(u128::from(b) + 1))
        .unwrap_or(u128::MAX);
    if states > u128::from(options.state_cap) {
        return Err(DynamicsError::StateSpaceTooLarge {
            states,
            cap: options.state_cap,
        });
    }
    let states = states as usize;
    let strides: Vec<usize> = bounds
        .iter()
        .scan(1usize, |s, &b| {
            let here = *s;
            *s *= b as usize + 1;
            Some(here)
        })
        .collect();

    let mut lattice = Vec::with_capacity(states);
    let mut counts = vec![0u32; classes];
    for _ in 0..states {
        lattice.push(counts.clone());
        advance(&mut counts, &bounds);
    }
    // death rates n_k φ_k μ_k per state, row-major by state
    let rows: Vec<Box<[f64]>> = lattice
        .par_iter()
        .map(|n| {
            let phi = state_rates(req, objective, n)?;
            Ok((0..classes)
                .map(|k| f64::from(n[k]) * phi[k] * load.service_rate(k))
                .collect())
        })
        .collect::<Result<_, DynamicsError>>()?;
    let death = |s: usize, k: usize| rows[s][k];
    let outflow: Vec<f64> = (0..states)
        .map(|s| {
            (0..classes)
                .map(|k| {
                    let birth = if lattice[s][k] < bounds[k] { lambda[k] } else { 0.0 };
                    birth + death(s, k)
                })
                .sum()
        })
        .collect();
    let inflow = |pi: &[f64], s: usize| -> f64 {
        let n = &lattice[s];
        let mut acc = 0.0;
        for k in 0..classes {
            if n[k] > 0 {
                acc += pi[s - strides[k]] * lambda[k];
            }
            if n[k] < bounds[k] {
                acc += pi[s + strides[k]] * death(s + strides[k], k);
            }
        }
        acc
    };

    let mut pi = vec![1.0 / states as f64; states];
    let mut sweeps = 0;
    let mut converged = states == 1;
    while !converged && sweeps < options.max_sweeps {
        let mut change: f64 = 0.0;
        let forward = sweeps % 2 == 0;
        for i in 0..states {
            let s = if forward { i } else { states - 1 - i };
            if outflow[s] == 0.0 {
                continue;
            }
            let next = inflow(&pi, s) / outflow[s];
            if next > 0.0 {
                change = change.max(((next - pi[s]) / next).abs());
            }
            pi[s] = next;
        }
        let total: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|p| *p /= total);
        sweeps += 1;
        converged = change <= options.tolerance;
    }
    let residual = (0..states)
        .map(|s| (inflow(&pi, s) - pi[s] * outflow[s]).abs())
        .fold(0.0, f64::max);
    if !converged {
        return Err(DynamicsError::NotConverged { sweeps, residual });
    }

    let deficit = (0..states)
        .filter(|&s| (0..classes).any(|k| bounds[k] > 0 && lattice[s][k] == bounds[k]))
        .map(|s| pi[s])
        .sum();
    let distribution = StationaryDistribution {
        bounds,
        mass: pi,
        deficit,
    };
    let mean_counts = distribution.mean_counts();
    let gammas = mean_counts
        .iter()
        .zip(load.loads())
        .map(|(&m, rho)| (rho > 0.0 && m > 0.0).then(|| rho / m))
        .collect();
    Ok(StationaryResult {
        distribution,
        mean_counts,
        gammas,
        sweeps,
        residual,
    })
}
