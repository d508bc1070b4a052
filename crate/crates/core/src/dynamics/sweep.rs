use rayon::prelude::*;
use serde::Serialize;

use crate::alloc::AllocObjective;
use crate::model::{RequirementMatrix, WorkloadSpec};

use super::{simulate, ClassEstimate, DynamicsError, FluidSimConfig};

/// Workload whose per-class loads are proportional to `direction` and whose
/// most loaded resource carries exactly `max_load`.
pub fn scale_to_max_load(
    req: &RequirementMatrix,
    direction: &[f64],
    mean_work: &[f64],
    max_load: f64,
) -> Result<WorkloadSpec, DynamicsError> {
    if direction.len() != req.classes() || mean_work.len() != req.classes() {
        return Err(DynamicsError::InvalidConfig(format!(
            "{} classes but {} load ratios and {} mean work values",
            req.classes(),
            direction.len(),
            mean_work.len()
        )));
    }
    if direction.iter().any(|d| !d.is_finite() || *d < 0.0) {
        return Err(DynamicsError::InvalidConfig(format!(
            "load ratios must be nonnegative, got {direction:?}"
        )));
    }
    if !(max_load > 0.0 && max_load.is_finite()) {
        return Err(DynamicsError::InvalidConfig(format!("load {max_load} must be positive")));
    }
    let base = (0..req.resources())
        .map(|j| (0..req.classes()).map(|k| direction[k] * req.get(k, j)).sum::<f64>())
        .fold(0.0, f64::max);
    if base <= 0.0 {
        return Err(DynamicsError::InvalidConfig("load direction puts no load on any resource".into()));
    }
    let loads: Vec<f64> = direction.iter().map(|d| d * max_load / base).collect();
    Ok(WorkloadSpec::from_loads(&loads, mean_work.to_vec())?)
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub req: RequirementMatrix,
    /// Ratios between per-class loads `ρ_k`.
    pub direction: Vec<f64>,
    pub mean_work: Vec<f64>,
    pub objectives: Vec<AllocObjective>,
    /// Targets for the load of the most loaded resource.
    pub loads: Vec<f64>,
    pub horizon: u64,
    pub warmup: f64,
    pub batches: usize,
    pub seed: u64,
}

impl SweepConfig {
    pub fn new(req: RequirementMatrix, direction: Vec<f64>, loads: Vec<f64>) -> Self {
        let k = req.classes();
        Self {
            req,
            direction,
            mean_work: vec![1.0; k],
            objectives: AllocObjective::ALL.to_vec(),
            loads,
            horizon: 100_000,
            warmup: 0.2,
            batches: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub load: f64,
    pub objective: AllocObjective,
    pub class: usize,
    pub estimate: ClassEstimate,
}

/// One simulation per (load, objective), run in parallel.
///
/// Grid point `i` uses RNG stream `i` for every objective, so objectives at
/// the same load see common random numbers. Rows come back ordered by load
/// index, objective order, then class.
pub fn sweep(config: &SweepConfig) -> Result<Vec<SweepRow>, DynamicsError> {
    for &l in &config.loads {
        if !(l > 0.0 && l < 1.0) {
            return Err(DynamicsError::InvalidConfig(format!("load {l} outside (0, 1)")));
        }
    }
    let jobs: Vec<(usize, AllocObjective)> = (0..config.loads.len())
        .flat_map(|i| config.objectives.iter().map(move |&o| (i, o)))
        .collect();
    let results: Vec<Vec<SweepRow>> = jobs
        .par_iter()
        .map(|&(i, objective)| {
            let load = config.loads[i];
            let workload = scale_to_max_load(&config.req, &config.direction, &config.mean_work, load)?;
            let sim = FluidSimConfig {
                req: config.req.clone(),
                load: workload,
                objective,
                horizon: config.horizon,
                warmup: config.warmup,
                batches: config.batches,
                seed: config.seed,
                stream: i as u64,
            };
            let est = simulate(&sim)?;
            log::info!(
                "load {load} {objective}: gamma {:?} ({} states solved)",
                est.gammas(),
                est.solved_states
            );
            Ok(est
                .classes
                .into_iter()
                .enumerate()
                .map(|(class, estimate)| SweepRow {
                    load,
                    objective,
                    class,
                    estimate,
                })
                .collect())
        })
        .collect::<Result<_, DynamicsError>>()?;
    Ok(results.into_iter().flatten().collect())
}
