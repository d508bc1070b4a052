use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

use crate::alloc::AllocObjective;
use crate::model::{check_stability, RequirementMatrix, WorkloadSpec};

use super::stats::{half_width, reciprocal_half_width};
use super::{AllocationCache, ClassEstimate, DynamicsError, ServiceRateEstimate};

#[derive(Debug, Clone)]
pub struct FluidSimConfig {
    pub req: RequirementMatrix,
    pub load: WorkloadSpec,
    pub objective: AllocObjective,
    /// Number of arrivals in the run (warmup included).
    pub horizon: u64,
    /// Fraction of arrivals discarded before measuring.
    pub warmup: f64,
    pub batches: usize,
    pub seed: u64,
    /// ChaCha stream id, so parallel runs sharing a seed stay independent.
    pub stream: u64,
}

impl FluidSimConfig {
    pub fn new(req: RequirementMatrix, load: WorkloadSpec, objective: AllocObjective) -> Self {
        Self {
            req,
            load,
            objective,
            horizon: 100_000,
            warmup: 0.2,
            batches: 20,
            seed: 0,
            stream: 0,
        }
    }

    fn validate(&self) -> Result<(), DynamicsError> {
        if self.req.classes() != self.load.classes() {
            return Err(DynamicsError::InvalidConfig(format!(
                "{} requirement rows but {} workload classes",
                self.req.classes(),
                self.load.classes()
            )));
        }
        if self.horizon == 0 {
            return Err(DynamicsError::InvalidConfig("horizon must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.warmup) {
            return Err(DynamicsError::InvalidConfig(format!(
                "warmup fraction {} outside [0, 1)",
                self.warmup
            )));
        }
        if self.batches < 2 {
            return Err(DynamicsError::InvalidConfig("need at least two batches".into()));
        }
        let measured = self.horizon - self.warmup_arrivals();
        if measured < self.batches as u64 {
            return Err(DynamicsError::InvalidConfig(format!(
                "{measured} measured arrivals cannot fill {} batches",
                self.batches
            )));
        }
        Ok(())
    }

    fn warmup_arrivals(&self) -> u64 {
        (self.warmup * self.horizon as f64).floor() as u64
    }
}

const UNTAGGED: usize = usize::MAX;

#[derive(Default, Clone)]
struct Batch {
    time: f64,
    area: Vec<f64>,
    sojourn: Vec<f64>,
    done: Vec<u64>,
}

/// Event-driven simulation of the population process.
///
/// Between events the population is constant; after each event the
/// allocation for the new state is looked up (and solved on first visit).
/// Arrivals with index in `[warmup, horizon)` are tagged and followed to
/// completion, arrivals continuing meanwhile, so the direct estimator sees
/// no censoring. Confidence intervals come from batch means over equal
/// numbers of arrivals.
pub fn simulate(config: &FluidSimConfig) -> Result<ServiceRateEstimate, DynamicsError> {
    config.validate()?;
    let classes = config.req.classes();
    let stability = check_stability(&config.req, &config.load);
    if !stability.stable {
        log::warn!(
            "offered loads {:?} are not below capacity; running anyway",
            stability.loads
        );
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(config.stream);
    let mut cache = AllocationCache::new(config.req.clone(), config.objective);
    let lambda = &config.load.arrival_rates;
    let mu: Vec<f64> = (0..classes).map(|k| config.load.service_rate(k)).collect();
    let total_lambda: f64 = lambda.iter().sum();

    let warm = config.warmup_arrivals();
    let per_batch = (config.horizon - warm) / config.batches as u64;
    let mut batches = vec![
        Batch {
            area: vec![0.0; classes],
            sojourn: vec![0.0; classes],
            done: vec![0; classes],
            ..Batch::default()
        };
        config.batches
    ];
    let batch_of = |index: u64| ((index - warm) / per_batch).min(config.batches as u64 - 1) as usize;

    let mut counts = vec![0u32; classes];
    // arrival time and batch (or UNTAGGED) of each transaction in progress
    let mut present: Vec<Vec<(f64, usize)>> = vec![Vec::new(); classes];
    let mut arrived: u64 = 0;
    let mut outstanding: u64 = 0;
    let mut now = 0.0;
    let overrun_cap = config.horizon.saturating_mul(10);

    loop {
        if arrived >= config.horizon && outstanding == 0 {
            break;
        }
        if arrived >= overrun_cap {
            log::warn!("{outstanding} tagged transactions still in progress after {arrived} arrivals; stopping");
            break;
        }
        let phi = cache.rates(&counts)?;
        let deaths: Vec<f64> = (0..classes)
            .map(|k| f64::from(counts[k]) * phi[k] * mu[k])
            .collect();
        let total = total_lambda + deaths.iter().sum::<f64>();
        if total <= 0.0 {
            break;
        }
        let dt = rng.sample::<f64, _>(Exp1) / total;
        if arrived >= warm && arrived < config.horizon {
            let b = &mut batches[batch_of(arrived)];
            b.time += dt;
            for (area, &n) in b.area.iter_mut().zip(&counts) {
                *area += f64::from(n) * dt;
            }
        }
        now += dt;

        let mut pick = rng.random::<f64>() * total;
        let mut event = None;
        for k in 0..classes {
            if pick < lambda[k] {
                event = Some((k, true));
                break;
            }
            pick -= lambda[k];
        }
        if event.is_none() {
            for k in 0..classes {
                if pick < deaths[k] {
                    event = Some((k, false));
                    break;
                }
                pick -= deaths[k];
            }
        }
        // rounding can leave `pick` a hair above the last rate
        let (k, birth) = event.unwrap_or_else(|| {
            let k = (0..classes).rev().find(|&k| deaths[k] > 0.0).expect("some class present");
            (k, false)
        });

        if birth {
            let tag = if arrived >= warm && arrived < config.horizon {
                outstanding += 1;
                batch_of(arrived)
            } else {
                UNTAGGED
            };
            arrived += 1;
            counts[k] += 1;
            present[k].push((now, tag));
        } else {
            // all class-k transactions progress at the same rate and work is
            // memoryless, so the departing one is uniform among them
            let i = rng.random_range(0..present[k].len());
            let (start, tag) = present[k].swap_remove(i);
            counts[k] -= 1;
            if tag != UNTAGGED {
                outstanding -= 1;
                batches[tag].sojourn[k] += now - start;
                batches[tag].done[k] += 1;
            }
        }
    }

    let measured_time: f64 = batches.iter().map(|b| b.time).sum();
    let estimates = (0..classes)
        .map(|k| {
            let area: f64 = batches.iter().map(|b| b.area[k]).sum();
            let mean_count = if measured_time > 0.0 { area / measured_time } else { 0.0 };
            let per_batch: Vec<f64> = batches
                .iter()
                .filter(|b| b.time > 0.0)
                .map(|b| b.area[k] / b.time)
                .collect();
            let count_hw = half_width(&per_batch);
            let rho = lambda[k] * config.load.mean_work[k];
            let gamma = (mean_count > 0.0).then(|| rho / mean_count);
            let gamma_ci = gamma.and_then(|_| reciprocal_half_width(rho, mean_count, count_hw));

            let completed: u64 = batches.iter().map(|b| b.done[k]).sum();
            let total_sojourn: f64 = batches.iter().map(|b| b.sojourn[k]).sum();
            let mean_sojourn = (completed > 0).then(|| total_sojourn / completed as f64);
            let sojourns: Vec<f64> = batches
                .iter()
                .filter(|b| b.done[k] > 0)
                .map(|b| b.sojourn[k] / b.done[k] as f64)
                .collect();
            let work = config.load.mean_work[k];
            let gamma_direct = mean_sojourn.filter(|t| *t > 0.0).map(|t| work / t);
            let gamma_direct_ci = mean_sojourn
                .filter(|t| *t > 0.0)
                .and_then(|t| reciprocal_half_width(work, t, half_width(&sojourns)));

            ClassEstimate {
                gamma,
                gamma_ci,
                gamma_direct,
                gamma_direct_ci,
                mean_count,
                mean_count_ci: count_hw,
                completed,
            }
        })
        .collect();

    Ok(ServiceRateEstimate {
        classes: estimates,
        measured_time,
        solved_states: cache.len(),
    })
}
