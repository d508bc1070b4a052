//! Packet-level simulation of windowed flows crossing a pipeline of
//! resources, scheduled by start-time fair queueing.
//!
//! Each packet of a class-k flow visits the resources with `a_kj > 0` in
//! index order and occupies resource j for `a_kj` time units. A flow keeps at
//! most `W` packets in flight; the credit for a packet returns `T_k` after it
//! leaves the last resource. Resources serve their queues in start-tag order:
//! one shared DRFQ tag per packet, or per-resource PF/BMF tags.

mod engine;
mod tags;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Geometric};
use serde::Serialize;
use thiserror::Error;

use crate::alloc::AllocObjective;
use crate::dynamics::stats::{half_width, reciprocal_half_width};
use crate::dynamics::{ClassEstimate, ServiceRateEstimate, TraceArrival};
use crate::model::{check_stability, RequirementMatrix, WorkloadSpec};

use engine::{Engine, EventKind};
pub use tags::{tag_bmf, tag_drf, tag_pf};

#[derive(Debug, Error)]
pub enum PacketSimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone)]
pub struct PacketSimConfig {
    pub req: RequirementMatrix,
    pub discipline: AllocObjective,
    /// Window `W` in packets.
    pub window: u32,
    /// Flow arrival rates; `mean_work` is the mean flow size in packets.
    pub load: WorkloadSpec,
    /// Round-trip propagation time `T_k` per class.
    pub propagation: Vec<f64>,
    /// Number of flow arrivals (warmup included).
    pub flows: u64,
    pub warmup: f64,
    pub batches: usize,
    pub seed: u64,
    pub stream: u64,
}

impl PacketSimConfig {
    pub fn new(req: RequirementMatrix, load: WorkloadSpec, discipline: AllocObjective) -> Self {
        let k = req.classes();
        Self {
            req,
            discipline,
            window: 30,
            load,
            propagation: vec![0.0; k],
            flows: 100_000,
            warmup: 0.2,
            batches: 20,
            seed: 0,
            stream: 0,
        }
    }

    fn validate(&self) -> Result<(), PacketSimError> {
        let k = self.req.classes();
        let bad = |msg: String| Err(PacketSimError::InvalidConfig(msg));
        if self.load.classes() != k || self.propagation.len() != k {
            return bad(format!(
                "{k} requirement rows, {} workload classes, {} propagation times",
                self.load.classes(),
                self.propagation.len()
            ));
        }
        if self.window == 0 {
            return bad("window must be at least one packet".into());
        }
        if let Some(m) = self.load.mean_work.iter().find(|&&m| m < 1.0) {
            return bad(format!("mean flow size {m} is below one packet"));
        }
        if let Some(t) = self.propagation.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
            return bad(format!("propagation time {t} must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.warmup) {
            return bad(format!("warmup fraction {} outside [0, 1)", self.warmup));
        }
        if self.batches < 2 {
            return bad("need at least two batches".into());
        }
        if self.flows - self.warmup_flows() < self.batches as u64 {
            return bad(format!("{} flows cannot fill {} batches", self.flows, self.batches));
        }
        Ok(())
    }

    fn warmup_flows(&self) -> u64 {
        (self.warmup * self.flows as f64).floor() as u64
    }
}

/// A packet beginning service; recorded when tracing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ServiceStart {
    pub time: f64,
    pub resource: usize,
    pub flow: usize,
    pub seq: u64,
    pub tag: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowRecord {
    /// Arrival index.
    pub id: usize,
    pub class: usize,
    pub size: u64,
    pub arrival: f64,
    pub completion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PacketSimResult {
    /// `gamma` is `ρ_k / E[n_k]` from the flow counts, `gamma_direct` is
    /// measured packets over measured completion time.
    pub estimate: ServiceRateEstimate,
    /// Completed measured flows, by arrival index.
    pub records: Vec<FlowRecord>,
    /// Every flow arrival of the run, measured or not, with its size as work.
    pub arrivals: Vec<TraceArrival>,
    pub packets: u64,
    /// Largest number of packets any flow had in flight.
    pub max_in_flight: u32,
}

/// Runs the dynamic scenario: Poisson flow arrivals with geometric sizes
/// (`1 + Geometric(1/m)`, mean `m`). Flows with arrival index in
/// `[warmup, flows)` are measured; arrivals continue until they all finish.
pub fn run(config: &PacketSimConfig) -> Result<PacketSimResult, PacketSimError> {
    config.validate()?;
    let classes = config.req.classes();
    let stability = check_stability(&config.req, &config.load);
    if !stability.stable {
        log::warn!("offered loads {:?} are not below capacity; running anyway", stability.loads);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(config.stream);
    let lambda = &config.load.arrival_rates;
    let total_lambda: f64 = lambda.iter().sum();
    if total_lambda <= 0.0 {
        return Err(PacketSimError::InvalidConfig("no flow arrivals".into()));
    }
    let sizes: Vec<Geometric> = config
        .load
        .mean_work
        .iter()
        .map(|m| Geometric::new(1.0 / m).expect("mean size >= 1"))
        .collect();

    let mut engine = Engine::new(&config.req, config.discipline, config.window, &config.propagation, false);
    let warm = config.warmup_flows() as usize;
    let horizon = config.flows as usize;
    let per_batch = (horizon - warm) / config.batches;
    let batch_of = |id: usize| ((id - warm) / per_batch).min(config.batches - 1);
    let measured = |id: usize| id >= warm && id < horizon;

    let mut area = vec![vec![0.0; classes]; config.batches];
    let mut span = vec![0.0; config.batches];
    let mut records = Vec::new();
    let mut arrivals = Vec::new();
    let mut outstanding = 0usize;
    let overrun_cap = horizon.saturating_mul(10);
    let gap = |rng: &mut ChaCha8Rng| rng.sample::<f64, _>(Exp1) / total_lambda;
    let first = gap(&mut rng);
    engine.schedule(first, EventKind::FlowArrival);

    loop {
        let arrived = engine.flows.len();
        if arrived >= horizon && outstanding == 0 {
            break;
        }
        if arrived >= overrun_cap {
            log::warn!("{outstanding} measured flows unfinished after {arrived} arrivals; stopping");
            break;
        }
        let Some(next) = engine.next_event_time() else {
            break;
        };
        if measured(arrived) {
            let dt = next - engine.now;
            let b = batch_of(arrived);
            span[b] += dt;
            for (acc, &n) in area[b].iter_mut().zip(&engine.active) {
                *acc += f64::from(n) * dt;
            }
        }
        if engine.step() == Some(EventKind::FlowArrival) {
            let mut pick = rng.random::<f64>() * total_lambda;
            let class = (0..classes)
                .find(|&k| {
                    let hit = pick < lambda[k];
                    pick -= lambda[k];
                    hit
                })
                .unwrap_or_else(|| (0..classes).rev().find(|&k| lambda[k] > 0.0).expect("positive rate"));
            let size = 1 + sizes[class].sample(&mut rng);
            let id = engine.add_flow(class, size);
            arrivals.push(TraceArrival {
                time: engine.now,
                class,
                work: size as f64,
            });
            if measured(id) {
                outstanding += 1;
            }
            let at = engine.now + gap(&mut rng);
            engine.schedule(at, EventKind::FlowArrival);
        }
        for id in engine.finished.drain(..) {
            if measured(id) {
                outstanding -= 1;
                let flow = &engine.flows[id];
                records.push(FlowRecord {
                    id,
                    class: flow.class,
                    size: flow.size,
                    arrival: flow.arrival,
                    completion: flow.completion.expect("finished"),
                });
            }
        }
    }
    records.sort_by_key(|r| r.id);

    let measured_time: f64 = span.iter().sum();
    let loads = config.load.loads();
    let estimates = (0..classes)
        .map(|k| {
            let total_area: f64 = area.iter().map(|a| a[k]).sum();
            let mean_count = if measured_time > 0.0 { total_area / measured_time } else { 0.0 };
            let counts: Vec<f64> = (0..config.batches)
                .filter(|&b| span[b] > 0.0)
                .map(|b| area[b][k] / span[b])
                .collect();
            let count_hw = half_width(&counts);
            let gamma = (mean_count > 0.0).then(|| loads[k] / mean_count);
            let gamma_ci = gamma.and_then(|_| reciprocal_half_width(loads[k], mean_count, count_hw));

            let mut work = vec![0.0; config.batches];
            let mut time = vec![0.0; config.batches];
            let mut completed = 0;
            for r in records.iter().filter(|r| r.class == k) {
                let b = batch_of(r.id);
                work[b] += r.size as f64;
                time[b] += r.completion - r.arrival;
                completed += 1;
            }
            let total_time: f64 = time.iter().sum();
            let gamma_direct = (total_time > 0.0).then(|| work.iter().sum::<f64>() / total_time);
            let ratios: Vec<f64> = (0..config.batches)
                .filter(|&b| time[b] > 0.0)
                .map(|b| work[b] / time[b])
                .collect();
            ClassEstimate {
                gamma,
                gamma_ci,
                gamma_direct,
                gamma_direct_ci: gamma_direct.and(half_width(&ratios)),
                mean_count,
                mean_count_ci: count_hw,
                completed,
            }
        })
        .collect();

    Ok(PacketSimResult {
        estimate: ServiceRateEstimate {
            classes: estimates,
            measured_time,
            solved_states: 0,
        },
        records,
        arrivals,
        packets: engine.packets,
        max_in_flight: engine.max_in_flight,
    })
}

/// Persistent flows (one entry per flow, giving its class) that never run
/// out of packets.
#[derive(Debug, Clone)]
pub struct StaticConfig {
    pub req: RequirementMatrix,
    pub discipline: AllocObjective,
    pub window: u32,
    pub propagation: Vec<f64>,
    pub flows: Vec<usize>,
    /// Time discarded before measuring.
    pub warmup: f64,
    /// Length of the measurement window.
    pub duration: f64,
    pub trace: bool,
}

impl StaticConfig {
    pub fn new(req: RequirementMatrix, discipline: AllocObjective, flows: Vec<usize>) -> Self {
        let k = req.classes();
        Self {
            req,
            discipline,
            window: 30,
            propagation: vec![0.0; k],
            flows,
            warmup: 2_000.0,
            duration: 20_000.0,
            trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StaticThroughput {
    /// Packets completed per unit time over the window, per flow.
    pub throughput: Vec<f64>,
    pub max_in_flight: u32,
    /// Every service start, in time order, when tracing was requested.
    pub trace: Vec<ServiceStart>,
}

/// Steady-state throughput of a fixed set of backlogged flows.
pub fn measure_static(config: &StaticConfig) -> Result<StaticThroughput, PacketSimError> {
    let k = config.req.classes();
    if config.window == 0 {
        return Err(PacketSimError::InvalidConfig("window must be at least one packet".into()));
    }
    if config.propagation.len() != k {
        return Err(PacketSimError::InvalidConfig(format!(
            "{k} classes but {} propagation times",
            config.propagation.len()
        )));
    }
    if let Some(c) = config.flows.iter().find(|&&c| c >= k) {
        return Err(PacketSimError::InvalidConfig(format!("flow class {c} out of range")));
    }
    if !(config.warmup >= 0.0 && config.duration > 0.0) {
        return Err(PacketSimError::InvalidConfig("warmup must be >= 0 and duration > 0".into()));
    }
    let mut engine = Engine::new(
        &config.req,
        config.discipline,
        config.window,
        &config.propagation,
        config.trace,
    );
    for &class in &config.flows {
        engine.add_flow(class, u64::MAX);
    }
    let advance_to = |engine: &mut Engine, t: f64| {
        while engine.next_event_time().is_some_and(|next| next <= t) {
            engine.step();
        }
    };
    advance_to(&mut engine, config.warmup);
    let before: Vec<u64> = engine.flows.iter().map(|f| f.done).collect();
    advance_to(&mut engine, config.warmup + config.duration);
    let throughput = engine
        .flows
        .iter()
        .zip(before)
        .map(|(f, b)| (f.done - b) as f64 / config.duration)
        .collect();
    Ok(StaticThroughput {
        throughput,
        max_in_flight: engine.max_in_flight,
        trace: engine.trace.take().unwrap_or_default(),
    })
}

/// Completion time of each flow in a given arrival sequence (sorted by
/// time; `work` is the flow size in packets and must be a whole number).
pub fn run_arrivals(
    req: &RequirementMatrix,
    discipline: AllocObjective,
    window: u32,
    propagation: &[f64],
    arrivals: &[TraceArrival],
) -> Result<Vec<f64>, PacketSimError> {
    if window == 0 {
        return Err(PacketSimError::InvalidConfig("window must be at least one packet".into()));
    }
    if propagation.len() != req.classes() {
        return Err(PacketSimError::InvalidConfig(format!(
            "{} classes but {} propagation times",
            req.classes(),
            propagation.len()
        )));
    }
    for (i, a) in arrivals.iter().enumerate() {
        if a.class >= req.classes() || a.work < 1.0 || a.work.fract() != 0.0 || !(a.time >= 0.0) {
            return Err(PacketSimError::InvalidConfig(format!("bad arrival {i}: {a:?}")));
        }
        if i > 0 && a.time < arrivals[i - 1].time {
            return Err(PacketSimError::InvalidConfig(format!("arrival {i} is out of order")));
        }
    }
    let mut engine = Engine::new(req, discipline, window, propagation, false);
    for a in arrivals {
        engine.schedule(a.time, EventKind::FlowArrival);
    }
    let mut next = 0;
    while let Some(kind) = engine.step() {
        if kind == EventKind::FlowArrival {
            let a = arrivals[next];
            engine.add_flow(a.class, a.work as u64);
            next += 1;
        }
    }
    Ok(engine.flows.iter().map(|f| f.completion.expect("drained")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(class: usize, size: f64) -> TraceArrival {
        TraceArrival {
            time: 0.0,
            class,
            work: size,
        }
    }

    #[test]
    fn serial_service_on_one_resource() {
        let req = RequirementMatrix::new(&[vec![1.0]]).unwrap();
        for discipline in AllocObjective::ALL {
            for window in [1, 3, 30] {
                let done = run_arrivals(&req, discipline, window, &[0.0], &[one(0, 50.0)]).unwrap();
                assert_eq!(done, vec![50.0]);
            }
        }
    }

    #[test]
    fn window_of_one_defeats_pipelining() {
        let req = RequirementMatrix::new(&[vec![1.0, 1.0]]).unwrap();
        for discipline in AllocObjective::ALL {
            let done = run_arrivals(&req, discipline, 1, &[0.0], &[one(0, 40.0)]).unwrap();
            assert_eq!(done, vec![80.0]);
            // a window of two keeps both stages busy
            let done = run_arrivals(&req, discipline, 2, &[0.0], &[one(0, 40.0)]).unwrap();
            assert_eq!(done, vec![41.0]);
        }
    }

    #[test]
    fn propagation_delays_window_credit() {
        let req = RequirementMatrix::new(&[vec![1.0, 0.5]]).unwrap();
        // each packet: 1.5 in the pipeline, then 2 before the next may enter
        let done = run_arrivals(&req, AllocObjective::Bmf, 1, &[2.0], &[one(0, 10.0)]).unwrap();
        assert_eq!(done, vec![10.0 * 1.5 + 9.0 * 2.0]);
    }

    #[test]
    fn zero_requirement_skips_resource() {
        let req = RequirementMatrix::new(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let done = run_arrivals(&req, AllocObjective::Pf, 1, &[0.0; 2], &[one(0, 5.0), one(1, 7.0)]).unwrap();
        assert_eq!(done, vec![5.0, 7.0]);
    }

    #[test]
    fn rejects_fractional_sizes() {
        let req = RequirementMatrix::new(&[vec![1.0]]).unwrap();
        assert!(run_arrivals(&req, AllocObjective::Pf, 1, &[0.0], &[one(0, 2.5)]).is_err());
    }

    #[test]
    fn config_validation() {
        let req = RequirementMatrix::new(&[vec![1.0]]).unwrap();
        let load = WorkloadSpec::new(vec![0.001], vec![100.0]).unwrap();
        let mut cfg = PacketSimConfig::new(req, load, AllocObjective::Drf);
        cfg.window = 0;
        assert!(run(&cfg).is_err());
        cfg.window = 4;
        cfg.propagation = vec![-1.0];
        assert!(run(&cfg).is_err());
        cfg.propagation = vec![0.0];
        cfg.load.mean_work = vec![0.5];
        assert!(run(&cfg).is_err());
    }
}
