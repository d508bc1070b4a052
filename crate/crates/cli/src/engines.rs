use std::fmt::Write as _;

use anyhow::Context;
use rayon::prelude::*;

use multifair::alloc::{check_properties, solve_bmf};
use multifair::dynamics::{
    simulate, stationary_solve, sweep, ClassEstimate, FluidSimConfig, StationaryOptions, SweepConfig,
};
use multifair::packetsim::{measure_static, run, PacketSimConfig, StaticConfig};
use multifair::{solve, AllocObjective};

use crate::config::{Engine, ExperimentConfig};
use crate::output::ResultRow;

struct RowBuilder<'a> {
    scenario: &'a str,
    engine: Engine,
    seed: Option<u64>,
}

impl RowBuilder<'_> {
    fn row(
        &self,
        objective: AllocObjective,
        load: Option<f64>,
        class: usize,
        metric: &str,
        value: f64,
        ci: Option<f64>,
    ) -> ResultRow {
        ResultRow {
            scenario: self.scenario.to_owned(),
            engine: self.engine.as_str().to_owned(),
            objective: objective.as_str().to_owned(),
            load,
            class,
            metric: metric.to_owned(),
            value,
            ci,
            seed: self.seed,
        }
    }

    /// `gamma` and `E_n` rows for a simulated class.
    fn estimate(&self, objective: AllocObjective, load: f64, class: usize, est: &ClassEstimate) -> [ResultRow; 2] {
        [
            self.row(objective, Some(load), class, "gamma", est.gamma.unwrap_or(f64::NAN), est.gamma_ci),
            self.row(objective, Some(load), class, "E_n", est.mean_count, est.mean_count_ci),
        ]
    }
}

/// Runs `engine` over every load point and objective of the config.
pub fn execute(config: &ExperimentConfig, engine: Engine, seed: u64) -> anyhow::Result<Vec<ResultRow>> {
    config.require(engine)?;
    let stochastic = matches!(engine, Engine::FluidSim | Engine::PacketSim);
    let rows = RowBuilder {
        scenario: &config.scenario,
        engine,
        seed: stochastic.then_some(seed),
    };
    match engine {
        Engine::StaticAlloc => static_alloc(config, &rows),
        Engine::FluidSim => fluid(config, &rows, seed),
        Engine::Stationary => stationary(config, &rows),
        Engine::PacketSim if config.packet.persistent => persistent(config, &rows),
        Engine::PacketSim => packet(config, &rows, seed),
    }
}

fn static_alloc(config: &ExperimentConfig, rows: &RowBuilder) -> anyhow::Result<Vec<ResultRow>> {
    let req = config.matrix()?;
    let mult = config.multiplicities();
    let mut out = Vec::new();
    for &objective in &config.objectives {
        let alloc = solve(objective, &req, &mult).with_context(|| format!("{objective} allocation"))?;
        for (k, &phi) in alloc.phi.iter().enumerate() {
            out.push(rows.row(objective, None, k, "phi", phi, None));
        }
    }
    Ok(out)
}

fn fluid(config: &ExperimentConfig, rows: &RowBuilder, seed: u64) -> anyhow::Result<Vec<ResultRow>> {
    let req = config.matrix()?;
    let mean_work = config.mean_work();
    let f = &config.fluid;
    if let (Some(direction), Some(loads)) = (&config.workload.direction, &config.workload.loads) {
        let sweep_config = SweepConfig {
            mean_work,
            objectives: config.objectives.clone(),
            horizon: f.horizon,
            warmup: f.warmup,
            batches: f.batches,
            seed,
            ..SweepConfig::new(req, direction.clone(), loads.clone())
        };
        let result = sweep(&sweep_config)?;
        return Ok(result
            .iter()
            .flat_map(|r| rows.estimate(r.objective, r.load, r.class, &r.estimate))
            .collect());
    }
    let point = config.load_points(&mean_work)?.remove(0);
    let estimates: Vec<_> = config
        .objectives
        .par_iter()
        .map(|&objective| {
            let sim = FluidSimConfig {
                horizon: f.horizon,
                warmup: f.warmup,
                batches: f.batches,
                seed,
                ..FluidSimConfig::new(req.clone(), point.workload.clone(), objective)
            };
            simulate(&sim).map(|est| (objective, est))
        })
        .collect::<Result<_, _>>()?;
    Ok(estimates
        .iter()
        .flat_map(|(objective, est)| {
            est.classes
                .iter()
                .enumerate()
                .flat_map(|(k, c)| rows.estimate(*objective, point.load, k, c))
        })
        .collect())
}

fn stationary(config: &ExperimentConfig, rows: &RowBuilder) -> anyhow::Result<Vec<ResultRow>> {
    let req = config.matrix()?;
    let options = StationaryOptions {
        state_cap: config.stationary.state_cap,
        ..StationaryOptions::with_n_max(config.stationary.n_max)
    };
    let mut out = Vec::new();
    for point in config.load_points(&config.mean_work())? {
        for &objective in &config.objectives {
            let result = stationary_solve(&req, &point.workload, objective, &options)
                .with_context(|| format!("{objective} at load {}", point.load))?;
            if result.distribution.deficit > 1e-6 {
                log::warn!(
                    "{objective} at load {}: truncation leaves out mass {:.3e}; raise n_max",
                    point.load,
                    result.distribution.deficit
                );
            }
            for (k, (&m, g)) in result.mean_counts.iter().zip(&result.gammas).enumerate() {
                out.push(rows.row(objective, Some(point.load), k, "gamma", g.unwrap_or(f64::NAN), None));
                out.push(rows.row(objective, Some(point.load), k, "E_n", m, None));
            }
        }
    }
    Ok(out)
}

fn propagation(config: &ExperimentConfig) -> Vec<f64> {
    config
        .packet
        .propagation
        .clone()
        .unwrap_or_else(|| vec![0.0; config.requirements.len()])
}

fn packet(config: &ExperimentConfig, rows: &RowBuilder, seed: u64) -> anyhow::Result<Vec<ResultRow>> {
    let req = config.matrix()?;
    let p = &config.packet;
    let points = config.load_points(&vec![p.mean_flow_size; req.classes()])?;
    let jobs: Vec<_> = points
        .iter()
        .flat_map(|point| config.objectives.iter().map(move |&o| (point, o)))
        .collect();
    let results: Vec<Vec<ResultRow>> = jobs
        .par_iter()
        .map(|&(point, objective)| {
            let sim = PacketSimConfig {
                window: p.window,
                propagation: propagation(config),
                flows: p.flows,
                warmup: p.warmup,
                batches: p.batches,
                seed,
                // same stream for every objective at a load point
                stream: point.index as u64,
                ..PacketSimConfig::new(req.clone(), point.workload.clone(), objective)
            };
            let result = run(&sim).with_context(|| format!("{objective} at load {}", point.load))?;
            log::info!(
                "load {} {objective}: {} packets, at most {} in flight",
                point.load,
                result.packets,
                result.max_in_flight
            );
            Ok(result
                .estimate
                .classes
                .iter()
                .enumerate()
                .flat_map(|(k, c)| rows.estimate(objective, point.load, k, c))
                .collect())
        })
        .collect::<anyhow::Result<_>>()?;
    Ok(results.concat())
}

fn persistent(config: &ExperimentConfig, rows: &RowBuilder) -> anyhow::Result<Vec<ResultRow>> {
    let req = config.matrix()?;
    let mut out = Vec::new();
    for &objective in &config.objectives {
        let cfg = StaticConfig {
            window: config.packet.window,
            propagation: propagation(config),
            duration: config.packet.duration,
            ..StaticConfig::new(req.clone(), objective, (0..req.classes()).collect())
        };
        let result = measure_static(&cfg)?;
        for (k, &t) in result.throughput.iter().enumerate() {
            out.push(rows.row(objective, None, k, "throughput", t, None));
        }
    }
    Ok(out)
}

/// Human-readable allocation report: φ, duals, bottlenecks and properties
/// for each objective.
pub fn alloc_report(config: &ExperimentConfig) -> anyhow::Result<String> {
    let req = config.matrix()?;
    let mult = config.multiplicities();
    let mut s = String::new();
    writeln!(s, "scenario {}: {} classes, {} resources", config.scenario, req.classes(), req.resources())?;
    writeln!(s, "multiplicities {mult:?}")?;
    for &objective in &config.objectives {
        let alloc = solve(objective, &req, &mult).with_context(|| format!("{objective} allocation"))?;
        let report = check_properties(&req, &alloc);
        writeln!(s, "\n[{objective}]")?;
        writeln!(s, "  phi          {}", list(&alloc.phi))?;
        if let Some(duals) = &alloc.duals {
            writeln!(s, "  duals        {}", list(duals))?;
        }
        writeln!(s, "  loads        {}", list(&alloc.loads(&req)))?;
        writeln!(s, "  bottlenecks  {:?}", alloc.bottlenecks)?;
        if objective == AllocObjective::Bmf && req.classes() > 0 {
            let sol = solve_bmf(&req, &mult)?;
            let kind = if sol.heuristic { " (iterative fallback)" } else { "" };
            writeln!(s, "  mapping      {:?}{kind}", sol.mapping.resource)?;
        }
        writeln!(s, "  capacity           {}", ok(report.capacity))?;
        writeln!(s, "  pareto efficient   {}", ok(report.pareto_efficient))?;
        writeln!(
            s,
            "  sharing incentive  {} (min share {:.6}, 1/n {:.6})",
            ok(report.sharing_incentive),
            report.min_dominant_share,
            report.fair_share
        )?;
        if let Some(fair) = report.single_resource_fair {
            writeln!(s, "  one-resource fair  {}", ok(fair))?;
        }
        if let Some(kkt) = report.kkt {
            writeln!(s, "  KKT residual       {:.3e}", kkt.max())?;
        }
        writeln!(s, "  BMF conditions     {} (residual {:.3e})", ok(report.bmf.satisfied), report.bmf.residual)?;
    }
    Ok(s)
}

fn list(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x:.9}")).collect();
    format!("({})", items.join(", "))
}

fn ok(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}
