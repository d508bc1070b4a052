//! Experiment configuration, read from TOML.
//!
//! ```toml
//! scenario = "fig2_unbalanced"
//! engine = "fluid-sim"            # fluid-sim | stationary | packet-sim | static-alloc
//! objectives = ["drf", "pf", "bmf"]
//! requirements = [[0.1, 1.0], [1.0, 0.1], [1.0, 1.0]]
//! seed = 0
//! output = "fig2.csv"
//!
//! [workload]
//! direction = [4.0, 1.0, 1.0]    # ratios between class loads
//! loads = [0.3, 0.5, 0.7, 0.9]   # load of the most loaded resource
//! # rates = [...]                # or explicit arrival rates, one load point
//! mean_work = [1.0, 1.0, 1.0]
//! multiplicities = [1, 1, 1]     # transactions per class for static-alloc
//!
//! [fluid]
//! horizon = 100000               # arrivals per load point
//!
//! [stationary]
//! n_max = 30
//!
//! [packet]
//! window = 30
//! mean_flow_size = 500.0
//! flows = 10000
//! propagation = [0.0, 0.0, 0.0]
//! persistent = false             # one never-ending flow per class instead
//! ```
//!
//! Requirement rows are normalized so that each row's largest entry is 1.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context};
use serde::Deserialize;

use multifair::dynamics::scale_to_max_load;
use multifair::{check_stability, normalize, AllocObjective, RequirementMatrix, WorkloadSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Engine {
    FluidSim,
    Stationary,
    PacketSim,
    StaticAlloc,
}

impl Engine {
    pub fn as_str(self) -> &'static str {
        match self {
            Engine::FluidSim => "fluid-sim",
            Engine::Stationary => "stationary",
            Engine::PacketSim => "packet-sim",
            Engine::StaticAlloc => "static-alloc",
        }
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: String,
    pub engine: Option<Engine>,
    #[serde(default = "all_objectives")]
    pub objectives: Vec<AllocObjective>,
    /// Raw requirement rows, one per class.
    pub requirements: Vec<Vec<f64>>,
    /// Needed only when there are no rows.
    pub resources: Option<usize>,
    #[serde(default)]
    pub workload: WorkloadSection,
    #[serde(default)]
    pub fluid: FluidSection,
    #[serde(default)]
    pub stationary: StationarySection,
    #[serde(default)]
    pub packet: PacketSection,
    #[serde(default)]
    pub seed: u64,
    pub output: Option<PathBuf>,
}

fn all_objectives() -> Vec<AllocObjective> {
    AllocObjective::ALL.to_vec()
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSection {
    pub rates: Option<Vec<f64>>,
    pub mean_work: Option<Vec<f64>>,
    pub direction: Option<Vec<f64>>,
    pub loads: Option<Vec<f64>>,
    pub multiplicities: Option<Vec<u32>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FluidSection {
    pub horizon: u64,
    pub warmup: f64,
    pub batches: usize,
}

impl Default for FluidSection {
    fn default() -> Self {
        Self {
            horizon: 100_000,
            warmup: 0.2,
            batches: 20,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StationarySection {
    pub n_max: u32,
    pub state_cap: u64,
}

impl Default for StationarySection {
    fn default() -> Self {
        Self {
            n_max: 30,
            state_cap: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PacketSection {
    pub window: u32,
    pub mean_flow_size: f64,
    pub flows: u64,
    pub propagation: Option<Vec<f64>>,
    pub warmup: f64,
    pub batches: usize,
    pub persistent: bool,
    /// Measurement window for persistent flows.
    pub duration: f64,
}

impl Default for PacketSection {
    fn default() -> Self {
        Self {
            window: 30,
            mean_flow_size: 20_000.0,
            flows: 100_000,
            propagation: None,
            warmup: 0.2,
            batches: 20,
            persistent: false,
            duration: 20_000.0,
        }
    }
}

/// A workload together with the load of its most loaded resource.
#[derive(Debug, Clone)]
pub struct LoadPoint {
    pub load: f64,
    /// Position in the load grid; used as the RNG stream.
    pub index: usize,
    pub workload: WorkloadSpec,
}

impl FromStr for ExperimentConfig {
    type Err = anyhow::Error;

    fn from_str(text: &str) -> anyhow::Result<Self> {
        let config: ExperimentConfig = toml::from_str(text)?;
        config.validate().map_err(|e| match key_line(text, e.key) {
            Some(line) => anyhow::anyhow!("line {line}: {}", e.message),
            None => anyhow::anyhow!("{}", e.message),
        })?;
        Ok(config)
    }
}

struct Invalid {
    key: &'static str,
    message: String,
}

fn invalid(key: &'static str, message: impl Into<String>) -> Invalid {
    Invalid {
        key,
        message: format!("`{key}`: {}", message.into()),
    }
}

/// 1-based line of the first assignment to `key`.
fn key_line(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        l.trim_start()
            .strip_prefix(key)
            .is_some_and(|rest| rest.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        text.parse().with_context(|| format!("invalid config {}", path.display()))
    }

    fn validate(&self) -> Result<(), Invalid> {
        let k = self.requirements.len();
        if self.scenario.is_empty() || self.scenario.contains([',', '"', '\n']) {
            return Err(invalid("scenario", "must be non-empty, without commas, quotes or newlines"));
        }
        if k == 0 && self.resources.is_none() {
            return Err(invalid("resources", "required when `requirements` is empty"));
        }
        self.matrix().map_err(|e| invalid("requirements", e.to_string()))?;
        if self.objectives.is_empty() {
            return Err(invalid("objectives", "list at least one of drf, pf, bmf"));
        }
        let w = &self.workload;
        let per_class = |key: &'static str, len: Option<usize>| match len {
            Some(n) if n != k => Err(invalid(key, format!("expected {k} entries, got {n}"))),
            _ => Ok(()),
        };
        per_class("rates", w.rates.as_ref().map(Vec::len))?;
        per_class("mean_work", w.mean_work.as_ref().map(Vec::len))?;
        per_class("direction", w.direction.as_ref().map(Vec::len))?;
        per_class("multiplicities", w.multiplicities.as_ref().map(Vec::len))?;
        per_class("propagation", self.packet.propagation.as_ref().map(Vec::len))?;
        if w.loads.is_some() && w.direction.is_none() {
            return Err(invalid("loads", "a load grid needs a `direction`"));
        }
        if w.loads.is_some() && w.rates.is_some() {
            return Err(invalid("rates", "give either `rates` or `loads`, not both"));
        }
        if let Some(l) = w.loads.iter().flatten().find(|l| !(**l > 0.0 && **l < 1.0)) {
            return Err(invalid("loads", format!("{l} is outside (0, 1)")));
        }
        if let Some(engine) = self.engine {
            self.check_engine(engine)?;
        }
        Ok(())
    }

    /// Fails if a parameter required by `engine` is missing.
    fn check_engine(&self, engine: Engine) -> Result<(), Invalid> {
        let w = &self.workload;
        let needs_workload = match engine {
            Engine::StaticAlloc => false,
            Engine::PacketSim => !self.packet.persistent,
            Engine::FluidSim | Engine::Stationary => true,
        };
        if needs_workload && w.rates.is_none() && w.loads.is_none() {
            return Err(invalid("workload", format!("{engine} needs `rates` or `loads`")));
        }
        if engine == Engine::PacketSim && (self.packet.mean_flow_size.is_nan() || self.packet.mean_flow_size < 1.0) {
            return Err(invalid("mean_flow_size", "must be at least one packet"));
        }
        Ok(())
    }

    /// Validates the config for a specific engine.
    pub fn require(&self, engine: Engine) -> anyhow::Result<()> {
        self.check_engine(engine).map_err(|e| anyhow::anyhow!("{}", e.message))
    }

    pub fn matrix(&self) -> anyhow::Result<RequirementMatrix> {
        if self.requirements.is_empty() {
            return Ok(RequirementMatrix::empty(self.resources.unwrap_or(0)));
        }
        Ok(normalize(&self.requirements)?.matrix)
    }

    pub fn multiplicities(&self) -> Vec<u32> {
        self.workload
            .multiplicities
            .clone()
            .unwrap_or_else(|| vec![1; self.requirements.len()])
    }

    /// Mean work per class for the fluid engines.
    pub fn mean_work(&self) -> Vec<f64> {
        self.workload
            .mean_work
            .clone()
            .unwrap_or_else(|| vec![1.0; self.requirements.len()])
    }

    /// Workloads for each load point, with the given mean work per class.
    pub fn load_points(&self, mean_work: &[f64]) -> anyhow::Result<Vec<LoadPoint>> {
        let req = self.matrix()?;
        let w = &self.workload;
        if let Some(rates) = &w.rates {
            let workload = WorkloadSpec::new(rates.clone(), mean_work.to_vec())?;
            let load = check_stability(&req, &workload).max_load();
            return Ok(vec![LoadPoint {
                load,
                index: 0,
                workload,
            }]);
        }
        let (Some(direction), Some(loads)) = (&w.direction, &w.loads) else {
            bail!("no load points: set `rates` or `direction` and `loads`");
        };
        loads
            .iter()
            .enumerate()
            .map(|(index, &load)| {
                Ok(LoadPoint {
                    load,
                    index,
                    workload: scale_to_max_load(&req, direction, mean_work, load)?,
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG2: &str = r#"
scenario = "fig2"
engine = "fluid-sim"
requirements = [[0.1, 1.0], [1.0, 0.1], [1.0, 1.0]]

[workload]
direction = [4.0, 1.0, 1.0]
loads = [0.5, 0.9]
"#;

    #[test]
    fn parses_and_builds_load_points() {
        let cfg: ExperimentConfig = FIG2.parse().unwrap();
        assert_eq!(cfg.engine, Some(Engine::FluidSim));
        assert_eq!(cfg.objectives, AllocObjective::ALL);
        assert_eq!(cfg.fluid.horizon, 100_000);
        let points = cfg.load_points(&cfg.mean_work()).unwrap();
        assert_eq!(points.len(), 2);
        let req = cfg.matrix().unwrap();
        let top = check_stability(&req, &points[1].workload).max_load();
        assert!((top - 0.9).abs() < 1e-12);
    }

    #[test]
    fn rows_are_normalized() {
        let cfg: ExperimentConfig = "scenario = \"x\"\nrequirements = [[2.0, 4.0]]\n".parse().unwrap();
        assert_eq!(cfg.matrix().unwrap().row(0), &[0.5, 1.0]);
    }

    #[test]
    fn syntax_errors_carry_a_line() {
        let err = "scenario = \"x\"\nrequirements = [[1.0,\n".parse::<ExperimentConfig>().unwrap_err();
        assert!(format!("{err:#}").contains("line"), "{err:#}");
    }

    #[test]
    fn semantic_errors_point_at_the_key() {
        let text = FIG2.replace("direction = [4.0, 1.0, 1.0]", "direction = [4.0, 1.0]");
        let err = text.parse::<ExperimentConfig>().unwrap_err().to_string();
        assert!(err.starts_with("line 7: `direction`"), "{err}");
        let text = FIG2.replace("loads = [0.5, 0.9]", "loads = [0.5, 1.2]");
        let err = text.parse::<ExperimentConfig>().unwrap_err().to_string();
        assert!(err.contains("1.2 is outside"), "{err}");
    }

    #[test]
    fn unknown_fields_and_missing_parameters_are_rejected() {
        assert!(format!("{FIG2}\nhorizon = 3\n").parse::<ExperimentConfig>().is_err());
        let text = "scenario = \"x\"\nengine = \"stationary\"\nrequirements = [[1.0]]\n";
        let err = text.parse::<ExperimentConfig>().unwrap_err().to_string();
        assert!(err.contains("needs `rates` or `loads`"), "{err}");
        let text = "scenario = \"x\"\nrequirements = []\n";
        assert!(text.parse::<ExperimentConfig>().is_err());
    }
}
