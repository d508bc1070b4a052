//! Fluid allocations: dominant resource fairness, proportional fairness and
//! bottleneck max fairness, plus checkers for their defining properties.

mod bmf;
mod check;
mod drf;
mod oracle;
mod pf;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Allocation, RequirementMatrix};

pub use bmf::{check_bmf, solve_bmf, solve_bmf_with, BmfCheck, BmfOptions, BmfSolution, BottleneckMapping};
pub use check::{check_properties, kkt_residual, KktResidual, PropertyReport};
pub use drf::solve_drf;
pub use oracle::{bmf_oracle, OracleGrid};
pub use pf::{solve_pf, solve_pf_with, PfOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AllocObjective {
    Drf,
    Pf,
    Bmf,
}

impl AllocObjective {
    pub const ALL: [AllocObjective; 3] = [AllocObjective::Drf, AllocObjective::Pf, AllocObjective::Bmf];

    pub fn as_str(self) -> &'static str {
        match self {
            AllocObjective::Drf => "drf",
            AllocObjective::Pf => "pf",
            AllocObjective::Bmf => "bmf",
        }
    }
}

impl fmt::Display for AllocObjective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AllocObjective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "drf" => Ok(AllocObjective::Drf),
            "pf" => Ok(AllocObjective::Pf),
            "bmf" => Ok(AllocObjective::Bmf),
            other => Err(format!("unknown objective `{other}` (expected drf, pf or bmf)")),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AllocError {
    #[error("multiplicities: expected {expected} entries, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("class {class} has multiplicity 0")]
    ZeroMultiplicity { class: usize },
    #[error("PF solver did not converge after {iterations} iterations (KKT residual {residual:e})")]
    PfNotConverged { iterations: usize, residual: f64 },
    #[error("BMF not found: {reason}")]
    BmfNotFound { reason: String },
    #[error("oracle grid too large: {reason}")]
    OracleTooLarge { reason: String },
}

/// Solve for the allocation of the given objective.
pub fn solve(
    objective: AllocObjective,
    req: &RequirementMatrix,
    mult: &[u32],
) -> Result<Allocation, AllocError> {
    match objective {
        AllocObjective::Drf => solve_drf(req, mult),
        AllocObjective::Pf => solve_pf(req, mult),
        AllocObjective::Bmf => solve_bmf(req, mult).map(|s| s.allocation),
    }
}

pub(crate) fn validate_multiplicities(req: &RequirementMatrix, mult: &[u32]) -> Result<(), AllocError> {
    if mult.len() != req.classes() {
        return Err(AllocError::DimensionMismatch {
            expected: req.classes(),
            got: mult.len(),
        });
    }
    if let Some(class) = mult.iter().position(|&m| m == 0) {
        return Err(AllocError::ZeroMultiplicity { class });
    }
    Ok(())
}
