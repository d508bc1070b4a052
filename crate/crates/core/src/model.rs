//! Fluid-model domain types shared by the allocation, dynamics and packet engines.
//!
//! Resources have normalized capacity 1. A class's requirement row gives the
//! fraction of each resource consumed per unit of progress, scaled so that the
//! largest entry (the dominant resource) is exactly 1.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for capacity constraints and equality tests.
pub const TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("requirement row {row} has no positive entry")]
    ZeroRow { row: usize },
    #[error("requirement row {row} has {len} entries, expected {expected}")]
    RaggedRow {
        row: usize,
        len: usize,
        expected: usize,
    },
    #[error("requirement entry ({row}, {col}) must be finite and nonnegative, got {value}")]
    BadEntry { row: usize, col: usize, value: f64 },
    #[error("requirement row {row} is not normalized (max entry {max})")]
    NotNormalized { row: usize, max: f64 },
    #[error("{what}: expected {expected} entries, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("class {class}: {reason}")]
    InvalidWorkload { class: usize, reason: String },
}

/// K×J matrix of normalized per-class resource requirements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequirementMatrix {
    resources: usize,
    entries: Vec<f64>,
}

/// Output of [`normalize`]: the normalized matrix and the per-row divisor.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub matrix: RequirementMatrix,
    /// `raw[k][j] == matrix[k][j] * scales[k]`; converts work units back.
    pub scales: Vec<f64>,
}

/// Divide every row by its maximum entry.
///
/// The resource count is taken from the first row; an empty input yields a
/// matrix with no classes and no resources.
pub fn normalize(raw: &[Vec<f64>]) -> Result<Normalized, ModelError> {
    let resources = raw.first().map_or(0, Vec::len);
    let mut entries = Vec::with_capacity(raw.len() * resources);
    let mut scales = Vec::with_capacity(raw.len());
    for (row, values) in raw.iter().enumerate() {
        validate_row(row, values, resources)?;
        let max = values.iter().copied().fold(0.0, f64::max);
        if max <= 0.0 {
            return Err(ModelError::ZeroRow { row });
        }
        entries.extend(values.iter().map(|v| v / max));
        scales.push(max);
    }
    Ok(Normalized {
        matrix: RequirementMatrix { resources, entries },
        scales,
    })
}

fn validate_row(row: usize, values: &[f64], expected: usize) -> Result<(), ModelError> {
    if values.len() != expected {
        return Err(ModelError::RaggedRow {
            row,
            len: values.len(),
            expected,
        });
    }
    for (col, &value) in values.iter().enumerate() {
        if !value.is_finite() || value < 0.0 {
            return Err(ModelError::BadEntry { row, col, value });
        }
    }
    Ok(())
}

impl RequirementMatrix {
    /// Build from rows that are already normalized (row max exactly 1).
    pub fn new(rows: &[Vec<f64>]) -> Result<Self, ModelError> {
        let resources = rows.first().map_or(0, Vec::len);
        Self::with_resources(resources, rows)
    }

    /// Like [`RequirementMatrix::new`] but with an explicit resource count,
    /// which matters when `rows` is empty.
    pub fn with_resources(resources: usize, rows: &[Vec<f64>]) -> Result<Self, ModelError> {
        let mut entries = Vec::with_capacity(rows.len() * resources);
        for (row, values) in rows.iter().enumerate() {
            validate_row(row, values, resources)?;
            let max = values.iter().copied().fold(0.0, f64::max);
            if max <= 0.0 {
                return Err(ModelError::ZeroRow { row });
            }
            if (max - 1.0).abs() > TOL {
                return Err(ModelError::NotNormalized { row, max });
            }
            entries.extend_from_slice(values);
        }
        Ok(Self { resources, entries })
    }

    pub fn empty(resources: usize) -> Self {
        Self {
            resources,
            entries: Vec::new(),
        }
    }

    pub fn classes(&self) -> usize {
        if self.resources == 0 {
            0
        } else {
            self.entries.len() / self.resources
        }
    }

    pub fn resources(&self) -> usize {
        self.resources
    }

    pub fn row(&self, class: usize) -> &[f64] {
        &self.entries[class * self.resources..(class + 1) * self.resources]
    }

    #[inline]
    pub fn get(&self, class: usize, resource: usize) -> f64 {
        self.entries[class * self.resources + resource]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.entries.chunks(self.resources.max(1)).take(self.classes())
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    /// Sub-matrix made of the given classes, in the given order.
    pub fn select(&self, classes: &[usize]) -> Self {
        let mut entries = Vec::with_capacity(classes.len() * self.resources);
        for &k in classes {
            entries.extend_from_slice(self.row(k));
        }
        Self {
            resources: self.resources,
            entries,
        }
    }

    /// Per-resource usage `Σ_k mult_k φ_k a_kj`.
    pub fn resource_loads(&self, phi: &[f64], mult: &[u32]) -> Vec<f64> {
        let mut loads = vec![0.0; self.resources];
        for (k, row) in self.rows().enumerate() {
            let weight = f64::from(mult[k]) * phi[k];
            for (load, a) in loads.iter_mut().zip(row) {
                *load += weight * a;
            }
        }
        loads
    }
}

/// Progress rates for every class, plus dual prices and the saturated set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    /// Per-transaction progress rate of each class.
    pub phi: Vec<f64>,
    /// Number of identical transactions in each class.
    pub multiplicities: Vec<u32>,
    /// Lagrange multipliers of the capacity constraints, when the solver produces them.
    pub duals: Option<Vec<f64>>,
    /// Resources whose capacity is used up within [`TOL`].
    pub bottlenecks: Vec<usize>,
}

impl Allocation {
    pub fn new(
        req: &RequirementMatrix,
        phi: Vec<f64>,
        multiplicities: Vec<u32>,
        duals: Option<Vec<f64>>,
    ) -> Self {
        let bottlenecks = req
            .resource_loads(&phi, &multiplicities)
            .iter()
            .enumerate()
            .filter(|(_, &load)| load >= 1.0 - TOL)
            .map(|(j, _)| j)
            .collect();
        Self {
            phi,
            multiplicities,
            duals,
            bottlenecks,
        }
    }

    pub fn empty() -> Self {
        Self {
            phi: Vec::new(),
            multiplicities: Vec::new(),
            duals: None,
            bottlenecks: Vec::new(),
        }
    }

    pub fn loads(&self, req: &RequirementMatrix) -> Vec<f64> {
        req.resource_loads(&self.phi, &self.multiplicities)
    }

    /// Total transaction count `n = Σ_k mult_k`.
    pub fn transactions(&self) -> u64 {
        self.multiplicities.iter().map(|&m| u64::from(m)).sum()
    }
}

/// Poisson arrival rates and exponential mean work per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub arrival_rates: Vec<f64>,
    pub mean_work: Vec<f64>,
}

impl WorkloadSpec {
    /// Arrival rates must be finite and nonnegative (a zero rate disables a
    /// class); mean work must be finite and positive.
    pub fn new(arrival_rates: Vec<f64>, mean_work: Vec<f64>) -> Result<Self, ModelError> {
        if arrival_rates.len() != mean_work.len() {
            return Err(ModelError::DimensionMismatch {
                what: "mean work",
                expected: arrival_rates.len(),
                got: mean_work.len(),
            });
        }
        for (class, (&lambda, &work)) in arrival_rates.iter().zip(&mean_work).enumerate() {
            if !lambda.is_finite() || lambda < 0.0 {
                return Err(ModelError::InvalidWorkload {
                    class,
                    reason: format!("arrival rate must be finite and >= 0, got {lambda}"),
                });
            }
            if !work.is_finite() || work <= 0.0 {
                return Err(ModelError::InvalidWorkload {
                    class,
                    reason: format!("mean work must be finite and > 0, got {work}"),
                });
            }
        }
        Ok(Self {
            arrival_rates,
            mean_work,
        })
    }

    /// Workload with the given per-class loads `ρ_k` and mean work `1/μ_k`.
    pub fn from_loads(loads: &[f64], mean_work: Vec<f64>) -> Result<Self, ModelError> {
        let rates = loads.iter().zip(&mean_work).map(|(rho, w)| rho / w).collect();
        Self::new(rates, mean_work)
    }

    pub fn classes(&self) -> usize {
        self.arrival_rates.len()
    }

    /// Service rate `μ_k` (reciprocal of mean work).
    pub fn service_rate(&self, class: usize) -> f64 {
        1.0 / self.mean_work[class]
    }

    /// `ρ_k = λ_k / μ_k`.
    pub fn loads(&self) -> Vec<f64> {
        self.arrival_rates
            .iter()
            .zip(&self.mean_work)
            .map(|(l, w)| l * w)
            .collect()
    }

    /// Same workload with every arrival rate multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self, ModelError> {
        Self::new(
            self.arrival_rates.iter().map(|l| l * factor).collect(),
            self.mean_work.clone(),
        )
    }
}

/// Number of transactions in progress per class.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct SystemState {
    pub counts: Vec<u32>,
}

impl SystemState {
    pub fn empty(classes: usize) -> Self {
        Self {
            counts: vec![0; classes],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.counts.iter().all(|&n| n == 0)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&n| u64::from(n)).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    /// Offered load `L_j = Σ_k ρ_k a_kj` per resource.
    pub loads: Vec<f64>,
    /// `max_j L_j < 1`.
    pub stable: bool,
}

impl StabilityReport {
    pub fn max_load(&self) -> f64 {
        self.loads.iter().copied().fold(0.0, f64::max)
    }
}

/// Per-resource offered load and the strict stability predicate.
///
/// # Panics
/// If the workload and the matrix disagree on the number of classes.
pub fn check_stability(req: &RequirementMatrix, load: &WorkloadSpec) -> StabilityReport {
    assert_eq!(
        req.classes(),
        load.classes(),
        "workload and requirement matrix disagree on class count"
    );
    let rho = load.loads();
    let mut loads = vec![0.0; req.resources()];
    for (row, r) in req.rows().zip(&rho) {
        for (l, a) in loads.iter_mut().zip(row) {
            *l += r * a;
        }
    }
    let stable = loads.iter().all(|&l| l < 1.0);
    StabilityReport { loads, stable }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalize_divides_by_row_max() {
        let n = normalize(&[vec![0.5, 1.0], vec![2.0, 1.0]]).unwrap();
        assert_eq!(n.matrix.to_rows(), vec![vec![0.5, 1.0], vec![1.0, 0.5]]);
        assert_eq!(n.scales, vec![1.0, 2.0]);

        let id = normalize(&[vec![1.0, 1.0]]).unwrap();
        assert_eq!(id.matrix.to_rows(), vec![vec![1.0, 1.0]]);
        assert_eq!(id.scales, vec![1.0]);
    }

    #[test]
    fn normalize_rejects_zero_row() {
        let err = normalize(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap_err();
        assert_eq!(err, ModelError::ZeroRow { row: 0 });
        assert!(err.to_string().contains("row 0"));
    }

    #[test]
    fn normalize_rejects_negative_and_ragged() {
        assert!(matches!(
            normalize(&[vec![1.0, -0.1]]),
            Err(ModelError::BadEntry { row: 0, col: 1, .. })
        ));
        assert!(matches!(
            normalize(&[vec![1.0, 0.1], vec![1.0]]),
            Err(ModelError::RaggedRow { row: 1, .. })
        ));
    }

    #[test]
    fn new_requires_normalized_rows() {
        assert!(RequirementMatrix::new(&[vec![0.5, 0.5]]).is_err());
        let m = RequirementMatrix::new(&[vec![0.5, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(m.classes(), 2);
        assert_eq!(m.resources(), 2);
        assert_eq!(m.get(1, 1), 0.0);
        assert_eq!(m.select(&[1]).to_rows(), vec![vec![1.0, 0.0]]);
    }

    #[test]
    fn empty_matrix_has_no_classes() {
        let n = normalize(&[]).unwrap();
        assert_eq!(n.matrix.classes(), 0);
        assert_eq!(RequirementMatrix::empty(3).classes(), 0);
    }

    #[test]
    fn stability_examples() {
        let req = RequirementMatrix::new(&[vec![0.1, 1.0], vec![1.0, 0.1], vec![1.0, 1.0]]).unwrap();
        let w = WorkloadSpec::from_loads(&[0.3, 0.3, 0.3], vec![1.0; 3]).unwrap();
        let r = check_stability(&req, &w);
        assert!((r.loads[0] - 0.63).abs() < 1e-12);
        assert!((r.loads[1] - 0.63).abs() < 1e-12);
        assert!(r.stable);

        let zero = WorkloadSpec::new(vec![0.0; 3], vec![1.0; 3]).unwrap();
        let r = check_stability(&req, &zero);
        assert_eq!(r.loads, vec![0.0, 0.0]);
        assert!(r.stable);

        let single = RequirementMatrix::new(&[vec![1.0]]).unwrap();
        let w = WorkloadSpec::new(vec![1.0], vec![1.0]).unwrap();
        let r = check_stability(&single, &w);
        assert_eq!(r.loads, vec![1.0]);
        assert!(!r.stable);
    }

    #[test]
    fn workload_validation() {
        assert!(WorkloadSpec::new(vec![-1.0], vec![1.0]).is_err());
        assert!(WorkloadSpec::new(vec![1.0], vec![0.0]).is_err());
        assert!(WorkloadSpec::new(vec![1.0], vec![1.0, 2.0]).is_err());
        let w = WorkloadSpec::new(vec![2.0], vec![0.25]).unwrap();
        assert_eq!(w.loads(), vec![0.5]);
        assert_eq!(w.service_rate(0), 4.0);
    }

    fn raw_matrix() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (1usize..5, 1usize..5).prop_flat_map(|(k, j)| {
            prop::collection::vec(
                prop::collection::vec(0.0f64..10.0, j).prop_map(|mut row| {
                    row[0] += 0.01;
                    row
                }),
                k,
            )
        })
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(raw in raw_matrix()) {
            let once = normalize(&raw).unwrap().matrix;
            let twice = normalize(&once.to_rows()).unwrap();
            prop_assert_eq!(&twice.matrix, &once);
            prop_assert!(twice.scales.iter().all(|&s| s == 1.0));
            for row in once.rows() {
                prop_assert_eq!(row.iter().copied().fold(0.0, f64::max), 1.0);
            }
        }

        #[test]
        fn stability_is_monotone_in_scale(raw in raw_matrix(), base in 0.01f64..0.5, factor in 1.0f64..4.0) {
            let req = normalize(&raw).unwrap().matrix;
            let k = req.classes();
            let w = WorkloadSpec::new(vec![base; k], vec![1.0; k]).unwrap();
            let low = check_stability(&req, &w);
            let high = check_stability(&req, &w.scaled(factor).unwrap());
            prop_assert!(!(high.stable && !low.stable));
            for (h, l) in high.loads.iter().zip(&low.loads) {
                prop_assert!(h >= l);
            }
        }
    }
}
