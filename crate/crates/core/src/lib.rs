//! Multi-resource fair sharing.
//!
//! Three sharing objectives over a fluid model of transactions that consume
//! several resources in fixed proportions:
//!
//! - dominant resource fairness (DRF), computed by progressive filling;
//! - proportional fairness (PF), the maximizer of `Σ n_k log φ_k`;
//! - bottleneck max fairness (BMF), where every class holds a maximal share
//!   of some saturated resource.
//!
//! [`dynamics`] evaluates them under Poisson arrivals of finite work, and
//! [`packetsim`] realizes them with start-time fair queueing over a pipeline
//! of resources.

pub mod alloc;
pub mod dynamics;
pub mod model;
pub mod packetsim;

pub use alloc::{solve, AllocError, AllocObjective};
pub use model::{
    check_stability, normalize, Allocation, ModelError, RequirementMatrix, StabilityReport,
    SystemState, WorkloadSpec, TOL,
};
