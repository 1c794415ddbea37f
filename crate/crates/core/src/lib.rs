//! Many-server queues with abandonment (GI/G/N+G), described by the
//! measure-valued state `(α_E, X, ν, η)`: an exact event-driven simulator,
//! a solver for the deterministic fluid equations, the invariant manifold of
//! those equations, and estimators for scaled stationary distributions.

pub mod acceptance;
pub mod config;
pub mod dist;
pub mod engine;
pub mod fluid;
pub mod harness;
pub mod invariant;
pub mod measure;
pub mod numeric;
pub mod rng;
pub mod scenarios;
pub mod stationary;

pub use dist::{DistError, DistSpec, Distribution};
pub use engine::{
    init_state, run, ArrivalStart, AuditReport, Counters, EngineError, EventKind, EventRecord, InitialCondition, Model,
    Observer, RunControl, RunReport, SystemState,
};
pub use measure::{DensityMeasure, MeasureError, PointMeasure};

/// Lowercase hex SHA-256 of `bytes`.
pub fn hash_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
