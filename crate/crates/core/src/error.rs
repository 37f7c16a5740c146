use thiserror::Error;

use crate::lattice::MultiIndex;

pub type Result<T> = std::result::Result<T, CoherenceError>;

/// Errors raised by the coherence toolkit.
///
/// Report-style checks (structure validation, stability, bound checks) do not
/// use this type; they return their own report structs so that deliberately
/// invalid configurations can be inspected.
#[derive(Debug, Error)]
pub enum CoherenceError {
    #[error("invalid torus shape: {0}")]
    InvalidShape(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("length mismatch: expected {expected} entries, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("stencil offset {offset:?} exceeds the locality radius for N = {side}")]
    Locality { offset: Vec<i64>, side: usize },

    #[error("non-finite coefficient at offset {0:?}")]
    NonFinite(Vec<i64>),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("system is not stable at {} wavenumber(s)", .offending.len())]
    Unstable { offending: Vec<MultiIndex> },

    #[error("long range deviation requires even N, got N = {0}")]
    Parity(usize),

    #[error("state dimension {states} exceeds the oracle cap of {cap}")]
    OracleCap { states: usize, cap: usize },

    #[error("mean mode is observable through the output (|Hv| = {0:.3e})")]
    ObservableMeanMode(f64),

    #[error("lyapunov solve failed: {0}")]
    Solver(String),

    #[error("step size too large: {0}")]
    StepSize(String),

    #[error("invalid simulation config: {0}")]
    SimConfig(String),
}
