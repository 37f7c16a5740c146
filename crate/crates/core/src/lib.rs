//! Coherence of noisy consensus and vehicular formations on the discrete
//! torus Z_N^d.
//!
//! Feedback laws are spatially invariant, so every closed loop is
//! block-diagonalized by the multidimensional DFT. The crate computes H2
//! variances in closed form per wavenumber, checks them against a dense
//! full-state Lyapunov oracle, simulates the stochastic dynamics, and studies
//! how each measure scales with the network size.

pub mod error;
pub mod lattice;
pub mod measures;
pub mod oracle;
pub mod sim;
pub mod spectral;
pub mod stencil;
pub mod sum;
pub mod sweep;

pub use error::{CoherenceError, Result};
pub use lattice::{MultiIndex, Parity, TorusShape};
pub use measures::{
    control_effort, effort_bound_check, stability_check, variance, MeasureKind, StabilityReport,
    VarianceReport,
};
pub use spectral::{symbol_of_stencil, FourierSymbol};
pub use stencil::{FeedbackSpec, Stencil, VehicularFeedback};
