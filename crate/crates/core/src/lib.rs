//! Joint direction-of-arrival and carrier-frequency estimation for arrays whose
//! sensors are each sampled by a multicoset (sub-Nyquist) front end.
//!
//! The crate is organised around the time-space union model `Y = G S + (I ⊗ B) N`:
//!
//! - [`model`] builds the steering matrix `A`, the modulation matrix `B` and the
//!   Kronecker-structured measurement matrix `G`.
//! - [`synth`] generates snapshots, either straight from the model or through an
//!   explicit Nyquist-rate front end followed by a multicoset sampler.
//! - [`estimator`] recovers source count, subbands, spatial phases, carriers and
//!   DOAs with a per-subband MUSIC search.
//! - [`crb`] evaluates the sub-Nyquist and Nyquist Cramér-Rao bounds on the
//!   spatial phases.

pub mod crb;
mod error;
pub mod estimator;
pub mod linalg;
pub mod model;
pub mod synth;

pub use error::{Error, Result};
pub use model::{ArrayGeometry, MeasurementModel, SamplingConfig, Scenario, SourceSpec};

/// Complex sample type used throughout the crate.
pub type C64 = num_complex::Complex64;
/// Dense complex matrix.
pub type CMatrix = nalgebra::DMatrix<C64>;
/// Dense real matrix.
pub type RMatrix = nalgebra::DMatrix<f64>;

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
