//! Simulator for a collective spin-J ensemble under continuous dispersive
//! measurement of J_z and Markovian feedback driving J_y.
//!
//! The deterministic master equation, its stochastic (conditioned) unraveling,
//! the feedback gain schedules, and the squeezing diagnostics live in separate
//! modules:
//!
//! - [`spin`]: Dicke-basis operators J_x, J_y, J_z, coherent spin states,
//!   expectation values, purity.
//! - [`dynamics`]: Lindblad dissipator, deterministic master-equation
//!   right-hand side, fixed-step RK4 integrator.
//! - [`stochastic`]: measurement-innovation superoperator, Euler-Maruyama
//!   trajectory integrator, reproducible per-trajectory noise streams,
//!   ensemble averaging.
//! - [`control`]: feedback gain schedules (state-based, closed-form,
//!   tabulated, perturbed) and the experimental regime checks.
//! - [`observables`]: squeezing parameters, curve-minimum refinement,
//!   1/J scaling fits.
//! - [`harness`]: config parsing, experiment drivers, CSV/summary output.
//!
//! All frequencies are expressed in units of the measurement strength M and
//! all times as Mt, unless a MeasurementStrength is passed explicitly.
//!
//! The `parallel` feature (on by default) runs trajectory ensembles and
//! J-sweeps on a rayon pool; disabling it yields a fully sequential build
//! with identical numerical output.

pub mod control;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod observables;
pub mod spin;
pub mod stochastic;

pub(crate) mod kernels;
pub(crate) mod parallel;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Complex double — the scalar type of every operator and state in the crate.
pub type C64 = num_complex::Complex<f64>;
