//! Config-driven experiment harness: parse and validate a TOML run
//! description, execute the matching experiment, and write its results as
//! a resolved-config echo, a key/value summary, and one CSV per table.
//!
//! The split mirrors the data flow. [`config`] turns user TOML into a
//! [`config::Resolved`] run with every default made explicit, [`experiments`]
//! turns a resolved run into an in-memory [`output::ResultBundle`], and
//! [`output`] owns the on-disk formats and their reproducibility contract.

pub mod config;
pub mod experiments;
pub mod output;

pub use config::{Resolved, SimulationConfig};
pub use experiments::run;
pub use output::ResultBundle;
