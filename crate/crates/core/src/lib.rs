//! Simulation and verification toolkit for Hermite random fields.

pub mod chaos_oracle;
pub mod error;
pub mod exec;
pub mod gaussian;
pub mod harness;
pub mod hermite;
pub mod io;
pub mod params;
pub mod quadrature;
pub mod quadvar;
pub mod volterra;

pub use error::{Error, Result};
pub use exec::Execution;
pub use params::{HurstVector, ModelParams};
