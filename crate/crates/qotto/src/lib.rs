//! Two-level quantum Otto engine with thermal baths and a structured dephasing environment.

extern crate blas_src;

pub mod analysis;
pub mod cli;
pub mod config;
pub mod cycle;
pub mod error;
pub mod linalg;
pub mod model;
pub mod optimizer;
pub mod propagate;
pub mod quadrature;
pub mod tedopa;

pub use config::EngineConfig;
pub use error::{Error, Result};
