//! Numerics for McKean–Vlasov SDEs: Picard iteration of the particle system,
//! frozen Gaussian densities, the parametrix series and estimates built on them.

pub mod cli;
pub mod config;
pub mod error;
pub mod estimates;
pub mod frozen;
pub mod io;
pub mod measure;
pub mod model;
pub mod parametrix;
pub mod rng;
pub mod simulator;

pub use error::{Error, Result};
