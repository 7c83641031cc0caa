//! Stochastic mean-field simulation of a superradiant frequency reference
//! built from Zeeman-split atomic sub-ensembles in an optical cavity.

pub mod analysis;
pub mod config;
pub mod detection;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod model;
pub mod state;

pub use error::{Error, Result};
pub use state::CumulantState;
