pub mod cli;
pub mod config;
pub mod correlation;
pub mod error;
pub mod fields;
pub mod io;
pub mod linalg;
pub mod propagation;
pub mod rng;
pub mod scenarios;
pub mod source;

pub use error::{Error, Result};
