pub mod adversaries;
pub mod anonymizer;
pub mod config;
pub mod dataset;
pub mod error;
pub mod experiments;
pub mod fingerprint;
pub mod models;
pub mod stats;
pub mod synth;
pub mod traps;
pub mod util;
pub mod verifier;

pub use error::{Error, Result};
