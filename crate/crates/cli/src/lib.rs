//! Experiment driver for VAE robustness studies.
//!
//! Datasets, configuration, sweep protocols, versioned CSV tables, SVG
//! figures and run manifests. The `vaerobust` binary wraps these in
//! subcommands.

pub mod config;
pub mod data;
pub mod experiments;
pub mod manifest;
pub mod plot;
pub mod table;
pub mod verify;

use vaerobust::Error;

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Format { .. } => 3,
        Error::Divergence { .. } => 4,
        Error::EstimatorCap(_) => 5,
        _ => 1,
    }
}
