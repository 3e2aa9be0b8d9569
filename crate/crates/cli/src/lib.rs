//! Configuration-driven experiment runner for `lsinv`.

pub mod config;
pub mod error;
pub mod io;
pub mod presets;
pub mod run;

pub use config::RunConfig;
pub use error::{CliError, CliResult};
pub use run::{execute, run_diag_bench, run_lcurve, run_phantom, run_reconstruct, run_uq, Command, RunManifest};
