//! Orchestration behind the `neureg` binary: configuration, the four
//! subcommands and their reports.

pub mod commands;
pub mod config;
pub mod report;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use commands::{cmd_classify, cmd_kernel_check, cmd_sweep, cmd_verify, Outcome};
pub use config::RunConfig;
pub use report::Report;

use crate::coefficients::CoefficientError;
use crate::geometry::GeometryError;
use crate::kernel::KernelError;
use crate::oracle::OracleError;
use crate::reduction::ReductionError;
use crate::stability::StabilityError;

/// Environment variable that overrides the configured output directory.
pub const OUT_DIR_ENV: &str = "NEUREG_OUT_DIR";

/// Errors carry the module they came from.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("coefficients: {0}")]
    Coefficients(#[from] CoefficientError),
    #[error("geometry: {0}")]
    Geometry(#[from] GeometryError),
    #[error("reduction: {0}")]
    Reduction(#[from] ReductionError),
    #[error("stability: {0}")]
    Stability(#[from] StabilityError),
    #[error("oracle: {0}")]
    Oracle(#[from] OracleError),
    #[error("kernel: {0}")]
    Kernel(#[from] KernelError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const ERROR: i32 = 1;
    pub const CONTRADICTION: i32 = 2;
    pub const INCONCLUSIVE: i32 = 3;
}

/// `--out`, then `NEUREG_OUT_DIR`, then the configuration.
pub fn resolve_output_dir(cli_out: Option<&Path>, cfg: &RunConfig) -> PathBuf {
    if let Some(p) = cli_out {
        return p.to_path_buf();
    }
    match std::env::var_os(OUT_DIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from(&cfg.output_dir),
    }
}
