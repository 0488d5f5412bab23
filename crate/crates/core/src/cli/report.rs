//! The machine-readable run report and artifact writing.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::oracle::{AdjudicationReport, EmpiricalRegularity};
use crate::stability::RegularityVerdict;

use super::{CliError, RunConfig};

/// `R(r)` at one radius, row-major.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReducedSample {
    pub r: f64,
    pub matrix: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelCheckSummary {
    pub n: usize,
    pub k_max: usize,
    pub ratio: f64,
    /// Largest `|series − direct|` over the sampled pairs.
    pub series_max_error: f64,
    /// Largest `|PN − quadrature projection|`.
    pub pn_max_error: f64,
    /// Largest `|∂N/∂x_n|` on the flat boundary.
    pub normal_derivative_max: f64,
    pub prop1_c: f64,
    pub prop1_c_refined: f64,
    pub prop1_decades: f64,
    pub prop1_pass: bool,
    pub all_pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepEntry {
    pub value: f64,
    pub profile: String,
    pub regularity: Option<String>,
    pub k_stat: Option<f64>,
    pub empirical: Option<EmpiricalRegularity>,
    pub agreement: Option<String>,
    pub error: Option<String>,
}

/// Everything a run produced. Contains no timestamps, so identical
/// configurations give identical reports.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub command: String,
    pub version: String,
    pub config: RunConfig,
    pub verdict: Option<RegularityVerdict>,
    pub reduced_samples: Vec<ReducedSample>,
    pub adjudication: Option<AdjudicationReport>,
    pub kernel: Option<KernelCheckSummary>,
    pub sweep: Vec<SweepEntry>,
    pub notes: Vec<String>,
    pub artifacts: Vec<String>,
}

impl Report {
    pub fn new(command: &str, config: &RunConfig) -> Report {
        Report {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: config.clone(),
            verdict: None,
            reduced_samples: Vec::new(),
            adjudication: None,
            kernel: None,
            sweep: Vec::new(),
            notes: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Writes `report.json` and the given CSV artifacts into `dir`.
    pub fn write(&mut self, dir: &Path, csv: &[(&str, String)]) -> Result<PathBuf, CliError> {
        std::fs::create_dir_all(dir)?;
        for (name, body) in csv {
            std::fs::write(dir.join(name), body)?;
            self.artifacts.push((*name).into());
        }
        self.artifacts.push("report.json".into());
        let path = dir.join("report.json");
        std::fs::write(&path, self.to_json())?;
        Ok(path)
    }
}
