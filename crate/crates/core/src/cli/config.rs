//! The JSON run configuration. Every field has a default, unknown keys are
//! rejected, and [`RunConfig::validate`] enforces the documented ranges.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coefficients::{GraphProfile, RadialProfile};
use crate::stability::StabilityConfig;

use super::CliError;

/// The coefficient field of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum FieldSpec {
    /// `a = I`.
    Identity,
    /// `a = I + g(r) θ⊗θ`.
    Gs { g: RadialProfile },
    /// `a = I + e(r)(E_{1n} + E_{n1})`.
    Tilt { e: RadialProfile },
}

impl FieldSpec {
    pub fn profile(&self) -> RadialProfile {
        match *self {
            FieldSpec::Identity => RadialProfile::Zero,
            FieldSpec::Gs { g } => g,
            FieldSpec::Tilt { e } => e,
        }
    }

    pub fn with_profile(&self, p: RadialProfile) -> FieldSpec {
        match self {
            FieldSpec::Identity => FieldSpec::Identity,
            FieldSpec::Gs { .. } => FieldSpec::Gs { g: p },
            FieldSpec::Tilt { .. } => FieldSpec::Tilt { e: p },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Problem {
    pub field: FieldSpec,
    /// Boundary graph `x_n = H(|x̃|)`; absent for a flat boundary.
    #[serde(default)]
    pub boundary: Option<GraphProfile>,
}

impl Default for Problem {
    fn default() -> Self {
        Problem { field: FieldSpec::Identity, boundary: None }
    }
}

/// Planar ODE reference runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub t_start: f64,
    pub tol: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { t_start: crate::oracle::DEFAULT_T_START, tol: 1e-11 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Normal,
    Quadrupole,
    Vector,
    Zero,
}

/// Kernel checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelCheckConfig {
    /// Truncation degree of the harmonic series.
    pub k_max: usize,
    /// Radius ratio `|x|/|y|` of the series-vs-direct comparison.
    pub ratio: f64,
    /// Number of random point pairs in that comparison.
    pub samples: usize,
    pub source: SourceKind,
    pub p: f64,
    /// Radii of the annulus estimate; must avoid `[0.5, 2]`.
    pub r_grid: Vec<f64>,
}

impl Default for KernelCheckConfig {
    fn default() -> Self {
        Self {
            k_max: 12,
            ratio: 0.3,
            samples: 16,
            source: SourceKind::Normal,
            p: 4.0,
            r_grid: vec![2.5e-4, 2.5e-3, 2.5e-2, 0.25],
        }
    }
}

/// Which family parameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParameter {
    C,
    Alpha,
    Gamma,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    /// Also run the planar oracle for each point (n = 2, GS fields).
    #[serde(default)]
    pub with_oracle: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { parameter: SweepParameter::Alpha, values: vec![0.6, 0.75, 1.0, 1.5, 2.0], with_oracle: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub problem: Problem,
    pub n: usize,
    /// Certification grid: `r_j = r_max 2^{−j}`, `j < levels`.
    pub r_max: f64,
    pub levels: usize,
    pub stability: StabilityConfig,
    pub oracle: OracleConfig,
    pub kernel: KernelCheckConfig,
    pub sweep: SweepConfig,
    /// Output directory; the command line and `NEUREG_OUT_DIR` override it.
    pub output_dir: String,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            problem: Problem::default(),
            n: 2,
            r_max: 0.5,
            levels: 30,
            stability: StabilityConfig::default(),
            oracle: OracleConfig::default(),
            kernel: KernelCheckConfig::default(),
            sweep: SweepConfig::default(),
            output_dir: "neureg-out".into(),
            seed: 0,
        }
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(CliError::ConfigInvalid(msg()))
    }
}

fn in_range(v: f64, lo: f64, hi: f64) -> bool {
    v.is_finite() && v >= lo && v <= hi
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::ConfigInvalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::ConfigInvalid(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let s = &self.stability;
        check((2..=4).contains(&self.n), || format!("n = {} must lie in 2..=4", self.n))?;
        check(in_range(self.r_max, 1e-6, 0.9), || format!("r_max = {} must lie in [1e-6, 0.9]", self.r_max))?;
        check((4..=60).contains(&self.levels), || format!("levels = {} must lie in 4..=60", self.levels))?;
        check(in_range(s.t_max, 10.0, 400.0), || format!("t_max = {} must lie in [10, 400]", s.t_max))?;
        check(in_range(s.t_step, 1e-3, 1.0), || format!("t_step = {} must lie in [1e-3, 1]", s.t_step))?;
        check(in_range(s.tol, 1e-14, 1e-4), || format!("tol = {} must lie in [1e-14, 1e-4]", s.tol))?;
        check(in_range(s.k_threshold, 1.0 + 1e-9, 1e15), || "k_threshold must lie in (1, 1e15]".into())?;
        check(in_range(s.margin, 1e-6, 0.5), || "margin must lie in [1e-6, 0.5]".into())?;
        check(in_range(s.delta, 1e-6, 1.0 - 1e-6), || "delta must lie in (0, 1)".into())?;
        check((4..=64).contains(&s.order), || format!("order = {} must lie in 4..=64", s.order))?;
        let o = &self.oracle;
        check(in_range(o.t_start, 0.0, s.t_max - 1.0), || "oracle.t_start must lie in [0, t_max − 1]".into())?;
        check(in_range(o.tol, 1e-14, 1e-6), || "oracle.tol must lie in [1e-14, 1e-6]".into())?;
        let k = &self.kernel;
        check((2..=12).contains(&k.k_max), || format!("kernel.k_max = {} must lie in 2..=12", k.k_max))?;
        check(in_range(k.ratio, 1e-6, 0.999), || "kernel.ratio must lie in (0, 1)".into())?;
        check((1..=10_000).contains(&k.samples), || "kernel.samples must lie in 1..=10000".into())?;
        check(in_range(k.p, 2.0, 64.0), || "kernel.p must lie in [2, 64]".into())?;
        check(k.r_grid.len() >= 2 && k.r_grid.iter().all(|r| in_range(*r, 1e-8, 1e4)), || {
            "kernel.r_grid needs at least two radii in [1e-8, 1e4]".into()
        })?;
        check(!self.sweep.values.is_empty() && self.sweep.values.iter().all(|v| v.is_finite()), || {
            "sweep.values must be a nonempty list of finite numbers".into()
        })?;
        Ok(())
    }
}
