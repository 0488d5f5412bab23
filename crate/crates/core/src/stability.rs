//! Fundamental matrices of `Φ' = −R(e^{−t})Φ`, finite-horizon tests for
//! uniform stability and asymptotic constancy, the μ-criteria, the planar
//! scalar criteria, the classification pipeline, and the forced
//! `(φ, ψ)` system.
//!
//! Every finite-horizon decision is a trend test over the last few decades
//! of `t` (one decade of radius is `ln 10` in `t`); the raw statistics are
//! kept in the verdict so a caller can apply a different rule.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coefficients::{flatten, BoundaryGraph, CoefficientError, CoefficientField, MatrixField};
use crate::geometry::{build_quadrature, GeometryError, HalfSphereQuadrature};
use crate::numerics::linalg::op_norm;
use crate::numerics::{ode, OdeError, OdeOptions};
use crate::reduction::{
    compute_r_curved, compute_r_halfspace, AssembledSystem, Provenance, ReducedSystem,
    ReductionError,
};

/// One decade of radius, measured in `t = −ln r`.
pub const DECADE: f64 = std::f64::consts::LN_10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StabilityError {
    #[error("integration failed: {0}")]
    IntegrationFailure(String),
    #[error("Liouville identity violated: relative determinant error {error:e}")]
    ToleranceNotMet { error: f64 },
    #[error("grid spans only {decades:.2} decades; at least 4 are needed")]
    GridTooShallow { decades: f64 },
    #[error("operation needs n = 2, got n = {n}")]
    WrongDimension { n: usize },
    #[error("forcing rejected: {0}")]
    ForcingRejected(String),
    #[error(transparent)]
    Reduction(#[from] ReductionError),
    #[error(transparent)]
    Coefficient(#[from] CoefficientError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl From<OdeError> for StabilityError {
    fn from(e: OdeError) -> Self {
        StabilityError::IntegrationFailure(e.to_string())
    }
}

/// Knobs of the finite-horizon tests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StabilityConfig {
    pub t_max: f64,
    /// Spacing of the output grid in `t`.
    pub t_step: f64,
    pub tol: f64,
    pub k_threshold: f64,
    /// Allowed growth of `ln K_stat` per decade.
    pub margin: f64,
    /// `α = n − δ` in the forced-system estimates.
    pub delta: f64,
    /// Half-sphere quadrature order.
    pub order: usize,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            t_max: 40.0,
            t_step: 0.1,
            tol: 1e-10,
            k_threshold: 1e6,
            margin: 0.01,
            delta: 0.5,
            order: 16,
        }
    }
}

impl StabilityConfig {
    pub fn t_grid(&self) -> Vec<f64> {
        uniform_grid(self.t_max, self.t_step)
    }
}

/// `0, h, 2h, …, T` with the step adjusted so that `T` is hit exactly.
pub fn uniform_grid(t_max: f64, step: f64) -> Vec<f64> {
    let n = (t_max / step).ceil().max(1.0) as usize;
    (0..=n).map(|i| t_max * i as f64 / n as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stability {
    UniformlyStable,
    NotUniformlyStable,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Asymptotic {
    AsymptoticallyConstant,
    NotAsymptoticallyConstant,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regularity {
    DifferentiableAtZero,
    LipschitzAtZero,
    NoGuarantee,
    Inconclusive,
}

/// Outcome of a sufficient or characterizing criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Holds,
    Fails,
    Inconclusive,
}

/// Samples of `Φ(t)` with the statistics the verdicts are built from.
#[derive(Debug, Clone)]
pub struct FundamentalTrajectory {
    pub n: usize,
    pub t_grid: Vec<f64>,
    pub phi: Vec<DMatrix<f64>>,
    pub tol: f64,
    /// Running `max_{s ≤ τ ≤ t} ‖Φ(τ)Φ(s)^{−1}‖` over the sampled pairs.
    pub k_stat: Vec<f64>,
    /// `μ(e^{−t})` on the grid.
    pub mu: Vec<f64>,
    /// `∫₀ᵗ tr R(e^{−τ}) dτ`, integrated alongside `Φ`.
    pub trace_integral: Vec<f64>,
    /// Worst relative error in `det Φ(t) = exp(−∫₀ᵗ tr R)`.
    pub liouville_error: f64,
    pub steps: usize,
}

impl FundamentalTrajectory {
    pub fn k_max(&self) -> f64 {
        self.k_stat.last().copied().unwrap_or(1.0)
    }

    pub fn t_max(&self) -> f64 {
        self.t_grid.last().copied().unwrap_or(0.0)
    }

    /// CSV with columns `t, phi_norm, k_stat, mu`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,phi_norm,k_stat,mu\n");
        for i in 0..self.t_grid.len() {
            let _ = writeln!(
                s,
                "{},{:e},{:e},{:e}",
                self.t_grid[i],
                op_norm(&self.phi[i]),
                self.k_stat[i],
                self.mu[i]
            );
        }
        s
    }
}

/// Integrates `Φ' = −R(e^{−t})Φ`, `Φ(0) = I` to `T_max` with outputs every 0.1.
pub fn fundamental_matrix(
    rsys: &ReducedSystem,
    t_max: f64,
    tol: f64,
) -> Result<FundamentalTrajectory, StabilityError> {
    fundamental_matrix_on(rsys, &uniform_grid(t_max, 0.1), tol)
}

/// Same as [`fundamental_matrix`] on a caller-chosen increasing grid
/// starting at 0.
pub fn fundamental_matrix_on(
    rsys: &ReducedSystem,
    t_grid: &[f64],
    tol: f64,
) -> Result<FundamentalTrajectory, StabilityError> {
    let m = rsys.n - 1;
    let mm = m * m;
    let mut y0 = vec![0.0; mm + 1];
    for i in 0..m {
        y0[i * m + i] = 1.0;
    }
    let mut failure: Option<ReductionError> = None;
    let opts = OdeOptions { rtol: tol, atol: tol * 1e-2, ..OdeOptions::default() };
    let rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
        let r = match rsys.r_at((-t).exp()) {
            Ok(r) => r,
            Err(e) => {
                failure.get_or_insert(e);
                dy.fill(f64::NAN);
                return;
            }
        };
        // Column-major Φ: (RΦ)_{ij} = Σ_k R_ik Φ_kj.
        for j in 0..m {
            for i in 0..m {
                let mut s = 0.0;
                for k in 0..m {
                    s += r[(i, k)] * y[j * m + k];
                }
                dy[j * m + i] = -s;
            }
        }
        dy[mm] = r.trace();
    };
    let result = ode::integrate(rhs, 0.0, &y0, t_grid, &opts);
    if let Some(e) = failure {
        return Err(e.into());
    }
    let (ys, stats) = result?;
    let phi: Vec<DMatrix<f64>> =
        ys.iter().map(|y| DMatrix::from_column_slice(m, m, &y[..mm])).collect();
    let trace_integral: Vec<f64> = ys.iter().map(|y| y[mm]).collect();

    let mut liouville_error: f64 = 0.0;
    for (p, &tr) in phi.iter().zip(&trace_integral) {
        let want = (-tr).exp();
        let det = p.determinant();
        liouville_error = liouville_error.max((det - want).abs() / want.abs().max(1e-300));
    }
    if !(liouville_error <= 1e-6) {
        return Err(StabilityError::ToleranceNotMet { error: liouville_error });
    }

    let k_stat = running_k_stat(&phi);
    let mu = t_grid
        .iter()
        .map(|&t| {
            let r = rsys.r_at((-t).exp())?;
            Ok(crate::numerics::linalg::sym_max_eigenvalue(&(-(&r + r.transpose()) * 0.5)))
        })
        .collect::<Result<Vec<f64>, ReductionError>>()?;
    Ok(FundamentalTrajectory {
        n: rsys.n,
        t_grid: t_grid.to_vec(),
        phi,
        tol,
        k_stat,
        mu,
        trace_integral,
        liouville_error,
        steps: stats.accepted,
    })
}

/// `K_stat(t)` using starting times on an even subgrid so that at most
/// about 10⁴ pairs are formed.
fn running_k_stat(phi: &[DMatrix<f64>]) -> Vec<f64> {
    let len = phi.len();
    let count = (20_000 / len.max(1)).clamp(2, len.max(2));
    let stride = (len as f64 / count as f64).ceil().max(1.0) as usize;
    let starts: Vec<(usize, DMatrix<f64>)> = (0..len)
        .step_by(stride)
        .filter_map(|i| phi[i].clone().lu().try_inverse().map(|inv| (i, inv)))
        .collect();
    let mut out = Vec::with_capacity(len);
    let mut k: f64 = 1.0;
    for (i, p) in phi.iter().enumerate() {
        for (_, inv) in starts.iter().take_while(|(s, _)| *s <= i) {
            k = k.max(op_norm(&(p * inv)));
        }
        out.push(k);
    }
    out
}

/// Linear interpolation of `ys` on an increasing grid `ts`.
fn interp(ts: &[f64], ys: &[f64], t: f64) -> f64 {
    if t <= ts[0] {
        return ys[0];
    }
    let last = ts.len() - 1;
    if t >= ts[last] {
        return ys[last];
    }
    let j = ts.partition_point(|&x| x <= t).min(last).max(1);
    let (t0, t1) = (ts[j - 1], ts[j]);
    let w = (t - t0) / (t1 - t0);
    ys[j - 1] * (1.0 - w) + ys[j] * w
}

/// Changes of `ys` over the last `k` decades, most recent first.
fn decade_changes(ts: &[f64], ys: &[f64], k: usize) -> Option<Vec<f64>> {
    let t_end = *ts.last()?;
    if t_end - ts[0] < k as f64 * DECADE - 1e-9 {
        return None;
    }
    Some(
        (0..k)
            .map(|i| {
                let hi = t_end - i as f64 * DECADE;
                interp(ts, ys, hi) - interp(ts, ys, hi - DECADE)
            })
            .collect(),
    )
}

/// Trend decision shared by every boundedness test: `log_k` is the log of a
/// nondecreasing statistic.
fn trend_verdict(ts: &[f64], log_k: &[f64], k_threshold: f64, margin: f64) -> (Stability, Vec<f64>) {
    let last = *log_k.last().unwrap_or(&0.0);
    let Some(growth) = decade_changes(ts, log_k, 3) else {
        return (Stability::Inconclusive, vec![]);
    };
    let over = last > k_threshold.ln();
    let verdict = if !over && growth[0] < margin {
        Stability::UniformlyStable
    } else if (over && growth[0] >= margin) || growth.iter().all(|&g| g > 2.0 * margin) {
        Stability::NotUniformlyStable
    } else {
        Stability::Inconclusive
    };
    (verdict, growth)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityComponent {
    pub verdict: Stability,
    pub k_stat: f64,
    /// Growth of `ln K_stat` over each of the last three decades.
    pub growth_per_decade: Vec<f64>,
}

pub fn uniform_stability(
    traj: &FundamentalTrajectory,
    k_threshold: f64,
    margin: f64,
) -> StabilityComponent {
    let log_k: Vec<f64> = traj.k_stat.iter().map(|k| k.ln()).collect();
    let (verdict, growth) = trend_verdict(&traj.t_grid, &log_k, k_threshold, margin);
    StabilityComponent { verdict, k_stat: traj.k_max(), growth_per_decade: growth }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsymptoticComponent {
    pub verdict: Asymptotic,
    /// `‖Φ(T−(k−1)L) − Φ(T−kL)‖ / sup‖Φ‖` for the last three decades.
    pub increments: Vec<f64>,
    /// `Φ(T)` in row-major order.
    pub limit: Vec<f64>,
}

fn asymptotic_from_samples(
    ts: &[f64],
    samples: &[DMatrix<f64>],
    margin: f64,
) -> AsymptoticComponent {
    let sup = samples.iter().map(op_norm).fold(0.0, f64::max).max(1e-300);
    let last = samples.last().expect("non-empty trajectory");
    let limit: Vec<f64> = last.transpose().iter().copied().collect();
    let t_end = *ts.last().unwrap();
    if t_end < 3.0 * DECADE {
        return AsymptoticComponent { verdict: Asymptotic::Inconclusive, increments: vec![], limit };
    }
    let at = |t: f64| {
        let j = ts.partition_point(|&x| x < t - 1e-12).min(ts.len() - 1);
        &samples[j]
    };
    let inc: Vec<f64> = (0..3)
        .map(|k| {
            let hi = t_end - k as f64 * DECADE;
            op_norm(&(at(hi) - at(hi - DECADE))) / sup
        })
        .collect();
    let cauchy = inc[0] + inc[1] < margin && inc[0] <= inc[1] * (1.0 + 1e-9) + 1e-12;
    let constant = inc.iter().sum::<f64>() < margin * 1e-3;
    let verdict = if cauchy || constant {
        Asymptotic::AsymptoticallyConstant
    } else if inc.iter().all(|&d| d > margin / 2.0) {
        Asymptotic::NotAsymptoticallyConstant
    } else {
        Asymptotic::Inconclusive
    };
    AsymptoticComponent { verdict, increments: inc, limit }
}

pub fn asymptotically_constant(traj: &FundamentalTrajectory, margin: f64) -> AsymptoticComponent {
    asymptotic_from_samples(&traj.t_grid, &traj.phi, margin)
}

/// `(s, R)` pairs sorted by increasing `s = −ln r`.
fn by_log_radius(rsys: &ReducedSystem, r_floor: f64) -> (Vec<f64>, Vec<&DMatrix<f64>>) {
    let mut idx: Vec<usize> =
        (0..rsys.r_grid.len()).filter(|&i| rsys.r_grid[i] >= r_floor * (1.0 - 1e-12)).collect();
    idx.sort_by(|&a, &b| rsys.r_grid[b].total_cmp(&rsys.r_grid[a]));
    (idx.iter().map(|&i| -rsys.r_grid[i].ln()).collect(), idx.iter().map(|&i| &rsys.r[i]).collect())
}

fn cumulative_trapezoid(s: &[f64], f: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; s.len()];
    for i in 1..s.len() {
        out[i] = out[i - 1] + 0.5 * (f[i] + f[i - 1]) * (s[i] - s[i - 1]);
    }
    out
}

/// `max_{s ≤ t} (I(t) − I(s))`, the log of the boundedness statistic of a
/// cumulative integral.
fn running_rise(values: &[f64]) -> Vec<f64> {
    let mut lo = f64::INFINITY;
    let mut best: f64 = 0.0;
    values
        .iter()
        .map(|&v| {
            lo = lo.min(v);
            best = best.max(v - lo);
            best
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MuCriteria {
    pub cond1: Criterion,
    pub cond2: Criterion,
    /// `sup_{r1<r2} ∫_{r1}^{r2} μ dρ/ρ` on the grid.
    pub integral_sup: f64,
    /// `∫_{r_min}^{r_max} μ dρ/ρ`.
    pub integral_tail: f64,
    pub decades: f64,
}

/// Evaluates the two μ-conditions from the grid samples of `rsys` with
/// `r ≥ eps_low`, using the default threshold and margin.
pub fn mu_criteria(rsys: &ReducedSystem, eps_low: f64) -> Result<MuCriteria, StabilityError> {
    let c = StabilityConfig::default();
    mu_criteria_with(rsys, eps_low, c.k_threshold, c.margin)
}

pub fn mu_criteria_with(
    rsys: &ReducedSystem,
    eps_low: f64,
    k_threshold: f64,
    margin: f64,
) -> Result<MuCriteria, StabilityError> {
    let (s, r) = by_log_radius(rsys, eps_low);
    let decades = if s.len() < 2 { 0.0 } else { (s[s.len() - 1] - s[0]) / DECADE };
    if decades < 4.0 - 1e-9 {
        return Err(StabilityError::GridTooShallow { decades });
    }
    let mu: Vec<f64> = r
        .iter()
        .map(|m| crate::numerics::linalg::sym_max_eigenvalue(&(-(*m + m.transpose()) * 0.5)))
        .collect();
    let s0: Vec<f64> = s.iter().map(|v| v - s[0]).collect();
    let integral = cumulative_trapezoid(&s0, &mu);
    let rise = running_rise(&integral);
    let (v1, _) = trend_verdict(&s0, &rise, k_threshold, margin);
    let cond1 = match v1 {
        Stability::UniformlyStable => Criterion::Holds,
        Stability::NotUniformlyStable => Criterion::Fails,
        Stability::Inconclusive => Criterion::Inconclusive,
    };
    let drops = decade_changes(&s0, &integral, 3).expect("depth checked above");
    let cond2 = if drops[0] < -margin && drops[1] < -margin && drops[0] / drops[1] >= 0.7 {
        Criterion::Holds
    } else if drops[0] > -margin / 10.0 {
        Criterion::Fails
    } else {
        Criterion::Inconclusive
    };
    Ok(MuCriteria {
        cond1,
        cond2,
        integral_sup: *rise.last().unwrap(),
        integral_tail: *integral.last().unwrap(),
        decades,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalarCriteria {
    pub lipschitz: Criterion,
    /// Only `Holds` when `lipschitz` does.
    pub differentiable: Criterion,
    /// `∫₀ᵀ R(e^{−τ}) dτ`.
    pub integral: f64,
}

/// The planar criteria computed directly from `∫ R dρ/ρ` with the default
/// threshold and margin.
pub fn scalar_criteria_2d(rsys: &ReducedSystem) -> Result<ScalarCriteria, StabilityError> {
    let c = StabilityConfig::default();
    scalar_criteria_2d_with(rsys, c.k_threshold, c.margin)
}

pub fn scalar_criteria_2d_with(
    rsys: &ReducedSystem,
    k_threshold: f64,
    margin: f64,
) -> Result<ScalarCriteria, StabilityError> {
    if rsys.n != 2 {
        return Err(StabilityError::WrongDimension { n: rsys.n });
    }
    let (s, r) = by_log_radius(rsys, 0.0);
    let s0: Vec<f64> = s.iter().map(|v| v - s[0]).collect();
    let vals: Vec<f64> = r.iter().map(|m| m[(0, 0)]).collect();
    let integral = cumulative_trapezoid(&s0, &vals);
    // Φ = exp(−I), so growth of Φ between s < t is −(I(t) − I(s)).
    let neg: Vec<f64> = integral.iter().map(|v| -v).collect();
    let (v, _) = trend_verdict(&s0, &running_rise(&neg), k_threshold, margin);
    let lipschitz = match v {
        Stability::UniformlyStable => Criterion::Holds,
        Stability::NotUniformlyStable => Criterion::Fails,
        Stability::Inconclusive => Criterion::Inconclusive,
    };
    let differentiable = match lipschitz {
        Criterion::Holds => {
            let phi: Vec<DMatrix<f64>> =
                neg.iter().map(|v| DMatrix::from_element(1, 1, v.exp())).collect();
            match asymptotic_from_samples(&s0, &phi, margin).verdict {
                Asymptotic::AsymptoticallyConstant => Criterion::Holds,
                Asymptotic::NotAsymptoticallyConstant => Criterion::Fails,
                Asymptotic::Inconclusive => Criterion::Inconclusive,
            }
        }
        other => other,
    };
    Ok(ScalarCriteria { lipschitz, differentiable, integral: *integral.last().unwrap() })
}

/// Numbers behind a verdict.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evidence {
    #[serde(rename = "K_stat")]
    pub k_stat: f64,
    pub k_growth_per_decade: Vec<f64>,
    pub asymptotic_increments: Vec<f64>,
    pub mu_integral_sup: f64,
    pub mu_integral_tail: f64,
    pub mu_cond1: Criterion,
    pub mu_cond2: Criterion,
    pub scalar: Option<ScalarCriteria>,
    #[serde(rename = "T_max")]
    pub t_max: f64,
    pub tolerances: Tolerances,
    pub liouville_error: f64,
    pub provenance: Provenance,
    /// Flags raised by the decision logic, such as criteria disagreeing.
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    pub integrator: f64,
    pub k_threshold: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegularityVerdict {
    pub stability: Stability,
    pub asymptotic: Asymptotic,
    pub regularity: Regularity,
    pub gradient_claim: Option<String>,
    pub evidence: Evidence,
}

/// Combines the components under the theorem logic. Criteria that are
/// sufficient (μ) or exact (planar scalar) can only downgrade a verdict to
/// `Inconclusive` when they disagree; they never override it.
pub fn decide(
    st: &StabilityComponent,
    ac: &AsymptoticComponent,
    mu: &MuCriteria,
    scalar: Option<&ScalarCriteria>,
    flags: &mut Vec<String>,
) -> (Stability, Asymptotic, Regularity, Option<String>) {
    let mut stability = st.verdict;
    let mut asymptotic = ac.verdict;
    if mu.cond1 == Criterion::Holds && stability == Stability::NotUniformlyStable {
        flags.push("mu-cond1 holds but the fundamental matrix grows".into());
        stability = Stability::Inconclusive;
    }
    if mu.cond2 == Criterion::Holds
        && (stability == Stability::NotUniformlyStable
            || asymptotic == Asymptotic::NotAsymptoticallyConstant)
    {
        flags.push("mu-cond2 holds but the trajectory does not settle".into());
        stability = Stability::Inconclusive;
        asymptotic = Asymptotic::Inconclusive;
    }
    if let Some(sc) = scalar {
        let clash = matches!(
            (sc.lipschitz, stability),
            (Criterion::Holds, Stability::NotUniformlyStable)
                | (Criterion::Fails, Stability::UniformlyStable)
        );
        if clash {
            flags.push("planar integral criterion disagrees with the fundamental matrix".into());
            stability = Stability::Inconclusive;
        }
        let clash_ac = matches!(
            (sc.differentiable, asymptotic),
            (Criterion::Holds, Asymptotic::NotAsymptoticallyConstant)
                | (Criterion::Fails, Asymptotic::AsymptoticallyConstant)
        ) && sc.lipschitz == Criterion::Holds;
        if clash_ac {
            flags.push("planar convergence criterion disagrees with the trajectory".into());
            asymptotic = Asymptotic::Inconclusive;
        }
    }
    let regularity = match (stability, asymptotic) {
        (Stability::UniformlyStable, Asymptotic::AsymptoticallyConstant) => {
            Regularity::DifferentiableAtZero
        }
        (Stability::UniformlyStable, Asymptotic::Inconclusive) => {
            flags.push("asymptotic constancy is borderline; only the Lipschitz bound is claimed".into());
            Regularity::LipschitzAtZero
        }
        (Stability::UniformlyStable, Asymptotic::NotAsymptoticallyConstant) => {
            Regularity::LipschitzAtZero
        }
        (Stability::NotUniformlyStable, _) => Regularity::NoGuarantee,
        (Stability::Inconclusive, _) => Regularity::Inconclusive,
    };
    let gradient_claim = (regularity == Regularity::DifferentiableAtZero
        && mu.cond2 == Criterion::Holds)
        .then(|| "all derivatives zero".to_string());
    (stability, asymptotic, regularity, gradient_claim)
}

fn is_identity(a: &dyn MatrixField, q: &HalfSphereQuadrature) -> bool {
    let n = a.dim();
    let mut buf = vec![0.0; n * n];
    let mut x = vec![0.0; n];
    for r in [1.0, 0.5, 0.1, 1e-3, 1e-6, 1e-12] {
        for (th, _) in q.iter() {
            for k in 0..n {
                x[k] = r * th[k];
            }
            a.eval_into(&x, &mut buf);
            for i in 0..n {
                for j in 0..n {
                    if buf[i * n + j] != if i == j { 1.0 } else { 0.0 } {
                        return false;
                    }
                }
            }
        }
    }
    true
}

/// Builds the reduced system for `a` (and `h`, if the boundary is curved)
/// on the radii `e^{−t}`.
pub fn reduced_system_for(
    a: &CoefficientField,
    h: Option<&BoundaryGraph>,
    q: &HalfSphereQuadrature,
    t_grid: &[f64],
) -> Result<ReducedSystem, StabilityError> {
    let r_grid: Vec<f64> = t_grid.iter().map(|t| (-t).exp()).collect();
    let field: Arc<dyn MatrixField> = Arc::new(a.clone());
    Ok(match h {
        Some(h) => {
            let mut cert = a.certified_radii.clone();
            if cert.is_empty() {
                cert = crate::geometry::dyadic_grid(0.5, 30);
            }
            // Straightening must yield a valid coefficient field.
            flatten(a, h, q, &cert)?;
            compute_r_curved(field, h, q, &r_grid, is_identity(a, q))?
        }
        None => compute_r_halfspace(field, q, &r_grid)?,
    })
}

/// The full pipeline: reduction, fundamental matrix, the two trajectory
/// tests, and the corroborating criteria.
pub fn classify(
    a: &CoefficientField,
    h: Option<&BoundaryGraph>,
    cfg: &StabilityConfig,
) -> Result<(RegularityVerdict, FundamentalTrajectory), StabilityError> {
    let q = build_quadrature(a.dim(), cfg.order)?;
    let t_grid = cfg.t_grid();
    let rsys = reduced_system_for(a, h, &q, &t_grid)?;
    classify_reduced(&rsys, cfg)
}

/// Classification from an already computed reduced system.
pub fn classify_reduced(
    rsys: &ReducedSystem,
    cfg: &StabilityConfig,
) -> Result<(RegularityVerdict, FundamentalTrajectory), StabilityError> {
    let t_grid = cfg.t_grid();
    let traj = fundamental_matrix_on(rsys, &t_grid, cfg.tol)?;
    let st = uniform_stability(&traj, cfg.k_threshold, cfg.margin);
    let ac = asymptotically_constant(&traj, cfg.margin);
    let eps_low = (-cfg.t_max).exp();
    let mu = mu_criteria_with(rsys, eps_low, cfg.k_threshold, cfg.margin)?;
    let scalar = if rsys.n == 2 {
        Some(scalar_criteria_2d_with(rsys, cfg.k_threshold, cfg.margin)?)
    } else {
        None
    };
    let mut flags = Vec::new();
    let (stability, asymptotic, regularity, gradient_claim) =
        decide(&st, &ac, &mu, scalar.as_ref(), &mut flags);
    let evidence = Evidence {
        k_stat: st.k_stat,
        k_growth_per_decade: st.growth_per_decade.clone(),
        asymptotic_increments: ac.increments.clone(),
        mu_integral_sup: mu.integral_sup,
        mu_integral_tail: mu.integral_tail,
        mu_cond1: mu.cond1,
        mu_cond2: mu.cond2,
        scalar,
        t_max: cfg.t_max,
        tolerances: Tolerances {
            integrator: cfg.tol,
            k_threshold: cfg.k_threshold,
            margin: cfg.margin,
        },
        liouville_error: traj.liouville_error,
        provenance: rsys.provenance,
        flags,
    };
    Ok((RegularityVerdict { stability, asymptotic, regularity, gradient_claim, evidence }, traj))
}

type VectorOfT = Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>;

/// Forcing `g = (g1, g2)` of the `(φ, ψ)` system, with an optional `ε(t)`
/// that replaces the system's own in the `c_α` and `ψ` bounds.
#[derive(Clone)]
pub struct Forcing {
    pub g1: VectorOfT,
    pub g2: VectorOfT,
    pub eps: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
}

impl Forcing {
    pub fn zero(m: usize) -> Forcing {
        Forcing { g1: Arc::new(move |_| vec![0.0; m]), g2: Arc::new(move |_| vec![0.0; m]), eps: None }
    }

    pub fn new(
        g1: impl Fn(f64) -> Vec<f64> + Send + Sync + 'static,
        g2: impl Fn(f64) -> Vec<f64> + Send + Sync + 'static,
    ) -> Forcing {
        Forcing { g1: Arc::new(g1), g2: Arc::new(g2), eps: None }
    }

    pub fn with_eps(mut self, eps: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Forcing {
        self.eps = Some(Arc::new(eps));
        self
    }

    pub fn scaled(&self, s: f64) -> Forcing {
        let (g1, g2) = (self.g1.clone(), self.g2.clone());
        Forcing {
            g1: Arc::new(move |t| g1(t).into_iter().map(|v| s * v).collect()),
            g2: Arc::new(move |t| g2(t).into_iter().map(|v| s * v).collect()),
            eps: self.eps.clone(),
        }
    }
}

/// Measured quantities of the forced-system estimates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForcedBounds {
    pub alpha: f64,
    pub g1_l1: f64,
    pub c_alpha: f64,
    pub sup_phi: f64,
    /// Smallest `c` with `sup|φ| ≤ c(c_α + |φ(0)| + ‖g1‖₁)`.
    pub c_phi: f64,
    /// Smallest `c` with `|ψ(t)| ≤ c ε(t)(c_α + sup_{τ>t}|φ|)` on the grid.
    pub c_psi: f64,
    pub psi_over_eps_sup: f64,
}

#[derive(Debug, Clone)]
pub struct ForcedState {
    pub t_grid: Vec<f64>,
    pub phi: Vec<Vec<f64>>,
    pub psi: Vec<Vec<f64>>,
    pub bounds: ForcedBounds,
    /// Picard sweeps used by the finite-energy solve (0 for an initial
    /// value run, `usize::MAX` when the direct solve was needed).
    pub iterations: usize,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Exact weights of `∫₀ʰ e^{−λu} f(t+u) du` for `f` linear on the cell.
fn exp_weights(lambda: f64, h: f64) -> (f64, f64, f64) {
    let decay = (-lambda * h).exp();
    let e0 = (1.0 - decay) / lambda;
    let e1 = (1.0 - decay * (1.0 + lambda * h)) / (lambda * lambda);
    (decay, e0 - e1 / h, e1 / h)
}

/// `∫_t^T e^{−λ(s−t)} f(s) ds` on a uniform grid, by backward recursion.
fn weighted_tail(lambda: f64, h: f64, f: &[f64]) -> Vec<f64> {
    let (decay, w0, w1) = exp_weights(lambda, h);
    let mut out = vec![0.0; f.len()];
    for i in (0..f.len() - 1).rev() {
        out[i] = decay * out[i + 1] + w0 * f[i] + w1 * f[i + 1];
    }
    out
}

/// Integrates `d(φ,ψ)/dt + diag(0, −nI)(φ,ψ) + ℛ(t)(φ,ψ) = g` on the grid
/// of `sys`, which must be uniform.
///
/// With `psi0 = Some(ψ(0))` this is a plain initial-value run. With `None`
/// the bounded solution is selected: `ψ(t) = −∫_t^T e^{−n(s−t)}(g2 − (ℛX)₂)`.
pub fn integrate_forced(
    sys: &AssembledSystem,
    g: &Forcing,
    phi0: &[f64],
    psi0: Option<&[f64]>,
    delta: f64,
) -> Result<ForcedState, StabilityError> {
    let n = sys.n;
    let m = n - 1;
    let nf = n as f64;
    let ts = &sys.t_grid;
    let len = ts.len();
    if len < 3 || phi0.len() != m || psi0.is_some_and(|p| p.len() != m) {
        return Err(StabilityError::ForcingRejected("grid or initial data has the wrong shape".into()));
    }
    let h = ts[1] - ts[0];
    if ts.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > 1e-9 * h.max(1.0)) {
        return Err(StabilityError::ForcingRejected("the time grid must be uniform".into()));
    }
    let g1s: Vec<Vec<f64>> = ts.iter().map(|&t| (g.g1)(t)).collect();
    let g2s: Vec<Vec<f64>> = ts.iter().map(|&t| (g.g2)(t)).collect();
    if g1s.iter().chain(&g2s).any(|v| v.len() != m || v.iter().any(|x| !x.is_finite())) {
        return Err(StabilityError::ForcingRejected("forcing has the wrong size or is not finite".into()));
    }
    let eps: Vec<f64> = match &g.eps {
        Some(e) => ts.iter().map(|&t| e(t)).collect(),
        None => sys.eps.clone(),
    };

    // ‖g1‖₁ and integrability on the horizon.
    let g1n: Vec<f64> = g1s.iter().map(|v| norm(v)).collect();
    let g1_cum = cumulative_trapezoid(ts, &g1n);
    let g1_l1 = *g1_cum.last().unwrap();
    let half = g1_l1 - interp(ts, &g1_cum, ts[len - 1] / 2.0);
    if g1_l1 > 1e-12 && half > 0.25 * g1_l1 {
        return Err(StabilityError::ForcingRejected(format!(
            "g1 does not look integrable: the second half of the horizon carries {:.0}% of its L1 norm",
            100.0 * half / g1_l1
        )));
    }

    // c_α = sup e^{αt}∫_t^∞|g2|e^{−αs}ds / ε(t).
    let alpha = nf - delta;
    let g2n: Vec<f64> = g2s.iter().map(|v| norm(v)).collect();
    let tail = weighted_tail(alpha, h, &g2n);
    let mut c_alpha: f64 = 0.0;
    let mut c_first: f64 = 0.0;
    let mut c_second: f64 = 0.0;
    for i in 0..len {
        if tail[i] <= 0.0 {
            continue;
        }
        if !(eps[i] > 0.0) {
            return Err(StabilityError::ForcingRejected(format!(
                "g2 is nonzero where ε vanishes (t = {})",
                ts[i]
            )));
        }
        let c = tail[i] / eps[i];
        c_alpha = c_alpha.max(c);
        if ts[i] < ts[len - 1] / 2.0 {
            c_first = c_first.max(c);
        } else {
            c_second = c_second.max(c);
        }
    }
    if !c_alpha.is_finite() || (c_first > 0.0 && c_second > 4.0 * c_first) {
        return Err(StabilityError::ForcingRejected("c_α grows along the horizon".into()));
    }

    let calr: Vec<&DMatrix<f64>> = sys.points.iter().map(|p| &p.calr).collect();
    let (phi, psi, iterations) = match psi0 {
        Some(p0) => {
            let (phi, psi) = forced_ivp(ts, &calr, &g1s, &g2s, phi0, p0, nf)?;
            (phi, psi, 0)
        }
        None => forced_bounded(ts, &calr, &g1s, &g2s, phi0, nf)?,
    };

    let phin: Vec<f64> = phi.iter().map(|v| norm(v)).collect();
    let sup_phi = phin.iter().copied().fold(0.0, f64::max);
    let denom = c_alpha + norm(phi0) + g1_l1;
    let c_phi = if denom > 0.0 { sup_phi / denom } else { 0.0 };
    let mut c_psi: f64 = 0.0;
    let mut psi_over_eps_sup: f64 = 0.0;
    let mut sup_after = 0.0f64;
    for i in (0..len).rev() {
        sup_after = sup_after.max(phin[i]);
        let p = norm(&psi[i]);
        if eps[i] > 0.0 {
            psi_over_eps_sup = psi_over_eps_sup.max(p / eps[i]);
            let d = eps[i] * (c_alpha + sup_after);
            if d > 0.0 {
                c_psi = c_psi.max(p / d);
            }
        }
    }
    Ok(ForcedState {
        t_grid: ts.clone(),
        phi,
        psi,
        bounds: ForcedBounds { alpha, g1_l1, c_alpha, sup_phi, c_phi, c_psi, psi_over_eps_sup },
        iterations,
    })
}

type Split = (Vec<Vec<f64>>, Vec<Vec<f64>>);

fn forced_ivp(
    ts: &[f64],
    calr: &[&DMatrix<f64>],
    g1s: &[Vec<f64>],
    g2s: &[Vec<f64>],
    phi0: &[f64],
    psi0: &[f64],
    nf: f64,
) -> Result<Split, StabilityError> {
    let m = phi0.len();
    // Cell index and linear weight of `t`, for interpolating grid data.
    let cell = |t: f64| -> (usize, f64) {
        let j = ts.partition_point(|&x| x <= t).clamp(1, ts.len() - 1);
        (j - 1, ((t - ts[j - 1]) / (ts[j] - ts[j - 1])).clamp(0.0, 1.0))
    };
    let rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
        let (j, w) = cell(t);
        for i in 0..2 * m {
            let mut s = 0.0;
            for k in 0..2 * m {
                s += ((1.0 - w) * calr[j][(i, k)] + w * calr[j + 1][(i, k)]) * y[k];
            }
            let (gj, gk) = if i < m { (g1s[j][i], g1s[j + 1][i]) } else { (g2s[j][i - m], g2s[j + 1][i - m]) };
            let forcing = (1.0 - w) * gj + w * gk;
            let diag = if i < m { 0.0 } else { -nf * y[i] };
            dy[i] = forcing - diag - s;
        }
    };
    let y0: Vec<f64> = phi0.iter().chain(psi0).copied().collect();
    let h = ts[1] - ts[0];
    let opts = OdeOptions { rtol: 1e-11, atol: 1e-13, h_max: h, ..OdeOptions::default() };
    let (ys, _) = ode::integrate(rhs, ts[0], &y0, ts, &opts)?;
    Ok((ys.iter().map(|y| y[..m].to_vec()).collect(), ys.iter().map(|y| y[m..].to_vec()).collect()))
}

/// One sweep of the affine map whose fixed point is the bounded solution.
fn picard_sweep(
    h: f64,
    calr: &[&DMatrix<f64>],
    g1s: &[Vec<f64>],
    g2s: &[Vec<f64>],
    phi0: &[f64],
    nf: f64,
    x: &[DVector<f64>],
) -> Vec<DVector<f64>> {
    let m = phi0.len();
    let len = x.len();
    let f: Vec<DVector<f64>> = (0..len)
        .map(|i| {
            let mut g = DVector::zeros(2 * m);
            for k in 0..m {
                g[k] = g1s[i][k];
                g[m + k] = g2s[i][k];
            }
            g - calr[i] * &x[i]
        })
        .collect();
    let mut out = vec![DVector::zeros(2 * m); len];
    for k in 0..m {
        out[0][k] = phi0[k];
    }
    for i in 1..len {
        for k in 0..m {
            out[i][k] = out[i - 1][k] + 0.5 * h * (f[i - 1][k] + f[i][k]);
        }
    }
    let (decay, w0, w1) = exp_weights(nf, h);
    for i in (0..len - 1).rev() {
        for k in m..2 * m {
            out[i][k] = decay * out[i + 1][k] - (w0 * f[i][k] + w1 * f[i + 1][k]);
        }
    }
    out
}

fn forced_bounded(
    ts: &[f64],
    calr: &[&DMatrix<f64>],
    g1s: &[Vec<f64>],
    g2s: &[Vec<f64>],
    phi0: &[f64],
    nf: f64,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>, usize), StabilityError> {
    let m = phi0.len();
    let len = ts.len();
    let h = ts[1] - ts[0];
    let mut x: Vec<DVector<f64>> = vec![DVector::zeros(2 * m); len];
    let split = |x: &[DVector<f64>]| -> Split {
        (
            x.iter().map(|v| v.rows(0, m).iter().copied().collect()).collect(),
            x.iter().map(|v| v.rows(m, m).iter().copied().collect()).collect(),
        )
    };
    for it in 1..=400 {
        let next = picard_sweep(h, calr, g1s, g2s, phi0, nf, &x);
        let scale = next.iter().map(|v| v.amax()).fold(1.0, f64::max);
        let change = next.iter().zip(&x).map(|(a, b)| (a - b).amax()).fold(0.0, f64::max);
        x = next;
        if !change.is_finite() {
            break;
        }
        if change <= 1e-13 * scale {
            let (p, q) = split(&x);
            return Ok((p, q, it));
        }
    }
    // The sweep is affine, X ↦ b + L X; solve (I − L)X = b directly.
    let dim = 2 * m * len;
    if dim > 4000 {
        return Err(StabilityError::IntegrationFailure(
            "Picard iteration for the bounded solution did not converge".into(),
        ));
    }
    let zero = vec![DVector::zeros(2 * m); len];
    let zero_g = vec![vec![0.0; m]; len];
    let b = picard_sweep(h, calr, g1s, g2s, phi0, nf, &zero);
    let flat = |x: &[DVector<f64>]| DVector::from_iterator(dim, x.iter().flat_map(|v| v.iter().copied()));
    let mut a = DMatrix::<f64>::identity(dim, dim);
    let zero_phi = vec![0.0; m];
    for col in 0..dim {
        let mut e = zero.clone();
        e[col / (2 * m)][col % (2 * m)] = 1.0;
        let l = picard_sweep(h, calr, &zero_g, &zero_g, &zero_phi, nf, &e);
        let l = flat(&l);
        for row in 0..dim {
            a[(row, col)] -= l[row];
        }
    }
    let sol = a.lu().solve(&flat(&b)).ok_or_else(|| {
        StabilityError::IntegrationFailure("bounded-solution system is singular".into())
    })?;
    let x: Vec<DVector<f64>> =
        (0..len).map(|i| sol.rows(i * 2 * m, 2 * m).into_owned()).collect();
    let (p, q) = split(&x);
    Ok((p, q, usize::MAX))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short() -> StabilityConfig {
        StabilityConfig { t_max: 12.0, ..StabilityConfig::default() }
    }

    #[test]
    fn zero_r_is_stable_and_constant() {
        let cfg = short();
        let rs: Vec<f64> = cfg.t_grid().iter().map(|t| (-t).exp()).collect();
        let sys = ReducedSystem::synthetic(3, &rs, |_| DMatrix::zeros(2, 2));
        let traj = fundamental_matrix(&sys, cfg.t_max, 1e-10).unwrap();
        assert!(traj.phi.iter().all(|p| (p - DMatrix::identity(2, 2)).amax() < 1e-14));
        let st = uniform_stability(&traj, 1e6, 0.01);
        assert_eq!(st.verdict, Stability::UniformlyStable);
        assert_eq!(st.k_stat, 1.0);
        assert_eq!(asymptotically_constant(&traj, 0.01).verdict, Asymptotic::AsymptoticallyConstant);
        let mu = mu_criteria(&sys, (-cfg.t_max).exp()).unwrap();
        assert_eq!((mu.cond1, mu.cond2), (Criterion::Holds, Criterion::Fails));
    }

    #[test]
    fn closed_form_scalar_trajectories() {
        let grid = uniform_grid(15.0, 0.1);
        let rs: Vec<f64> = grid.iter().map(|t| (-t).exp()).collect();
        let constant = ReducedSystem::synthetic(2, &rs, |_| DMatrix::from_element(1, 1, -0.1));
        let traj = fundamental_matrix(&constant, 10.0, 1e-12).unwrap();
        let phi10 = traj.phi.last().unwrap()[(0, 0)];
        assert!((phi10 / 1f64.exp() - 1.0).abs() < 1e-8);

        let slow = ReducedSystem::synthetic(2, &rs, |r: f64| {
            DMatrix::from_element(1, 1, -0.5 * (1.0 - r.ln()).powf(-0.75))
        });
        let traj = fundamental_matrix(&slow, 15.0, 1e-12).unwrap();
        assert!((traj.phi.last().unwrap()[(0, 0)] - 2f64.exp()).abs() < 1e-6);
    }

    #[test]
    fn shallow_grid_is_rejected() {
        let sys = ReducedSystem::synthetic(3, &[1.0, 0.1, 0.01], |_| DMatrix::zeros(2, 2));
        assert!(matches!(mu_criteria(&sys, 0.01), Err(StabilityError::GridTooShallow { .. })));
        assert!(matches!(scalar_criteria_2d(&sys), Err(StabilityError::WrongDimension { n: 3 })));
    }

    #[test]
    fn exponential_weights_match_quadrature() {
        let (decay, w0, w1) = exp_weights(2.0, 0.3);
        assert!((decay - (-0.6f64).exp()).abs() < 1e-15);
        // f = 1 and f = u/h integrated exactly.
        let e0 = (1.0 - (-0.6f64).exp()) / 2.0;
        assert!((w0 + w1 - e0).abs() < 1e-15);
        let r = crate::numerics::integrate(|u| (-2.0 * u).exp() * u / 0.3, 0.0, 0.3, 1e-15, 1e-14, 50);
        assert!((w1 - r.value).abs() < 1e-14);
    }
}
