//! Moduli of continuity, coefficient fields on the closed half-space,
//! boundary graphs, and the change of variables that straightens a curved
//! boundary.

pub mod families;

use std::fmt;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::geometry::HalfSphereQuadrature;
use crate::numerics::{integrate, linalg::sym_max_eigenvalue, series::wynn_epsilon};

pub use families::{GraphProfile, ModulusShape, RadialProfile, Sign};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoefficientError {
    #[error("modulus is not square-Dini: partial integrals keep growing (increment ratio {ratio:.4})")]
    NotSquareDini { ratio: f64 },
    #[error("modulus is not nondecreasing near r = {r:e}")]
    NotMonotone { r: f64 },
    #[error("ω(r)·r^(κ−1) increases near r = {r:e} for κ = {kappa}")]
    VanishingConditionFailed { r: f64, kappa: f64 },
    #[error("profile does not vanish at the origin and has no modulus of continuity")]
    NoModulus,
    #[error("ellipticity fails at r = {r:e}: smallest eigenvalue {lambda:e}")]
    EllipticityViolation { r: f64, theta: Vec<f64>, lambda: f64 },
    #[error("oscillation {excess:e} above ω(r) at r = {r:e}, θ = {theta:?}")]
    OscillationViolation { r: f64, theta: Vec<f64>, excess: f64 },
    #[error("a(0) differs from the identity by {deviation:e}")]
    NotNormalized { deviation: f64 },
    #[error("dimension mismatch: field is {field}-dimensional, graph is {graph}-dimensional")]
    DimensionMismatch { field: usize, graph: usize },
    #[error("boundary gradient {slope:e} exceeds its modulus at r = {r:e}")]
    GraphSlopeViolation { r: f64, slope: f64 },
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Log-grid used by the certification checks.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LogGrid {
    /// The grid reaches down to `10^{−decades}`.
    pub decades: f64,
    pub points_per_decade: usize,
    /// The vanishing condition is checked only for `r ≤ r_near`.
    pub r_near: f64,
}

impl Default for LogGrid {
    fn default() -> Self {
        Self { decades: 40.0, points_per_decade: 20, r_near: 0.1 }
    }
}

impl LogGrid {
    fn points(&self) -> Vec<f64> {
        let count = (self.decades * self.points_per_decade as f64).ceil() as usize;
        (0..=count)
            .rev()
            .map(|k| 10f64.powf(-(k as f64) / self.points_per_decade as f64))
            .collect()
    }
}

/// How the square-Dini integral was settled.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SquareDiniCertificate {
    /// Extrapolated value of `∫₀¹ ω²(r)/r dr`.
    pub integral: f64,
    /// Ratio of the last two dyadic increments in `s = −log r`.
    pub increment_ratio: f64,
    /// Largest `s` reached by the partial integrals.
    pub s_max: f64,
}

/// A certified modulus of continuity ω with vanishing exponent κ.
#[derive(Clone)]
pub struct ModulusOfContinuity {
    f: ScalarFn,
    kappa: f64,
    delta: f64,
    certificate: SquareDiniCertificate,
    label: String,
}

impl fmt::Debug for ModulusOfContinuity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModulusOfContinuity")
            .field("label", &self.label)
            .field("kappa", &self.kappa)
            .field("delta", &self.delta)
            .field("certificate", &self.certificate)
            .finish()
    }
}

impl ModulusOfContinuity {
    /// ω(r), extended by the constant δ = ω(1) for r > 1.
    pub fn eval(&self, r: f64) -> f64 {
        if r > 1.0 {
            self.delta
        } else {
            (self.f)(r)
        }
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// δ = ω(1).
    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn square_dini_integral(&self) -> f64 {
        self.certificate.integral
    }

    pub fn certificate(&self) -> SquareDiniCertificate {
        self.certificate
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// The modulus `k·ω`, for composite estimates.
    pub fn scaled(&self, k: f64) -> ModulusOfContinuity {
        let f = self.f.clone();
        ModulusOfContinuity {
            f: Arc::new(move |r| k * f(r)),
            kappa: self.kappa,
            delta: k * self.delta,
            certificate: SquareDiniCertificate {
                integral: k * k * self.certificate.integral,
                ..self.certificate
            },
            label: format!("{k}·{}", self.label),
        }
    }

    /// Pointwise sum of two moduli; the smaller vanishing exponent survives.
    pub fn sum(&self, other: &ModulusOfContinuity) -> ModulusOfContinuity {
        let (f, g) = (self.f.clone(), other.f.clone());
        let sum: ScalarFn = Arc::new(move |r| f(r) + g(r));
        let kappa = self.kappa.min(other.kappa);
        let cert = square_dini(&sum).unwrap_or(SquareDiniCertificate {
            integral: f64::INFINITY,
            increment_ratio: 1.0,
            s_max: 0.0,
        });
        ModulusOfContinuity {
            delta: sum(1.0),
            f: sum,
            kappa,
            certificate: cert,
            label: format!("{} + {}", self.label, other.label),
        }
    }

    /// The identically zero modulus of a constant-coefficient field.
    pub fn zero() -> ModulusOfContinuity {
        ModulusOfContinuity {
            f: Arc::new(|_| 0.0),
            kappa: 0.5,
            delta: 0.0,
            certificate: SquareDiniCertificate { integral: 0.0, increment_ratio: 0.0, s_max: 0.0 },
            label: "zero".into(),
        }
    }
}

/// Dyadic partial integrals of `∫₀^S ω(e^{−s})² ds`, `S = 1, 2, 4, …, 512`.
fn square_dini(f: &ScalarFn) -> Result<SquareDiniCertificate, CoefficientError> {
    let integrand = |s: f64| {
        let w = f((-s).exp());
        w * w
    };
    let mut partial = Vec::new();
    let mut increments = Vec::new();
    let mut acc = integrate(integrand, 0.0, 1.0, 1e-15, 1e-13, 400).value;
    partial.push(acc);
    let mut lo = 1.0;
    for _ in 0..9 {
        let hi = 2.0 * lo;
        let inc = integrate(integrand, lo, hi, 1e-16, 1e-13, 400).value;
        increments.push(inc);
        acc += inc;
        partial.push(acc);
        lo = hi;
    }
    if !acc.is_finite() {
        return Err(CoefficientError::NotSquareDini { ratio: f64::INFINITY });
    }
    let k = increments.len();
    let ratio = |i: usize| {
        if increments[i - 1] <= 1e-300 {
            0.0
        } else {
            increments[i] / increments[i - 1]
        }
    };
    let ratios: Vec<f64> = (k - 3..k).map(ratio).collect();
    // An integrand decaying like s^{−p} has dyadic increment ratio 2^{1−p};
    // ratios this close to one mean p ≤ 1.04, which on any finite range is
    // indistinguishable from divergence.
    if ratios.iter().all(|&q| q >= 0.97) {
        return Err(CoefficientError::NotSquareDini { ratio: ratios[2] });
    }
    let integral = if increments[k - 1] <= 1e-14 * acc.abs().max(1e-300) {
        acc
    } else {
        wynn_epsilon(&partial)
    };
    Ok(SquareDiniCertificate { integral, increment_ratio: ratios[2], s_max: lo })
}

/// Certifies a candidate modulus: monotone on the grid, the vanishing
/// condition `ω(r) r^{κ−1}` nonincreasing for `r ≤ r_near`, and a finite
/// square-Dini integral.
pub fn certify_modulus(
    omega: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    kappa: f64,
    grid: &LogGrid,
    label: impl Into<String>,
) -> Result<ModulusOfContinuity, CoefficientError> {
    let pts = grid.points();
    let mut prev = f64::NEG_INFINITY;
    for &r in &pts {
        let v = omega(r);
        if !v.is_finite() || v < 0.0 || v < prev - 1e-14 * prev.abs() {
            return Err(CoefficientError::NotMonotone { r });
        }
        prev = v;
    }
    let mut prev = f64::INFINITY;
    for &r in pts.iter().filter(|&&r| r <= grid.r_near) {
        let v = omega(r) * r.powf(kappa - 1.0);
        if v > prev * (1.0 + 1e-12) + 1e-300 {
            return Err(CoefficientError::VanishingConditionFailed { r, kappa });
        }
        prev = v;
    }
    let certificate = square_dini(&omega)?;
    Ok(ModulusOfContinuity { delta: omega(1.0), f: omega, kappa, certificate, label: label.into() })
}

/// Certifies one of the closed-form modulus shapes.
pub fn certify_shape(
    shape: ModulusShape,
    kappa: f64,
    grid: &LogGrid,
) -> Result<ModulusOfContinuity, CoefficientError> {
    if shape == ModulusShape::Zero {
        return Ok(ModulusOfContinuity::zero());
    }
    certify_modulus(Arc::new(move |r| shape.eval(r)), kappa, grid, format!("{shape:?}"))
}

/// `ε(t) = ω(e^{−t})`.
#[derive(Debug, Clone)]
pub struct EpsilonOfT {
    modulus: ModulusOfContinuity,
}

impl EpsilonOfT {
    pub fn eval(&self, t: f64) -> f64 {
        self.modulus.eval((-t).exp())
    }

    pub fn modulus(&self) -> &ModulusOfContinuity {
        &self.modulus
    }

    /// `∫₀^T ε²(t) dt`, integrated directly in t.
    pub fn square_integral(&self, t_max: f64) -> f64 {
        let mut total = 0.0;
        let mut lo = 0.0;
        while lo < t_max {
            let hi = (lo * 2.0).max(1.0).min(t_max);
            total += integrate(|t| self.eval(t).powi(2), lo, hi, 1e-16, 1e-13, 400).value;
            lo = hi;
        }
        total
    }
}

pub fn epsilon_of_t(omega: &ModulusOfContinuity) -> EpsilonOfT {
    EpsilonOfT { modulus: omega.clone() }
}

/// `∫_{r_min}^1 ω²(r)/r dr` integrated in r over decade pieces; an
/// independent path to the square-Dini value.
pub fn square_dini_in_r(omega: &ModulusOfContinuity, r_min: f64) -> f64 {
    let mut total = 0.0;
    let mut hi = 1.0;
    while hi > r_min {
        let lo = (hi / 10.0).max(r_min);
        total += integrate(|r| omega.eval(r).powi(2) / r, lo, hi, 1e-18, 1e-13, 400).value;
        hi = lo;
    }
    total
}

/// An `n × n` matrix field evaluated on the closed half-space, row-major.
pub trait MatrixField: Send + Sync {
    fn dim(&self) -> usize;
    fn eval_into(&self, x: &[f64], out: &mut [f64]);

    fn eval(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut out = vec![0.0; n * n];
        self.eval_into(x, &mut out);
        out
    }
}

/// `a = I`.
#[derive(Debug, Clone, Copy)]
pub struct IdentityField {
    pub n: usize,
}

impl MatrixField for IdentityField {
    fn dim(&self) -> usize {
        self.n
    }
    fn eval_into(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for i in 0..self.n {
            out[i * self.n + i] = 1.0;
        }
    }
}

/// The GS class `a_ij = δ_ij + g(r) θ_i θ_j`.
#[derive(Debug, Clone, Copy)]
pub struct GsField {
    pub n: usize,
    pub g: RadialProfile,
}

impl MatrixField for GsField {
    fn dim(&self) -> usize {
        self.n
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n;
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let g = if r > 0.0 { self.g.value(r) } else { 0.0 };
        for i in 0..n {
            for j in 0..n {
                let th = if r > 0.0 { x[i] * x[j] / (r * r) } else { 0.0 };
                out[i * n + j] = if i == j { 1.0 } else { 0.0 } + g * th;
            }
        }
    }
}

/// `a = I + e(r)(E_{1n} + E_{n1})`: couples the first tangential direction
/// to the normal one, so the odd spherical moments do not vanish.
#[derive(Debug, Clone, Copy)]
pub struct TiltField {
    pub n: usize,
    pub e: RadialProfile,
}

impl MatrixField for TiltField {
    fn dim(&self) -> usize {
        self.n
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n;
        IdentityField { n }.eval_into(x, out);
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let e = if r > 0.0 { self.e.value(r) } else { 0.0 };
        out[n - 1] += e;
        out[(n - 1) * n] += e;
    }
}

/// Any closure `x ↦ a(x)`.
pub struct ClosureField<F> {
    pub n: usize,
    pub f: F,
}

impl<F: Fn(&[f64], &mut [f64]) + Send + Sync> MatrixField for ClosureField<F> {
    fn dim(&self) -> usize {
        self.n
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        (self.f)(x, out)
    }
}

/// Replaces the field by the identity outside the unit ball.
pub struct Compactified(pub Arc<dyn MatrixField>);

impl MatrixField for Compactified {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        if x.iter().map(|v| v * v).sum::<f64>() >= 1.0 {
            IdentityField { n: self.dim() }.eval_into(x, out)
        } else {
            self.0.eval_into(x, out)
        }
    }
}

/// A coefficient field that passed ellipticity, oscillation and
/// normalization checks on a sampling grid.
#[derive(Clone)]
pub struct CoefficientField {
    field: Arc<dyn MatrixField>,
    lambda: f64,
    big_lambda: f64,
    modulus: ModulusOfContinuity,
    /// Radii on which the certificate was issued ("certified on grid").
    pub certified_radii: Vec<f64>,
}

impl fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientField")
            .field("n", &self.dim())
            .field("lambda", &self.lambda)
            .field("Lambda", &self.big_lambda)
            .field("modulus", &self.modulus)
            .finish()
    }
}

impl CoefficientField {
    pub fn dim(&self) -> usize {
        self.field.dim()
    }
    /// Smallest sampled eigenvalue of the symmetric part.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    /// Largest sampled eigenvalue of the symmetric part.
    pub fn big_lambda(&self) -> f64 {
        self.big_lambda
    }
    pub fn modulus(&self) -> &ModulusOfContinuity {
        &self.modulus
    }
    pub fn field(&self) -> &Arc<dyn MatrixField> {
        &self.field
    }
}

impl MatrixField for CoefficientField {
    fn dim(&self) -> usize {
        self.field.dim()
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        self.field.eval_into(x, out)
    }
}

fn symmetric_extremes(a: &[f64], n: usize) -> (f64, f64) {
    let s = nalgebra::DMatrix::from_fn(n, n, |i, j| 0.5 * (a[i * n + j] + a[j * n + i]));
    let max = sym_max_eigenvalue(&s);
    let min = -sym_max_eigenvalue(&(-s));
    (min, max)
}

/// Validates `a` against ω on the spheres `r ∈ r_grid`, sampled at the
/// quadrature nodes, plus the origin for the normalization check.
pub fn validate_field(
    a: Arc<dyn MatrixField>,
    omega: &ModulusOfContinuity,
    q: &HalfSphereQuadrature,
    r_grid: &[f64],
) -> Result<CoefficientField, CoefficientError> {
    let n = a.dim();
    let mut buf = vec![0.0; n * n];
    a.eval_into(&vec![0.0; n], &mut buf);
    let mut dev: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            dev = dev.max((buf[i * n + j] - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    if dev > 1e-12 {
        return Err(CoefficientError::NotNormalized { deviation: dev });
    }
    let mut lambda = f64::INFINITY;
    let mut big = f64::NEG_INFINITY;
    let mut x = vec![0.0; n];
    for &r in r_grid {
        let w = omega.eval(r);
        for (th, _) in q.iter() {
            for k in 0..n {
                x[k] = r * th[k];
            }
            a.eval_into(&x, &mut buf);
            let (lo, hi) = symmetric_extremes(&buf, n);
            if lo <= 0.0 || !lo.is_finite() {
                return Err(CoefficientError::EllipticityViolation {
                    r,
                    theta: th.to_vec(),
                    lambda: lo,
                });
            }
            lambda = lambda.min(lo);
            big = big.max(hi);
            let mut osc: f64 = 0.0;
            for i in 0..n {
                for j in 0..n {
                    osc = osc.max((buf[i * n + j] - if i == j { 1.0 } else { 0.0 }).abs());
                }
            }
            if osc > w * (1.0 + 1e-12) + 1e-15 {
                return Err(CoefficientError::OscillationViolation {
                    r,
                    theta: th.to_vec(),
                    excess: osc - w,
                });
            }
        }
    }
    Ok(CoefficientField {
        field: a,
        lambda: lambda.min(1.0),
        big_lambda: big.max(1.0),
        modulus: omega.clone(),
        certified_radii: r_grid.to_vec(),
    })
}

/// Boundary graph `x_n = h(x̃)` with radial profile `h(x̃) = H(|x̃|)`.
#[derive(Debug, Clone)]
pub struct BoundaryGraph {
    n: usize,
    profile: GraphProfile,
    modulus: ModulusOfContinuity,
}

impl BoundaryGraph {
    /// Builds and checks the graph: `h(0) = 0`, `∇h(0) = 0`, and
    /// `|∇h| ≤ ω` on the sampled radii.
    pub fn new(n: usize, profile: GraphProfile, grid: &LogGrid) -> Result<Self, CoefficientError> {
        let (shape, kappa) = profile.modulus_profile().ok_or(CoefficientError::NoModulus)?;
        let modulus = certify_shape(shape, kappa, grid)?;
        for k in 0..=200 {
            let r = 10f64.powf(-(k as f64) / 10.0);
            let slope = profile.slope(r).abs();
            if slope > modulus.eval(r) * (1.0 + 1e-12) + 1e-15 {
                return Err(CoefficientError::GraphSlopeViolation { r, slope });
            }
        }
        Ok(Self { n, profile, modulus })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn profile(&self) -> GraphProfile {
        self.profile
    }

    pub fn modulus(&self) -> &ModulusOfContinuity {
        &self.modulus
    }

    /// `h(x̃)`; `xt` has length `n − 1`.
    pub fn h(&self, xt: &[f64]) -> f64 {
        let rho = xt.iter().map(|v| v * v).sum::<f64>().sqrt();
        self.profile.value(rho)
    }

    /// `∇̃h(x̃)`, written into `out` (length `n − 1`).
    pub fn grad_into(&self, xt: &[f64], out: &mut [f64]) {
        let rho = xt.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rho == 0.0 {
            out.fill(0.0);
            return;
        }
        let s = self.profile.slope(rho) / rho;
        for (o, x) in out.iter_mut().zip(xt) {
            *o = s * x;
        }
    }

    pub fn grad(&self, xt: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; xt.len()];
        self.grad_into(xt, &mut g);
        g
    }
}

/// The field `ã` in straightened coordinates `y`, where
/// `x = (ỹ, y_n + h(ỹ))` and `ã = J a(x) Jᵀ` with `J = ∂y/∂x`.
pub struct FlattenedField {
    pub a: Arc<dyn MatrixField>,
    pub h: BoundaryGraph,
}

impl MatrixField for FlattenedField {
    fn dim(&self) -> usize {
        self.a.dim()
    }
    fn eval_into(&self, y: &[f64], out: &mut [f64]) {
        let n = self.a.dim();
        let mut x = [0.0; 8];
        x[..n].copy_from_slice(&y[..n]);
        x[n - 1] += self.h.h(&y[..n - 1]);
        let mut a = [0.0; 16];
        self.a.eval_into(&x[..n], &mut a[..n * n]);
        let mut dh = [0.0; 8];
        self.h.grad_into(&y[..n - 1], &mut dh[..n - 1]);
        let m = n - 1;
        for i in 0..m {
            for j in 0..m {
                out[i * n + j] = a[i * n + j];
            }
            let mut s_row = a[i * n + m];
            let mut s_col = a[m * n + i];
            for j in 0..m {
                s_row -= a[i * n + j] * dh[j];
                s_col -= a[j * n + i] * dh[j];
            }
            out[i * n + m] = s_row;
            out[m * n + i] = s_col;
        }
        let mut nn = a[m * n + m];
        for i in 0..m {
            nn -= a[i * n + m] * dh[i] + a[m * n + i] * dh[i];
            for j in 0..m {
                nn += a[i * n + j] * dh[i] * dh[j];
            }
        }
        out[m * n + m] = nn;
    }
}

/// Straightens the boundary: returns the certified field `ã`.
///
/// The composite modulus is `(1 + 2Λ(1 + δ_h))(ω_a + ω_h)`, which bounds
/// every entry of `ã − I` given `|a − I| ≤ ω_a` and `|∇h| ≤ ω_h ≤ δ_h`.
pub fn flatten(
    a: &CoefficientField,
    h: &BoundaryGraph,
    q: &HalfSphereQuadrature,
    r_grid: &[f64],
) -> Result<CoefficientField, CoefficientError> {
    if a.dim() != h.dim() {
        return Err(CoefficientError::DimensionMismatch { field: a.dim(), graph: h.dim() });
    }
    let c = 1.0 + 2.0 * a.big_lambda() * (1.0 + h.modulus().delta());
    let omega = a.modulus().sum(h.modulus()).scaled(c);
    let field: Arc<dyn MatrixField> =
        Arc::new(FlattenedField { a: a.field().clone(), h: h.clone() });
    validate_field(field, &omega, q, r_grid)
}

/// Certifies a field built from a radial profile (GS or tilt), whose entries
/// of `a − I` are bounded by `|profile(r)|`. The modulus is the closed-form
/// majorant of the profile.
pub fn certify_profile_field(
    field: Arc<dyn MatrixField>,
    profile: &RadialProfile,
    q: &HalfSphereQuadrature,
    r_grid: &[f64],
    grid: &LogGrid,
) -> Result<CoefficientField, CoefficientError> {
    let (shape, kappa) = profile.modulus_profile().ok_or(CoefficientError::NoModulus)?;
    let omega = certify_shape(shape, kappa, grid)?;
    validate_field(field, &omega, q, r_grid)
}
