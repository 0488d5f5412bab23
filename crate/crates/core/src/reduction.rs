//! Spherical moments of a coefficient field, the reduced matrix `R(r)` and
//! its symmetric part, and the full `2(n−1)`-dimensional first-order system
//! for `V = (ṽ, V_2)` together with its normal form in `(φ, ψ)` variables.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::coefficients::{BoundaryGraph, EpsilonOfT, MatrixField};
use crate::geometry::HalfSphereQuadrature;
use crate::numerics::linalg::{condition_number, op_norm, sym_max_eigenvalue};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReductionError {
    #[error("coefficients evaluate to a non-finite value at r = {r:e}")]
    EvaluationFailure { r: f64 },
    #[error("dimension mismatch: field is {field}-dimensional, other input is {other}-dimensional")]
    DimensionMismatch { field: usize, other: usize },
    #[error("I + D(t) is numerically singular at t = {t} (condition number {cond:e})")]
    SingularMass { t: f64, cond: f64 },
    #[error("moment matrix A is not invertible at t = {t} (condition number {cond:e})")]
    NonInvertibleA { t: f64, cond: f64 },
}

/// Moments of `a` over the half-sphere of radius `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct SphericalMoments {
    pub r: f64,
    pub alpha: f64,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

/// Computes α, β̃, γ̃, A, B, C at radius `r`.
pub fn moments(
    a: &dyn MatrixField,
    q: &HalfSphereQuadrature,
    r: f64,
) -> Result<SphericalMoments, ReductionError> {
    let n = a.dim();
    if n != q.dimension() {
        return Err(ReductionError::DimensionMismatch { field: n, other: q.dimension() });
    }
    let m = n - 1;
    let mut alpha = 0.0;
    let mut beta = vec![0.0; m];
    let mut gamma = vec![0.0; m];
    let mut am = DMatrix::zeros(m, m);
    let mut bm = DMatrix::zeros(m, m);
    let mut cm = DMatrix::zeros(m, m);
    let mut buf = vec![0.0; n * n];
    let mut x = vec![0.0; n];
    for (th, w) in q.iter() {
        for k in 0..n {
            x[k] = r * th[k];
        }
        a.eval_into(&x, &mut buf);
        if buf.iter().any(|v| !v.is_finite()) {
            return Err(ReductionError::EvaluationFailure { r });
        }
        // q_ij = a_ij θ_i θ_j summed; aθ_j = Σ_i a_ij θ_i; (a θ)_ℓ = Σ_j a_ℓj θ_j.
        let mut quad = 0.0;
        for i in 0..n {
            for j in 0..n {
                quad += buf[i * n + j] * th[i] * th[j];
            }
        }
        alpha += w * quad;
        for k in 0..m {
            beta[k] += w * quad * th[k];
            let mut col = 0.0;
            for i in 0..n {
                col += buf[i * n + k] * th[i];
            }
            gamma[k] += w * col;
        }
        for l in 0..m {
            let mut row = 0.0;
            for j in 0..n {
                row += buf[l * n + j] * th[j];
            }
            for k in 0..m {
                am[(l, k)] += w * quad * th[l] * th[k];
                bm[(l, k)] += w * row * th[k];
                cm[(l, k)] += w * buf[l * n + k];
            }
        }
    }
    let s = q.measure();
    Ok(SphericalMoments {
        r,
        alpha: alpha / s,
        beta: beta.into_iter().map(|v| v / s).collect(),
        gamma: gamma.into_iter().map(|v| v / s).collect(),
        a: am / s,
        b: bm / s,
        c: cm / s,
    })
}

/// Which formula produced a reduced system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Halfspace,
    Curved,
    CurvedLaplace,
    Synthetic,
}

type MatrixOfR = Arc<dyn Fn(f64) -> Result<DMatrix<f64>, ReductionError> + Send + Sync>;

/// `R(r)` on a grid, with `S = −(R + Rᵗ)/2` and its top eigenvalue `μ`.
///
/// The system also keeps an evaluator for `R` at arbitrary radii, which the
/// trajectory integrator needs between grid points.
#[derive(Clone)]
pub struct ReducedSystem {
    pub n: usize,
    pub r_grid: Vec<f64>,
    pub r: Vec<DMatrix<f64>>,
    pub s: Vec<DMatrix<f64>>,
    pub mu: Vec<f64>,
    pub provenance: Provenance,
    evaluator: MatrixOfR,
}

impl fmt::Debug for ReducedSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ReducedSystem")
            .field("n", &self.n)
            .field("provenance", &self.provenance)
            .field("points", &self.r_grid.len())
            .finish()
    }
}

impl ReducedSystem {
    /// `R(ρ)` at any radius.
    pub fn r_at(&self, rho: f64) -> Result<DMatrix<f64>, ReductionError> {
        (self.evaluator)(rho)
    }

    /// A system defined by an explicit matrix function of the radius.
    pub fn synthetic(
        n: usize,
        r_grid: &[f64],
        f: impl Fn(f64) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> ReducedSystem {
        let f = Arc::new(f);
        let g = f.clone();
        let eval: MatrixOfR = Arc::new(move |r| Ok(g(r)));
        let r: Vec<_> = r_grid.iter().map(|&x| f(x)).collect();
        mu_of(ReducedSystem {
            n,
            r_grid: r_grid.to_vec(),
            r,
            s: vec![],
            mu: vec![],
            provenance: Provenance::Synthetic,
            evaluator: eval,
        })
    }

    /// Largest `‖R(r)‖` on the grid.
    pub fn max_norm(&self) -> f64 {
        self.r.iter().map(op_norm).fold(0.0, f64::max)
    }
}

/// `R_ℓk = mean(a_ℓk − n Σ_j a_ℓj θ_j θ_k)` at one radius.
pub fn r_halfspace_at(
    a: &dyn MatrixField,
    q: &HalfSphereQuadrature,
    r: f64,
) -> Result<DMatrix<f64>, ReductionError> {
    let n = a.dim();
    let m = n - 1;
    let nf = n as f64;
    let mut out = DMatrix::zeros(m, m);
    let mut buf = vec![0.0; n * n];
    let mut x = vec![0.0; n];
    for (th, w) in q.iter() {
        for k in 0..n {
            x[k] = r * th[k];
        }
        a.eval_into(&x, &mut buf);
        for l in 0..m {
            let row: f64 = (0..n).map(|j| buf[l * n + j] * th[j]).sum();
            for k in 0..m {
                out[(l, k)] += w * (buf[l * n + k] - nf * row * th[k]);
            }
        }
    }
    out /= q.measure();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(ReductionError::EvaluationFailure { r });
    }
    Ok(out)
}

/// Curved-boundary `R` with `a` evaluated at `x = (ỹ, y_n + h(ỹ))`:
/// `mean(a_ℓk − n Σ_j a_ℓj θ_j θ_k + n Σ_{j<n} a_ℓj ∂_j h θ_n θ_k)`.
pub fn r_curved_at(
    a: &dyn MatrixField,
    h: &BoundaryGraph,
    q: &HalfSphereQuadrature,
    r: f64,
) -> Result<DMatrix<f64>, ReductionError> {
    let n = a.dim();
    let m = n - 1;
    let nf = n as f64;
    let mut out = DMatrix::zeros(m, m);
    let mut buf = vec![0.0; n * n];
    let mut x = vec![0.0; n];
    let mut dh = vec![0.0; m];
    for (th, w) in q.iter() {
        for k in 0..n {
            x[k] = r * th[k];
        }
        h.grad_into(&x[..m], &mut dh);
        x[m] += h.h(&x[..m]);
        a.eval_into(&x, &mut buf);
        for l in 0..m {
            let row: f64 = (0..n).map(|j| buf[l * n + j] * th[j]).sum();
            let tilt: f64 = (0..m).map(|j| buf[l * n + j] * dh[j]).sum();
            for k in 0..m {
                out[(l, k)] += w * (buf[l * n + k] - nf * row * th[k] + nf * tilt * th[m] * th[k]);
            }
        }
    }
    out /= q.measure();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(ReductionError::EvaluationFailure { r });
    }
    Ok(out)
}

/// The Laplacian over a curved boundary: `R_ℓk = n·mean(∂_ℓ h θ_n θ_k)`.
pub fn r_curved_laplace_at(h: &BoundaryGraph, q: &HalfSphereQuadrature, r: f64) -> DMatrix<f64> {
    let n = q.dimension();
    let m = n - 1;
    let mut out = DMatrix::zeros(m, m);
    let mut dh = vec![0.0; m];
    let mut xt = vec![0.0; m];
    for (th, w) in q.iter() {
        for k in 0..m {
            xt[k] = r * th[k];
        }
        h.grad_into(&xt, &mut dh);
        for l in 0..m {
            for k in 0..m {
                out[(l, k)] += w * dh[l] * th[m] * th[k];
            }
        }
    }
    out * (n as f64 / q.measure())
}

/// The planar formula written out in the angle:
/// `R = (1/π)∫₀^π (a11 − 2a11 cos²φ − 2a12 cosφ sinφ) dφ`.
pub fn r_dim2_direct(a: &dyn MatrixField, q: &HalfSphereQuadrature, r: f64) -> f64 {
    let mut s = 0.0;
    let mut buf = [0.0; 4];
    for (th, w) in q.iter() {
        let (c, si) = (th[0], th[1]);
        a.eval_into(&[r * c, r * si], &mut buf);
        s += w * (buf[0] - 2.0 * buf[0] * c * c - 2.0 * buf[1] * c * si);
    }
    s / std::f64::consts::PI
}

fn sample(
    n: usize,
    r_grid: &[f64],
    provenance: Provenance,
    evaluator: MatrixOfR,
) -> Result<ReducedSystem, ReductionError> {
    let r = r_grid.iter().map(|&x| evaluator(x)).collect::<Result<Vec<_>, _>>()?;
    Ok(mu_of(ReducedSystem {
        n,
        r_grid: r_grid.to_vec(),
        r,
        s: vec![],
        mu: vec![],
        provenance,
        evaluator,
    }))
}

/// `R(r)` for the half-space problem on a radius grid.
pub fn compute_r_halfspace(
    a: Arc<dyn MatrixField>,
    q: &HalfSphereQuadrature,
    r_grid: &[f64],
) -> Result<ReducedSystem, ReductionError> {
    let n = a.dim();
    if n != q.dimension() {
        return Err(ReductionError::DimensionMismatch { field: n, other: q.dimension() });
    }
    let q = q.clone();
    let eval: MatrixOfR = Arc::new(move |r| r_halfspace_at(a.as_ref(), &q, r));
    sample(n, r_grid, Provenance::Halfspace, eval)
}

/// `R(r)` for a curved boundary. With the identity field the dedicated
/// Laplacian formula is used and the provenance says so.
pub fn compute_r_curved(
    a: Arc<dyn MatrixField>,
    h: &BoundaryGraph,
    q: &HalfSphereQuadrature,
    r_grid: &[f64],
    a_is_identity: bool,
) -> Result<ReducedSystem, ReductionError> {
    let n = a.dim();
    if n != h.dim() {
        return Err(ReductionError::DimensionMismatch { field: n, other: h.dim() });
    }
    if n != q.dimension() {
        return Err(ReductionError::DimensionMismatch { field: n, other: q.dimension() });
    }
    let q = q.clone();
    let h = h.clone();
    if a_is_identity {
        let eval: MatrixOfR = Arc::new(move |r| Ok(r_curved_laplace_at(&h, &q, r)));
        sample(n, r_grid, Provenance::CurvedLaplace, eval)
    } else {
        let eval: MatrixOfR = Arc::new(move |r| r_curved_at(a.as_ref(), &h, &q, r));
        sample(n, r_grid, Provenance::Curved, eval)
    }
}

/// Fills `S = −(R + Rᵗ)/2` and `μ = λ_max(S)`.
pub fn mu_of(mut sys: ReducedSystem) -> ReducedSystem {
    sys.s = sys.r.iter().map(|r| -(r + r.transpose()) * 0.5).collect();
    sys.mu = sys.s.iter().map(sym_max_eigenvalue).collect();
    sys
}

/// `M_∞`, with eigenvalues 0 and −n.
pub fn m_infinity(n: usize) -> DMatrix<f64> {
    let m = n - 1;
    let nf = n as f64;
    let mut out = DMatrix::zeros(2 * m, 2 * m);
    for i in 0..m {
        out[(i, i)] = -1.0;
        out[(i, m + i)] = nf;
        out[(m + i, i)] = (nf - 1.0) / nf;
        out[(m + i, m + i)] = 1.0 - nf;
    }
    out
}

/// The diagonalizer `J` of `M_∞` and its closed-form inverse.
pub fn diagonalizer(n: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let m = n - 1;
    let nf = n as f64;
    let mut j = DMatrix::zeros(2 * m, 2 * m);
    let mut ji = DMatrix::zeros(2 * m, 2 * m);
    for i in 0..m {
        j[(i, i)] = nf;
        j[(i, m + i)] = nf;
        j[(m + i, i)] = 1.0;
        j[(m + i, m + i)] = 1.0 - nf;
        ji[(i, i)] = (nf - 1.0) / (nf * nf);
        ji[(i, m + i)] = 1.0 / nf;
        ji[(m + i, i)] = 1.0 / (nf * nf);
        ji[(m + i, m + i)] = -1.0 / nf;
    }
    (j, ji)
}

/// Everything assembled at one time `t` (radius `e^{−t}`).
#[derive(Debug, Clone)]
pub struct AssembledPoint {
    pub t: f64,
    pub moments: SphericalMoments,
    /// Exact `M(t) = (I + D)^{−1} K`.
    pub m: DMatrix<f64>,
    pub s1: DMatrix<f64>,
    /// `M − M_∞ − S_1`.
    pub s2: DMatrix<f64>,
    /// `J^{−1}(M − M_∞)J`, the perturbation in `(φ, ψ)` variables.
    pub calr: DMatrix<f64>,
    /// `C − nB`, which equals the half-space `R` exactly.
    pub r_reduced: DMatrix<f64>,
}

impl AssembledPoint {
    /// Block `R_k` (k = 1..4) of the `(φ, ψ)` perturbation.
    pub fn block(&self, k: usize) -> DMatrix<f64> {
        let m = self.calr.nrows() / 2;
        let (i, j) = match k {
            1 => (0, 0),
            2 => (0, m),
            3 => (m, 0),
            4 => (m, m),
            _ => panic!("block index must be 1..=4"),
        };
        self.calr.view((i, j), (m, m)).into_owned()
    }
}

/// Assembles the exact system at a single `t`.
pub fn assemble_at(
    a: &dyn MatrixField,
    q: &HalfSphereQuadrature,
    t: f64,
) -> Result<AssembledPoint, ReductionError> {
    let n = a.dim();
    let m = n - 1;
    let nf = n as f64;
    let mo = moments(a, q, (-t).exp())?;
    let cond_a = condition_number(&mo.a);
    let ainv = match mo.a.clone().try_inverse() {
        Some(inv) if cond_a < 1e12 => inv,
        _ => return Err(ReductionError::NonInvertibleA { t, cond: cond_a }),
    };
    let beta = nalgebra::DVector::from_vec(mo.beta.clone());
    let gamma = nalgebra::DVector::from_vec(mo.gamma.clone());
    let id = DMatrix::<f64>::identity(m, m);
    let ab = &ainv * &beta;
    let bab = &mo.b * &ainv;

    // (I + D) V̇ + K V = 0, read off from the two block rows.
    let mut d = DMatrix::zeros(2 * m, 2 * m);
    let mut k = DMatrix::zeros(2 * m, 2 * m);
    let d11 = -(&ab * beta.transpose()) / mo.alpha;
    let d21 = (&gamma - &beta * nf - &ab) * beta.transpose() / mo.alpha;
    let k11 = -(&ainv * &mo.b) + &ab * gamma.transpose() / mo.alpha;
    let k21 = &mo.c - &bab * &mo.b + (&beta * nf + &ab - &gamma) * gamma.transpose() / mo.alpha;
    let k22 = &bab - &id * nf;
    d.view_mut((0, 0), (m, m)).copy_from(&d11);
    d.view_mut((m, 0), (m, m)).copy_from(&d21);
    k.view_mut((0, 0), (m, m)).copy_from(&k11);
    k.view_mut((0, m), (m, m)).copy_from(&ainv);
    k.view_mut((m, 0), (m, m)).copy_from(&k21);
    k.view_mut((m, m), (m, m)).copy_from(&k22);
    let mass = DMatrix::<f64>::identity(2 * m, 2 * m) + &d;
    let cond = condition_number(&mass);
    if !(cond < 1e12) {
        return Err(ReductionError::SingularMass { t, cond });
    }
    let mmat = mass.lu().solve(&k).ok_or(ReductionError::SingularMass { t, cond })?;

    let minf = m_infinity(n);
    let mut s1 = DMatrix::zeros(2 * m, 2 * m);
    s1.view_mut((0, 0), (m, m)).copy_from(&(&id - &ainv * &mo.b));
    s1.view_mut((0, m), (m, m)).copy_from(&(&ainv - &id * nf));
    s1.view_mut((m, 0), (m, m))
        .copy_from(&(&mo.c - &bab * &mo.b + &id * ((1.0 - nf) / nf)));
    s1.view_mut((m, m), (m, m)).copy_from(&(&bab - &id));
    let s2 = &mmat - &minf - &s1;
    let (j, ji) = diagonalizer(n);
    let calr = &ji * (&mmat - &minf) * &j;
    let r_reduced = &mo.c - &mo.b * nf;
    Ok(AssembledPoint { t, moments: mo, m: mmat, s1, s2, calr, r_reduced })
}

/// The assembled system on a time grid, with the fitted constants of the
/// `ε²` bounds.
#[derive(Debug, Clone)]
pub struct AssembledSystem {
    pub n: usize,
    pub t_grid: Vec<f64>,
    pub points: Vec<AssembledPoint>,
    pub m_inf: DMatrix<f64>,
    pub j: DMatrix<f64>,
    pub j_inv: DMatrix<f64>,
    pub eps: Vec<f64>,
    /// `max ‖S_2(t)‖ / ε²(t)`.
    pub c_m: f64,
    /// `max ‖R_1(t) − R(t)‖ / ε²(t)`.
    pub c_r1: f64,
    /// `max ‖S_1(t)‖ / ε(t)`.
    pub c_s1: f64,
}

impl AssembledSystem {
    /// A system whose perturbation vanishes identically; useful as a
    /// baseline for forced runs.
    pub fn unperturbed(n: usize, t_grid: &[f64]) -> AssembledSystem {
        let m = n - 1;
        let zero = DMatrix::zeros(2 * m, 2 * m);
        let id = DMatrix::identity(m, m);
        let nf = n as f64;
        let mo = SphericalMoments {
            r: 1.0,
            alpha: 1.0,
            beta: vec![0.0; m],
            gamma: vec![0.0; m],
            a: &id / nf,
            b: &id / nf,
            c: id.clone(),
        };
        let pts = t_grid
            .iter()
            .map(|&t| AssembledPoint {
                t,
                moments: SphericalMoments { r: (-t).exp(), ..mo.clone() },
                m: m_infinity(n),
                s1: zero.clone(),
                s2: zero.clone(),
                calr: zero.clone(),
                r_reduced: DMatrix::zeros(m, m),
            })
            .collect();
        let (j, j_inv) = diagonalizer(n);
        AssembledSystem {
            n,
            t_grid: t_grid.to_vec(),
            points: pts,
            m_inf: m_infinity(n),
            j,
            j_inv,
            eps: vec![0.0; t_grid.len()],
            c_m: 0.0,
            c_r1: 0.0,
            c_s1: 0.0,
        }
    }
}

/// Assembles `M(t)`, `S_1`, `S_2` and the `(φ, ψ)` blocks on `t_grid`.
pub fn assemble_system(
    a: &dyn MatrixField,
    q: &HalfSphereQuadrature,
    t_grid: &[f64],
    eps: &EpsilonOfT,
) -> Result<AssembledSystem, ReductionError> {
    let n = a.dim();
    let points =
        t_grid.iter().map(|&t| assemble_at(a, q, t)).collect::<Result<Vec<_>, _>>()?;
    let eps_v: Vec<f64> = t_grid.iter().map(|&t| eps.eval(t)).collect();
    let ratio = |num: f64, e: f64, p: i32| if e > 0.0 { num / e.powi(p) } else { 0.0 };
    let (mut c_m, mut c_r1, mut c_s1) = (0.0f64, 0.0f64, 0.0f64);
    for (pt, &e) in points.iter().zip(&eps_v) {
        c_m = c_m.max(ratio(op_norm(&pt.s2), e, 2));
        c_r1 = c_r1.max(ratio(op_norm(&(pt.block(1) - &pt.r_reduced)), e, 2));
        c_s1 = c_s1.max(ratio(op_norm(&pt.s1), e, 1));
    }
    let (j, j_inv) = diagonalizer(n);
    Ok(AssembledSystem {
        n,
        t_grid: t_grid.to_vec(),
        points,
        m_inf: m_infinity(n),
        j,
        j_inv,
        eps: eps_v,
        c_m,
        c_r1,
        c_s1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{GraphProfile, GsField, IdentityField, LogGrid, RadialProfile};
    use crate::geometry::{build_quadrature, dyadic_grid};

    #[test]
    fn identity_moments() {
        let q = build_quadrature(3, 8).unwrap();
        let mo = moments(&IdentityField { n: 3 }, &q, 0.5).unwrap();
        assert!((mo.alpha - 1.0).abs() < 1e-12);
        assert!(mo.beta.iter().chain(&mo.gamma).all(|v| v.abs() < 1e-12));
        let i2 = DMatrix::<f64>::identity(2, 2);
        assert!((&mo.a - &i2 / 3.0).amax() < 1e-12);
        assert!((&mo.b - &i2 / 3.0).amax() < 1e-12);
        assert!((&mo.c - &i2).amax() < 1e-12);
    }

    #[test]
    fn constant_gs_moments() {
        let q = build_quadrature(2, 12).unwrap();
        let f = GsField { n: 2, g: RadialProfile::Constant { c: 0.1 } };
        let mo = moments(&f, &q, 0.3).unwrap();
        assert!((mo.alpha - 1.1).abs() < 1e-12);
        assert!((mo.c[(0, 0)] - 1.05).abs() < 1e-12);
        assert!((mo.b[(0, 0)] - mo.a[(0, 0)]).abs() < 1e-12);
    }

    #[test]
    fn m_infinity_is_diagonalized() {
        for n in 2..=4 {
            let (j, ji) = diagonalizer(n);
            assert!((&ji * &j - DMatrix::<f64>::identity(2 * n - 2, 2 * n - 2)).amax() < 1e-14);
            let d = &ji * m_infinity(n) * &j;
            for i in 0..2 * n - 2 {
                for k in 0..2 * n - 2 {
                    let want = if i == k && i >= n - 1 { -(n as f64) } else { 0.0 };
                    assert!((d[(i, k)] - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn identity_assembles_to_m_infinity() {
        let q = build_quadrature(3, 8).unwrap();
        let p = assemble_at(&IdentityField { n: 3 }, &q, 2.0).unwrap();
        assert!((&p.m - m_infinity(3)).amax() < 1e-12);
        assert!(p.calr.amax() < 1e-12);
    }

    #[test]
    fn gs_reduced_matrix_closed_forms() {
        let q = build_quadrature(2, 16).unwrap();
        let g = RadialProfile::Constant { c: 0.1 };
        let pt = assemble_at(&GsField { n: 2, g }, &q, 1.0).unwrap();
        // R_1 = −g/(2(1+g)) exactly for a GS field in the plane.
        assert!((pt.block(1)[(0, 0)] + 0.1 / 2.2).abs() < 1e-12);
        assert!((pt.r_reduced[(0, 0)] + 0.05).abs() < 1e-12);
        assert!(pt.s2.amax() < 1e-12);
    }

    #[test]
    fn curved_laplacian_parabola() {
        let q = build_quadrature(2, 16).unwrap();
        let h = BoundaryGraph::new(2, GraphProfile::Power { c: 1.0, gamma: 2.0 }, &LogGrid::default())
            .unwrap();
        let rs = dyadic_grid(0.5, 10);
        let sys = compute_r_curved(Arc::new(IdentityField { n: 2 }), &h, &q, &rs, true).unwrap();
        for (r, m) in rs.iter().zip(&sys.r) {
            assert!((m[(0, 0)] - 8.0 * r / (3.0 * std::f64::consts::PI)).abs() < 1e-12);
        }
        let general = compute_r_curved(Arc::new(IdentityField { n: 2 }), &h, &q, &rs, false).unwrap();
        for (a, b) in sys.r.iter().zip(&general.r) {
            assert!((a - b).amax() < 1e-12);
        }
    }

    #[test]
    fn mu_of_antisymmetric_matrix_vanishes() {
        let sys = ReducedSystem::synthetic(3, &[0.1, 0.2], |_| {
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])
        });
        assert!(sys.mu.iter().all(|m| m.abs() < 1e-15));
        let scalar = ReducedSystem::synthetic(2, &[0.1], |_| DMatrix::from_element(1, 1, -0.05));
        assert!((scalar.mu[0] - 0.05).abs() < 1e-15);
    }
}
