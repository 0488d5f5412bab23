//! Half-sphere quadrature, mean-value integrals, the projection `P` onto
//! `span{1, θ_1, …, θ_{n-1}}`, and the decomposition
//! `u = u0(r) + ṽ(r)·x̃ + w`.
//!
//! Everything here works with the *mean* over the upper half-sphere
//! `S^{n-1}_+ = {θ ∈ S^{n-1} : θ_n > 0}`, so a constant has mean one and
//! each `θ_m²` has mean `1/n`.

use std::f64::consts::PI;

use thiserror::Error;

use crate::numerics::gauss_legendre_on;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("dimension n = {n} is not supported (expected 2, 3 or 4)")]
    UnsupportedDimension { n: usize },
    #[error("quadrature order {order} is too small (need at least 4)")]
    InvalidOrder { order: usize },
    #[error("function evaluation failed at r = {r}, θ = {theta:?}")]
    EvaluationFailure { r: f64, theta: Vec<f64> },
    #[error("finite-difference step {step} is unstable: residuals {coarse:e} vs {fine:e}")]
    StepTooLarge { step: f64, coarse: f64, fine: f64 },
    #[error("radius grid must be positive and strictly increasing")]
    InvalidGrid,
}

/// Surface measure of the half-sphere `S^{n-1}_+`.
pub fn half_sphere_measure(n: usize) -> f64 {
    match n {
        2 => PI,
        3 => 2.0 * PI,
        4 => PI * PI,
        _ => {
            // |S^{n-1}| / 2 = π^{n/2} / Γ(n/2)
            PI.powf(n as f64 / 2.0) / gamma_half_integer(n)
        }
    }
}

/// Γ(n/2) for a positive integer n.
pub(crate) fn gamma_half_integer(n: usize) -> f64 {
    let mut g = if n % 2 == 0 { 1.0 } else { PI.sqrt() };
    let mut x = if n % 2 == 0 { 1.0 } else { 0.5 };
    while x < n as f64 / 2.0 {
        g *= x;
        x += 1.0;
    }
    g
}

/// A positive-weight quadrature rule on `S^{n-1}_+`.
#[derive(Debug, Clone)]
pub struct HalfSphereQuadrature {
    n: usize,
    order: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl HalfSphereQuadrature {
    pub fn dimension(&self) -> usize {
        self.n
    }

    /// Polynomial degree up to which the rule is exact.
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.n..(i + 1) * self.n]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `|S^{n-1}_+|`, which the weights sum to.
    pub fn measure(&self) -> f64 {
        half_sphere_measure(self.n)
    }

    /// Iterator over `(θ, weight)` pairs.
    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.nodes.chunks_exact(self.n).zip(self.weights.iter().copied())
    }

    /// Mean of a plain function of θ; the workhorse behind every moment.
    pub fn mean_of<F: FnMut(&[f64]) -> f64>(&self, mut f: F) -> f64 {
        let mut s = 0.0;
        for (th, w) in self.iter() {
            s += w * f(th);
        }
        s / self.measure()
    }
}

/// Builds a half-sphere rule exact for polynomials in θ of degree ≤ `order`.
///
/// * `n = 2`: Gauss–Legendre in the angle φ ∈ (0, π).
/// * `n = 3`: Gauss–Legendre in `z = θ_3 ∈ (0, 1)` times a trapezoid rule in
///   the azimuth.
/// * `n = 4`: Gauss–Legendre in the polar angle χ ∈ (0, π/2) (θ_4 = cos χ)
///   with the `sin²χ` Jacobian, times a full-sphere product rule for the
///   remaining three coordinates.
///
/// A trigonometric integrand on a partial period is not integrated exactly
/// by any finite Gauss rule, so the angular rules for `n = 2` and `n = 4`
/// carry enough extra nodes to reach round-off at degree `order`.
pub fn build_quadrature(n: usize, order: usize) -> Result<HalfSphereQuadrature, GeometryError> {
    if !(2..=4).contains(&n) {
        return Err(GeometryError::UnsupportedDimension { n });
    }
    if order < 4 {
        return Err(GeometryError::InvalidOrder { order });
    }
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    match n {
        2 => {
            let m = order + 14;
            let (phi, w) = gauss_legendre_on(m, 0.0, PI);
            for (p, wi) in phi.iter().zip(&w) {
                nodes.extend_from_slice(&[p.cos(), p.sin()]);
                weights.push(*wi);
            }
        }
        3 => {
            let (zs, wz) = gauss_legendre_on(order.div_ceil(2).max(1) + 1, 0.0, 1.0);
            let na = order + 1;
            let dphi = 2.0 * PI / na as f64;
            for (z, wzi) in zs.iter().zip(&wz) {
                let s = (1.0 - z * z).sqrt();
                for j in 0..na {
                    let p = (j as f64 + 0.5) * dphi;
                    nodes.extend_from_slice(&[s * p.cos(), s * p.sin(), *z]);
                    weights.push(wzi * dphi);
                }
            }
        }
        4 => {
            let m = (0.55 * order as f64).ceil() as usize + 12;
            let (chi, wc) = gauss_legendre_on(m, 0.0, PI / 2.0);
            let (zs, wz) = gauss_legendre_on(order.div_ceil(2) + 1, -1.0, 1.0);
            let na = order + 1;
            let dphi = 2.0 * PI / na as f64;
            for (c, wci) in chi.iter().zip(&wc) {
                let (sc, cc) = c.sin_cos();
                for (z, wzi) in zs.iter().zip(&wz) {
                    let s = (1.0 - z * z).sqrt();
                    for j in 0..na {
                        let p = (j as f64 + 0.5) * dphi;
                        nodes.extend_from_slice(&[
                            sc * s * p.cos(),
                            sc * s * p.sin(),
                            sc * z,
                            cc,
                        ]);
                        weights.push(wci * sc * sc * wzi * dphi);
                    }
                }
            }
        }
        _ => unreachable!(),
    }
    Ok(HalfSphereQuadrature { n, order, nodes, weights })
}

/// Smoothness class declared by a [`SphericalFunction`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Smoothness {
    Continuous,
    C1,
}

/// A real function sampled in polar form `(r, θ)`.
pub trait SphericalFunction: Sync {
    fn eval(&self, r: f64, theta: &[f64]) -> f64;

    fn smoothness(&self) -> Smoothness {
        Smoothness::Continuous
    }

    /// Cartesian gradient at `x = rθ`, when known in closed form.
    fn gradient(&self, _r: f64, _theta: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

impl<T: SphericalFunction + ?Sized> SphericalFunction for &T {
    fn eval(&self, r: f64, theta: &[f64]) -> f64 {
        (**self).eval(r, theta)
    }
    fn smoothness(&self) -> Smoothness {
        (**self).smoothness()
    }
    fn gradient(&self, r: f64, theta: &[f64]) -> Option<Vec<f64>> {
        (**self).gradient(r, theta)
    }
}

/// Wraps a closure `(r, θ) ↦ value`.
pub struct Polar<F>(pub F);

impl<F: Fn(f64, &[f64]) -> f64 + Sync> SphericalFunction for Polar<F> {
    fn eval(&self, r: f64, theta: &[f64]) -> f64 {
        (self.0)(r, theta)
    }
}

/// Wraps a closure of the Cartesian point `x`; declared C¹.
pub struct Cartesian<F>(pub F);

impl<F: Fn(&[f64]) -> f64 + Sync> SphericalFunction for Cartesian<F> {
    fn eval(&self, r: f64, theta: &[f64]) -> f64 {
        let mut x = [0.0; 8];
        for (xi, t) in x.iter_mut().zip(theta) {
            *xi = r * t;
        }
        (self.0)(&x[..theta.len()])
    }
    fn smoothness(&self) -> Smoothness {
        Smoothness::C1
    }
}

/// A Cartesian function together with its analytic gradient.
pub struct CartesianWithGradient<F, G>(pub F, pub G);

impl<F, G> SphericalFunction for CartesianWithGradient<F, G>
where
    F: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> Vec<f64> + Sync,
{
    fn eval(&self, r: f64, theta: &[f64]) -> f64 {
        let x: Vec<f64> = theta.iter().map(|t| r * t).collect();
        (self.0)(&x)
    }
    fn smoothness(&self) -> Smoothness {
        Smoothness::C1
    }
    fn gradient(&self, r: f64, theta: &[f64]) -> Option<Vec<f64>> {
        let x: Vec<f64> = theta.iter().map(|t| r * t).collect();
        Some((self.1)(&x))
    }
}

fn checked(v: f64, r: f64, theta: &[f64]) -> Result<f64, GeometryError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(GeometryError::EvaluationFailure { r, theta: theta.to_vec() })
    }
}

/// Mean of `f(r·)` over `S^{n-1}_+`.
pub fn mean_integral<F: SphericalFunction + ?Sized>(
    q: &HalfSphereQuadrature,
    f: &F,
    r: f64,
) -> Result<f64, GeometryError> {
    let mut s = 0.0;
    for (th, w) in q.iter() {
        s += w * checked(f.eval(r, th), r, th)?;
    }
    Ok(s / q.measure())
}

/// Mean and the first `n - 1` first moments `mean(θ_m f)` in one sweep.
pub fn mean_and_moments<F: SphericalFunction + ?Sized>(
    q: &HalfSphereQuadrature,
    f: &F,
    r: f64,
) -> Result<(f64, Vec<f64>), GeometryError> {
    let n = q.dimension();
    let mut m0 = 0.0;
    let mut m1 = vec![0.0; n - 1];
    for (th, w) in q.iter() {
        let v = w * checked(f.eval(r, th), r, th)?;
        m0 += v;
        for (k, mk) in m1.iter_mut().enumerate() {
            *mk += v * th[k];
        }
    }
    let s = q.measure();
    Ok((m0 / s, m1.into_iter().map(|v| v / s).collect()))
}

/// The projection `P g` at a fixed radius, as a function of θ.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub n: usize,
    /// `mean(g)`.
    pub mean: f64,
    /// `mean(θ_m g)` for `m = 1..n-1`.
    pub moments: Vec<f64>,
}

impl Projection {
    pub fn at(&self, theta: &[f64]) -> f64 {
        self.mean
            + self.n as f64
                * self.moments.iter().zip(theta).map(|(c, t)| c * t).sum::<f64>()
    }
}

impl SphericalFunction for Projection {
    fn eval(&self, _r: f64, theta: &[f64]) -> f64 {
        self.at(theta)
    }
    fn smoothness(&self) -> Smoothness {
        Smoothness::C1
    }
}

/// `P g(r, θ) = mean(g) + n Σ_{m<n} θ_m mean(θ_m g)`.
pub fn project_p<F: SphericalFunction + ?Sized>(
    q: &HalfSphereQuadrature,
    g: &F,
    r: f64,
) -> Result<Projection, GeometryError> {
    let (mean, moments) = mean_and_moments(q, g, r)?;
    Ok(Projection { n: q.dimension(), mean, moments })
}

/// Remainder `w = u − u0 − ṽ·x̃`, evaluated on demand at any radius.
pub struct Remainder<'a, U: ?Sized> {
    q: &'a HalfSphereQuadrature,
    u: &'a U,
}

impl<U: SphericalFunction + ?Sized> Remainder<'_, U> {
    /// `u0(r)` and `ṽ(r)` at an arbitrary radius.
    pub fn radial_parts(&self, r: f64) -> (f64, Vec<f64>) {
        let n = self.q.dimension() as f64;
        let (m0, m1) = mean_and_moments(self.q, self.u, r).unwrap_or((f64::NAN, vec![]));
        (m0, m1.into_iter().map(|m| n * m / r).collect())
    }
}

impl<U: SphericalFunction + ?Sized> SphericalFunction for Remainder<'_, U> {
    fn eval(&self, r: f64, theta: &[f64]) -> f64 {
        let (u0, v) = self.radial_parts(r);
        let lin: f64 = v.iter().zip(theta).map(|(vk, t)| vk * r * t).sum();
        self.u.eval(r, theta) - u0 - lin
    }
}

/// Decomposition data sampled on a radius grid.
pub struct Decomposition<'a, U: ?Sized> {
    pub r_grid: Vec<f64>,
    pub u0: Vec<f64>,
    /// `vtilde[j][k] = v_{k+1}(r_j)`.
    pub vtilde: Vec<Vec<f64>>,
    pub w: Remainder<'a, U>,
}

impl<U: SphericalFunction + ?Sized> Decomposition<'_, U> {
    /// Largest |mean(w)| or |mean(w θ_k)| over the grid; zero up to
    /// quadrature round-off by construction.
    pub fn max_moment_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for &r in &self.r_grid {
            if let Ok((m0, m1)) = mean_and_moments(self.w.q, &self.w, r) {
                worst = worst.max(m0.abs());
                for m in m1 {
                    worst = worst.max(m.abs());
                }
            } else {
                return f64::INFINITY;
            }
        }
        worst
    }

    /// Largest reconstruction error `|u − (u0 + r ṽ·θ̃ + w)|` at the nodes.
    pub fn max_reconstruction_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (j, &r) in self.r_grid.iter().enumerate() {
            for (th, _) in self.w.q.iter() {
                let lin: f64 = self.vtilde[j].iter().zip(th).map(|(v, t)| v * r * t).sum();
                let rebuilt = self.u0[j] + lin + self.w.eval(r, th);
                worst = worst.max((self.w.u.eval(r, th) - rebuilt).abs());
            }
        }
        worst
    }
}

/// Decomposes `u` on a strictly increasing positive radius grid.
pub fn decompose<'a, U: SphericalFunction + ?Sized>(
    q: &'a HalfSphereQuadrature,
    u: &'a U,
    r_grid: &[f64],
) -> Result<Decomposition<'a, U>, GeometryError> {
    if r_grid.is_empty()
        || r_grid[0] <= 0.0
        || r_grid.windows(2).any(|w| w[1] <= w[0])
    {
        return Err(GeometryError::InvalidGrid);
    }
    let n = q.dimension() as f64;
    let mut u0 = Vec::with_capacity(r_grid.len());
    let mut vt = Vec::with_capacity(r_grid.len());
    for &r in r_grid {
        let (m0, m1) = mean_and_moments(q, u, r)?;
        u0.push(m0);
        vt.push(m1.into_iter().map(|m| n * m / r).collect());
    }
    Ok(Decomposition { r_grid: r_grid.to_vec(), u0, vtilde: vt, w: Remainder { q, u } })
}

/// Dyadic radii `r_max·2^{-j}`, `j = levels-1, …, 0`, in increasing order.
pub fn dyadic_grid(r_max: f64, levels: usize) -> Vec<f64> {
    (0..levels).rev().map(|j| r_max * 0.5f64.powi(j as i32)).collect()
}

/// The three mean integrals whose vanishing the orthogonality lemma asserts.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthogonalityResiduals {
    /// `mean(θ_i ∂_i f)`, zero when `mean f = 0`.
    pub radial: f64,
    /// `mean(∂_j f)` for `j < n`, zero when `mean(θ_j f) = 0`.
    pub tangential: Vec<f64>,
    /// `mean(θ_j θ_i ∂_i f)` for `j < n`, zero under the same hypothesis.
    pub mixed: Vec<f64>,
}

impl OrthogonalityResiduals {
    /// `(radial, max_j |tangential_j|, max_j |mixed_j|)`.
    pub fn as_tuple(&self) -> (f64, f64, f64) {
        let m = |v: &[f64]| v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        (self.radial, m(&self.tangential), m(&self.mixed))
    }
}

fn fd_gradient<F: SphericalFunction + ?Sized>(f: &F, x: &[f64], h: f64) -> Vec<f64> {
    let n = x.len();
    let at = |y: &[f64]| {
        let r = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        let th: Vec<f64> = y.iter().map(|v| v / r).collect();
        f.eval(r, &th)
    };
    let central = |h: f64, i: usize| {
        let mut p = x.to_vec();
        let mut m = x.to_vec();
        p[i] += h;
        m[i] -= h;
        (at(&p) - at(&m)) / (2.0 * h)
    };
    // One Richardson step lifts the central difference to fourth order.
    (0..n).map(|i| (4.0 * central(0.5 * h, i) - central(h, i)) / 3.0).collect()
}

#[derive(Clone, Copy)]
enum GradientSource {
    Analytic,
    Differences(f64),
}

fn residuals_with<F: SphericalFunction + ?Sized>(
    q: &HalfSphereQuadrature,
    f: &F,
    r: f64,
    src: GradientSource,
) -> Result<OrthogonalityResiduals, GeometryError> {
    let n = q.dimension();
    let mut radial = 0.0;
    let mut tang = vec![0.0; n - 1];
    let mut mixed = vec![0.0; n - 1];
    for (th, w) in q.iter() {
        let grad = match src {
            GradientSource::Analytic => f
                .gradient(r, th)
                .ok_or_else(|| GeometryError::EvaluationFailure { r, theta: th.to_vec() })?,
            GradientSource::Differences(h) => {
                let x: Vec<f64> = th.iter().map(|t| r * t).collect();
                fd_gradient(f, &x, h)
            }
        };
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(GeometryError::EvaluationFailure { r, theta: th.to_vec() });
        }
        let radial_d: f64 = grad.iter().zip(th).map(|(g, t)| g * t).sum();
        radial += w * radial_d;
        for j in 0..n - 1 {
            tang[j] += w * grad[j];
            mixed[j] += w * th[j] * radial_d;
        }
    }
    let s = q.measure();
    Ok(OrthogonalityResiduals {
        radial: radial / s,
        tangential: tang.into_iter().map(|v| v / s).collect(),
        mixed: mixed.into_iter().map(|v| v / s).collect(),
    })
}

/// Evaluates the orthogonality-lemma residuals of `f` on the sphere of
/// radius `r`.
///
/// Uses the analytic gradient when `f` supplies one. Otherwise gradients
/// come from Richardson-extrapolated central differences with step `step`,
/// and the whole computation is repeated at `step / 2`: if the two disagree
/// by more than a factor of ten (on residuals that are not already at
/// round-off level) the step is rejected.
pub fn orthogonality_residuals<F: SphericalFunction + ?Sized>(
    q: &HalfSphereQuadrature,
    f: &F,
    r: f64,
    step: f64,
) -> Result<OrthogonalityResiduals, GeometryError> {
    if q.is_empty() {
        return Err(GeometryError::InvalidGrid);
    }
    if f.gradient(r, q.node(0)).is_some() {
        return residuals_with(q, f, r, GradientSource::Analytic);
    }
    let coarse = residuals_with(q, f, r, GradientSource::Differences(step))?;
    let fine = residuals_with(q, f, r, GradientSource::Differences(0.5 * step))?;
    // Gradient scale, so that "round-off level" is judged relative to f.
    let scale = q
        .iter()
        .map(|(th, w)| {
            let x: Vec<f64> = th.iter().map(|t| r * t).collect();
            w * fd_gradient(f, &x, 0.5 * step).iter().map(|g| g.abs()).sum::<f64>()
        })
        .sum::<f64>()
        / q.measure();
    let floor = 1e-9 * scale.max(1e-300) + 1e-300;
    let pairs = std::iter::once((coarse.radial, fine.radial))
        .chain(coarse.tangential.iter().copied().zip(fine.tangential.iter().copied()))
        .chain(coarse.mixed.iter().copied().zip(fine.mixed.iter().copied()));
    for (a, b) in pairs {
        let big = a.abs().max(b.abs());
        let small = a.abs().min(b.abs()).max(floor);
        let ratio_bad = big > 1e-6 * scale && big > 10.0 * small;
        let drift_bad = (a - b).abs() > 1e-3 * scale;
        if ratio_bad || drift_bad {
            return Err(GeometryError::StepTooLarge { step, coarse: a, fine: b });
        }
    }
    Ok(fine)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rule(n: usize, order: usize) -> HalfSphereQuadrature {
        build_quadrature(n, order).unwrap()
    }

    #[test]
    fn rejects_bad_parameters() {
        assert_eq!(build_quadrature(5, 8).unwrap_err(), GeometryError::UnsupportedDimension { n: 5 });
        assert_eq!(build_quadrature(3, 3).unwrap_err(), GeometryError::InvalidOrder { order: 3 });
    }

    #[test]
    fn nodes_are_unit_and_upper_and_weights_sum_to_measure() {
        for n in 2..=4 {
            for order in [4, 8, 16] {
                let q = rule(n, order);
                let total: f64 = q.weights().iter().sum();
                assert!((total / q.measure() - 1.0).abs() < 1e-12, "n={n} order={order}");
                for (th, w) in q.iter() {
                    let norm: f64 = th.iter().map(|t| t * t).sum::<f64>().sqrt();
                    assert!((norm - 1.0).abs() < 1e-14);
                    assert!(th[n - 1] > 0.0 && w > 0.0);
                }
            }
        }
    }

    #[test]
    fn c_n_identity_in_every_dimension() {
        for n in 2..=4 {
            let q = rule(n, 8);
            for m in 0..n {
                let v = q.mean_of(|t| t[m] * t[m]);
                assert!((v - 1.0 / n as f64).abs() < 1e-12, "n={n} m={m} v={v}");
            }
        }
    }

    #[test]
    fn circle_means() {
        let q = rule(2, 16);
        let sin = mean_integral(&q, &Polar(|_, t: &[f64]| t[1]), 1.0).unwrap();
        let cos = mean_integral(&q, &Polar(|_, t: &[f64]| t[0]), 3.0).unwrap();
        assert!((sin - 2.0 / PI).abs() < 1e-12);
        assert!(cos.abs() < 1e-12);
        let q3 = rule(3, 8);
        assert!((q3.mean_of(|t| t[2] * t[2]) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn projection_fixes_its_range() {
        let q = rule(3, 10);
        let one = project_p(&q, &Polar(|_, _: &[f64]| 1.0), 0.7).unwrap();
        assert!((one.mean - 1.0).abs() < 1e-14 && one.moments.iter().all(|m| m.abs() < 1e-14));
        for m in 0..2 {
            let p = project_p(&q, &Polar(move |_, t: &[f64]| t[m]), 0.7).unwrap();
            for (th, _) in q.iter() {
                assert!((p.at(th) - th[m]).abs() < 1e-12);
            }
        }
        let q2 = rule(2, 12);
        let p = project_p(&q2, &Polar(|_, t: &[f64]| t[0] * t[0]), 1.0).unwrap();
        for (th, _) in q2.iter() {
            assert!((p.at(th) - 0.5).abs() < 1e-10);
        }
    }

    #[test]
    fn decomposition_of_linear_functions() {
        let q = rule(2, 12);
        let grid = dyadic_grid(1.0, 6);
        let x2 = Cartesian(|x: &[f64]| x[1]);
        let d = decompose(&q, &x2, &grid).unwrap();
        for (j, &r) in grid.iter().enumerate() {
            assert!((d.u0[j] - 2.0 * r / PI).abs() < 1e-12);
            assert!(d.vtilde[j][0].abs() < 1e-12);
        }
        assert!(d.max_moment_residual() < 1e-12);
        assert!(d.max_reconstruction_error() < 1e-13);
        let x1 = Cartesian(|x: &[f64]| x[0]);
        let d = decompose(&q, &x1, &grid).unwrap();
        assert!(d.vtilde.iter().all(|v| (v[0] - 1.0).abs() < 1e-12));
        assert!(d.u0.iter().all(|u| u.abs() < 1e-12));
        assert!(decompose(&q, &x1, &[0.5, 0.25]).is_err());
    }

    #[test]
    fn lemma_residuals() {
        let q = rule(2, 16);
        let x2 = Cartesian(|x: &[f64]| x[1]);
        let grid = dyadic_grid(1.0, 4);
        let d = decompose(&q, &x2, &grid).unwrap();
        let (radial, _, _) = orthogonality_residuals(&q, &d.w, 0.5, 1e-3).unwrap().as_tuple();
        assert!(radial.abs() < 1e-6);
        let one = Polar(|_, _: &[f64]| 1.0);
        let (_, tang, _) = orthogonality_residuals(&q, &one, 0.5, 1e-3).unwrap().as_tuple();
        assert_eq!(tang, 0.0);
        let x1 = Cartesian(|x: &[f64]| x[0]);
        let (_, tang, _) = orthogonality_residuals(&q, &x1, 0.5, 1e-3).unwrap().as_tuple();
        assert!((tang - 1.0).abs() < 1e-8);
    }

    #[test]
    fn oversized_steps_are_rejected() {
        let q = rule(2, 16);
        let wild = Cartesian(|x: &[f64]| (40.0 * x[0]).sin() * x[1]);
        assert!(matches!(
            orthogonality_residuals(&q, &wild, 0.5, 0.2),
            Err(GeometryError::StepTooLarge { .. })
        ));
    }
}
