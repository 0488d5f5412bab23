//! The half-space Neumann function `N(x, y) = Γ(x − y) + Γ(x − y*)`, its
//! expansion in even spherical harmonics, the projection `PN` onto
//! `span{1, θ_1, …, θ_{n−1}}` and the remainder `N^⊥`, annulus `L^p`
//! means, the potential `w` generated by `N^⊥`, a numerical check of the
//! annulus estimate for `w`, and the uniqueness-exponent predicate.
//!
//! Normalization: the basis `φ̃_{k,m}` is orthonormal for the mean inner
//! product on `S^{n−1}_+`. For an even function that mean equals the
//! full-sphere mean, so `N = Σ_k (ρ_<^k / ρ_>^{n−2+k}) Σ_m A_{k,m}
//! φ̃_{k,m}(x̂) φ̃_{k,m}(ŷ)` with `A_{k,m} = 2 a0 C_k^λ(1) / dim H(k)`.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;
use thiserror::Error;

use crate::geometry::{
    build_quadrature, half_sphere_measure, project_p, GeometryError, HalfSphereQuadrature, Polar,
};
use crate::numerics::{gauss_legendre_on, integrate};

/// Largest dimension handled by the fixed-size kernel arrays.
const MAX_N: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("the fundamental solution is singular at the origin")]
    OriginSingularity,
    #[error("x and y coincide")]
    CoincidentPoints,
    #[error("|x| = |y|: neither expansion applies")]
    RadiiEqual,
    #[error("series truncated at degree {k_max} leaves a tail bound of {bound:e} relative (radius ratio {ratio})")]
    TruncationInsufficient { ratio: f64, k_max: usize, bound: f64 },
    #[error("kernel operations support 3 ≤ n ≤ 4, got n = {n}")]
    UnsupportedDimension { n: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("quadrature failure: {0}")]
    QuadratureFailure(String),
    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),
    #[error("evaluation failure at x = {x:?}")]
    EvaluationFailure { x: Vec<f64> },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

fn poisoned() -> KernelError {
    KernelError::QuadratureFailure("kernel basis cache is poisoned".into())
}

fn check_dim(n: usize) -> Result<(), KernelError> {
    if (3..=MAX_N).contains(&n) {
        Ok(())
    } else {
        Err(KernelError::UnsupportedDimension { n })
    }
}

/// `|S^{n−1}|`.
pub fn sphere_measure(n: usize) -> f64 {
    2.0 * half_sphere_measure(n)
}

/// `a0 = 1 / ((2 − n) ω_n)`.
pub fn a0(n: usize) -> f64 {
    1.0 / ((2.0 - n as f64) * sphere_measure(n))
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `Γ(x) = a0 |x|^{2−n}`.
pub fn gamma(n: usize, x: &[f64]) -> Result<f64, KernelError> {
    check_dim(n)?;
    let r = norm(&x[..n]);
    if r == 0.0 {
        return Err(KernelError::OriginSingularity);
    }
    Ok(a0(n) * r.powi(2 - n as i32))
}

fn reflect(y: &[f64]) -> Vec<f64> {
    let mut s = y.to_vec();
    let last = s.len() - 1;
    s[last] = -s[last];
    s
}

fn diff(x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(a, b)| a - b).collect()
}

/// `N(x, y) = Γ(x − y) + Γ(x − y*)` with `y* = (ỹ, −y_n)`.
pub fn neumann_n(n: usize, x: &[f64], y: &[f64]) -> Result<f64, KernelError> {
    check_dim(n)?;
    let d = diff(x, y);
    if norm(&d) == 0.0 {
        return Err(KernelError::CoincidentPoints);
    }
    Ok(gamma(n, &d)? + gamma(n, &diff(x, &reflect(y)))?)
}

/// `∇_x N(x, y)`.
pub fn neumann_grad_x(n: usize, x: &[f64], y: &[f64]) -> Result<Vec<f64>, KernelError> {
    check_dim(n)?;
    let c = a0(n) * (2.0 - n as f64);
    let mut out = vec![0.0; n];
    for z in [diff(x, y), diff(x, &reflect(y))] {
        let r = norm(&z);
        if r == 0.0 {
            return Err(KernelError::CoincidentPoints);
        }
        let s = c * r.powi(-(n as i32));
        for i in 0..n {
            out[i] += s * z[i];
        }
    }
    Ok(out)
}

/// The planar Neumann function built from `Γ(x) = log|x| / (2π)`.
pub fn neumann_n_2d(x: &[f64], y: &[f64]) -> Result<f64, KernelError> {
    let d1 = ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt();
    let d2 = ((x[0] - y[0]).powi(2) + (x[1] + y[1]).powi(2)).sqrt();
    if d1 == 0.0 {
        return Err(KernelError::CoincidentPoints);
    }
    Ok((d1.ln() + d2.ln()) / (2.0 * std::f64::consts::PI))
}

/// Gegenbauer polynomials `C_0^λ(t), …, C_K^λ(t)`.
pub fn gegenbauer_all(lambda: f64, k_max: usize, t: f64) -> Vec<f64> {
    let mut c = Vec::with_capacity(k_max + 1);
    c.push(1.0);
    if k_max >= 1 {
        c.push(2.0 * lambda * t);
    }
    for k in 2..=k_max {
        let kf = k as f64;
        let v = (2.0 * t * (kf + lambda - 1.0) * c[k - 1] - (kf + 2.0 * lambda - 2.0) * c[k - 2]) / kf;
        c.push(v);
    }
    c
}

/// `C_k^λ(t)` by the three-term recurrence, without allocating.
pub fn gegenbauer(lambda: f64, k: usize, t: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, 2.0 * lambda * t);
    if k == 0 {
        return prev;
    }
    for j in 2..=k {
        let jf = j as f64;
        let next = (2.0 * t * (jf + lambda - 1.0) * cur - (jf + 2.0 * lambda - 2.0) * prev) / jf;
        prev = cur;
        cur = next;
    }
    cur
}

fn binomial(n: i64, k: i64) -> f64 {
    if k < 0 || n < k || n < 0 {
        return 0.0;
    }
    let mut v = 1.0;
    for i in 0..k {
        v = v * (n - i) as f64 / (i + 1) as f64;
    }
    v
}

/// Dimension of all degree-`k` spherical harmonics on `S^{n−1}`.
pub fn harmonic_dimension(n: usize, k: usize) -> usize {
    let (n, k) = (n as i64, k as i64);
    (binomial(k + n - 1, n - 1) - binomial(k + n - 3, n - 1)).round() as usize
}

/// `Ñ(k) = dim H_e(k)`: harmonic polynomials even in `x_n`.
pub fn even_dimension(n: usize, k: usize) -> usize {
    binomial((k + n - 2) as i64, (n - 2) as i64).round() as usize
}

/// Homogeneous polynomial in `n ≤ 4` variables.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Poly {
    pub terms: Vec<([u8; MAX_N], f64)>,
}

impl Poly {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut pows = [[1.0f64; 32]; MAX_N];
        let deg = self.terms.iter().map(|(e, _)| *e.iter().max().unwrap_or(&0)).max().unwrap_or(0);
        for (i, &xi) in x.iter().enumerate().take(MAX_N) {
            for e in 1..=deg as usize {
                pows[i][e] = pows[i][e - 1] * xi;
            }
        }
        self.terms
            .iter()
            .map(|(e, c)| {
                let mut v = *c;
                for i in 0..x.len().min(MAX_N) {
                    v *= pows[i][e[i] as usize];
                }
                v
            })
            .sum()
    }

    /// `Δ` of the polynomial in all `n` variables.
    pub fn laplacian(&self, n: usize) -> Poly {
        let mut acc: BTreeMap<[u8; MAX_N], f64> = BTreeMap::new();
        for (e, c) in &self.terms {
            for i in 0..n {
                if e[i] >= 2 {
                    let mut f = *e;
                    f[i] -= 2;
                    *acc.entry(f).or_default() += c * (e[i] as f64) * (e[i] as f64 - 1.0);
                }
            }
        }
        Poly { terms: acc.into_iter().filter(|(_, c)| *c != 0.0).collect() }
    }
}

/// Exponent vectors of the degree-`k` monomials in the first `m` variables.
fn monomials(m: usize, k: usize) -> Vec<[u8; MAX_N]> {
    let mut out = Vec::new();
    let mut cur = [0u8; MAX_N];
    fn rec(i: usize, m: usize, left: usize, cur: &mut [u8; MAX_N], out: &mut Vec<[u8; MAX_N]>) {
        if i == m - 1 {
            cur[i] = left as u8;
            out.push(*cur);
            return;
        }
        for e in (0..=left).rev() {
            cur[i] = e as u8;
            rec(i + 1, m, left - e, cur, out);
        }
        cur[i] = 0;
    }
    rec(0, m, k, &mut cur, &mut out);
    out
}

/// The harmonic polynomial `Σ_j x_n^{2j} p_{2j}(x̃)` with `p_0 = x̃^β`.
pub fn harmonic_extension(n: usize, beta: [u8; MAX_N]) -> Poly {
    let m = n - 1;
    let mut p: BTreeMap<[u8; MAX_N], f64> = BTreeMap::from([(beta, 1.0)]);
    let mut out: BTreeMap<[u8; MAX_N], f64> = BTreeMap::new();
    let mut j = 0usize;
    while !p.is_empty() {
        for (e, c) in &p {
            let mut f = *e;
            f[m] = (2 * j) as u8;
            *out.entry(f).or_default() += c;
        }
        let lap = Poly { terms: p.into_iter().collect() }.laplacian(m);
        let scale = -1.0 / (((2 * j + 2) * (2 * j + 1)) as f64);
        p = lap.terms.into_iter().map(|(e, c)| (e, c * scale)).collect();
        j += 1;
    }
    Poly { terms: out.into_iter().filter(|(_, c)| *c != 0.0).collect() }
}

#[derive(Debug, Clone)]
struct DegreeBasis {
    /// `|x|^k φ̃_{k,m}(x̂)` as homogeneous polynomials.
    polys: Vec<Poly>,
    /// `A_{k,m}` computed by projection.
    coeffs: Vec<f64>,
    /// Closed-form `2 a0 C_k^λ(1) / dim H(k)`.
    zonal: f64,
}

/// Memoized even-harmonic basis and expansion coefficients for one
/// dimension and truncation degree. Cheap to clone.
#[derive(Debug, Clone)]
pub struct KernelConfig {
    inner: Arc<ConfigInner>,
}

#[derive(Debug)]
struct ConfigInner {
    n: usize,
    k_max: usize,
    a0: f64,
    series_tol: f64,
    degrees: Vec<DegreeBasis>,
}

impl KernelConfig {
    /// Builds the basis up to degree `k_max ≤ 12` (`n = 3`) or `≤ 8`
    /// (`n = 4`, where the projection cost grows quickly).
    pub fn new(n: usize, k_max: usize) -> Result<KernelConfig, KernelError> {
        static CACHE: OnceLock<Mutex<HashMap<(usize, usize), KernelConfig>>> = OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        if let Some(c) = cache.lock().map_err(|_| poisoned())?.get(&(n, k_max)) {
            return Ok(c.clone());
        }
        let built = Self::build(n, k_max)?;
        cache.lock().map_err(|_| poisoned())?.insert((n, k_max), built.clone());
        Ok(built)
    }

    fn build(n: usize, k_max: usize) -> Result<KernelConfig, KernelError> {
        check_dim(n)?;
        let cap = if n == 3 { 12 } else { 8 };
        if k_max < 2 || k_max > cap {
            return Err(KernelError::InvalidParams(format!(
                "truncation degree must lie in 2..={cap} for n = {n}"
            )));
        }
        let a = a0(n);
        let lambda = (n as f64 - 2.0) / 2.0;
        let mut degrees = Vec::with_capacity(k_max + 1);
        for k in 0..=k_max {
            let q = build_quadrature(n, (2 * k + 2).max(4))?;
            let polys = orthonormal_even_basis(n, k, &q)?;
            let coeffs = project_coefficients(n, k, a, lambda, &polys, &q);
            let c1 = gegenbauer_all(lambda, k, 1.0)[k];
            let zonal = 2.0 * a * c1 / harmonic_dimension(n, k) as f64;
            degrees.push(DegreeBasis { polys, coeffs, zonal });
        }
        Ok(KernelConfig { inner: Arc::new(ConfigInner { n, k_max, a0: a, series_tol: 1e-6, degrees }) })
    }

    /// Relative tail bound above which [`series_n`] refuses to answer.
    pub fn with_series_tol(self, tol: f64) -> KernelConfig {
        let i = &self.inner;
        KernelConfig {
            inner: Arc::new(ConfigInner {
                n: i.n,
                k_max: i.k_max,
                a0: i.a0,
                series_tol: tol,
                degrees: i.degrees.clone(),
            }),
        }
    }

    pub fn dim(&self) -> usize {
        self.inner.n
    }
    pub fn k_max(&self) -> usize {
        self.inner.k_max
    }
    pub fn a0(&self) -> f64 {
        self.inner.a0
    }
    /// `c_n = mean_{S_+}(θ_m²) = 1/n`.
    pub fn c_n(&self) -> f64 {
        1.0 / self.inner.n as f64
    }
    pub fn series_tol(&self) -> f64 {
        self.inner.series_tol
    }

    /// `φ̃_{k,m}(x̂)` at a unit vector (or `|x|^k φ̃_{k,m}(x̂)` in general).
    pub fn basis(&self, k: usize, m: usize, x: &[f64]) -> f64 {
        self.inner.degrees[k].polys[m].eval(x)
    }

    pub fn basis_poly(&self, k: usize, m: usize) -> &Poly {
        &self.inner.degrees[k].polys[m]
    }

    pub fn basis_len(&self, k: usize) -> usize {
        self.inner.degrees[k].polys.len()
    }

    /// Projected coefficient `A_{k,m}`.
    pub fn coefficient(&self, k: usize, m: usize) -> f64 {
        self.inner.degrees[k].coeffs[m]
    }

    /// Closed-form value every `A_{k,m}` must equal.
    pub fn zonal_coefficient(&self, k: usize) -> f64 {
        self.inner.degrees[k].zonal
    }

    /// Text tables of the basis polynomials and coefficients.
    pub fn tables_csv(&self) -> String {
        let mut s = String::from("# neureg-kernel-tables v1\n");
        let _ = writeln!(s, "# n={} k_max={}", self.inner.n, self.inner.k_max);
        s.push_str("kind,k,m,exponents,value\n");
        for (k, d) in self.inner.degrees.iter().enumerate() {
            for (m, c) in d.coeffs.iter().enumerate() {
                let _ = writeln!(s, "coefficient,{k},{m},,{c:e}");
            }
            for (m, p) in d.polys.iter().enumerate() {
                for (e, c) in &p.terms {
                    let ex: Vec<String> = e[..self.inner.n].iter().map(|v| v.to_string()).collect();
                    let _ = writeln!(s, "basis,{k},{m},{},{c:e}", ex.join(" "));
                }
            }
        }
        s
    }
}

/// Tables read back from [`KernelConfig::tables_csv`].
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTables {
    pub n: usize,
    pub k_max: usize,
    pub coefficients: BTreeMap<(usize, usize), f64>,
    pub basis: BTreeMap<(usize, usize), Poly>,
}

impl KernelTables {
    pub fn parse(text: &str) -> Result<KernelTables, KernelError> {
        let bad = |msg: &str| KernelError::InvalidParams(format!("kernel tables: {msg}"));
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("# neureg-kernel-tables v1") {
            return Err(bad("missing or unknown version header"));
        }
        let meta = lines.next().ok_or_else(|| bad("missing metadata"))?;
        let mut n = 0;
        let mut k_max = 0;
        for part in meta.trim_start_matches('#').split_whitespace() {
            if let Some(v) = part.strip_prefix("n=") {
                n = v.parse().map_err(|_| bad("bad n"))?;
            } else if let Some(v) = part.strip_prefix("k_max=") {
                k_max = v.parse().map_err(|_| bad("bad k_max"))?;
            }
        }
        let mut coefficients = BTreeMap::new();
        let mut basis: BTreeMap<(usize, usize), Poly> = BTreeMap::new();
        for line in lines.skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad("wrong column count"));
            }
            let k: usize = f[1].parse().map_err(|_| bad("bad k"))?;
            let m: usize = f[2].parse().map_err(|_| bad("bad m"))?;
            let v: f64 = f[4].parse().map_err(|_| bad("bad value"))?;
            match f[0] {
                "coefficient" => {
                    coefficients.insert((k, m), v);
                }
                "basis" => {
                    let mut e = [0u8; MAX_N];
                    for (i, s) in f[3].split_whitespace().enumerate() {
                        e[i] = s.parse().map_err(|_| bad("bad exponent"))?;
                    }
                    basis.entry((k, m)).or_default().terms.push((e, v));
                }
                _ => return Err(bad("unknown row kind")),
            }
        }
        Ok(KernelTables { n, k_max, coefficients, basis })
    }
}

/// Cholesky orthonormalization of the harmonic extensions of the
/// degree-`k` monomials in `x̃` under the `S_+` mean inner product.
fn orthonormal_even_basis(
    n: usize,
    k: usize,
    q: &HalfSphereQuadrature,
) -> Result<Vec<Poly>, KernelError> {
    let raw: Vec<Poly> = monomials(n - 1, k).into_iter().map(|b| harmonic_extension(n, b)).collect();
    let d = raw.len();
    let vals: Vec<Vec<f64>> = q.iter().map(|(th, _)| raw.iter().map(|p| p.eval(th)).collect()).collect();
    let mut g = DMatrix::<f64>::zeros(d, d);
    for ((_, w), v) in q.iter().zip(&vals) {
        for i in 0..d {
            for j in 0..d {
                g[(i, j)] += w * v[i] * v[j];
            }
        }
    }
    g /= q.measure();
    let chol = g
        .cholesky()
        .ok_or_else(|| KernelError::QuadratureFailure(format!("Gram matrix of degree {k} is not positive")))?;
    let l = chol.l();
    let linv = l
        .solve_lower_triangular(&DMatrix::identity(d, d))
        .ok_or_else(|| KernelError::QuadratureFailure("singular Cholesky factor".into()))?;
    Ok((0..d)
        .map(|m| {
            let mut acc: BTreeMap<[u8; MAX_N], f64> = BTreeMap::new();
            for b in 0..=m {
                let c = linv[(m, b)];
                for (e, v) in &raw[b].terms {
                    *acc.entry(*e).or_default() += c * v;
                }
            }
            Poly { terms: acc.into_iter().filter(|(_, c)| c.abs() > 1e-300).collect() }
        })
        .collect())
}

/// `A_{k,m} = mean_x mean_y a0 [C_k(x̂·ŷ) + C_k(x̂·ŷ*)] φ̃_m(x̂) φ̃_m(ŷ)`.
fn project_coefficients(
    n: usize,
    k: usize,
    a0: f64,
    lambda: f64,
    polys: &[Poly],
    q: &HalfSphereQuadrature,
) -> Vec<f64> {
    let nodes: Vec<&[f64]> = q.iter().map(|(th, _)| th).collect();
    let w = q.weights();
    let phi: Vec<Vec<f64>> = nodes.iter().map(|th| polys.iter().map(|p| p.eval(th)).collect()).collect();
    let d = polys.len();
    let mut acc = vec![0.0; d];
    for (i, xi) in nodes.iter().enumerate() {
        let mut inner = vec![0.0; d];
        for (j, yj) in nodes.iter().enumerate() {
            let dot: f64 = (0..n).map(|l| xi[l] * yj[l]).sum();
            let dot_star = dot - 2.0 * xi[n - 1] * yj[n - 1];
            let kern = gegenbauer(lambda, k, dot) + gegenbauer(lambda, k, dot_star);
            for m in 0..d {
                inner[m] += w[j] * kern * phi[j][m];
            }
        }
        for m in 0..d {
            acc[m] += w[i] * phi[i][m] * inner[m];
        }
    }
    let s = q.measure();
    acc.into_iter().map(|v| a0 * v / (s * s)).collect()
}

/// Truncated expansion of `N(x, y)` through degree `K`.
pub fn series_n(cfg: &KernelConfig, x: &[f64], y: &[f64]) -> Result<f64, KernelError> {
    let n = cfg.dim();
    let (rx, ry) = (norm(&x[..n]), norm(&y[..n]));
    if rx == ry {
        return Err(KernelError::RadiiEqual);
    }
    let (small, large, rs, rl) = if rx < ry { (x, y, rx, ry) } else { (y, x, ry, rx) };
    let ratio = rs / rl;
    let bound = series_tail_bound(n, cfg.k_max(), ratio);
    if bound > cfg.series_tol() {
        return Err(KernelError::TruncationInsufficient { ratio, k_max: cfg.k_max(), bound });
    }
    let mut total = 0.0;
    for k in 0..=cfg.k_max() {
        let d = &cfg.inner.degrees[k];
        let mut s = 0.0;
        for (p, c) in d.polys.iter().zip(&d.coeffs) {
            s += c * p.eval(small) * p.eval(large);
        }
        total += s / rl.powi((n - 2 + 2 * k) as i32);
    }
    Ok(total)
}

/// `Σ_{k>K} C_k^λ(1) ρ^k / (1 + …)`, relative to the leading term; since
/// `|C_k^λ(t)| ≤ C_k^λ(1)`, each discarded degree is bounded by this.
pub fn series_tail_bound(n: usize, k_max: usize, ratio: f64) -> f64 {
    if ratio >= 1.0 {
        return f64::INFINITY;
    }
    let lambda = (n as f64 - 2.0) / 2.0;
    let mut sum = 0.0;
    let mut k = k_max + 1;
    loop {
        let c1 = binomial((k as f64 + 2.0 * lambda - 1.0).round() as i64, k as i64).max(1.0);
        let term = c1 * ratio.powi(k as i32);
        sum += term;
        if term < 1e-18 * sum.max(1e-300) || k > k_max + 2000 {
            break;
        }
        k += 1;
    }
    sum
}

/// `PN(x, y)` from the two-case closed form and `N^⊥ = N − PN`.
///
/// With `ρ_<`, `ρ_>` the smaller and larger of `|x|`, `|y|`:
/// `PN = 2a0/ρ_>^{n−2} + 2a0(n−2) (x̃·ỹ)/ρ_>^n`.
pub fn pn_and_perp(cfg: &KernelConfig, x: &[f64], y: &[f64]) -> Result<(f64, f64), KernelError> {
    let n = cfg.dim();
    let (rx, ry) = (norm(&x[..n]), norm(&y[..n]));
    if rx == ry {
        return Err(KernelError::RadiiEqual);
    }
    let pn = pn_closed(n, x, y);
    Ok((pn, neumann_n(n, x, y)? - pn))
}

fn pn_closed(n: usize, x: &[f64], y: &[f64]) -> f64 {
    let a = a0(n);
    let big = norm(&x[..n]).max(norm(&y[..n]));
    let dot: f64 = (0..n - 1).map(|m| x[m] * y[m]).sum();
    2.0 * a * big.powi(2 - n as i32) + 2.0 * a * (n as f64 - 2.0) * dot * big.powi(-(n as i32))
}

/// `N^⊥` with its first derivatives and the mixed second derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerpTerms {
    pub value: f64,
    pub grad_x: [f64; MAX_N],
    pub grad_y: [f64; MAX_N],
    /// `mixed[i][j] = ∂_{x_i} ∂_{y_j} N^⊥`.
    pub mixed: [[f64; MAX_N]; MAX_N],
}

/// Evaluates [`PerpTerms`] analytically. The caller guarantees `x ≠ y`
/// and `|x| ≠ |y|`.
pub fn perp_terms(n: usize, x: &[f64], y: &[f64]) -> PerpTerms {
    let a = a0(n);
    let nf = n as f64;
    let c = a * (2.0 - nf);
    let mut t = PerpTerms { value: 0.0, grad_x: [0.0; MAX_N], grad_y: [0.0; MAX_N], mixed: [[0.0; MAX_N]; MAX_N] };
    for image in [false, true] {
        let mut z = [0.0; MAX_N];
        for i in 0..n {
            z[i] = x[i] - if image && i == n - 1 { -y[i] } else { y[i] };
        }
        let r2: f64 = z[..n].iter().map(|v| v * v).sum();
        let r = r2.sqrt();
        let rn = r.powi(-(n as i32));
        t.value += a * r.powi(2 - n as i32);
        for i in 0..n {
            let refl = if image && i == n - 1 { -1.0 } else { 1.0 };
            let g = c * rn * z[i];
            t.grad_x[i] += g;
            t.grad_y[i] -= g * refl;
        }
        for i in 0..n {
            for j in 0..n {
                let refl = if image && j == n - 1 { -1.0 } else { 1.0 };
                let delta = if i == j { 1.0 } else { 0.0 };
                let h = c * rn * (delta - nf * z[i] * z[j] / r2);
                t.mixed[i][j] -= h * refl;
            }
        }
    }
    let (rx, ry) = (norm(&x[..n]), norm(&y[..n]));
    let dot: f64 = (0..n - 1).map(|m| x[m] * y[m]).sum();
    let k1 = 2.0 * a * (nf - 2.0);
    let tan = |i: usize| if i < n - 1 { 1.0 } else { 0.0 };
    if rx < ry {
        let s = ry;
        let sn = s.powi(-(n as i32));
        let sn2 = sn / (s * s);
        t.value -= 2.0 * a * s.powi(2 - n as i32) + k1 * dot * sn;
        for i in 0..n {
            t.grad_x[i] -= k1 * sn * y[i] * tan(i);
            t.grad_y[i] -= 2.0 * a * (2.0 - nf) * sn * y[i] + k1 * (sn * x[i] * tan(i) - nf * sn2 * dot * y[i]);
            for j in 0..n {
                let delta = if i == j { 1.0 } else { 0.0 };
                t.mixed[i][j] -= tan(i) * k1 * (sn * delta - nf * sn2 * y[i] * y[j]);
            }
        }
    } else {
        let s = rx;
        let sn = s.powi(-(n as i32));
        let sn2 = sn / (s * s);
        t.value -= 2.0 * a * s.powi(2 - n as i32) + k1 * dot * sn;
        for i in 0..n {
            t.grad_y[i] -= k1 * sn * x[i] * tan(i);
            t.grad_x[i] -= 2.0 * a * (2.0 - nf) * sn * x[i] + k1 * (sn * y[i] * tan(i) - nf * sn2 * dot * x[i]);
            for j in 0..n {
                let delta = if i == j { 1.0 } else { 0.0 };
                t.mixed[i][j] -= tan(j) * k1 * (sn * delta - nf * sn2 * x[i] * x[j]);
            }
        }
    }
    t
}

/// Tensor rule on `A_1^+ = {1 < |x| < 2, x_n > 0}`: Gauss–Legendre in the
/// radius (weights include `ρ^{n−1}`) times a half-sphere rule.
#[derive(Debug, Clone)]
pub struct VolumeQuadrature {
    pub radial: Vec<(f64, f64)>,
    pub sphere: HalfSphereQuadrature,
}

impl VolumeQuadrature {
    pub fn new(n: usize, radial_nodes: usize, order: usize) -> Result<VolumeQuadrature, KernelError> {
        Self::on_shell(n, radial_nodes, order, 1.0, 2.0)
    }

    /// The same construction on `{a < |x| < b}`.
    pub fn on_shell(
        n: usize,
        radial_nodes: usize,
        order: usize,
        a: f64,
        b: f64,
    ) -> Result<VolumeQuadrature, KernelError> {
        let sphere = build_quadrature(n, order)?;
        let (x, w) = gauss_legendre_on(radial_nodes, a, b);
        let radial = x.into_iter().zip(w).map(|(r, w)| (r, w * r.powi(n as i32 - 1))).collect();
        Ok(VolumeQuadrature { radial, sphere })
    }

    pub fn dim(&self) -> usize {
        self.sphere.dimension()
    }

    /// Points and weights of the rule scaled by `r`.
    pub fn points(&self, r: f64) -> Vec<(Vec<f64>, f64)> {
        let n = self.dim();
        let mut out = Vec::with_capacity(self.radial.len() * self.sphere.len());
        for &(rho, wr) in &self.radial {
            for (th, wt) in self.sphere.iter() {
                out.push((th.iter().map(|t| r * rho * t).collect(), wr * wt * r.powi(n as i32)));
            }
        }
        out
    }

    /// Mean of `f` over `r·A_1^+`.
    pub fn mean(&self, r: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        let mut s = 0.0;
        let mut vol = 0.0;
        for (x, w) in self.points(r) {
            s += w * f(&x);
            vol += w;
        }
        s / vol
    }
}

/// `M_p` and `M_{1,p}` of one field on one annulus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnulusNorm {
    pub p: f64,
    pub r: f64,
    pub mp: f64,
    pub m1p: f64,
}

/// `M_p(f, r) = (mean_{A_r^+} |f|^p)^{1/p}` for a scalar magnitude `f`.
pub fn annulus_mean_p(
    f: impl FnMut(&[f64]) -> f64,
    p: f64,
    r: f64,
    q3d: &VolumeQuadrature,
) -> Result<f64, KernelError> {
    let mut f = f;
    let mut bad = None;
    let m = q3d.mean(r, |x| {
        let v = f(x);
        if !v.is_finite() {
            bad.get_or_insert_with(|| x.to_vec());
        }
        v.abs().powf(p)
    });
    if let Some(x) = bad {
        return Err(KernelError::EvaluationFailure { x });
    }
    Ok(m.powf(1.0 / p))
}

/// `M_p(w, r)` and `M_{1,p}(w, r) = r M_p(∇w, r) + M_p(w, r)`.
pub fn annulus_norm(
    w: &dyn Fn(&[f64]) -> f64,
    grad_w: &dyn Fn(&[f64]) -> Vec<f64>,
    p: f64,
    r: f64,
    q3d: &VolumeQuadrature,
) -> Result<AnnulusNorm, KernelError> {
    let n = q3d.dim();
    if !(p > n as f64) {
        return Err(KernelError::InvalidParams(format!("p = {p} must exceed n = {n}")));
    }
    let mp = annulus_mean_p(w, p, r, q3d)?;
    let mg = annulus_mean_p(|x| norm(&grad_w(x)), p, r, q3d)?;
    Ok(AnnulusNorm { p, r, mp, m1p: r * mg + mp })
}

type ScalarField = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type VectorField = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Sources `f0`, `f⃗` supported in the shell `r_in < |y| < r_out`.
#[derive(Clone)]
pub struct SourceData {
    pub n: usize,
    pub f0: ScalarField,
    pub fvec: VectorField,
    pub r_in: f64,
    pub r_out: f64,
}

/// `exp(−1/(1 − s²))` with `s` mapping the shell onto `(−1, 1)`.
pub fn shell_bump(r: f64, r_in: f64, r_out: f64) -> f64 {
    let s = (2.0 * r - (r_in + r_out)) / (r_out - r_in);
    if s.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - s * s)).exp()
    }
}

impl SourceData {
    /// `f0 = bump·θ_n`, `f⃗ = 0`.
    pub fn bump_normal(n: usize) -> SourceData {
        SourceData {
            n,
            f0: Arc::new(move |y| {
                let r = norm(y);
                if r == 0.0 { 0.0 } else { shell_bump(r, 1.0, 2.0) * y[n - 1] / r }
            }),
            fvec: Arc::new(move |_| vec![0.0; n]),
            r_in: 1.0,
            r_out: 2.0,
        }
    }

    /// `f0 = bump·(θ_1² − θ_2²)`, `f⃗ = 0`.
    pub fn bump_quadrupole(n: usize) -> SourceData {
        SourceData {
            n,
            f0: Arc::new(move |y| {
                let r2: f64 = y.iter().map(|v| v * v).sum();
                if r2 == 0.0 { 0.0 } else { shell_bump(r2.sqrt(), 1.0, 2.0) * (y[0] * y[0] - y[1] * y[1]) / r2 }
            }),
            fvec: Arc::new(move |_| vec![0.0; n]),
            r_in: 1.0,
            r_out: 2.0,
        }
    }

    /// `f⃗ = bump·(θ_2, θ_1, 0, …)` together with `f0 = bump·θ_1θ_n`.
    pub fn bump_vector(n: usize) -> SourceData {
        SourceData {
            n,
            f0: Arc::new(move |y| {
                let r2: f64 = y.iter().map(|v| v * v).sum();
                if r2 == 0.0 { 0.0 } else { shell_bump(r2.sqrt(), 1.0, 2.0) * y[0] * y[n - 1] / r2 }
            }),
            fvec: Arc::new(move |y| {
                let r = norm(y);
                let mut v = vec![0.0; n];
                if r > 0.0 {
                    let b = shell_bump(r, 1.0, 2.0);
                    v[0] = b * y[1] / r;
                    v[1] = b * y[0] / r;
                }
                v
            }),
            r_in: 1.0,
            r_out: 2.0,
        }
    }

    pub fn zero(n: usize) -> SourceData {
        SourceData {
            n,
            f0: Arc::new(|_| 0.0),
            fvec: Arc::new(move |_| vec![0.0; n]),
            r_in: 1.0,
            r_out: 2.0,
        }
    }

    pub fn scaled(&self, s: f64) -> SourceData {
        let (f0, fv) = (self.f0.clone(), self.fvec.clone());
        SourceData {
            n: self.n,
            f0: Arc::new(move |y| s * f0(y)),
            fvec: Arc::new(move |y| fv(y).into_iter().map(|v| s * v).collect()),
            r_in: self.r_in,
            r_out: self.r_out,
        }
    }

    /// Checks that the sources vanish off the declared shell on a fixed
    /// sample and that the weighted integrability integrals are finite.
    pub fn verify(&self) -> Result<(f64, f64), KernelError> {
        let n = self.n;
        let q = build_quadrature(n, 6)?;
        for r in [0.05, 0.3, 0.6, 0.95 * self.r_in, 1.05 * self.r_out, 2.0 * self.r_out] {
            if r > self.r_in && r < self.r_out {
                continue;
            }
            for (th, _) in q.iter() {
                let y: Vec<f64> = th.iter().map(|t| r * t).collect();
                let v = (self.f0)(&y).abs() + norm(&(self.fvec)(&y));
                if v != 0.0 {
                    return Err(KernelError::HypothesisViolated(format!(
                        "source is nonzero at |y| = {r}, outside its declared support"
                    )));
                }
            }
        }
        let inner = VolumeQuadrature::on_shell(n, 12, 12, self.r_in, self.r_out)?;
        let (mut near, mut far) = (0.0, 0.0);
        for (y, w) in inner.points(1.0) {
            let r = norm(&y);
            let weight = norm(&(self.fvec)(&y)) + r * (self.f0)(&y).abs();
            if r < 1.0 {
                near += w * weight * r;
            } else {
                far += w * weight * r.powi(-1 - n as i32);
            }
        }
        if !(near.is_finite() && far.is_finite()) {
            return Err(KernelError::HypothesisViolated("weighted source integrals are not finite".into()));
        }
        Ok((near, far))
    }
}

/// Source values frozen on a shell quadrature.
struct SourceSamples {
    points: Vec<(Vec<f64>, f64, f64, Vec<f64>)>,
}

impl SourceSamples {
    fn new(src: &SourceData, radial: usize, order: usize) -> Result<SourceSamples, KernelError> {
        let q = VolumeQuadrature::on_shell(src.n, radial, order, src.r_in, src.r_out)?;
        let points = q
            .points(1.0)
            .into_iter()
            .map(|(y, w)| {
                let f0 = (src.f0)(&y);
                let fv = (src.fvec)(&y);
                (y, w, f0, fv)
            })
            .filter(|(_, _, f0, fv)| *f0 != 0.0 || fv.iter().any(|v| *v != 0.0))
            .collect();
        Ok(SourceSamples { points })
    }

    /// `w(x)` and `∇w(x)`.
    fn potential(&self, n: usize, x: &[f64]) -> (f64, Vec<f64>) {
        let mut w = 0.0;
        let mut g = vec![0.0; n];
        for (y, wt, f0, fv) in &self.points {
            let t = perp_terms(n, x, y);
            let mut v = t.value * f0;
            for j in 0..n {
                v -= t.grad_y[j] * fv[j];
            }
            w += wt * v;
            for i in 0..n {
                let mut gi = t.grad_x[i] * f0;
                for j in 0..n {
                    gi -= t.mixed[i][j] * fv[j];
                }
                g[i] += wt * gi;
            }
        }
        (w, g)
    }
}

/// Quadrature sizes for the potential and the annulus estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialOptions {
    pub source_radial: usize,
    pub source_order: usize,
    pub annulus_radial: usize,
    pub annulus_order: usize,
}

impl Default for PotentialOptions {
    fn default() -> Self {
        Self { source_radial: 10, source_order: 12, annulus_radial: 6, annulus_order: 8 }
    }
}

impl PotentialOptions {
    /// Every size multiplied by 1.5.
    pub fn refined(&self) -> PotentialOptions {
        let up = |v: usize| (v * 3).div_ceil(2);
        PotentialOptions {
            source_radial: up(self.source_radial),
            source_order: up(self.source_order),
            annulus_radial: up(self.annulus_radial),
            annulus_order: up(self.annulus_order),
        }
    }
}

/// `w(x) = ∫ (N^⊥(x,y) f0(y) − ∇_y N^⊥(x,y)·f⃗(y)) dy` with default sizes.
pub fn perp_potential(cfg: &KernelConfig, src: &SourceData, x: &[f64]) -> Result<f64, KernelError> {
    Ok(perp_potential_with_gradient(cfg, src, x, &PotentialOptions::default())?.0)
}

/// `w(x)` and `∇w(x)`; `x` must avoid the source shell.
pub fn perp_potential_with_gradient(
    cfg: &KernelConfig,
    src: &SourceData,
    x: &[f64],
    opts: &PotentialOptions,
) -> Result<(f64, Vec<f64>), KernelError> {
    let n = cfg.dim();
    if src.n != n {
        return Err(KernelError::InvalidParams("source dimension differs from the kernel's".into()));
    }
    let r = norm(&x[..n]);
    if r >= src.r_in && r <= src.r_out {
        return Err(KernelError::QuadratureFailure(format!(
            "|x| = {r} lies inside the source shell; the kernel is not smooth there"
        )));
    }
    let samples = SourceSamples::new(src, opts.source_radial, opts.source_order)?;
    let (w, g) = samples.potential(n, x);
    if !w.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(KernelError::EvaluationFailure { x: x.to_vec() });
    }
    Ok((w, g))
}

/// `max |P w| / max |w|` over the spheres `|x| = ρ` for `ρ ∈ radii`.
pub fn perp_projection_residual(
    cfg: &KernelConfig,
    src: &SourceData,
    radii: &[f64],
    order: usize,
) -> Result<f64, KernelError> {
    let n = cfg.dim();
    let q = build_quadrature(n, order)?;
    let samples = SourceSamples::new(src, 12, 16)?;
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for &rho in radii {
        let f = Polar(|r: f64, th: &[f64]| {
            let x: Vec<f64> = th.iter().map(|t| r * t).collect();
            samples.potential(n, &x).0
        });
        let proj = project_p(&q, &f, rho)?;
        for (th, _) in q.iter() {
            let x: Vec<f64> = th.iter().map(|t| rho * t).collect();
            scale = scale.max(samples.potential(n, &x).0.abs());
            worst = worst.max(proj.at(th).abs());
        }
    }
    Ok(if scale > 0.0 { worst / scale } else { worst })
}

/// Outcome of [`prop1_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct Prop1Result {
    pub r_grid: Vec<f64>,
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    /// `max_r lhs/rhs` with the base quadratures.
    pub c: f64,
    /// The same with every quadrature refined 1.5×.
    pub c_refined: f64,
    pub decades: f64,
    pub pass: bool,
}

/// Integrals of `M_p(f⃗, ρ) ρ^n + M_p(f0, ρ) ρ^{n+1}` and of
/// `M_p(f⃗, ρ) ρ^{−2} + M_p(f0, ρ) ρ^{−1}` over every ρ whose annulus
/// `(ρ, 2ρ)` meets the support. Radii of the check avoid the support, so
/// each piece of the right-hand side is either empty or one of these.
fn rhs_integrals(src: &SourceData, p: f64, q3d: &VolumeQuadrature) -> Result<(f64, f64), KernelError> {
    let nf = src.n as f64;
    let lo = src.r_in / 2.0;
    let hi = src.r_out;
    let mut err = None;
    let mut run = |inner: bool| -> f64 {
        let res = integrate(
            |rho| {
                let mf = annulus_mean_p(|y| norm(&(src.fvec)(y)), p, rho, q3d);
                let m0 = annulus_mean_p(|y| (src.f0)(y), p, rho, q3d);
                let (vf, v0) = match (mf, m0) {
                    (Ok(f), Ok(z)) => (f, z),
                    (Err(e), _) | (_, Err(e)) => {
                        err.get_or_insert(e);
                        return 0.0;
                    }
                };
                if inner {
                    vf * rho.powf(nf) + v0 * rho.powf(nf + 1.0)
                } else {
                    vf / (rho * rho) + v0 / rho
                }
            },
            lo,
            hi,
            1e-14,
            1e-8,
            60,
        );
        res.value
    };
    let inner = run(true);
    let outer = run(false);
    match err {
        Some(e) => Err(e),
        None => Ok((inner, outer)),
    }
}

fn rhs_at(src: &SourceData, parts: (f64, f64), r: f64) -> f64 {
    let nf = src.n as f64;
    let mut v = 0.0;
    if r >= src.r_out {
        v += parts.0 * r.powf(-nf);
    }
    if r <= src.r_in / 2.0 {
        v += parts.1 * r * r;
    }
    v
}

fn prop1_pass(
    cfg: &KernelConfig,
    src: &SourceData,
    p: f64,
    r_grid: &[f64],
    opts: &PotentialOptions,
) -> Result<(Vec<f64>, Vec<f64>), KernelError> {
    let n = cfg.dim();
    let samples = SourceSamples::new(src, opts.source_radial, opts.source_order)?;
    let xq = VolumeQuadrature::new(n, opts.annulus_radial, opts.annulus_order)?;
    let sq = VolumeQuadrature::new(n, opts.annulus_radial.max(8), opts.source_order)?;
    let parts = rhs_integrals(src, p, &sq)?;
    let mut lhs = Vec::new();
    let mut rhs = Vec::new();
    for &r in r_grid {
        if r * 2.0 > src.r_in && r < src.r_out {
            return Err(KernelError::InvalidParams(format!(
                "annulus at r = {r} overlaps the source shell"
            )));
        }
        let pts = xq.points(r);
        let vals: Vec<(f64, Vec<f64>)> = pts.iter().map(|(x, _)| samples.potential(n, x)).collect();
        let vol: f64 = pts.iter().map(|(_, w)| w).sum();
        let mean = |f: &dyn Fn(usize) -> f64| {
            (pts.iter().enumerate().map(|(i, (_, w))| w * f(i).abs().powf(p)).sum::<f64>() / vol).powf(1.0 / p)
        };
        let mw = mean(&|i| vals[i].0);
        let mg = mean(&|i| norm(&vals[i].1));
        lhs.push(r * mg + mw);
        rhs.push(rhs_at(src, parts, r));
    }
    Ok((lhs, rhs))
}

/// Fits `c` in `M_{1,p}(w, r) ≤ c·(right-hand side)` on `r_grid` and
/// checks the fit is stable under a 1.5× quadrature refinement.
pub fn prop1_check(
    cfg: &KernelConfig,
    src: &SourceData,
    p: f64,
    r_grid: &[f64],
) -> Result<Prop1Result, KernelError> {
    prop1_check_with(cfg, src, p, r_grid, &PotentialOptions::default())
}

pub fn prop1_check_with(
    cfg: &KernelConfig,
    src: &SourceData,
    p: f64,
    r_grid: &[f64],
    opts: &PotentialOptions,
) -> Result<Prop1Result, KernelError> {
    let n = cfg.dim();
    if !(p > n as f64) {
        return Err(KernelError::InvalidParams(format!("p = {p} must exceed n = {n}")));
    }
    if r_grid.len() < 2 || r_grid.iter().any(|r| !(*r > 0.0)) {
        return Err(KernelError::InvalidParams("need at least two positive radii".into()));
    }
    src.verify()?;
    let fit = |lhs: &[f64], rhs: &[f64]| -> Result<f64, KernelError> {
        let mut c: f64 = 0.0;
        for (l, r) in lhs.iter().zip(rhs) {
            if *r <= 0.0 {
                if *l > 0.0 {
                    return Err(KernelError::HypothesisViolated("right-hand side vanishes where w does not".into()));
                }
                continue;
            }
            c = c.max(l / r);
        }
        Ok(c)
    };
    let (lhs, rhs) = prop1_pass(cfg, src, p, r_grid, opts)?;
    let c = fit(&lhs, &rhs)?;
    let (lf, rf) = prop1_pass(cfg, src, p, r_grid, &opts.refined())?;
    let c_refined = fit(&lf, &rf)?;
    let (lo, hi) = r_grid.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
    let decades = (hi / lo).log10();
    // A vanishing source gives w ≡ 0, which satisfies the estimate with c = 0.
    let trivial = lhs.iter().chain(&lf).all(|v| *v == 0.0);
    let stable = trivial || (c > 0.0 && c_refined > 0.0 && c.max(c_refined) < 2.0 * c.min(c_refined));
    let pass = c.is_finite() && decades >= 3.0 - 1e-9 && stable;
    Ok(Prop1Result { r_grid: r_grid.to_vec(), lhs, rhs, c, c_refined, decades, pass })
}

/// `α > n(p − 2)/(2p)`, the exponent condition for uniqueness.
pub fn uniqueness_exponent_ok(alpha: f64, n: usize, p: f64) -> Result<bool, KernelError> {
    if !(p >= 2.0) || n < 2 || !(alpha > 0.0) {
        return Err(KernelError::InvalidParams(format!(
            "need p ≥ 2, n ≥ 2, α > 0 (got p = {p}, n = {n}, α = {alpha})"
        )));
    }
    Ok(alpha > n as f64 * (p - 2.0) / (2.0 * p))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fundamental_solution_values() {
        let pi = std::f64::consts::PI;
        assert!((gamma(3, &[1.0, 0.0, 0.0]).unwrap() + 1.0 / (4.0 * pi)).abs() < 1e-15);
        assert!((gamma(3, &[0.0, 2.0, 0.0]).unwrap() + 1.0 / (8.0 * pi)).abs() < 1e-15);
        assert!((gamma(4, &[0.0, 0.0, 0.0, 1.0]).unwrap() + 1.0 / (4.0 * pi * pi)).abs() < 1e-15);
        assert!(matches!(gamma(3, &[0.0; 3]), Err(KernelError::OriginSingularity)));
        let v = neumann_n(3, &[0.0, 0.0, 1.0], &[0.0, 0.0, 2.0]).unwrap();
        assert!((v + 1.0 / (3.0 * pi)).abs() < 1e-15);
    }

    #[test]
    fn dimensions_and_harmonicity() {
        assert_eq!(even_dimension(3, 4), 5);
        assert_eq!(harmonic_dimension(3, 4), 9);
        assert_eq!(harmonic_dimension(4, 2), 9);
        for n in 3..=4 {
            for k in 0..=6 {
                for b in monomials(n - 1, k) {
                    assert!(harmonic_extension(n, b).laplacian(n).terms.iter().all(|(_, c)| c.abs() < 1e-12));
                }
                assert_eq!(monomials(n - 1, k).len(), even_dimension(n, k));
            }
        }
    }

    #[test]
    fn perp_terms_match_finite_differences() {
        let n = 3;
        for (x, y) in [([0.2, -0.1, 0.3], [0.5, 0.9, 1.1]), ([1.5, 0.4, 0.8], [0.2, 0.3, 0.4])] {
            let t = perp_terms(n, &x, &y);
            let v = |x: &[f64], y: &[f64]| perp_terms(n, x, y).value;
            let h = 1e-5;
            for i in 0..n {
                let (mut xp, mut xm) = (x, x);
                xp[i] += h;
                xm[i] -= h;
                let fd = (v(&xp, &y) - v(&xm, &y)) / (2.0 * h);
                assert!((fd - t.grad_x[i]).abs() < 1e-8, "grad_x {i}");
                let (mut yp, mut ym) = (y, y);
                yp[i] += h;
                ym[i] -= h;
                let fd = (v(&x, &yp) - v(&x, &ym)) / (2.0 * h);
                assert!((fd - t.grad_y[i]).abs() < 1e-8, "grad_y {i}");
                for j in 0..n {
                    let fd = (perp_terms(n, &xp, &y).grad_y[j] - perp_terms(n, &xm, &y).grad_y[j]) / (2.0 * h);
                    assert!((fd - t.mixed[i][j]).abs() < 1e-7, "mixed {i}{j}");
                }
            }
        }
    }

    fn norm_of(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    #[test]
    fn projected_coefficients_are_zonal() {
        let cfg = KernelConfig::new(3, 12).unwrap();
        for k in 0..=12 {
            assert_eq!(cfg.basis_len(k), even_dimension(3, k));
            for m in 0..cfg.basis_len(k) {
                assert!((cfg.coefficient(k, m) - cfg.zonal_coefficient(k)).abs() < 1e-12);
            }
        }
        // Degree one: A_1 φ̃φ̃ sums to 2 a0 (n − 2) x̂·ŷ.
        let x = [0.6, 0.0, 0.8];
        let y = [0.0, 0.6, 0.8];
        let z = [0.6, 0.8, 0.0];
        let s = |a: &[f64], b: &[f64]| -> f64 {
            (0..cfg.basis_len(1)).map(|m| cfg.coefficient(1, m) * cfg.basis(1, m, a) * cfg.basis(1, m, b)).sum()
        };
        assert!(s(&x, &y).abs() < 1e-14);
        assert!((s(&x, &z) - 2.0 * a0(3) * 0.36).abs() < 1e-14);
    }

    #[test]
    fn series_matches_direct_formula() {
        let cfg = KernelConfig::new(3, 12).unwrap();
        let y = [0.5, -0.3, 0.7];
        let ry = norm_of(&y);
        for dir in [[0.6, 0.0, 0.8], [0.0, 0.0, 1.0], [0.8, 0.6, 0.0], [-0.48, 0.64, 0.6]] {
            let x: Vec<f64> = dir.iter().map(|d| 0.3 * ry * d).collect();
            let a = series_n(&cfg, &x, &y).unwrap();
            let b = neumann_n(3, &x, &y).unwrap();
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
            // Either ordering of the radii.
            let c = series_n(&cfg, &y, &x).unwrap();
            assert!((c - b).abs() < 1e-8);
        }
        assert!(matches!(series_n(&cfg, &[0.0, 0.0, 0.9], &[0.0, 0.0, 1.0]), Err(KernelError::TruncationInsufficient { .. })));
        assert!(matches!(series_n(&cfg, &[0.0, 0.0, 1.0], &[0.0, 1.0, 0.0]), Err(KernelError::RadiiEqual)));
    }

    #[test]
    fn neumann_function_is_symmetric_with_zero_normal_derivative() {
        for n in 3..=4 {
            let x: Vec<f64> = (0..n).map(|i| 0.2 + 0.1 * i as f64).collect();
            let y: Vec<f64> = (0..n).map(|i| 0.9 - 0.15 * i as f64).collect();
            let a = neumann_n(n, &x, &y).unwrap();
            let b = neumann_n(n, &y, &x).unwrap();
            assert!((a - b).abs() < 1e-15);
            let mut xb = x.clone();
            xb[n - 1] = 0.0;
            let g = neumann_grad_x(n, &xb, &y).unwrap();
            assert!(g[n - 1].abs() < 1e-10);
        }
        // Orthogonal directions: N(x, y) ≈ 2 a0 / |y|^{n−2} when |x| ≪ |y|.
        let v = neumann_n(3, &[1e-4, 0.0, 0.0], &[0.0, 1.0, 0.0]).unwrap();
        assert!((v - 2.0 * a0(3)).abs() < 1e-7);
    }

    #[test]
    fn closed_form_projection_matches_quadrature() {
        let cfg = KernelConfig::new(3, 12).unwrap();
        let q = build_quadrature(3, 24).unwrap();
        for y in [[0.3, 0.5, 0.81240384], [0.0, 0.0, 1.0]] {
            let f = Polar(|r: f64, th: &[f64]| {
                let x: Vec<f64> = th.iter().map(|t| r * t).collect();
                neumann_n(3, &x, &y).unwrap()
            });
            let proj = project_p(&q, &f, 0.3).unwrap();
            for (th, _) in q.iter().step_by(17) {
                let x: Vec<f64> = th.iter().map(|t| 0.3 * t).collect();
                let (pn, perp) = pn_and_perp(&cfg, &x, &y).unwrap();
                assert!((pn - proj.at(th)).abs() < 1e-8);
                // N^⊥ decays like |x|² / |y|^n.
                assert!(perp.abs() <= 0.2 * 0.09);
            }
        }
    }

    #[test]
    fn annulus_mean_values() {
        let q = VolumeQuadrature::new(3, 12, 12).unwrap();
        assert!((annulus_mean_p(|_| 1.0, 4.0, 0.7, &q).unwrap() - 1.0).abs() < 1e-12);
        let norm = annulus_norm(&|x| norm_of(x), &|x| x.iter().map(|v| v / norm_of(x)).collect(), 4.0, 1.0, &q).unwrap();
        let expected = ((3.0f64 / 7.0) * (127.0 / 7.0)).powf(0.25) + 1.0;
        assert!((norm.m1p - expected).abs() < 1e-10, "{}", norm.m1p);
        // Homogeneous of degree 2: M_p scales like r².
        let quad = |x: &[f64]| x[0] * x[0] - 3.0 * x[1] * x[2];
        let a = annulus_mean_p(quad, 4.0, 0.1, &q).unwrap();
        let b = annulus_mean_p(quad, 4.0, 0.01, &q).unwrap();
        assert!((a / 100.0 - b).abs() < 1e-14 * a);
        assert!(matches!(
            annulus_norm(&|_| 1.0, &|_| vec![0.0; 3], 3.0, 1.0, &q),
            Err(KernelError::InvalidParams(_))
        ));
    }

    #[test]
    fn perp_potential_decays_quadratically() {
        let cfg = KernelConfig::new(3, 12).unwrap();
        let src = SourceData::bump_normal(3);
        let w1 = perp_potential(&cfg, &src, &[0.0, 0.0, 0.1]).unwrap();
        let w2 = perp_potential(&cfg, &src, &[0.0, 0.0, 0.2]).unwrap();
        assert!((w1 / w2 - 0.25).abs() < 0.05);
        let res = perp_projection_residual(&cfg, &src, &[0.1, 0.2], 16).unwrap();
        assert!(res < 1e-6);
        let (_, g) = perp_potential_with_gradient(&cfg, &src, &[0.05, 0.02, 0.1], &PotentialOptions::default()).unwrap();
        let h = 1e-5;
        let fd = (perp_potential(&cfg, &src, &[0.05 + h, 0.02, 0.1]).unwrap()
            - perp_potential(&cfg, &src, &[0.05 - h, 0.02, 0.1]).unwrap())
            / (2.0 * h);
        assert!((fd - g[0]).abs() < 1e-6 * g.iter().map(|v| v.abs()).fold(1e-12, f64::max) + 1e-12);
        assert!(perp_potential(&cfg, &src, &[0.0, 0.0, 1.5]).is_err());
    }

    #[test]
    fn sources_respect_support() {
        for s in [SourceData::bump_normal(3), SourceData::bump_quadrupole(3), SourceData::bump_vector(3)] {
            let (near, far) = s.verify().unwrap();
            assert!(near.is_finite() && far.is_finite() && near + far > 0.0);
        }
        let mut leaky = SourceData::zero(3);
        leaky.f0 = Arc::new(|_| 1.0);
        assert!(matches!(leaky.verify(), Err(KernelError::HypothesisViolated(_))));
    }

    #[test]
    fn tables_round_trip() {
        let cfg = KernelConfig::new(3, 4).unwrap();
        let t = KernelTables::parse(&cfg.tables_csv()).unwrap();
        assert_eq!((t.n, t.k_max), (3, 4));
        for k in 0..=4 {
            for m in 0..cfg.basis_len(k) {
                assert_eq!(t.coefficients[&(k, m)], cfg.coefficient(k, m));
                assert_eq!(&t.basis[&(k, m)], cfg.basis_poly(k, m));
            }
        }
        assert!(KernelTables::parse("garbage").is_err());
    }

    #[test]
    fn uniqueness_thresholds() {
        assert!(uniqueness_exponent_ok(1.0, 3, 4.0).unwrap());
        assert!(!uniqueness_exponent_ok(0.7, 3, 4.0).unwrap());
        assert!(uniqueness_exponent_ok(0.1, 3, 2.0).unwrap());
        assert!(uniqueness_exponent_ok(-1.0, 3, 4.0).is_err());
    }
}
