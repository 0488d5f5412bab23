//! Acceptance suite. Each criterion is one test; run with `--nocapture` to
//! see the measured numbers behind each PASS/FAIL line.

use std::sync::Arc;
use std::time::{Duration, Instant};

use neureg::coefficients::{
    certify_profile_field, epsilon_of_t, BoundaryGraph, CoefficientField, GraphProfile, GsField, IdentityField,
    LogGrid, ModulusOfContinuity, RadialProfile, Sign, TiltField, validate_field,
};
use neureg::geometry::{
    build_quadrature, decompose, dyadic_grid, orthogonality_residuals, project_p, Cartesian, Polar,
};
use neureg::kernel::{
    neumann_grad_x, neumann_n, pn_and_perp, prop1_check, series_n, KernelConfig, SourceData,
};
use neureg::numerics::integrate;
use neureg::oracle::{measure_regularity, solve_gs_ode, Trend};
use neureg::reduction::{assemble_system, compute_r_curved, compute_r_halfspace};
use neureg::stability::{
    classify, integrate_forced, Criterion, Forcing, Regularity, Stability, StabilityConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Prints the criterion line, then fails the test when the check failed.
fn report(id: u32, name: &str, budget: Duration, run: impl FnOnce() -> Result<String, String>) {
    let start = Instant::now();
    let outcome = run();
    let elapsed = start.elapsed();
    let timed = |detail: String| format!("{detail} [{:.2}s, budget {}s]", elapsed.as_secs_f64(), budget.as_secs());
    match outcome {
        Ok(detail) if elapsed <= budget => println!("criterion {id:>2} PASS  {name}: {}", timed(detail)),
        Ok(detail) => {
            println!("criterion {id:>2} FAIL  {name}: over time budget; {}", timed(detail));
            panic!("criterion {id} exceeded its time budget");
        }
        Err(detail) => {
            println!("criterion {id:>2} FAIL  {name}: {}", timed(detail.clone()));
            panic!("criterion {id} failed: {detail}");
        }
    }
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn gs_field(n: usize, g: RadialProfile) -> CoefficientField {
    let q = build_quadrature(n, 8).unwrap();
    certify_profile_field(Arc::new(GsField { n, g }), &g, &q, &dyadic_grid(0.5, 30), &LogGrid::default())
        .expect("certified GS field")
}

fn tilt_field(n: usize, e: RadialProfile) -> CoefficientField {
    let q = build_quadrature(n, 8).unwrap();
    certify_profile_field(Arc::new(TiltField { n, e }), &e, &q, &dyadic_grid(0.5, 30), &LogGrid::default())
        .expect("certified tilt field")
}

fn identity_field(n: usize) -> CoefficientField {
    let q = build_quadrature(n, 8).unwrap();
    validate_field(Arc::new(IdentityField { n }), &ModulusOfContinuity::zero(), &q, &dyadic_grid(0.5, 30))
        .expect("identity field")
}

fn logpow(c: f64, alpha: f64, sign: Sign) -> RadialProfile {
    RadialProfile::Logpow { c, alpha, sign }
}

#[test]
fn criterion_01_gs_reduced_matrix_is_minus_half_g() {
    report(1, "planar GS fields reduce to R = -g/2", Duration::from_secs(5), || {
        let families = [
            RadialProfile::Power { c: 0.3, gamma: 0.5 },
            RadialProfile::Power { c: 0.2, gamma: 1.0 },
            logpow(1.0, 0.75, Sign::Plus),
            logpow(0.5, 1.0, Sign::Minus),
            RadialProfile::Sinlog { c: 0.5, alpha: 1.0 },
        ];
        let q = build_quadrature(2, 16).map_err(|e| e.to_string())?;
        let radii = dyadic_grid(0.5, 40);
        let mut worst: f64 = 0.0;
        for g in families {
            let a = gs_field(2, g);
            let rs = compute_r_halfspace(Arc::new(a), &q, &radii).map_err(|e| e.to_string())?;
            for (k, &r) in radii.iter().enumerate() {
                worst = worst.max((rs.r[k][(0, 0)] + 0.5 * g.value(r)).abs());
            }
        }
        ensure(worst < 1e-10, || format!("max |R + g/2| = {worst:e}"))?;
        Ok(format!("5 families x 40 radii, max |R + g/2| = {worst:.2e}"))
    });
}

#[test]
fn criterion_02_identity_coefficients_are_trivial() {
    report(2, "identity coefficients give R = 0 and differentiability", Duration::from_secs(5), || {
        let mut worst: f64 = 0.0;
        let cfg = StabilityConfig::default();
        for n in 2..=4 {
            let q = build_quadrature(n, 16).map_err(|e| e.to_string())?;
            let a = identity_field(n);
            let rs = compute_r_halfspace(Arc::new(a.clone()), &q, &dyadic_grid(0.5, 40)).map_err(|e| e.to_string())?;
            worst = worst.max(rs.max_norm());
            let (v, _) = classify(&a, None, &cfg).map_err(|e| e.to_string())?;
            ensure(v.regularity == Regularity::DifferentiableAtZero, || {
                format!("n = {n}: verdict {:?}", v.regularity)
            })?;
        }
        ensure(worst < 1e-12, || format!("max |R| = {worst:e}"))?;
        Ok(format!("n = 2, 3, 4 all DifferentiableAtZero, max |R| = {worst:.2e}"))
    });
}

#[test]
fn criterion_03_counterexample_is_realized() {
    report(3, "g = (1 - log r)^-3/4 loses the Lipschitz bound", Duration::from_secs(30), || {
        let g = logpow(1.0, 0.75, Sign::Plus);
        let (v, _) = classify(&gs_field(2, g), None, &StabilityConfig::default()).map_err(|e| e.to_string())?;
        ensure(v.regularity == Regularity::NoGuarantee && v.stability == Stability::NotUniformlyStable, || {
            format!("verdict {:?} / {:?}", v.regularity, v.stability)
        })?;
        let run = solve_gs_ode(&g, 40.0, 1e-11).map_err(|e| e.to_string())?;
        let window: Vec<f64> =
            run.t.iter().zip(&run.rho).filter(|(t, _)| **t >= 10.0 - 1e-9).map(|(_, r)| *r).collect();
        ensure(window.windows(2).all(|w| w[1] > w[0]), || "rho is not increasing on [10, 40]".into())?;
        let ratio = run.rho_at(40.0) / run.rho_at(10.0);
        let quad = integrate(|s| g.in_t(s), 10.0, 40.0, 1e-14, 1e-12, 200).value;
        let predicted = (0.5 * quad).exp();
        let rel = (ratio / predicted - 1.0).abs();
        ensure(ratio > 3.0, || format!("rho(40)/rho(10) = {ratio}"))?;
        ensure(rel < 0.25, || format!("ratio {ratio} vs predicted {predicted}"))?;
        Ok(format!(
            "NoGuarantee (K = {:.1}); rho(40)/rho(10) = {ratio:.3}, exp(1/2 int g) = {predicted:.3} ({:.1}% off)",
            v.evidence.k_stat,
            100.0 * rel
        ))
    });
}

#[test]
fn criterion_04_negative_profile_has_zero_derivative() {
    report(4, "g = -(1 - log r)^-3/4 gives a vanishing derivative", Duration::from_secs(30), || {
        let g = logpow(1.0, 0.75, Sign::Minus);
        let (v, _) = classify(&gs_field(2, g), None, &StabilityConfig::default()).map_err(|e| e.to_string())?;
        ensure(v.evidence.mu_cond2 == Criterion::Holds, || format!("mu criterion: {:?}", v.evidence.mu_cond2))?;
        ensure(v.regularity == Regularity::DifferentiableAtZero, || format!("verdict {:?}", v.regularity))?;
        ensure(v.gradient_claim.as_deref() == Some("all derivatives zero"), || {
            format!("gradient claim {:?}", v.gradient_claim)
        })?;
        let run = solve_gs_ode(&g, 40.0, 1e-11).map_err(|e| e.to_string())?;
        ensure(run.rho.windows(2).all(|w| w[1] < w[0]), || "rho is not decreasing".into())?;
        let emp = measure_regularity(&run).map_err(|e| e.to_string())?;
        ensure(emp.trend == Trend::Vanishing, || format!("trend {:?}", emp.trend))?;
        Ok(format!(
            "mu criterion holds, DifferentiableAtZero with zero gradient; rho falls to {:.3e}",
            run.rho.last().unwrap()
        ))
    });
}

#[test]
fn criterion_05_parabolic_boundary_closed_form() {
    report(5, "h = x^2 with a = I gives R = 8r/(3 pi)", Duration::from_secs(10), || {
        let h = BoundaryGraph::new(2, GraphProfile::Power { c: 1.0, gamma: 2.0 }, &LogGrid::default())
            .map_err(|e| e.to_string())?;
        let a = identity_field(2);
        let q = build_quadrature(2, 16).map_err(|e| e.to_string())?;
        let radii = dyadic_grid(0.5, 40);
        let rs = compute_r_curved(Arc::new(a.clone()), &h, &q, &radii, true).map_err(|e| e.to_string())?;
        let worst = radii
            .iter()
            .enumerate()
            .map(|(k, r)| (rs.r[k][(0, 0)] - 8.0 * r / (3.0 * std::f64::consts::PI)).abs())
            .fold(0.0, f64::max);
        ensure(worst < 1e-10, || format!("max deviation {worst:e}"))?;
        let (v, _) = classify(&a, Some(&h), &StabilityConfig::default()).map_err(|e| e.to_string())?;
        ensure(v.regularity == Regularity::DifferentiableAtZero, || format!("verdict {:?}", v.regularity))?;
        Ok(format!("max |R - 8r/(3 pi)| = {worst:.2e}; DifferentiableAtZero"))
    });
}

#[test]
fn criterion_06_expansion_remainders_are_quadratic() {
    report(6, "second-order remainders of M and R_1 scale like eps^2", Duration::from_secs(60), || {
        // For GS fields the second-order part of M cancels exactly, so its
        // fitted constant is pure round-off. Fits below this floor count as a
        // vanishing remainder; the tilt fields then supply a remainder that is
        // genuinely quadratic.
        const ROUND_OFF: f64 = 1e-9;
        let stable = |x: f64, y: f64| x > 0.0 && y > 0.0 && x.max(y) < 2.0 * x.min(y);
        let vanishing = |x: f64, y: f64| x.abs() < ROUND_OFF && y.abs() < ROUND_OFF;
        let q = build_quadrature(3, 16).map_err(|e| e.to_string())?;
        let mut lines = Vec::new();
        for (name, tilt) in [("GS", false), ("tilt", true)] {
            for delta in [0.05, 0.1, 0.2] {
                let e = logpow(delta, 1.0, Sign::Plus);
                let a = if tilt { tilt_field(3, e) } else { gs_field(3, e) };
                let eps = epsilon_of_t(a.modulus());
                let mut fits = Vec::new();
                for step in [0.5, 0.25] {
                    let grid: Vec<f64> = (0..=(30.0 / step) as usize).map(|i| i as f64 * step).collect();
                    let sys = assemble_system(&a, &q, &grid, &eps).map_err(|e| e.to_string())?;
                    fits.push((sys.c_m, sys.c_r1));
                }
                let (c0, c1) = (fits[0], fits[1]);
                let m_ok = if tilt { stable(c0.0, c1.0) } else { stable(c0.0, c1.0) || vanishing(c0.0, c1.0) };
                ensure(m_ok && stable(c0.1, c1.1), || {
                    format!("{name} delta = {delta}: fits {c0:?} vs {c1:?} under grid doubling")
                })?;
                let m = if vanishing(c0.0, c1.0) {
                    format!("S_2 vanishes (c_M {:.1e})", c0.0.max(c1.0))
                } else {
                    format!("c_M {:.3}/{:.3}", c0.0, c1.0)
                };
                lines.push(format!("{name} delta {delta}: {m}, c_R1 {:.3}/{:.3}", c0.1, c1.1));
            }
        }
        Ok(lines.join("; "))
    });
}

#[test]
fn criterion_07_kernel_fidelity() {
    report(7, "Neumann kernel series, projection and boundary condition", Duration::from_secs(60), || {
        let cfg = KernelConfig::new(3, 12).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let dir = |rng: &mut ChaCha8Rng| loop {
            let v: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let r = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if r > 0.1 && r <= 1.0 {
                let mut d: Vec<f64> = v.iter().map(|x| x / r).collect();
                d[2] = d[2].abs();
                return d;
            }
        };
        let mut series_err: f64 = 0.0;
        for _ in 0..32 {
            let ry = rng.random_range(0.5..2.0);
            let y: Vec<f64> = dir(&mut rng).into_iter().map(|v| v * ry).collect();
            let x: Vec<f64> = dir(&mut rng).into_iter().map(|v| v * 0.3 * ry).collect();
            let e = (series_n(&cfg, &x, &y).map_err(|e| e.to_string())? - neumann_n(3, &x, &y).unwrap()).abs();
            series_err = series_err.max(e);
        }
        ensure(series_err < 1e-8, || format!("series error {series_err:e}"))?;

        let q = build_quadrature(3, 24).map_err(|e| e.to_string())?;
        let mut pn_err: f64 = 0.0;
        for _ in 0..4 {
            let y = dir(&mut rng);
            let f = Polar(|r: f64, th: &[f64]| {
                let x: Vec<f64> = th.iter().map(|t| r * t).collect();
                neumann_n(3, &x, &y).unwrap()
            });
            let proj = project_p(&q, &f, 0.3).map_err(|e| e.to_string())?;
            for (th, _) in q.iter() {
                let x: Vec<f64> = th.iter().map(|t| 0.3 * t).collect();
                let (pn, _) = pn_and_perp(&cfg, &x, &y).map_err(|e| e.to_string())?;
                pn_err = pn_err.max((pn - proj.at(th)).abs());
            }
        }
        ensure(pn_err < 1e-8, || format!("PN error {pn_err:e}"))?;

        let mut normal: f64 = 0.0;
        for _ in 0..32 {
            let mut x = dir(&mut rng);
            x[2] = 0.0;
            let y: Vec<f64> = dir(&mut rng).into_iter().map(|v| 1.5 * v).collect();
            normal = normal.max(neumann_grad_x(3, &x, &y).map_err(|e| e.to_string())?[2].abs());
        }
        ensure(normal < 1e-10, || format!("normal derivative {normal:e}"))?;
        Ok(format!("series {series_err:.2e}, PN {pn_err:.2e}, normal derivative {normal:.2e}"))
    });
}

#[test]
fn criterion_08_annulus_estimate_for_the_potential() {
    report(8, "annulus estimate for the remainder potential", Duration::from_secs(300), || {
        let cfg = KernelConfig::new(3, 12).map_err(|e| e.to_string())?;
        let grid = [2.5e-4, 2.5e-3, 2.5e-2, 0.25];
        let mut lines = Vec::new();
        for (name, src) in [
            ("normal", SourceData::bump_normal(3)),
            ("quadrupole", SourceData::bump_quadrupole(3)),
            ("vector", SourceData::bump_vector(3)),
        ] {
            let res = prop1_check(&cfg, &src, 4.0, &grid).map_err(|e| e.to_string())?;
            ensure(res.pass && res.decades >= 3.0, || format!("{name}: {res:?}"))?;
            lines.push(format!("{name} c = {:.4} (refined {:.4})", res.c, res.c_refined));
        }
        Ok(format!("3 decades; {}", lines.join(", ")))
    });
}

#[test]
fn criterion_09_forced_system_bounds() {
    report(9, "forced system stays bounded on stable systems", Duration::from_secs(60), || {
        let a = gs_field(3, logpow(0.05, 1.0, Sign::Plus));
        let eps = epsilon_of_t(a.modulus());
        let q = build_quadrature(3, 12).map_err(|e| e.to_string())?;
        let grid: Vec<f64> = (0..=300).map(|i| i as f64 * 0.1).collect();
        let sys = assemble_system(&a, &q, &grid, &eps).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let (mut c_phi, mut c_psi) = (0.0f64, 0.0f64);
        for _ in 0..10 {
            let amp = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let decay = rng.random_range(0.5..2.0);
            let phi0 = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let g = Forcing::new(move |t| amp.iter().map(|a| a * (-decay * t).exp()).collect(), |_| vec![0.0; 2]);
            let st = integrate_forced(&sys, &g, &phi0, None, 0.5).map_err(|e| e.to_string())?;
            c_phi = c_phi.max(st.bounds.c_phi);
            c_psi = c_psi.max(st.bounds.c_psi);
        }
        ensure(c_phi < 100.0 && c_psi < 100.0, || format!("c_phi {c_phi}, c_psi {c_psi}"))?;
        Ok(format!("10 runs: fitted c_phi = {c_phi:.3}, c_psi = {c_psi:.3}"))
    });
}

#[test]
fn criterion_10_geometry_invariants() {
    report(10, "half-sphere identities, projection and remainder", Duration::from_secs(10), || {
        let mut worst_cn: f64 = 0.0;
        for n in 2..=4 {
            let q = build_quadrature(n, 16).map_err(|e| e.to_string())?;
            for m in 0..n {
                worst_cn = worst_cn.max((q.mean_of(|th| th[m] * th[m]) - 1.0 / n as f64).abs());
            }
        }
        ensure(worst_cn < 1e-10, || format!("c_n deviation {worst_cn:e}"))?;

        let q = build_quadrature(3, 16).map_err(|e| e.to_string())?;
        let u = Cartesian(|x: &[f64]| x[0].exp() * x[1].cos() + x[2] * x[2] + 0.3 * x[1]);
        let p1 = project_p(&q, &u, 0.4).map_err(|e| e.to_string())?;
        let p2 = project_p(&q, &p1, 0.4).map_err(|e| e.to_string())?;
        let idem = (p1.mean - p2.mean)
            .abs()
            .max(p1.moments.iter().zip(&p2.moments).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        ensure(idem < 1e-12, || format!("P is not idempotent: {idem:e}"))?;

        let grid = dyadic_grid(0.5, 8);
        let d = decompose(&q, &u, &grid).map_err(|e| e.to_string())?;
        let moment = d.max_moment_residual();
        ensure(moment < 1e-10, || format!("remainder moments {moment:e}"))?;
        let res = orthogonality_residuals(&q, &d.w, 0.25, 1e-3).map_err(|e| e.to_string())?;
        let (a, b, c) = res.as_tuple();
        let lemma = a.abs().max(b.abs()).max(c.abs());
        ensure(lemma < 1e-6, || format!("orthogonality residuals {res:?}"))?;
        Ok(format!(
            "c_n {worst_cn:.1e}, idempotence {idem:.1e}, remainder moments {moment:.1e}, orthogonality {lemma:.1e}"
        ))
    });
}
