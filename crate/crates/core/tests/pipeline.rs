//! End-to-end behaviour across modules: forced system, classification over
//! varying horizons, oracle agreement and configuration handling.

use std::sync::Arc;

use neureg::cli::config::{FieldSpec, Problem};
use neureg::cli::{cmd_classify, cmd_verify, RunConfig};
use neureg::coefficients::{
    certify_profile_field, epsilon_of_t, validate_field, CoefficientField, GsField, IdentityField, LogGrid,
    ModulusOfContinuity, RadialProfile, Sign,
};
use neureg::geometry::{build_quadrature, dyadic_grid};
use neureg::oracle::{adjudicate, measure_regularity, solve_gs_ode, Agreement, Trend};
use neureg::reduction::{assemble_system, AssembledSystem};
use neureg::stability::{
    classify, integrate_forced, Criterion, Forcing, Regularity, StabilityConfig, StabilityError,
};

fn gs(n: usize, g: RadialProfile) -> CoefficientField {
    let q = build_quadrature(n, 8).unwrap();
    certify_profile_field(Arc::new(GsField { n, g }), &g, &q, &dyadic_grid(0.5, 30), &LogGrid::default()).unwrap()
}

fn identity(n: usize) -> CoefficientField {
    let q = build_quadrature(n, 8).unwrap();
    validate_field(Arc::new(IdentityField { n }), &ModulusOfContinuity::zero(), &q, &dyadic_grid(0.5, 30))
        .unwrap()
}

fn logpow(c: f64, alpha: f64, sign: Sign) -> RadialProfile {
    RadialProfile::Logpow { c, alpha, sign }
}

fn grid(t_max: f64, h: f64) -> Vec<f64> {
    (0..=(t_max / h).round() as usize).map(|i| i as f64 * h).collect()
}

fn stable_system() -> AssembledSystem {
    let a = gs(3, logpow(0.05, 1.0, Sign::Plus));
    let eps = epsilon_of_t(a.modulus());
    let q = build_quadrature(3, 12).unwrap();
    assemble_system(&a, &q, &grid(20.0, 0.1), &eps).unwrap()
}

#[test]
fn bounded_solution_is_linear_in_the_forcing() {
    let sys = stable_system();
    let forcing = |s: f64| Forcing::new(move |t| vec![s * (-t).exp(), -0.5 * s * (-2.0 * t).exp()], |_| vec![0.0; 2]);
    let base = integrate_forced(&sys, &forcing(1.0), &[0.0, 0.0], None, 0.5).unwrap();
    for s in [2.0, 4.0] {
        let run = integrate_forced(&sys, &forcing(s), &[0.0, 0.0], None, 0.5).unwrap();
        for (a, b) in run.phi.iter().zip(&base.phi) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - s * y).abs() <= 1e-9 * (1.0 + s * y.abs()), "phi {x} vs {s} * {y}");
            }
        }
        assert!((run.bounds.c_phi - base.bounds.c_phi).abs() < 1e-9);
        assert!((run.bounds.g1_l1 - s * base.bounds.g1_l1).abs() < 1e-9);
    }
}

#[test]
fn unforced_unperturbed_psi_grows_like_exp_nt() {
    let n = 3;
    let sys = AssembledSystem::unperturbed(n, &grid(4.0, 0.05));
    let psi0 = [0.3, -0.7];
    let run = integrate_forced(&sys, &Forcing::zero(2), &[1.0, 2.0], Some(&psi0), 0.5).unwrap();
    for (t, (phi, psi)) in sys.t_grid.iter().zip(run.phi.iter().zip(&run.psi)) {
        let w = (-(n as f64) * t).exp();
        assert!((phi[0] - 1.0).abs() < 1e-10 && (phi[1] - 2.0).abs() < 1e-10);
        for (p, p0) in psi.iter().zip(&psi0) {
            assert!((p * w - p0).abs() < 1e-8, "psi e^(-nt) drifted at t = {t}");
        }
    }
}

#[test]
fn c_alpha_of_a_synthetic_forcing() {
    // g2 = ε(t) = e^{−t} gives c_α = sup (1 − e^{−(α+1)(T−t)})/(α+1) = 1/(α+1).
    // The tail integral is exact for piecewise-linear data, so the error is
    // the O(h²) interpolation error of e^{−t}.
    let alpha = 3.0 - 0.5;
    let exact = 1.0 / (alpha + 1.0);
    let err = |h: f64| {
        let sys = AssembledSystem::unperturbed(3, &grid(20.0, h));
        let g = Forcing::new(|_| vec![0.0; 2], |t| vec![(-t).exp(), 0.0]).with_eps(|t| (-t).exp());
        let run = integrate_forced(&sys, &g, &[0.0, 0.0], None, 0.5).unwrap();
        assert_eq!(run.bounds.alpha, alpha);
        assert!(run.bounds.c_psi.is_finite());
        (run.bounds.c_alpha - exact).abs()
    };
    let (coarse, fine) = (err(0.05), err(0.025));
    assert!(coarse < 1e-4, "c_alpha error {coarse:e}");
    assert!(fine < coarse / 3.5, "no second-order convergence: {coarse:e} then {fine:e}");
}

#[test]
fn malformed_forcing_is_rejected() {
    let sys = AssembledSystem::unperturbed(3, &grid(20.0, 0.1));
    let rejected = |r: Result<_, StabilityError>| matches!(r, Err(StabilityError::ForcingRejected(_)));

    let constant = Forcing::new(|_| vec![1.0, 0.0], |_| vec![0.0; 2]);
    assert!(rejected(integrate_forced(&sys, &constant, &[0.0, 0.0], None, 0.5)));

    let short = Forcing::new(|_| vec![0.0], |_| vec![0.0; 2]);
    assert!(rejected(integrate_forced(&sys, &short, &[0.0, 0.0], None, 0.5)));
    assert!(rejected(integrate_forced(&sys, &Forcing::zero(2), &[0.0], None, 0.5)));

    // g2 nonzero while the system's ε is identically zero.
    let g2 = Forcing::new(|_| vec![0.0; 2], |t| vec![(-t).exp(), 0.0]);
    assert!(rejected(integrate_forced(&sys, &g2, &[0.0, 0.0], None, 0.5)));

    let mut uneven = sys.clone();
    uneven.t_grid[1] = 0.03;
    assert!(rejected(integrate_forced(&uneven, &Forcing::zero(2), &[0.0, 0.0], None, 0.5)));
}

#[test]
fn longer_horizons_never_lower_k_stat() {
    let a = gs(2, logpow(0.5, 1.0, Sign::Plus));
    let mut last = 0.0;
    for t_max in [20.0, 30.0, 40.0] {
        let cfg = StabilityConfig { t_max, ..StabilityConfig::default() };
        let (v, traj) = classify(&a, None, &cfg).unwrap();
        assert!(v.evidence.k_stat >= last, "K_stat fell from {last} to {}", v.evidence.k_stat);
        assert!(traj.k_max() >= 1.0);
        last = v.evidence.k_stat;
    }
}

#[test]
fn stable_verdicts_persist_across_horizons() {
    for a in [identity(2), gs(2, logpow(0.3, 1.5, Sign::Minus)), identity(3)] {
        for t_max in [20.0, 40.0] {
            let cfg = StabilityConfig { t_max, ..StabilityConfig::default() };
            let (v, _) = classify(&a, None, &cfg).unwrap();
            assert_eq!(v.regularity, Regularity::DifferentiableAtZero, "n = {}, T = {t_max}", a.dim());
        }
    }
}

#[test]
fn planar_scalar_criteria_match_the_trajectory() {
    let cfg = StabilityConfig { t_max: 30.0, ..StabilityConfig::default() };
    let (v, _) = classify(&identity(2), None, &cfg).unwrap();
    let sc = v.evidence.scalar.as_ref().expect("planar criteria");
    assert_eq!((sc.lipschitz, sc.differentiable), (Criterion::Holds, Criterion::Holds));
    assert!(sc.integral.abs() < 1e-12);

    let (v, _) = classify(&gs(2, logpow(0.5, 0.75, Sign::Plus)), None, &cfg).unwrap();
    let sc = v.evidence.scalar.as_ref().unwrap();
    assert_eq!(sc.lipschitz, Criterion::Fails);
    assert_eq!(v.regularity, Regularity::NoGuarantee);
    assert!(v.evidence.flags.is_empty(), "{:?}", v.evidence.flags);
}

#[test]
fn oracle_agrees_with_classification() {
    let cfg = StabilityConfig::default();
    for (g, trend, regularity) in [
        (logpow(0.5, 0.75, Sign::Plus), Trend::Diverging, Regularity::NoGuarantee),
        (logpow(1.0, 0.75, Sign::Minus), Trend::Vanishing, Regularity::DifferentiableAtZero),
    ] {
        let (v, _) = classify(&gs(2, g), None, &cfg).unwrap();
        assert_eq!(v.regularity, regularity);
        let run = solve_gs_ode(&g, cfg.t_max, 1e-11).unwrap();
        let emp = measure_regularity(&run).unwrap();
        assert_eq!(emp.trend, trend);
        let adj = adjudicate(&v, &emp);
        assert_eq!(adj.agreement, Agreement::Consistent, "{}", adj.reason);
    }
}

fn sample_config() -> RunConfig {
    RunConfig {
        problem: Problem { field: FieldSpec::Gs { g: logpow(0.5, 1.0, Sign::Minus) }, boundary: None },
        stability: StabilityConfig { t_max: 25.0, ..StabilityConfig::default() },
        seed: 11,
        ..RunConfig::default()
    }
}

#[test]
fn configuration_round_trips_through_json() {
    let cfg = sample_config();
    let back = RunConfig::from_json(&cfg.to_json()).unwrap();
    assert_eq!(back, cfg);
    assert!(RunConfig::from_json(r#"{"n": 2, "unknown": 1}"#).is_err());
    assert!(RunConfig::from_json(r#"{"n": 9}"#).and_then(|c| c.validate()).is_err());
    assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
}

#[test]
fn reports_are_deterministic() {
    let cfg = sample_config();
    let a = cmd_classify(&cfg, false).unwrap().report.to_json();
    let b = cmd_classify(&cfg, false).unwrap().report.to_json();
    assert_eq!(a, b);
    let v = cmd_verify(&cfg, false).unwrap();
    assert_eq!(v.exit_code, 0);
    assert_eq!(v.report.to_json(), cmd_verify(&cfg, false).unwrap().report.to_json());
}

#[test]
fn documented_configurations_parse() {
    let chapter = include_str!("../../../book/src/configuration.md");
    let blocks: Vec<&str> =
        chapter.split("```json").skip(1).map(|b| b.split("```").next().unwrap()).collect();
    assert!(blocks.len() >= 2);
    assert_eq!(RunConfig::from_json(blocks[0]).unwrap(), RunConfig::default());
    for b in &blocks[1..] {
        RunConfig::from_json(b).unwrap().validate().unwrap();
    }
}
