//! The subcommands. Each returns an [`Outcome`] without touching the file
//! system; [`Outcome::write`] persists it.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::coefficients::{
    certify_profile_field, validate_field, BoundaryGraph, CoefficientField, GsField, IdentityField, LogGrid,
    MatrixField, ModulusOfContinuity, RadialProfile, TiltField,
};
use crate::geometry::{build_quadrature, dyadic_grid, project_p, Polar};
use crate::kernel::{
    a0, neumann_grad_x, neumann_n, pn_and_perp, prop1_check, series_n, series_tail_bound, KernelConfig,
    SourceData,
};
use crate::oracle::{adjudicate, measure_regularity, outside_theory, solve_gs_ode_from, Agreement};
use crate::reduction::{compute_r_halfspace, ReducedSystem};
use crate::stability::{
    classify_reduced, reduced_system_for, FundamentalTrajectory, Regularity, RegularityVerdict,
};

use super::config::{FieldSpec, SourceKind, SweepParameter};
use super::report::{KernelCheckSummary, ReducedSample, SweepEntry};
use super::{exit, CliError, Report, RunConfig};

/// A finished command: its report, CSV artifacts and exit code.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: Report,
    pub csv: Vec<(&'static str, String)>,
    pub exit_code: i32,
}

impl Outcome {
    pub fn write(&mut self, dir: &Path) -> Result<PathBuf, CliError> {
        self.report.write(dir, &self.csv)
    }
}

/// The certified coefficient field described by the configuration.
pub fn build_field(cfg: &RunConfig) -> Result<CoefficientField, CliError> {
    let n = cfg.n;
    let q = build_quadrature(n, cfg.stability.order)?;
    let r_grid = dyadic_grid(cfg.r_max, cfg.levels);
    let grid = LogGrid::default();
    Ok(match cfg.problem.field {
        FieldSpec::Identity => {
            validate_field(Arc::new(IdentityField { n }), &ModulusOfContinuity::zero(), &q, &r_grid)?
        }
        FieldSpec::Gs { g } => certify_profile_field(Arc::new(GsField { n, g }), &g, &q, &r_grid, &grid)?,
        FieldSpec::Tilt { e } => certify_profile_field(Arc::new(TiltField { n, e }), &e, &q, &r_grid, &grid)?,
    })
}

fn raw_field(cfg: &RunConfig) -> Arc<dyn MatrixField> {
    let n = cfg.n;
    match cfg.problem.field {
        FieldSpec::Identity => Arc::new(IdentityField { n }),
        FieldSpec::Gs { g } => Arc::new(GsField { n, g }),
        FieldSpec::Tilt { e } => Arc::new(TiltField { n, e }),
    }
}

struct Classified {
    verdict: RegularityVerdict,
    trajectory: FundamentalTrajectory,
    reduced: ReducedSystem,
}

/// Coefficients, reduction and stability. Profiles on the square-Dini
/// boundary cannot be certified; they are reduced directly and their
/// verdict is forced to `Inconclusive`.
fn run_classification(cfg: &RunConfig) -> Result<Classified, CliError> {
    let q = build_quadrature(cfg.n, cfg.stability.order)?;
    let t_grid = cfg.stability.t_grid();
    let profile = cfg.problem.field.profile();
    let reduced = if outside_theory(&profile) && cfg.problem.boundary.is_none() {
        let r_grid: Vec<f64> = t_grid.iter().map(|t| (-t).exp()).collect();
        compute_r_halfspace(raw_field(cfg), &q, &r_grid)?
    } else {
        let a = build_field(cfg)?;
        let h = match cfg.problem.boundary {
            Some(p) => Some(BoundaryGraph::new(cfg.n, p, &LogGrid::default())?),
            None => None,
        };
        reduced_system_for(&a, h.as_ref(), &q, &t_grid)?
    };
    let (mut verdict, trajectory) = classify_reduced(&reduced, &cfg.stability)?;
    if outside_theory(&profile) {
        verdict.regularity = Regularity::Inconclusive;
        verdict.gradient_claim = None;
        verdict.evidence.flags.push("outside theory: the modulus is not square-Dini".into());
    }
    Ok(Classified { verdict, trajectory, reduced })
}

fn reduced_csv(rsys: &ReducedSystem) -> String {
    let m = rsys.n - 1;
    let mut s = String::from("r,mu");
    for i in 0..m {
        for j in 0..m {
            s.push_str(&format!(",R{}{}", i + 1, j + 1));
        }
    }
    s.push('\n');
    for (k, r) in rsys.r_grid.iter().enumerate() {
        s.push_str(&format!("{r:e},{:e}", rsys.mu[k]));
        for i in 0..m {
            for j in 0..m {
                s.push_str(&format!(",{:e}", rsys.r[k][(i, j)]));
            }
        }
        s.push('\n');
    }
    s
}

fn reduced_samples(rsys: &ReducedSystem, t_max: f64) -> Vec<ReducedSample> {
    [2.0, 5.0, 10.0, 20.0]
        .into_iter()
        .filter(|t| *t <= t_max)
        .filter_map(|t| {
            let r = (-t as f64).exp();
            rsys.r_at(r).ok().map(|m| ReducedSample { r, matrix: m.transpose().iter().copied().collect() })
        })
        .collect()
}

fn inconclusive_exit(verdict: &RegularityVerdict, decisive: bool) -> i32 {
    if decisive && verdict.regularity == Regularity::Inconclusive {
        exit::INCONCLUSIVE
    } else {
        exit::OK
    }
}

pub fn cmd_classify(cfg: &RunConfig, decisive: bool) -> Result<Outcome, CliError> {
    cfg.validate()?;
    let c = run_classification(cfg)?;
    let mut report = Report::new("classify", cfg);
    report.reduced_samples = reduced_samples(&c.reduced, cfg.stability.t_max);
    let exit_code = inconclusive_exit(&c.verdict, decisive);
    report.verdict = Some(c.verdict);
    Ok(Outcome {
        report,
        csv: vec![("trajectory.csv", c.trajectory.to_csv()), ("reduced.csv", reduced_csv(&c.reduced))],
        exit_code,
    })
}

fn gs_profile(cfg: &RunConfig) -> Result<RadialProfile, CliError> {
    match (cfg.n, cfg.problem.field, cfg.problem.boundary) {
        (2, FieldSpec::Gs { g }, None) => Ok(g),
        (2, FieldSpec::Identity, None) => Ok(RadialProfile::Zero),
        _ => Err(CliError::ConfigInvalid("verify needs n = 2, a GS or identity field and a flat boundary".into())),
    }
}

pub fn cmd_verify(cfg: &RunConfig, decisive: bool) -> Result<Outcome, CliError> {
    cfg.validate()?;
    let g = gs_profile(cfg)?;
    let c = run_classification(cfg)?;
    let run = solve_gs_ode_from(&g, cfg.oracle.t_start, cfg.stability.t_max, cfg.oracle.tol)?;
    let emp = measure_regularity(&run)?;
    let adj = adjudicate(&c.verdict, &emp);
    let mut report = Report::new("verify", cfg);
    let exit_code = match adj.agreement {
        Agreement::Contradiction => exit::CONTRADICTION,
        Agreement::Unresolved if decisive => exit::INCONCLUSIVE,
        _ => inconclusive_exit(&c.verdict, decisive),
    };
    report.reduced_samples = reduced_samples(&c.reduced, cfg.stability.t_max);
    report.notes.push(format!(
        "oracle residual {:.3e}, forward deviation {:.3e}",
        run.residual, run.forward_deviation
    ));
    report.verdict = Some(c.verdict);
    report.adjudication = Some(adj);
    Ok(Outcome {
        report,
        csv: vec![
            ("trajectory.csv", c.trajectory.to_csv()),
            ("reduced.csv", reduced_csv(&c.reduced)),
            ("oracle.csv", run.to_csv()),
        ],
        exit_code,
    })
}

fn source_for(kind: SourceKind, n: usize) -> SourceData {
    match kind {
        SourceKind::Normal => SourceData::bump_normal(n),
        SourceKind::Quadrupole => SourceData::bump_quadrupole(n),
        SourceKind::Vector => SourceData::bump_vector(n),
        SourceKind::Zero => SourceData::zero(n),
    }
}

fn random_upper_direction(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if r > 0.1 && r <= 1.0 {
            let mut d: Vec<f64> = v.iter().map(|x| x / r).collect();
            d[n - 1] = d[n - 1].abs();
            return d;
        }
    }
}

pub fn cmd_kernel_check(cfg: &RunConfig) -> Result<Outcome, CliError> {
    cfg.validate()?;
    let n = cfg.n;
    if n < 3 {
        return Err(CliError::ConfigInvalid("kernel-check needs n ≥ 3".into()));
    }
    let kc = &cfg.kernel;
    let kcfg = KernelConfig::new(n, kc.k_max)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut csv = String::from("check,index,value,allowed\n");

    let mut series_max_error: f64 = 0.0;
    let mut series_ok = true;
    for i in 0..kc.samples {
        let ry = rng.random_range(0.5..2.0);
        let y: Vec<f64> = random_upper_direction(&mut rng, n).into_iter().map(|v| v * ry).collect();
        let x: Vec<f64> = random_upper_direction(&mut rng, n).into_iter().map(|v| v * ry * kc.ratio).collect();
        let err = (series_n(&kcfg, &x, &y)? - neumann_n(n, &x, &y)?).abs();
        let allowed = 1e-8 + 2.0 * a0(n).abs() * series_tail_bound(n, kc.k_max, kc.ratio) / ry.powi(n as i32 - 2);
        series_ok &= err <= allowed;
        series_max_error = series_max_error.max(err);
        csv.push_str(&format!("series,{i},{err:e},{allowed:e}\n"));
    }

    let q = build_quadrature(n, 24)?;
    let mut pn_max_error: f64 = 0.0;
    for i in 0..4 {
        let y = random_upper_direction(&mut rng, n);
        let f = Polar(|r: f64, th: &[f64]| {
            let x: Vec<f64> = th.iter().map(|t| r * t).collect();
            neumann_n(n, &x, &y).unwrap_or(f64::NAN)
        });
        let proj = project_p(&q, &f, 0.3)?;
        for (th, _) in q.iter() {
            let x: Vec<f64> = th.iter().map(|t| 0.3 * t).collect();
            let (pn, _) = pn_and_perp(&kcfg, &x, &y)?;
            pn_max_error = pn_max_error.max((pn - proj.at(th)).abs());
        }
        csv.push_str(&format!("pn,{i},{pn_max_error:e},1e-8\n"));
    }

    let mut normal_derivative_max: f64 = 0.0;
    for i in 0..kc.samples {
        let mut x = random_upper_direction(&mut rng, n);
        x[n - 1] = 0.0;
        let y: Vec<f64> = random_upper_direction(&mut rng, n).into_iter().map(|v| 1.5 * v).collect();
        let g = neumann_grad_x(n, &x, &y)?;
        normal_derivative_max = normal_derivative_max.max(g[n - 1].abs());
        csv.push_str(&format!("normal,{i},{:e},1e-10\n", g[n - 1].abs()));
    }

    let src = source_for(kc.source, n);
    let prop = prop1_check(&kcfg, &src, kc.p, &kc.r_grid)?;
    let mut prop_csv = String::from("r,lhs,rhs\n");
    for i in 0..prop.r_grid.len() {
        prop_csv.push_str(&format!("{:e},{:e},{:e}\n", prop.r_grid[i], prop.lhs[i], prop.rhs[i]));
    }

    let all_pass = series_ok && pn_max_error < 1e-8 && normal_derivative_max < 1e-10 && prop.pass;
    let mut report = Report::new("kernel-check", cfg);
    report.kernel = Some(KernelCheckSummary {
        n,
        k_max: kc.k_max,
        ratio: kc.ratio,
        series_max_error,
        pn_max_error,
        normal_derivative_max,
        prop1_c: prop.c,
        prop1_c_refined: prop.c_refined,
        prop1_decades: prop.decades,
        prop1_pass: prop.pass,
        all_pass,
    });
    Ok(Outcome {
        report,
        csv: vec![("kernel_checks.csv", csv), ("prop1.csv", prop_csv)],
        exit_code: if all_pass { exit::OK } else { exit::CONTRADICTION },
    })
}

fn with_parameter(p: RadialProfile, which: SweepParameter, v: f64) -> Result<RadialProfile, CliError> {
    use RadialProfile as R;
    use SweepParameter as S;
    Ok(match (p, which) {
        (R::Constant { .. }, S::C) => R::Constant { c: v },
        (R::Power { gamma, .. }, S::C) => R::Power { c: v, gamma },
        (R::Power { c, .. }, S::Gamma) => R::Power { c, gamma: v },
        (R::Logpow { alpha, sign, .. }, S::C) => R::Logpow { c: v, alpha, sign },
        (R::Logpow { c, sign, .. }, S::Alpha) => R::Logpow { c, alpha: v, sign },
        (R::Sinlog { alpha, .. }, S::C) => R::Sinlog { c: v, alpha },
        (R::Sinlog { c, .. }, S::Alpha) => R::Sinlog { c, alpha: v },
        _ => {
            return Err(CliError::ConfigInvalid(format!(
                "the {} family has no parameter {which:?}",
                p.label()
            )))
        }
    })
}

fn sweep_point(cfg: &RunConfig, value: f64) -> SweepEntry {
    let profile = cfg.problem.field.profile();
    let mut entry = SweepEntry {
        value,
        profile: profile.label(),
        regularity: None,
        k_stat: None,
        empirical: None,
        agreement: None,
        error: None,
    };
    let point = match with_parameter(profile, cfg.sweep.parameter, value) {
        Ok(p) => p,
        Err(e) => {
            entry.error = Some(e.to_string());
            return entry;
        }
    };
    entry.profile = point.label();
    let mut local = cfg.clone();
    local.problem.field = cfg.problem.field.with_profile(point);
    match run_classification(&local) {
        Ok(c) => {
            entry.regularity = Some(format!("{:?}", c.verdict.regularity));
            entry.k_stat = Some(c.verdict.evidence.k_stat);
            if cfg.sweep.with_oracle && cfg.n == 2 {
                match solve_gs_ode_from(&point, cfg.oracle.t_start, cfg.stability.t_max, cfg.oracle.tol)
                    .map_err(CliError::from)
                    .and_then(|run| measure_regularity(&run).map_err(CliError::from))
                {
                    Ok(emp) => {
                        entry.agreement = Some(format!("{:?}", adjudicate(&c.verdict, &emp).agreement));
                        entry.empirical = Some(emp);
                    }
                    Err(e) => entry.error = Some(e.to_string()),
                }
            }
        }
        Err(e) => entry.error = Some(e.to_string()),
    }
    entry
}

/// Classifies every value of one family parameter, in parallel.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<Outcome, CliError> {
    cfg.validate()?;
    if matches!(cfg.problem.field, FieldSpec::Identity) {
        return Err(CliError::ConfigInvalid("sweep needs a GS or tilt field".into()));
    }
    with_parameter(cfg.problem.field.profile(), cfg.sweep.parameter, cfg.sweep.values[0])?;
    let entries: Vec<SweepEntry> = cfg.sweep.values.par_iter().map(|&v| sweep_point(cfg, v)).collect();
    let mut csv = String::from("value,profile,regularity,k_stat,trend,agreement,error\n");
    for e in &entries {
        csv.push_str(&format!(
            "{},\"{}\",{},{},{},{},\"{}\"\n",
            e.value,
            e.profile,
            e.regularity.as_deref().unwrap_or(""),
            e.k_stat.map(|k| format!("{k:e}")).unwrap_or_default(),
            e.empirical.as_ref().map(|m| format!("{:?}", m.trend)).unwrap_or_default(),
            e.agreement.as_deref().unwrap_or(""),
            e.error.as_deref().unwrap_or("")
        ));
    }
    let contradiction = entries.iter().any(|e| e.agreement.as_deref() == Some("Contradiction"));
    let mut report = Report::new("sweep", cfg);
    report.sweep = entries;
    Ok(Outcome {
        report,
        csv: vec![("sweep.csv", csv)],
        exit_code: if contradiction { exit::CONTRADICTION } else { exit::OK },
    })
}
