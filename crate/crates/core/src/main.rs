use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use neureg::cli::{self, exit, resolve_output_dir, CliError, Outcome, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "neureg", version, about = "Boundary regularity for co-normal problems at a boundary point")]
struct Args {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides NEUREG_OUT_DIR and the configuration).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    t_max: Option<f64>,
    /// Half-sphere quadrature order.
    #[arg(long, global = true)]
    order: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Exit with code 3 when the verdict is inconclusive.
    #[arg(long, global = true)]
    decisive: bool,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Classify the regularity at the origin.
    Classify,
    /// Classify, run the planar ODE reference and compare.
    Verify,
    /// Check the Neumann kernel expansion and the annulus estimate.
    KernelCheck,
    /// Classify over a grid of family parameters.
    Sweep,
}

fn run(args: &Args) -> Result<(Outcome, PathBuf), CliError> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(t) = args.t_max {
        cfg.stability.t_max = t;
    }
    if let Some(o) = args.order {
        cfg.stability.order = o;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let dir = resolve_output_dir(args.out.as_deref(), &cfg);
    cfg.output_dir = dir.display().to_string();
    let mut outcome = match args.command {
        Command::Classify => cli::cmd_classify(&cfg, args.decisive)?,
        Command::Verify => cli::cmd_verify(&cfg, args.decisive)?,
        Command::KernelCheck => cli::cmd_kernel_check(&cfg)?,
        Command::Sweep => cli::cmd_sweep(&cfg)?,
    };
    let path = outcome.write(&dir)?;
    Ok((outcome, path))
}

fn summary(o: &Outcome) -> String {
    let r = &o.report;
    let mut parts = Vec::new();
    if let Some(v) = &r.verdict {
        parts.push(format!("verdict: {:?}", v.regularity));
        if let Some(c) = &v.gradient_claim {
            parts.push(c.clone());
        }
    }
    if let Some(a) = &r.adjudication {
        parts.push(format!("adjudication: {:?}", a.agreement));
    }
    if let Some(k) = &r.kernel {
        parts.push(format!(
            "kernel checks: {} (series err {:.2e}, PN err {:.2e}, c = {:.4})",
            if k.all_pass { "pass" } else { "FAIL" },
            k.series_max_error,
            k.pn_max_error,
            k.prop1_c
        ));
    }
    if !r.sweep.is_empty() {
        parts.push(format!("sweep: {} points", r.sweep.len()));
    }
    parts.join("; ")
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok((outcome, path)) => {
            println!("{}", summary(&outcome));
            println!("report: {}", path.display());
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit::ERROR as u8)
        }
    }
}
