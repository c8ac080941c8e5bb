//! `smoothctl`: run near-optimality experiments from a JSON spec.
//!
//! Exit codes: 0 success, 2 threshold missed, 3 solver failure, 4 invalid
//! spec, 1 anything else (I/O).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde_json::json;

use smoothctl_core::experiments::{self, ExperimentSpec};
use smoothctl_core::hjb;
use smoothctl_core::policy::{lipschitz_estimate, GridPolicy};
use smoothctl_core::Error;

#[derive(Parser)]
#[command(name = "smoothctl", version, about = "Smooth near-optimal feedback for controlled diffusions")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Args)]
struct Common {
    /// Experiment spec (JSON).
    spec: PathBuf,
    /// Override a spec field, e.g. `--set grid.spacing=[0.05]`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory; defaults to the spec's `output_dir`, then `out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ExperimentSpec, Error> {
        ExperimentSpec::load(&self.spec, &self.overrides)
    }

    fn out_dir(&self, spec: &ExperimentSpec) -> PathBuf {
        self.out
            .clone()
            .or_else(|| spec.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"))
    }
}

#[derive(Subcommand)]
enum Verb {
    /// Solve the dynamic programming equation and extract the selector.
    Solve(Common),
    /// Smooth a policy (the spec's selector by default) at bandwidth `eta`.
    Mollify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        eta: f64,
        /// Policy file to smooth instead of the selector.
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Cost of a stored policy under the spec's criterion and evaluation mode.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        policy: PathBuf,
    },
    /// Full pipeline: solve, smooth along the ladder, report the gaps.
    NearOpt(Common),
    /// Pairing gap against cost gap along the ladder; optionally constant shifts.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated shifts for the perturbation sweep.
        #[arg(long, value_delimiter = ',')]
        perturb: Vec<f64>,
        /// Required shrink factor of both columns at the final rung.
        #[arg(long, default_value_t = 0.05)]
        fraction: f64,
    },
    /// Sampled checks of the standing assumptions on the spec's grid.
    CheckAssumptions(Common),
}

enum Outcome {
    Done,
    Missed,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::NonConvergence { .. } | Error::NonMonotone { .. } | Error::Cfl { .. } | Error::OutOfDomain { .. } => 3,
        Error::InvalidInput(_) | Error::UnknownProblem { .. } | Error::Parse { .. } | Error::Json(_) => 4,
        Error::Io(_) => 1,
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), Error> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, contents)?;
    info!("wrote {}", path.display());
    Ok(())
}

fn read_policy(path: &Path) -> Result<GridPolicy, Error> {
    GridPolicy::from_text(&std::fs::read_to_string(path)?)
}

fn solve(c: &Common) -> Result<Outcome, Error> {
    let spec = c.load()?;
    let dir = c.out_dir(&spec);
    let base = experiments::solve_baseline(&spec)?;
    let value = &base.solution.value;
    write(&dir, "value.txt", &value.to_text())?;
    write(&dir, "value.csv", &value.to_csv())?;
    write(&dir, "residuals.csv", &value.stats.residuals_csv())?;
    write(&dir, "selector.txt", &base.selector.to_text())?;
    write(&dir, "selector.csv", &base.selector.to_csv())?;
    for x0 in spec.probes() {
        let line = json!({
            "probe": x0,
            "j_star": base.solution.cost_at(&x0),
            "selector_cost": base.selector_solution.cost_at(&x0),
            "iterations": value.stats.iterations,
        });
        println!("{line}");
    }
    Ok(Outcome::Done)
}

fn mollify(c: &Common, eta: f64, policy: Option<&Path>) -> Result<Outcome, Error> {
    let spec = c.load()?;
    let input = match policy {
        Some(p) => read_policy(p)?,
        None => experiments::solve_baseline(&spec)?.selector,
    };
    let smooth = experiments::smooth_selector(&input, eta)?;
    let dir = c.out_dir(&spec);
    write(&dir, "mollified.txt", &smooth.to_text())?;
    write(&dir, "mollified.csv", &smooth.to_csv())?;
    println!("{}", json!({"eta": eta, "lipschitz": lipschitz_estimate(&smooth), "spread": smooth.spread()}));
    Ok(Outcome::Done)
}

fn evaluate(c: &Common, policy: &Path) -> Result<Outcome, Error> {
    let spec = c.load()?;
    let problem = spec.build_problem()?;
    let grid = spec.grid.build()?;
    let policy = read_policy(policy)?;
    let pde = if spec.evaluation.uses_pde() {
        Some(hjb::evaluate_policy_pde(&problem, &policy, spec.criterion, &grid, &spec.solver)?)
    } else {
        None
    };
    for x0 in spec.probes() {
        let mc = match (&spec.mc, spec.evaluation.uses_mc()) {
            (Some(cfg), true) => Some(experiments::estimate_cost(&problem, &policy, spec.criterion, &x0, cfg)?),
            _ => None,
        };
        let line = json!({
            "probe": x0,
            "pde": pde.as_ref().map(|s| s.cost_at(&x0)),
            "mc": mc,
        });
        println!("{line}");
    }
    Ok(Outcome::Done)
}

fn near_opt(c: &Common) -> Result<Outcome, Error> {
    let spec = c.load()?;
    let dir = c.out_dir(&spec);
    let reports = experiments::run_near_optimality_probes(&spec)?;
    let mut missed = false;
    for (i, r) in reports.iter().enumerate() {
        let stem = if i == 0 { "gap_report".to_string() } else { format!("gap_report_probe{i}") };
        experiments::write_report(r, &dir, &stem)?;
        print!("{}", r.to_text());
        missed |= !r.threshold_met();
    }
    Ok(if missed { Outcome::Missed } else { Outcome::Done })
}

fn sweep(c: &Common, perturb: &[f64], fraction: f64) -> Result<Outcome, Error> {
    let spec = c.load()?;
    let dir = c.out_dir(&spec);
    let report = experiments::run_continuity_sweep(&spec)?;
    write(&dir, "continuity.csv", &report.to_csv())?;
    print!("{}", report.to_csv());
    println!(
        "pairing ratio {:.4e}, cost ratio {:.4e}",
        report.pairing_ratio(),
        report.cost_ratio()
    );
    if !perturb.is_empty() {
        let p = experiments::run_perturbation_sweep(&spec, perturb)?;
        write(&dir, "perturbation.csv", &p.to_csv())?;
        print!("{}", p.to_csv());
    }
    Ok(if report.passes(fraction) { Outcome::Done } else { Outcome::Missed })
}

fn check(c: &Common) -> Result<Outcome, Error> {
    let spec = c.load()?;
    let problem = spec.build_problem()?;
    let grid = spec.grid.build()?;
    let lattice = spec.solver.control_lattice(&problem)?;
    let report = smoothctl_core::dynamics::check_assumptions(&problem, &grid, &lattice, &Default::default())?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(if report.all_passed_or_unchecked() { Outcome::Done } else { Outcome::Missed })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.verb {
        Verb::Solve(c) => solve(c),
        Verb::Mollify { common, eta, policy } => mollify(common, *eta, policy.as_deref()),
        Verb::Evaluate { common, policy } => evaluate(common, policy),
        Verb::NearOpt(c) => near_opt(c),
        Verb::Sweep { common, perturb, fraction } => sweep(common, perturb, *fraction),
        Verb::CheckAssumptions(c) => check(c),
    };
    match result {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Missed) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::NonConvergence { residuals, .. } = &e {
                let tail: Vec<String> = residuals.iter().rev().take(5).map(|r| format!("{r:e}")).collect();
                eprintln!("last residuals: {}", tail.join(" "));
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
