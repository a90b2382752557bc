//! Command-line entry points.
//!
//! Exit codes: 0 success, 1 validation error, 2 runtime invariant violation
//! (including lemma-bound violations), 3 I/O error.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::load_config;
use crate::error::{Error, Result};
use crate::integrator::{run_simulation, Termination};
use crate::model::{init_state, stability_margin, EquilibriumInfo};
use crate::ode_lemmas::{verify_suite, MIN_SAMPLES};
use crate::output::{deviation_decay_fit, write_snapshot, write_summary, write_timeseries};
use crate::sweep::{load_sweep, run_sweep, workers_from_env, write_sweep_report};

#[derive(Debug, Parser)]
#[command(name = "forager-sim", version, about = "Forager-exploiter chemotaxis simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one simulation and write timeseries.csv, summary.json and snapshots.
    Simulate {
        config: PathBuf,
        /// Overrides `output.dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the formal stability margin for the config's initial means.
    Stability { config: PathBuf },
    /// Run a parameter sweep and write one CSV row per point.
    Sweep {
        spec: PathBuf,
        /// Report path; defaults to `<base output dir>/sweep.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the ODE comparison bounds on randomized instances.
    VerifyLemmas {
        /// Randomized instances per lemma.
        #[arg(long, default_value_t = 500)]
        samples: usize,
        /// Check times per instance.
        #[arg(long, default_value_t = 200)]
        points: usize,
        #[arg(long, default_value_t = 20240601)]
        seed: u64,
    },
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Simulate { config, out } => simulate(config, out),
        Command::Stability { config } => stability(config),
        Command::Sweep { spec, out } => sweep(spec, out),
        Command::VerifyLemmas { samples, points, seed } => verify_lemmas(samples, points, seed),
    }
}

fn simulate(config_path: PathBuf, out: Option<PathBuf>) -> Result<i32> {
    let config = load_config(&config_path)?;
    let grid = config.grid()?;
    let params = config.params;
    let traj = run_simulation(
        &config.init,
        &params,
        &grid,
        &config.step_control(),
        &config.energy_config(),
    )?;
    let dir = out.unwrap_or_else(|| config.output.dir.clone());
    let eq = traj.equilibrium;
    let tail = config.diagnostics.tail_fraction;
    write_timeseries(&traj, &dir)?;
    let fit = deviation_decay_fit(&traj.records, eq.ubar0, tail);
    let margin = stability_margin(&params, eq.ubar0, eq.vbar0, &grid);
    write_summary(&traj, fit, &eq, margin, &params, tail, &dir)?;
    if config.output.write_snapshots {
        for snap in &traj.snapshots {
            write_snapshot(snap, &grid, &dir)?;
        }
    }
    println!(
        "{}: t = {}, {} steps, {} records -> {}",
        traj.termination.label(),
        traj.final_state.t,
        traj.steps,
        traj.records.len(),
        dir.display()
    );
    match traj.termination {
        Termination::Failed { message, exit_code } => {
            eprintln!("error: {message}");
            Ok(exit_code)
        }
        _ => Ok(0),
    }
}

fn stability(config_path: PathBuf) -> Result<i32> {
    let config = load_config(&config_path)?;
    let grid = config.grid()?;
    let state = init_state(&config.init, &grid)?;
    let eq = EquilibriumInfo::from_state(&state, &config.params, &grid);
    let m = stability_margin(&config.params, eq.ubar0, eq.vbar0, &grid)?;
    println!("ubar0 = {:?}", eq.ubar0);
    println!("vbar0 = {:?}", eq.vbar0);
    println!("wstar = {:?}", eq.wstar);
    println!("margin = {:?}", m.margin);
    println!("normalized = {}", m.normalized);
    if !m.normalized {
        println!("note: the criterion is formal and stated for length 1 with ubar0 + vbar0 = 1");
    }
    println!(
        "prediction = {}",
        if m.margin > 0.0 {
            "homogenization"
        } else {
            "possible instability"
        }
    );
    Ok(0)
}

fn sweep(spec_path: PathBuf, out: Option<PathBuf>) -> Result<i32> {
    let spec = load_sweep(&spec_path)?;
    let workers = workers_from_env()?;
    let points = run_sweep(&spec, workers)?;
    let path = out.unwrap_or_else(|| spec.base.output.dir.join("sweep.csv"));
    write_sweep_report(&spec, &points, &path)?;
    let converged = points.iter().filter(|p| p.converged).count();
    println!("{} points ({converged} converged) -> {}", points.len(), path.display());
    Ok(0)
}

fn verify_lemmas(samples: usize, points: usize, seed: u64) -> Result<i32> {
    if samples == 0 {
        return Err(Error::invalid("--samples", "must be positive"));
    }
    if points < MIN_SAMPLES {
        return Err(Error::invalid("--points", format!("need at least {MIN_SAMPLES}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let report = verify_suite(&mut rng, samples, points)?;
    println!(
        "pointwise instances: {}, averaged instances: {} (uniform + front-loaded), integrations: {}",
        report.pointwise_instances, report.averaged_instances, report.integrations
    );
    println!("violations: {}", report.violations);
    println!("min scaled slack: {:e}", report.min_scaled_slack);
    if let Some(w) = report.worst {
        println!(
            "tightest: {:?} kappa={} alpha={} a={} b={} tau={} y0={} at t={}",
            w.instance.forcing,
            w.instance.kappa,
            w.instance.alpha,
            w.instance.a,
            w.instance.b,
            w.instance.tau,
            w.instance.y0,
            w.worst_t
        );
    }
    Ok(if report.violations == 0 { 0 } else { 2 })
}
