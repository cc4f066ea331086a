//! Command-line front end: closed-loop runs, DERs-disabled baselines, and
//! derivation of aggregate battery parameters from thermostatic-load data.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 solver
//! failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use der_mpc::battery::{self, DerClassParams, FleetState};
use der_mpc::config::{Overrides, RunConfig};
use der_mpc::data_io::{load_csv, ColumnSpec, ForecastProvider};
use der_mpc::mpc::MpcConfig;
use der_mpc::qp::Settings;
use der_mpc::sim::{self, Scenario, SimError};

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_SOLVER: u8 = 4;

#[derive(Parser)]
#[command(
    name = "der-mpc",
    about = "Receding-horizon allocation of aggregated DERs against a net-demand forecast",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunFlags {
    /// Flat key-value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Net-demand forecast CSV (timestamp,value_gw).
    #[arg(long)]
    net_demand: Option<PathBuf>,
    /// Disturbance CSV added to the forecast when each window is committed.
    #[arg(long)]
    disturbance: Option<PathBuf>,
    /// Output directory for trajectories.csv and metrics.txt.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Planning horizon, hours.
    #[arg(long)]
    tau_hours: Option<f64>,
    /// Commitment interval, minutes.
    #[arg(long)]
    shift_minutes: Option<f64>,
    /// Generation smoothness weight.
    #[arg(long)]
    kappa_g: Option<f64>,
    /// Solver tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Use the built-in synthetic two-peak scenario.
    #[arg(long)]
    synthetic: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the closed loop with the configured DER fleet.
    Run(RunFlags),
    /// Run the same scenario with every DER's power limits forced to zero.
    Baseline(RunFlags),
    /// Derive aggregate battery parameters from a thermostatic-load file.
    Derive {
        /// Key=value file with n, lambda, gamma, theta_plus, theta_minus,
        /// theta_ambient, p_on_gw, t_on, t_off.
        tcl_file: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(flags) => cmd_run(&flags, false),
        Command::Baseline(flags) => cmd_run(&flags, true),
        Command::Derive { tcl_file } => cmd_derive(&tcl_file),
    }
}

fn fail(code: u8, message: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {message}");
    ExitCode::from(code)
}

fn resolve_config(flags: &RunFlags) -> Result<RunConfig, ExitCode> {
    let mut config = match &flags.config {
        Some(path) => RunConfig::load(path).map_err(|e| fail(EXIT_CONFIG, e))?,
        None => RunConfig::default(),
    };
    config.apply(&Overrides {
        net_demand_csv: flags.net_demand.clone(),
        disturbance_csv: flags.disturbance.clone(),
        out_dir: flags.out_dir.clone(),
        tau_hours: flags.tau_hours,
        shift_minutes: flags.shift_minutes,
        kappa_g: flags.kappa_g,
        tol: flags.tol,
        synthetic: flags.synthetic,
    });
    // A path that points at nothing is a data problem, not a config-syntax
    // problem: report it with the data exit code.
    config.validate_paths().map_err(|e| match e {
        der_mpc::config::ConfigError::MissingPath { .. } => fail(EXIT_DATA, e),
        _ => fail(EXIT_CONFIG, e),
    })?;
    Ok(config)
}

fn build_mpc_config(config: &RunConfig) -> Result<(MpcConfig, u32), ExitCode> {
    // The synthetic scenario and the shipped samples use 5-minute steps.
    let step_seconds: u32 = 300;
    let step_hours = step_seconds as f64 / 3600.0;
    let horizon_steps = (config.tau_hours / step_hours).round() as usize;
    let shift_steps = (config.shift_minutes * 60.0 / step_seconds as f64).round() as usize;
    let mpc = MpcConfig {
        horizon_steps,
        shift_steps,
        kappa_g: config.kappa_g,
        step_hours,
        lbar_override: None,
    };
    mpc.validate().map_err(|e| fail(EXIT_CONFIG, e))?;
    Ok((mpc, step_seconds))
}

fn load_fleet(config: &RunConfig, baseline: bool) -> Result<Vec<DerClassParams>, ExitCode> {
    let fleet = match &config.fleet_file {
        Some(path) => battery::load_fleet_file(path).map_err(|e| fail(EXIT_CONFIG, e))?,
        None => battery::stock_fleet(),
    };
    if baseline {
        Ok(battery::disabled_fleet(&fleet))
    } else {
        Ok(fleet)
    }
}

fn print_resolved(config: &RunConfig, mpc: &MpcConfig, baseline: bool) {
    println!("mode {}", if baseline { "baseline" } else { "run" });
    println!(
        "net_demand {}",
        match (&config.net_demand_csv, config.synthetic) {
            (_, true) => "synthetic".to_string(),
            (Some(p), false) => p.display().to_string(),
            (None, false) => "unset".to_string(),
        }
    );
    println!("out_dir {}", config.out_dir.display());
    println!("tau_hours {}", config.tau_hours);
    println!("shift_minutes {}", config.shift_minutes);
    println!("kappa_g {}", mpc.kappa_g);
    println!("tol {}", config.tol);
    println!("duration_days {}", config.duration_days);
}

fn cmd_run(flags: &RunFlags, baseline: bool) -> ExitCode {
    let config = match resolve_config(flags) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let (mpc_config, step_seconds) = match build_mpc_config(&config) {
        Ok(v) => v,
        Err(code) => return code,
    };
    let fleet = match load_fleet(&config, baseline) {
        Ok(f) => f,
        Err(code) => return code,
    };
    print_resolved(&config, &mpc_config, baseline);

    let steps_per_day = 86_400 / step_seconds as usize;
    let duration_steps = {
        let raw = (config.duration_days * steps_per_day as f64).round() as usize;
        // Round down to a whole number of commitment intervals.
        (raw / mpc_config.shift_steps).max(1) * mpc_config.shift_steps
    };

    let provider = if config.synthetic {
        // One extra day of forecast keeps the final windows covered.
        let days = config.duration_days.ceil() as usize + 1;
        let base = sim::two_peak_series(days, step_seconds, config.noise_gw, config.seed);
        let disturbance = Some(sim::regulation_noise_series(
            days,
            step_seconds,
            0.2,
            config.seed.wrapping_add(1),
        ));
        match ForecastProvider::new(base, disturbance, mpc_config.shift_steps) {
            Ok(p) => p,
            Err(e) => return fail(EXIT_DATA, e),
        }
    } else {
        let spec = ColumnSpec::default();
        let base = match load_csv(config.net_demand_csv.as_ref().expect("validated"), &spec) {
            Ok(s) => s,
            Err(e) => return fail(EXIT_DATA, e),
        };
        let disturbance = match &config.disturbance_csv {
            Some(path) => match load_csv(path, &spec) {
                Ok(s) => Some(s),
                Err(e) => return fail(EXIT_DATA, e),
            },
            None => None,
        };
        match ForecastProvider::new(base, disturbance, mpc_config.shift_steps) {
            Ok(p) => p,
            Err(e) => return fail(EXIT_DATA, e),
        }
    };

    let solver = Settings {
        eps_primal: config.tol,
        eps_dual: config.tol,
        ..Settings::default()
    };
    let fleet_size = fleet.len();
    let scenario = Scenario {
        fleet,
        provider,
        config: mpc_config,
        duration_steps,
        initial_state: FleetState::zeros(fleet_size),
        solver,
    };

    let result = match sim::run(&scenario) {
        Ok(r) => r,
        Err(e @ SimError::Mpc { .. }) => return fail(EXIT_SOLVER, e),
        Err(e @ (SimError::Data(_) | SimError::InsufficientCoverage { .. })) => {
            return fail(EXIT_DATA, e)
        }
        Err(e) => return fail(EXIT_CONFIG, e),
    };

    if let Err(e) = std::fs::create_dir_all(&config.out_dir) {
        return fail(EXIT_DATA, format!("cannot create {}: {e}", config.out_dir.display()));
    }
    let traj_path = config.out_dir.join("trajectories.csv");
    let metrics_path = config.out_dir.join("metrics.txt");
    if let Err(e) = sim::write_trajectories_csv(&result, &traj_path) {
        return fail(EXIT_DATA, e);
    }
    if let Err(e) = sim::write_metrics_summary(&result, &metrics_path) {
        return fail(EXIT_DATA, e);
    }
    println!("wrote {}", traj_path.display());
    println!("wrote {}", metrics_path.display());
    print!("{}", sim::metrics_summary_string(&result));
    ExitCode::SUCCESS
}

fn cmd_derive(tcl_file: &PathBuf) -> ExitCode {
    let tcl = match battery::load_tcl_file(tcl_file) {
        Ok(t) => t,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    let derived = match battery::derive_class(&tcl) {
        Ok(d) => d,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    println!("alpha {}", derived.alpha);
    println!("baseline_power_gw {}", derived.baseline_power_gw);
    println!("eta_plus_gw {}", derived.eta_plus_gw);
    println!("eta_minus_gw {}", derived.eta_minus_gw);
    println!("soc_capacity_gwh {}", derived.soc_capacity_gwh);
    ExitCode::SUCCESS
}
