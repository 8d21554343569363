use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use collapse_core::geometry::geometry_check;
use collapse_lab::config::{mode_name, EstimateEntry, EstimateMode};
use collapse_lab::estimate::evaluate;
use collapse_lab::run::write_config_error_manifest;
use collapse_lab::{exit_code, parse_config_file, run, Overrides};

/// Simulate and verify energy-driven stochastic state reduction.
///
/// Exit codes: 0 all verdicts pass, 1 a verdict failed, 2 runtime failure,
/// 3 configuration error.
#[derive(Parser)]
#[command(name = "collapse-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run(RunArgs),
    /// Certify the projective-geometry identities on random draws.
    GeometryCheck {
        #[arg(long, default_value_t = 3)]
        dim: usize,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Evaluate one reduction-time calculator.
    Estimate(EstimateArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the master seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = "COLLAPSE_LAB_THREADS")]
    threads: Option<usize>,
    /// Overrides the output directory in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long, value_enum)]
    mode: EstimateMode,
    /// Energy spread in MeV (reduction).
    #[arg(long)]
    delta_e_mev: Option<f64>,
    /// Number of constituents (thermal).
    #[arg(long)]
    n_nucleons: Option<f64>,
    /// Temperature in kelvin (thermal, adsorption).
    #[arg(long)]
    temperature_k: Option<f64>,
    /// Energy shift to accumulate, in MeV (adsorption).
    #[arg(long)]
    target_delta_e_mev: Option<f64>,
    /// Exposed surface in cm² (adsorption).
    #[arg(long)]
    area_cm2: Option<f64>,
    /// Residual gas pressure in torr (adsorption).
    #[arg(long)]
    pressure_torr: Option<f64>,
    /// Sticking probability in (0, 1] (adsorption).
    #[arg(long)]
    sticking: Option<f64>,
    /// Molecule rest mass in GeV (adsorption).
    #[arg(long)]
    molecule_mass_gev: Option<f64>,
    /// Target reduction time in simulation units (sigma).
    #[arg(long)]
    reduction_time: Option<f64>,
    /// Energy variance of the initial state (sigma).
    #[arg(long)]
    variance: Option<f64>,
}

fn run_command(args: RunArgs) -> u8 {
    let overrides = Overrides {
        seed: args.seed,
        threads: args.threads,
        out: args.out,
        quiet: args.quiet,
    };
    let cfg = match parse_config_file(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("configuration error: {e}");
            if let Some(out) = &overrides.out {
                if let Err(w) = write_config_error_manifest(out, &args.config, &e) {
                    eprintln!("error: {w}");
                }
            }
            return 3;
        }
    };
    let result = run(&cfg, &overrides);
    match &result {
        Ok(outcome) => {
            if !args.quiet {
                for line in &outcome.report {
                    println!("{line}");
                }
                println!("artifacts in {}", outcome.out_dir.display());
            }
        }
        Err(e) => eprintln!("error: {e}"),
    }
    exit_code(&result)
}

fn geometry_command(dim: usize, samples: usize, seed: u64) -> u8 {
    match geometry_check(dim, samples, seed) {
        Ok(rows) => {
            println!("identity,max_residual,mean_residual,tolerance,pass");
            for r in &rows {
                println!("{},{:?},{:?},{:?},{}", r.identity, r.max_residual, r.mean_residual, r.tolerance, r.pass);
            }
            u8::from(!rows.iter().all(|r| r.pass))
        }
        Err(e) => {
            eprintln!("error: {e}");
            3
        }
    }
}

fn estimate_command(a: EstimateArgs) -> u8 {
    let entry = EstimateEntry {
        mode: Some(a.mode),
        delta_e_mev: a.delta_e_mev,
        n_nucleons: a.n_nucleons,
        temperature_k: a.temperature_k,
        target_delta_e_mev: a.target_delta_e_mev,
        area_cm2: a.area_cm2,
        pressure_torr: a.pressure_torr,
        sticking: a.sticking,
        molecule_mass_gev: a.molecule_mass_gev,
        reduction_time: a.reduction_time,
        variance: a.variance,
        expect: None,
    };
    if let Err(e) = entry.validate(mode_name(a.mode)) {
        eprintln!("error: {e}");
        return 3;
    }
    match evaluate(&entry) {
        Ok(v) => {
            println!("{}", v.line());
            println!("note: {}", v.note);
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            3
        }
    }
}

fn main() -> ExitCode {
    let code = match Cli::parse().command {
        Command::Run(args) => run_command(args),
        Command::GeometryCheck { dim, samples, seed } => geometry_command(dim, samples, seed),
        Command::Estimate(args) => estimate_command(args),
    };
    ExitCode::from(code)
}
