//! `dyadic`: batch experiments on the stochastically forced dyadic shell model.
//!
//! Exit codes: 0 when every check passes, 1 on a violated property, 2 on a
//! runtime failure (bad configuration, integration blow-up, I/O).

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::Status;
use crate::config::{Overrides, RunConfig};
use crate::output::{Clock, OutDir};

#[derive(Parser)]
#[command(name = "dyadic", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Integrate one trajectory per seed and write it out.
    Simulate,
    /// Check the a-priori bounds over a seed batch.
    Verify,
    /// Track the distance between two solutions driven by the same noise.
    Couple,
    /// Fit the decay exponent of the shell-energy profile.
    Spectrum,
    /// Coupled-cloud uniqueness experiment and optional long-run measure.
    Stationary,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Verify => "verify",
            Command::Couple => "couple",
            Command::Spectrum => "spectrum",
            Command::Stationary => "stationary",
        }
    }
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Base seed.
    #[arg(long, global = true, env = "DYADIC_SEED")]
    seed: Option<u64>,

    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,

    #[arg(long, global = true)]
    dt: Option<f64>,

    #[arg(long = "N", global = true)]
    n: Option<usize>,

    #[arg(long, global = true)]
    c: Option<f64>,

    #[arg(long, global = true)]
    sigma: Option<f64>,

    #[arg(long = "T", global = true)]
    horizon: Option<f64>,
}

const EXIT_RUNTIME: u8 = 2;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let common = &cli.common;
    if let Some(jobs) = common.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    }
    let overrides = Overrides {
        seed: common.seed,
        dt: common.dt,
        n: common.n,
        c: common.c,
        sigma: common.sigma,
        horizon: common.horizon,
    };
    let config = match RunConfig::load(common.config.as_deref(), &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    };
    let mut out = match OutDir::create(&common.out_dir) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    };

    let clock = Clock::start();
    let result = match cli.command {
        Command::Simulate => commands::simulate(&config, &mut out),
        Command::Verify => commands::verify(&config, &mut out),
        Command::Couple => commands::couple_cmd(&config, &mut out),
        Command::Spectrum => commands::spectrum(&config, &mut out),
        Command::Stationary => commands::stationary(&config, &mut out),
    };
    let code = match result {
        Ok(Status::Pass) => 0,
        Ok(Status::Violation) => {
            eprintln!("{}: property check failed", cli.command.name());
            1
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_RUNTIME
        }
    };
    let seeds = match cli.command {
        Command::Verify => config.seeds(100),
        Command::Stationary => vec![config.seed],
        _ => config.seeds(1),
    };
    if let Err(e) = output::write_manifest(&mut out, cli.command.name(), &config, &seeds, code, &clock) {
        eprintln!("error: {e:#}");
        return ExitCode::from(EXIT_RUNTIME);
    }
    ExitCode::from(code)
}
