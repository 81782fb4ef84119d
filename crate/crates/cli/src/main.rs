//! Configuration-driven entry point for the levitated-nanoparticle
//! simulator: run ensembles and ellipticity sweeps, print analytic
//! predictions and noise matrices, analyze stored traces.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Process-level failure categories mapped onto exit codes:
/// 2 config, 3 numeric, 4 IO.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numeric(String),
    Io(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric error: {m}"),
            CliError::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl From<levisim::Error> for CliError {
    fn from(e: levisim::Error) -> Self {
        use levisim::Error as E;
        match e {
            E::InvalidShape(_) | E::InvalidMaterial(_) | E::InvalidConfig(_) => {
                CliError::Config(e.to_string())
            }
            E::Io(_) | E::TraceFormat(_) => CliError::Io(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "levisim",
    version,
    about = "Roto-translational stochastic dynamics of levitated nanoparticles in an optical tweezer"
)]
struct Cli {
    /// Worker threads for parallel ensembles (default: LEVISIM_WORKERS or
    /// all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct CommonRunArgs {
    /// Configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override a configuration key, e.g. `tweezer.ellipticity_rad=0.3`.
    /// Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Replace the master seed from the config file.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate an ensemble and write binary traces plus a run manifest.
    Simulate {
        #[command(flatten)]
        common: CommonRunArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Also export each trace as CSV.
        #[arg(long)]
        csv: bool,
        /// Also write ensemble PSDs of the six coordinates.
        #[arg(long)]
        psd: bool,
    },
    /// Sweep the polarization ellipticity and write summed-PSD maps.
    Sweep {
        #[command(flatten)]
        common: CommonRunArgs,
        #[arg(long)]
        out: PathBuf,
        /// Number of ellipticity grid points.
        #[arg(long, default_value_t = 8)]
        points: usize,
        /// Grid start, rad.
        #[arg(long, default_value_t = 0.0)]
        min: f64,
        /// Grid end, rad (pi/4 = circular).
        #[arg(long, default_value_t = std::f64::consts::FRAC_PI_4)]
        max: f64,
    },
    /// Print analytic steady-state predictions as a CSV table.
    Predict {
        #[command(flatten)]
        common: CommonRunArgs,
    },
    /// Print a noise correlation matrix at a phase-space state as CSV.
    Noise {
        #[command(flatten)]
        common: CommonRunArgs,
        /// gas | recoil | total
        #[arg(long, default_value = "gas")]
        kind: String,
        /// Evaluation state as 12 comma-separated numbers
        /// `x,y,z,px,py,pz,alpha,beta,gamma,pi_alpha,pi_beta,pi_gamma`
        /// (default: the configured initial steady state).
        #[arg(long)]
        state: Option<String>,
    },
    /// Compute spectra, peak fits and effective temperatures from traces.
    Analyze {
        /// Directory of .trc files written by `simulate`.
        #[arg(long)]
        traces: PathBuf,
        /// The configuration the traces were produced with.
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Output directory (default: the trace directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let workers = cli.workers.or_else(|| {
        std::env::var("LEVISIM_WORKERS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: worker pool already initialized: {e}");
        }
    }
    let result = match cli.command {
        Command::Simulate {
            common,
            out,
            csv,
            psd,
        } => commands::simulate::run(&common.config, &common.overrides, common.seed, &out, csv, psd),
        Command::Sweep {
            common,
            out,
            points,
            min,
            max,
        } => commands::sweep::run(
            &common.config,
            &common.overrides,
            common.seed,
            &out,
            points,
            min,
            max,
        ),
        Command::Predict { common } => {
            commands::predict::run(&common.config, &common.overrides, common.seed)
        }
        Command::Noise {
            common,
            kind,
            state,
        } => commands::noise::run(
            &common.config,
            &common.overrides,
            common.seed,
            &kind,
            state.as_deref(),
        ),
        Command::Analyze {
            traces,
            config,
            overrides,
            out,
        } => commands::analyze::run(&traces, &config, &overrides, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

/// Shared helper: load a config file and apply the seed flag.
pub(crate) fn load_config(
    path: &std::path::Path,
    overrides: &[String],
    seed: Option<u64>,
) -> Result<(config::ConfigFile, Vec<String>), CliError> {
    let mut loaded = config::load(path, overrides)?;
    if let Some(s) = seed {
        loaded.file.simulation.seed = s;
    }
    for line in &loaded.defaulted {
        eprintln!("default: {line}");
    }
    Ok((loaded.file, loaded.defaulted))
}
