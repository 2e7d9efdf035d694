//! Argument parsing and dispatch.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use levy_ou::lab::Method;

use crate::commands::{self, CouplingArgs, Session, TvDecayArgs};
use crate::{CliError, EXIT_ERROR, WORKERS_ENV};

#[derive(Debug, Parser)]
#[command(name = "levy-ou", version, about = "Ergodicity checks and TV decay experiments for Levy-driven OU processes")]
pub struct Cli {
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads: 0 uses every core, 1 runs sequentially.
    #[arg(long, global = true, env = WORKERS_ENV)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Oracle,
    Coupling,
    Histogram,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Method {
        match m {
            MethodArg::Oracle => Method::Oracle,
            MethodArg::Coupling => Method::Coupling,
            MethodArg::Histogram => Method::Histogram,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the condition checkers and print the classification.
    Check {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw endpoints X_t started at x.
    Simulate {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x: Option<Vec<f64>>,
        #[arg(long)]
        t: f64,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// TV distance over a time grid, plus a rate fit.
    TvDecay {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "vs_invariant")]
        y: Option<Vec<f64>>,
        /// Compare with the invariant law instead of a second start.
        #[arg(long)]
        vs_invariant: bool,
        #[arg(long, value_enum, default_value = "oracle")]
        method: MethodArg,
        #[arg(long, value_delimiter = ',')]
        t_grid: Option<Vec<f64>>,
        /// exponential, algebraic or alpha-exponential.
        #[arg(long, default_value = "exponential")]
        family: String,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Fit JSON; defaults to the CSV path with a `.fit.json` extension.
        #[arg(long)]
        fit_out: Option<PathBuf>,
    },
    /// Coupling frequencies 2 P(not coupled) over a time grid.
    Coupling {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        y: Option<Vec<f64>>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        t_grid: Option<Vec<f64>>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Samples from the invariant law, with a KS check against the Fourier oracle.
    Invariant {
        config: PathBuf,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// KS JSON; defaults to the CSV path with a `.ks.json` extension.
        #[arg(long)]
        ks_out: Option<PathBuf>,
    },
    /// Checks, decay experiment, fit and cross-check, written to a directory.
    Report {
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn dispatch(cli: Cli) -> Result<i32, CliError> {
    let open = |p: &PathBuf| Session::open(p, cli.seed, cli.workers);
    match cli.command {
        Command::Check { ref config, ref out } => commands::cmd_check(&open(config)?, out.as_deref()),
        Command::Simulate { ref config, ref x, t, n, ref out } => commands::cmd_simulate(&open(config)?, x.clone(), t, n, out.as_deref()),
        Command::TvDecay { ref config, ref x, ref y, vs_invariant, method, ref t_grid, ref family, alpha, ref out, ref fit_out } => {
            let s = open(config)?;
            let family = commands::family(family, alpha, &s)?;
            let args = TvDecayArgs {
                x: x.clone(),
                y: y.clone(),
                vs_invariant,
                method: method.into(),
                t_grid: t_grid.clone(),
                family: Some(family),
                out: out.clone(),
                fit_out: fit_out.clone(),
            };
            commands::cmd_tv_decay(&s, args)
        }
        Command::Coupling { ref config, ref x, ref y, epsilon, ref t_grid, n, ref out } => {
            let args = CouplingArgs { x: x.clone(), y: y.clone(), epsilon, t_grid: t_grid.clone(), n, out: out.clone() };
            commands::cmd_coupling(&open(config)?, args)
        }
        Command::Invariant { ref config, n, ref out, ref ks_out } => commands::cmd_invariant(&open(config)?, n, out.as_deref(), ks_out.as_deref()),
        Command::Report { ref config, ref out_dir } => commands::cmd_report(&open(config)?, out_dir),
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("levy-ou: {e}");
            EXIT_ERROR
        }
    }
}
