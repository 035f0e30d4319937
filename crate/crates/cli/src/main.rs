#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod report;

use std::io::Write;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mapfluct::SpectralConfig;

use crate::report::{Failure, RunReport};

#[derive(Parser, Debug)]
#[command(
    name = "mapfluct",
    version,
    about = "First passage and reflection for Markov additive processes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug)]
pub struct Common {
    /// Model file, or `builtin:NAME` for a bundled example.
    #[arg(long)]
    pub model: String,
    #[arg(long = "tol-cluster")]
    pub tol_cluster: Option<f64>,
    #[arg(long = "tol-rank")]
    pub tol_rank: Option<f64>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

impl Common {
    pub fn spectral(&self) -> SpectralConfig {
        let mut cfg = SpectralConfig::default();
        if let Some(t) = self.tol_cluster {
            cfg.cluster_tol = t;
        }
        if let Some(t) = self.tol_rank {
            cfg.rank_tol = t;
        }
        cfg
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Passage,
    Reflect,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Matrix exponent and initial matrix of the first-passage process.
    Lambda {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.0)]
        q: f64,
        /// Also report passage probabilities to this level.
        #[arg(long)]
        x: Option<f64>,
    },
    /// Zeros of det(F(α) − qI) with Jordan chain diagnostics.
    Spectrum {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.0)]
        q: f64,
    },
    /// Stationary law of the process reflected at zero.
    ReflectOne {
        #[command(flatten)]
        common: Common,
        /// Reflect the mirrored, spectrally positive process.
        #[arg(long)]
        positive: bool,
        /// Right end of the density grid.
        #[arg(long, default_value_t = 5.0)]
        x: f64,
        #[arg(long, default_value_t = 51)]
        points: usize,
    },
    /// Stationary local times of the process reflected at 0 and b.
    ReflectTwo {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        b: f64,
        /// Real arguments at which to report E[e^{αW}; J = i].
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        alpha: Vec<f64>,
    },
    /// Two-sided exit matrices from the interval (−b, a).
    Scale {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.0)]
        q: f64,
        #[arg(long)]
        a: f64,
        #[arg(long)]
        b: f64,
    },
    /// Compare the spectral and fixed-point routes to the matrix exponent.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.0)]
        q: f64,
    },
    /// Monte Carlo estimates next to their analytic counterparts.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        mode: Mode,
        /// Upper barrier for two-sided reflection.
        #[arg(long)]
        b: Option<f64>,
        /// Passage levels, or the right end of the CDF grid in reflect mode.
        #[arg(long, value_delimiter = ',')]
        x: Vec<f64>,
        #[arg(long, default_value_t = 0.0)]
        q: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        step: Option<f64>,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        batches: Option<usize>,
        #[arg(long = "burn-in")]
        burn_in: Option<f64>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Lambda { .. } => "lambda",
            Command::Spectrum { .. } => "spectrum",
            Command::ReflectOne { .. } => "reflect-one",
            Command::ReflectTwo { .. } => "reflect-two",
            Command::Scale { .. } => "scale",
            Command::Verify { .. } => "verify",
            Command::Simulate { .. } => "simulate",
        }
    }

    pub fn common(&self) -> &Common {
        match self {
            Command::Lambda { common, .. }
            | Command::Spectrum { common, .. }
            | Command::ReflectOne { common, .. }
            | Command::ReflectTwo { common, .. }
            | Command::Scale { common, .. }
            | Command::Verify { common, .. }
            | Command::Simulate { common, .. } => common,
        }
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var("MAPFLUCT_THREADS") else {
        return Ok(());
    };
    let threads: usize = value.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Failure::invalid(
            "environment",
            format!("MAPFLUCT_THREADS must be a positive integer, got {value:?}"),
        )
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::invalid("environment", e.to_string()))
}

fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let start = Instant::now();
    let command = cli.command;
    let mut report = RunReport::new(command.name());
    let outcome = configure_threads().and_then(|_| commands::run(&command, &mut report));
    report.wall_time_secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok(Some(csv)) => {
            emit(&csv);
            ExitCode::SUCCESS
        }
        Ok(None) => {
            report.status = "ok";
            emit(&(report.to_json() + "\n"));
            ExitCode::SUCCESS
        }
        Err(failure) => {
            let code = failure.exit_code();
            report.fail(failure);
            emit(&(report.to_json() + "\n"));
            ExitCode::from(code)
        }
    }
}
