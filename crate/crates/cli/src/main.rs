//! `lanechange` command-line tool.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 internal error.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lanechange::{Execution, PipelineConfig, RangeRateMode};

#[derive(Parser, Debug)]
#[command(name = "lanechange", version, about = "Lane-change gap and duration analysis")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// Flat TOML config; missing keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `seed` in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 1 runs everything sequentially.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Overrides `range_rate_mode`.
    #[arg(long, global = true)]
    pub mode: Option<RangeRateMode>,
    /// Overrides `risk_bias`: keep only scenarios with TTC below this many seconds.
    #[arg(long = "risk-bias", global = true)]
    pub risk_bias: Option<f64>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic corpus: trips, ground truth and frames.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Detect, segment and classify lane changes.
    Extract {
        /// Corpus directory (holds `trips/`).
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate range and range rate for extracted events with frames.
    Estimate {
        #[arg(long)]
        input: PathBuf,
        /// Directory holding `events.jsonl`; gaps are written here too.
        #[arg(long)]
        out: PathBuf,
    },
    /// Risk measures, duration comparison and behavior models.
    Analyze {
        /// Directory holding `events.jsonl` and `gaps.jsonl`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw cut-in scenarios from a fitted behavior model.
    Sample {
        /// `report.json` written by `analyze` or `report`.
        #[arg(long)]
        model: PathBuf,
        /// Defaults to `scenario_count`.
        #[arg(long)]
        n: Option<usize>,
        /// MLC or DLC; defaults to `scenario_class`.
        #[arg(long)]
        class: Option<lanechange::Classification>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract, estimate and analyze in one go.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Error tagged with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub error: anyhow::Error,
}

pub fn data_err(e: impl Into<anyhow::Error>) -> CliError {
    CliError {
        code: 2,
        error: e.into(),
    }
}

pub fn internal_err(e: impl Into<anyhow::Error>) -> CliError {
    CliError {
        code: 3,
        error: e.into(),
    }
}

/// Effective configuration plus the execution mode.
pub struct Context {
    pub config: PipelineConfig,
    pub exec: Execution,
    pub config_path: Option<PathBuf>,
}

impl Context {
    /// The config file, if one was given, as a manifest input.
    pub fn inputs(&self) -> Vec<PathBuf> {
        self.config_path.iter().cloned().collect()
    }
}

fn context(g: &GlobalArgs) -> Result<Context, CliError> {
    let mut config = match &g.config {
        Some(p) => PipelineConfig::load(p).map_err(data_err)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = g.seed {
        config.seed = s;
    }
    if let Some(m) = g.mode {
        config.range_rate_mode = m;
    }
    if let Some(r) = g.risk_bias {
        config.risk_bias = Some(r);
    }
    config.validate().map_err(data_err)?;

    let exec = match g.jobs {
        Some(0) => {
            return Err(CliError {
                code: 1,
                error: anyhow::anyhow!("--jobs must be at least 1"),
            })
        }
        Some(1) => Execution::Sequential,
        Some(n) => {
            // Fails only if a global pool already exists, which is harmless.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            Execution::Parallel
        }
        None => Execution::Parallel,
    };
    Ok(Context {
        config,
        exec,
        config_path: g.config.clone(),
    })
}

fn run(cli: Cli) -> Result<(), CliError> {
    let ctx = context(&cli.global)?;
    match cli.command {
        Command::Synth { out } => commands::synth(&ctx, &out),
        Command::Extract { input, out } => commands::extract(&ctx, &input, &out),
        Command::Estimate { input, out } => commands::estimate(&ctx, &input, &out),
        Command::Analyze { out } => commands::analyze(&ctx, &out),
        Command::Sample { model, n, class, out } => commands::sample(&ctx, &model, n, class, &out),
        Command::Report { input, out } => commands::report(&ctx, &input, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = std::panic::catch_unwind(|| run(cli))
        .unwrap_or_else(|_| Err(internal_err(anyhow::anyhow!("internal error (panic)"))));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.error);
            ExitCode::from(e.code)
        }
    }
}
