//! `lppl`: fit, evaluate and check log-periodic power-law price models.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lppl::model::Regime;
use lppl::series::{parse_year_month, to_decimal_year, YearMonth};
use lppl::synth::NoiseKind;
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "lppl",
    version,
    about = "Log-periodic power-law bubble fitting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Worker threads for fitting [default: available parallelism]
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Seed for simplex jitter (fit) or noise (synth)
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Output format [default: report, or csv for synth and deflate]
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,

    /// Write machine-readable output here instead of stdout
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Report,
    Csv,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a price file and write a fit report
    Fit(FitArgs),
    /// Evaluate a preset or explicit parameters on a time grid
    Eval(EvalArgs),
    /// Summarize the critical window of a fit report
    Forecast(ForecastArgs),
    /// Check whether a drawdown followed a window start
    Verify(VerifyArgs),
    /// Generate a synthetic price file
    Synth(SynthArgs),
    /// Express a price file in constant money of a reference month
    Deflate(DeflateArgs),
}

/// A point in time: `YYYY-MM-DD`, or a decimal year prefixed with `@`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(transparent)]
pub struct TimeArg(pub f64);

impl FromStr for TimeArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(rest) = s.strip_prefix('@') {
            return rest
                .parse::<f64>()
                .ok()
                .filter(|t| t.is_finite())
                .map(TimeArg)
                .ok_or_else(|| format!("`{s}` is not a decimal year"));
        }
        chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d")
            .map(|d| TimeArg(to_decimal_year(d)))
            .map_err(|_| format!("`{s}` is neither YYYY-MM-DD nor @<decimal year>"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonthArg(pub YearMonth);

impl FromStr for MonthArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_year_month(s)
            .map(MonthArg)
            .ok_or_else(|| format!("`{s}` is not YYYY-MM"))
    }
}

/// How the input price file is read.
#[derive(Debug, Clone, Args, Serialize)]
pub struct InputArgs {
    /// Price file of `YYYY-MM-DD,price` lines
    pub input: PathBuf,

    /// Zero-based field holding the price
    #[arg(long, default_value_t = 1)]
    pub column: usize,

    /// Keep the last record of a repeated date instead of failing
    #[arg(long)]
    pub keep_last: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,

    /// First sample time of the fit window
    #[arg(long)]
    pub from: Option<TimeArg>,
    /// Last sample time of the fit window
    #[arg(long)]
    pub to: Option<TimeArg>,

    /// CPI file used to deflate prices before fitting
    #[arg(long, requires = "reference")]
    pub cpi: Option<PathBuf>,
    /// Reference month for deflation, YYYY-MM
    #[arg(long, requires = "cpi")]
    pub reference: Option<MonthArg>,

    #[arg(long, default_value = "bubble")]
    pub regime: Regime,

    #[arg(long)]
    pub tc_min: Option<TimeArg>,
    #[arg(long)]
    pub tc_max: Option<TimeArg>,
    #[arg(long)]
    pub tc_count: Option<usize>,
    #[arg(long)]
    pub a_min: Option<f64>,
    #[arg(long)]
    pub a_max: Option<f64>,
    #[arg(long)]
    pub a_count: Option<usize>,
    #[arg(long)]
    pub omega_min: Option<f64>,
    #[arg(long)]
    pub omega_max: Option<f64>,
    #[arg(long)]
    pub omega_count: Option<usize>,
    /// Grid cells polished by the simplex
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub min_samples: Option<usize>,

    /// Skip the critical-time profile and window
    #[arg(long)]
    pub no_profile: bool,
    /// Relative sse slack of the critical window
    #[arg(long, default_value_t = lppl::forecast::DEFAULT_SLACK)]
    pub slack: f64,
}

/// Model parameters from a preset, a file or the command line.
#[derive(Debug, Clone, Args, Serialize)]
#[group(required = true, multiple = false)]
pub struct ParamsArgs {
    /// silver-2011 or gold-2011
    #[arg(long)]
    pub preset: Option<String>,
    /// JSON file with the parameters, or a fit report
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// A,m,a,C,omega,phi,t_c
    #[arg(long, allow_hyphen_values = true)]
    pub set: Option<String>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    #[command(flatten)]
    pub params: ParamsArgs,
    /// Regime for --set parameters
    #[arg(long, default_value = "bubble")]
    pub regime: Regime,

    /// Evaluate at these times (repeatable)
    #[arg(long)]
    pub at: Vec<TimeArg>,
    /// Start of a calendar-day grid
    #[arg(long, requires = "to")]
    pub from: Option<TimeArg>,
    /// End of a calendar-day grid
    #[arg(long, requires = "from")]
    pub to: Option<TimeArg>,
    #[arg(long, default_value_t = 1)]
    pub step_days: u32,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ForecastArgs {
    /// Fit report written by `lppl fit`
    pub report: PathBuf,
    #[arg(long, default_value_t = lppl::forecast::DEFAULT_SLACK)]
    pub slack: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// First day of the critical window, YYYY-MM-DD
    #[arg(long)]
    pub window_start: chrono::NaiveDate,
    /// Minimum drop fraction that counts as a burst
    #[arg(long, default_value_t = lppl::forecast::DEFAULT_BURST_THRESHOLD)]
    pub threshold: f64,
    /// Calendar days examined, the start day included
    #[arg(long, default_value_t = lppl::forecast::DEFAULT_HORIZON_DAYS)]
    pub horizon: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseArg {
    None,
    Additive,
    Multiplicative,
}

impl From<NoiseArg> for NoiseKind {
    fn from(n: NoiseArg) -> Self {
        match n {
            NoiseArg::None => NoiseKind::None,
            NoiseArg::Additive => NoiseKind::Additive,
            NoiseArg::Multiplicative => NoiseKind::Multiplicative,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[command(flatten)]
    pub params: ParamsArgs,
    #[arg(long, default_value = "bubble")]
    pub regime: Regime,
    #[arg(long)]
    pub from: TimeArg,
    #[arg(long)]
    pub to: TimeArg,
    #[arg(long, default_value_t = 1)]
    pub step_days: u32,
    #[arg(long, value_enum, default_value_t = NoiseArg::None)]
    pub noise: NoiseArg,
    /// Noise scale: currency units (additive) or a fraction (multiplicative)
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DeflateArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// CPI file of `YYYY-MM,index` lines
    #[arg(long)]
    pub cpi: PathBuf,
    /// Reference month, YYYY-MM
    #[arg(long)]
    pub reference: MonthArg,
}

/// Global settings shared by every command.
#[derive(Debug, Clone)]
pub struct Global {
    pub threads: usize,
    pub seed: u64,
    pub format: Option<Format>,
    pub output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if threads == 0 {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(2);
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
    {
        eprintln!("error: cannot start worker threads: {e}");
        return ExitCode::from(1);
    }
    let global = Global {
        threads,
        seed: cli.seed,
        format: cli.format,
        output: cli.output,
    };
    let outcome = match &cli.command {
        Command::Fit(a) => commands::fit(a, &global),
        Command::Eval(a) => commands::eval(a, &global),
        Command::Forecast(a) => commands::forecast(a, &global),
        Command::Verify(a) => commands::verify(a, &global),
        Command::Synth(a) => commands::synth(a, &global),
        Command::Deflate(a) => commands::deflate(a, &global),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
