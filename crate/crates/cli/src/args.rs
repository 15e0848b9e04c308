//! Command-line arguments and config-file merging.
//!
//! A `--config` TOML file is turned into flags placed before the ones typed
//! on the command line. Every flag may be given more than once and the last
//! occurrence wins, so typed flags override the file and unknown keys are
//! rejected exactly like unknown flags.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "mlcoda", version, about = "Bayesian multilevel compositional data analysis")]
#[command(args_override_self = true, propagate_version = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decompose compositions into total, between and within ilr coordinates.
    Transform(TransformArgs),
    /// Fit the random-intercept model and write draws plus a summary.
    Fit(FitArgs),
    /// Estimate reallocation effects from a saved fit.
    Substitute(SubstituteArgs),
    /// Run a simulation study.
    Simulate(SimulateArgs),
    /// Report convergence and prior sensitivity of a saved fit.
    Diagnose(DiagnoseArgs),
}

/// Input table and its column mapping.
#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    /// Long-format CSV, one row per observation.
    #[arg(long)]
    pub data: PathBuf,
    /// Cluster identifier column.
    #[arg(long)]
    pub id: String,
    /// Outcome column.
    #[arg(long)]
    pub outcome: Option<String>,
    /// Part columns, comma separated, in composition order.
    #[arg(long, value_delimiter = ',', required = true)]
    pub parts: Vec<String>,
    /// Additional numeric predictors, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,
    /// Total every composition sums to (e.g. 1440 minutes).
    #[arg(long, allow_negative_numbers = true)]
    pub total: f64,
    /// Partition file; the pivot partition is used when absent.
    #[arg(long)]
    pub sbp: Option<PathBuf>,
}

/// Flags every subcommand accepts.
#[derive(Debug, Clone, Args, Serialize)]
pub struct CommonArgs {
    /// Master seed (default 1).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads (default: one per core).
    #[arg(long)]
    pub workers: Option<usize>,
    /// TOML file with default values for any flag.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TransformArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ParameterizationArg {
    Noncentered,
    Centered,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, default_value_t = 4)]
    pub chains: usize,
    /// Warmup iterations per chain.
    #[arg(long, default_value_t = 500)]
    pub warmup: usize,
    /// Post-warmup iterations per chain.
    #[arg(long, default_value_t = 2500)]
    pub iter: usize,
    #[arg(long, default_value_t = 0.8)]
    pub adapt_delta: f64,
    #[arg(long, default_value_t = 10)]
    pub max_depth: usize,
    #[arg(long, value_enum, default_value_t = ParameterizationArg::Noncentered)]
    pub parameterization: ParameterizationArg,
    /// TOML prior specification replacing the data-driven defaults.
    #[arg(long)]
    pub priors: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LevelArg {
    Between,
    Within,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RefArg {
    Mean,
    File,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum WithinModeArg {
    Absolute,
    Multiplicative,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SubstituteArgs {
    /// Directory written by `fit`.
    #[arg(long)]
    pub fit: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_enum, default_value_t = LevelArg::Both)]
    pub level: LevelArg,
    #[arg(long, default_value_t = 1.0)]
    pub t_min: f64,
    #[arg(long, default_value_t = 30.0)]
    pub t_max: f64,
    #[arg(long, default_value_t = 1.0)]
    pub t_step: f64,
    /// Reference composition: the sample compositional mean or a file.
    #[arg(long = "ref", value_enum, default_value_t = RefArg::Mean)]
    pub reference: RefArg,
    /// CSV with a header of part names and one row of values.
    #[arg(long)]
    pub ref_file: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = WithinModeArg::Absolute)]
    pub within_mode: WithinModeArg,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    /// Study config (TOML); desk-scale defaults when absent.
    #[arg(long)]
    pub study: Option<PathBuf>,
    /// Start from the full factorial design instead of the desk default.
    #[arg(long)]
    pub paper_scale: bool,
    /// Replications per condition, overriding the study file.
    #[arg(long)]
    pub n_sim: Option<usize>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DiagnoseArgs {
    /// Directory written by `fit`.
    #[arg(long)]
    pub fit: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
    /// Power-scaling exponents, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [0.5, 2.0])]
    pub alphas: Vec<f64>,
}

const SUBCOMMANDS: [&str; 5] = ["transform", "fit", "substitute", "simulate", "diagnose"];

fn config_path(argv: &[String]) -> Option<PathBuf> {
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

fn toml_to_flags(path: &Path) -> Result<Vec<String>, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    let table: toml::Table =
        toml::from_str(&text).map_err(|e| format!("invalid config {}: {e}", path.display()))?;
    let mut flags = Vec::new();
    for (key, value) in table {
        let flag = format!("--{}", key.replace('_', "-"));
        let scalar = |v: &toml::Value| -> Result<String, String> {
            match v {
                toml::Value::String(s) => Ok(s.clone()),
                toml::Value::Integer(i) => Ok(i.to_string()),
                toml::Value::Float(f) => Ok(f.to_string()),
                other => Err(format!("config key {key}: unsupported value {other}")),
            }
        };
        match &value {
            toml::Value::Boolean(true) => flags.push(flag),
            toml::Value::Boolean(false) => {}
            toml::Value::Array(items) => {
                let items = items.iter().map(scalar).collect::<Result<Vec<_>, _>>()?;
                flags.push(format!("{flag}={}", items.join(",")));
            }
            v => flags.push(format!("{flag}={}", scalar(v)?)),
        }
    }
    Ok(flags)
}

/// Splices config-file flags in right after the subcommand.
pub fn expand_config(argv: Vec<String>) -> Result<Vec<String>, String> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let Some(pos) = argv.iter().position(|a| SUBCOMMANDS.contains(&a.as_str())) else {
        return Ok(argv);
    };
    let flags = toml_to_flags(&path)?;
    let mut out = argv[..=pos].to_vec();
    out.extend(flags);
    out.extend_from_slice(&argv[pos + 1..]);
    Ok(out)
}

impl CommonArgs {
    /// Fills in the default seed so equivalent invocations hash alike.
    pub fn resolved(&self) -> CommonArgs {
        CommonArgs {
            seed: Some(self.seed.unwrap_or(DEFAULT_SEED)),
            ..self.clone()
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }
}

pub const DEFAULT_SEED: u64 = 1;
