//! Argument and config-file handling for the `cemm` binary.

use std::fs;
use std::path::{Path, PathBuf};

use cemm::conformal::ScoreMethod;
use cemm::data::CutStrategy;
use cemm::mining::LambdaBase;
use cemm::predictor::{ClassifierConfig, QuantileConfig, Task};
use cemm::report::{default_method, DirectionChoice, OutputFormat, RunConfig};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(
    name = "cemm",
    version,
    about = "Conformal uncertainty targets and exceptional subgroup mining"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Calibrate, mine subgroups in both directions, and write a report.
    Mine(RunArgs),
    /// Stop after target generation and write per-record diagnostics.
    Calibrate(RunArgs),
    /// Re-render a stored JSON report.
    Report(ReportArgs),
}

#[derive(Debug, Default, Args)]
pub struct RunArgs {
    /// TOML file with run settings; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// CSV of external predictions; omit to fit the built-in baseline.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub task: Option<Task>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub score_method: Option<ScoreMethod>,
    #[arg(long)]
    pub calib_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub beam_width: Option<usize>,
    /// Minimum subgroup size, percent of test records.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub bins: Option<usize>,
    /// maximize, minimize, absolute or both.
    #[arg(long)]
    pub direction: Option<DirectionChoice>,
    #[arg(long)]
    pub top_k: Option<usize>,
    /// json, csv or text.
    #[arg(long)]
    pub format: Option<OutputFormat>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write `<out>.diagnostics.csv` with `record_id,r,covered`.
    #[arg(long)]
    pub emit_diagnostics: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// JSON report written by `mine`.
    pub input: PathBuf,
    #[arg(long, default_value = "text")]
    pub format: OutputFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Settings accepted in a config file. Keys mirror the long flags with
/// underscores.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub data: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub task: Option<Task>,
    pub alpha: Option<f64>,
    pub score_method: Option<ScoreMethod>,
    pub calib_fraction: Option<f64>,
    pub seed: Option<u64>,
    pub depth: Option<usize>,
    pub beam_width: Option<usize>,
    pub lambda: Option<f64>,
    pub lambda_base: Option<LambdaBase>,
    pub bins: Option<usize>,
    pub cut_strategy: Option<CutStrategy>,
    pub direction: Option<DirectionChoice>,
    pub top_k: Option<usize>,
    pub format: Option<OutputFormat>,
    pub out: Option<PathBuf>,
    pub emit_diagnostics: Option<bool>,
    pub classifier: Option<ClassifierConfig>,
    pub quantile: Option<QuantileConfig>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(#[from] clap::Error),

    #[error("cannot read config {path}: {source}")]
    ConfigRead {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("invalid config {path}: {source}")]
    ConfigParse {
        path: PathBuf,
        source: toml::de::Error,
    },

    #[error("missing required setting `{0}`")]
    Missing(&'static str),

    #[error(transparent)]
    Core(#[from] cemm::Error),
}

impl CliError {
    /// 1 for bad input or configuration, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if !e.is_validation() => 2,
            _ => 1,
        }
    }
}

#[derive(Debug)]
pub enum Invocation {
    Mine(RunConfig),
    Calibrate(RunConfig),
    Report(ReportArgs),
}

pub fn load_file_config(path: &Path) -> Result<FileConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::ConfigRead {
        path: path.to_path_buf(),
        source,
    })?;
    toml::from_str(&text).map_err(|source| CliError::ConfigParse {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses command-line tokens (program name first) into a validated
/// invocation. Flags override config-file values, which override defaults.
pub fn parse_config<I, T>(args: I) -> Result<Invocation, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    Ok(match cli.command {
        Command::Mine(a) => Invocation::Mine(resolve(a)?),
        Command::Calibrate(a) => Invocation::Calibrate(resolve(a)?),
        Command::Report(a) => Invocation::Report(a),
    })
}

pub fn resolve(args: RunArgs) -> Result<RunConfig, CliError> {
    let file = match &args.config {
        Some(p) => load_file_config(p)?,
        None => FileConfig::default(),
    };
    let data = args.data.or(file.data).ok_or(CliError::Missing("data"))?;
    let schema = args
        .schema
        .or(file.schema)
        .ok_or(CliError::Missing("schema"))?;
    let task = args.task.or(file.task).ok_or(CliError::Missing("task"))?;

    let mut config = RunConfig::new(data, schema, task);
    config.predictions_path = args.predictions.or(file.predictions);
    config.score_method = args
        .score_method
        .or(file.score_method)
        .unwrap_or(default_method(task));
    macro_rules! pick {
        ($target:expr, $flag:expr, $file:expr) => {
            if let Some(v) = $flag.or($file) {
                $target = v;
            }
        };
    }
    pick!(config.alpha, args.alpha, file.alpha);
    pick!(
        config.calib_fraction,
        args.calib_fraction,
        file.calib_fraction
    );
    pick!(config.seed, args.seed, file.seed);
    pick!(config.direction, args.direction, file.direction);
    pick!(config.mining.depth, args.depth, file.depth);
    pick!(config.mining.beam_width, args.beam_width, file.beam_width);
    pick!(config.mining.lambda_min_pct, args.lambda, file.lambda);
    pick!(config.mining.lambda_base, None, file.lambda_base);
    pick!(config.mining.bins, args.bins, file.bins);
    pick!(config.mining.cut_strategy, None, file.cut_strategy);
    pick!(config.mining.top_k, args.top_k, file.top_k);
    pick!(config.classifier, None, file.classifier);
    pick!(config.quantile, None, file.quantile);
    pick!(config.output.format, args.format, file.format);
    config.output.path = args.out.or(file.out);
    config.output.emit_diagnostics =
        args.emit_diagnostics || file.emit_diagnostics.unwrap_or(false);

    config.validate()?;
    Ok(config)
}
