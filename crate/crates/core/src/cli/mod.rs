//! Command-line front end.
//!
//! Every stage reads and writes plain files (CSV for tables, JSON for
//! structured results, JSON-lines for event streams) and leaves a
//! `<command>.manifest.json` beside its outputs. All randomness derives from
//! the global `--seed`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric
//! non-convergence.

mod manifest;
mod run;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub use manifest::Manifest;

use crate::cascade::Mechanism;
use crate::error::LabError;
use crate::graph::Direction;
use crate::shocks::Day;
use crate::structtest::DegreeKind;

pub const THREADS_ENV: &str = "CONTAGION_LAB_THREADS";

#[derive(Debug, Parser)]
#[command(name = "contagion-lab", version, about = "Mixed-mechanism adoption cascades: simulate, calibrate, classify, match")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Master seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (default: all cores). Overridden by CONTAGION_LAB_THREADS.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Flat TOML file of `flag = value` pairs; command-line flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Suppress progress messages.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load an edge list (and optionally an adoption log) into canonical form.
    Ingest(IngestArgs),
    /// Run an ensemble of mixed-mechanism cascades.
    Simulate(SimulateArgs),
    /// Estimate parameter pools, background rate and activity from a log.
    Calibrate(CalibrateArgs),
    /// Extract the egocentric feature matrix.
    Features(FeaturesArgs),
    /// Train the mechanism classifier.
    Train(TrainArgs),
    /// Label feature rows with a trained model.
    Classify(ClassifyArgs),
    /// Classify every adoption in a log and aggregate by day.
    Decompose(DecomposeArgs),
    /// Rank correlation between degree and adoption day.
    DegreeOrderTest(OrderTestArgs),
    /// Flag shock days in a daily adoption series.
    DetectShocks(DetectArgs),
    /// Fit power-law decays after shock peaks.
    FitShock(FitShockArgs),
    /// Matched-sample peer-influence risk ratios.
    Match(MatchArgs),
    /// Synthetic worlds with known ground truth.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Summarize the manifests in a run directory.
    Report(ReportArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Simulate(_) => "simulate",
            Command::Calibrate(_) => "calibrate",
            Command::Features(_) => "features",
            Command::Train(_) => "train",
            Command::Classify(_) => "classify",
            Command::Decompose(_) => "decompose",
            Command::DegreeOrderTest(_) => "degree-order-test",
            Command::DetectShocks(_) => "detect-shocks",
            Command::FitShock(_) => "fit-shock",
            Command::Match(_) => "match",
            Command::Synth(SynthCommand::Graph(_)) => "synth-graph",
            Command::Synth(SynthCommand::HomophilyLog(_)) => "synth-homophily-log",
            Command::Synth(SynthCommand::Cascade(_)) => "synth-cascade",
            Command::Report(_) => "report",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum SynthCommand {
    /// Heavy-tailed directed follower graph with a binary trait.
    Graph(SynthGraphArgs),
    /// Trait-driven adoptions with no peer influence.
    HomophilyLog(HomophilyLogArgs),
    /// One cascade realization, optionally restricted to a single mechanism.
    Cascade(SynthCascadeArgs),
}

/// Shock schedule selection shared by several stages.
#[derive(Debug, Clone, Args, Serialize)]
pub struct ShockArgs {
    /// Shock schedule JSON (`[{"tau", "gamma", "alpha"}, ...]`).
    #[arg(long, conflicts_with = "reference_shocks")]
    pub shocks: Option<PathBuf>,
    /// Use the built-in five-burst reference schedule.
    #[arg(long)]
    pub reference_shocks: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct IngestArgs {
    /// Edge list CSV with header `source,target`.
    #[arg(long)]
    pub edges: PathBuf,
    /// Adoption log CSV with header `node,day`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// First day of the observation window (default 0).
    #[arg(long, requires = "last_day")]
    pub first_day: Option<Day>,
    /// Last day of the observation window (default: latest adoption).
    #[arg(long, requires = "first_day")]
    pub last_day: Option<Day>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// Edge list CSV.
    #[arg(long)]
    pub graph: PathBuf,
    /// Parameters JSON as written by `calibrate`.
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub runs: usize,
    /// Day-0 seed adopters per realization.
    #[arg(long, default_value_t = 0)]
    pub seeds: usize,
    #[arg(long, default_value_t = 0.18)]
    pub stop_fraction: f64,
    #[arg(long, default_value_t = 730)]
    pub horizon: Day,
    /// Event stream (JSON-lines); the summary goes to `<stem>.summary.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub log: PathBuf,
    /// Detected shock ranges (output of `detect-shocks`); their adopters are
    /// left out of the pools.
    #[arg(long)]
    pub shock_ranges: Option<PathBuf>,
    /// Per-node posting volumes, CSV `node,count`.
    #[arg(long)]
    pub posts: Option<PathBuf>,
    /// Mean daily activity after normalization (constant when no posts are given).
    #[arg(long, default_value_t = 0.032)]
    pub activity_mean: f64,
    /// Override the calibrated spontaneous rate.
    #[arg(long)]
    pub r: Option<f64>,
    /// Daily adoption probability at the largest shock peak.
    #[arg(long, default_value_t = 0.0)]
    pub shock_prob: f64,
    #[command(flatten)]
    pub shocks: ShockArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct FeaturesArgs {
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Adoption log to featurize (requires --graph).
    #[arg(long, requires = "graph", conflicts_with = "events", required_unless_present = "events")]
    pub log: Option<PathBuf>,
    /// Simulated events; writes a labeled matrix.
    #[arg(long)]
    pub events: Option<PathBuf>,
    #[command(flatten)]
    pub shocks: ShockArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Simulated events (JSON-lines).
    #[arg(long, conflicts_with = "features", required_unless_present = "features")]
    pub events: Option<PathBuf>,
    /// Labeled feature CSV.
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long, default_value_t = 300)]
    pub rounds: usize,
    #[arg(long, default_value_t = 6)]
    pub max_depth: usize,
    #[arg(long, default_value_t = 0.1)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 1.0)]
    pub min_child_weight: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 256)]
    pub max_bins: usize,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    /// Model JSON; metrics go to `<stem>.metrics.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Feature CSV; when it has a `label` column, metrics are written too.
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct DecomposeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub log: PathBuf,
    #[command(flatten)]
    pub shocks: ShockArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct OrderTestArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long, value_enum, default_value_t = DegreeKind::In)]
    pub degree: DegreeKind,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct DetectArgs {
    /// Daily series CSV `day,count`.
    #[arg(long)]
    pub series: PathBuf,
    #[arg(long, default_value_t = 150)]
    pub min_count: u64,
    #[arg(long, default_value_t = 30)]
    pub window: usize,
    #[arg(long, default_value_t = 3.0)]
    pub z: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[command(group(clap::ArgGroup::new("peaks").required(true).args(["peak", "ranges"])))]
pub struct FitShockArgs {
    #[arg(long)]
    pub series: PathBuf,
    /// Peak day index; repeat for several bursts.
    #[arg(long)]
    pub peak: Vec<usize>,
    /// Detected ranges from `detect-shocks`; each range's peak day is fitted.
    #[arg(long)]
    pub ranges: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TreatmentArg {
    /// Any exposure in the last `d` days.
    Timing,
    /// Exposure count over the last week: 0, 1, 2, 3, 3+.
    Dose,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PlaceboArg {
    None,
    /// Exposure in the `d` days after the outcome day (timing only).
    Future,
    /// Dose levels shuffled within each day (dose only).
    Permute,
}

#[derive(Debug, Args, Serialize)]
pub struct MatchArgs {
    #[arg(long, required_unless_present = "panel")]
    pub graph: Option<PathBuf>,
    #[arg(long, required_unless_present = "panel")]
    pub log: Option<PathBuf>,
    /// Prebuilt panel CSV `ego,day,outcome,treatment,cov...`.
    #[arg(long, requires = "schema", conflicts_with_all = ["graph", "log"])]
    pub panel: Option<PathBuf>,
    /// Panel schema JSON.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Static per-node covariates, CSV `node,<name>...`.
    #[arg(long)]
    pub static_covariates: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = TreatmentArg::Timing)]
    pub kind: TreatmentArg,
    /// Timing window in days (1..=6).
    #[arg(long, default_value_t = 1)]
    pub d: u32,
    #[arg(long, value_enum, default_value_t = Direction::Followee)]
    pub direction: Direction,
    #[arg(long, value_enum, default_value_t = PlaceboArg::None)]
    pub placebo: PlaceboArg,
    #[arg(long, requires = "last_day")]
    pub first_day: Option<Day>,
    #[arg(long, requires = "first_day")]
    pub last_day: Option<Day>,
    /// Caliper as a multiple of the logit standard deviation.
    #[arg(long, default_value_t = 0.1)]
    pub caliper: f64,
    /// Candidate controls fetched per treated ego before the caliper filter.
    #[arg(long, default_value_t = 50)]
    pub shortlist: usize,
    /// Treatment levels with fewer rows are dropped from the propensity model.
    #[arg(long, default_value_t = 20)]
    pub min_rows_per_level: usize,
    /// Also write the panel and its schema.
    #[arg(long)]
    pub export_panel: bool,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthGraphArgs {
    #[arg(long, default_value_t = 1000)]
    pub nodes: usize,
    /// Degree-distribution exponent.
    #[arg(long, default_value_t = 2.5)]
    pub exponent: f64,
    #[arg(long, default_value_t = 10.0)]
    pub mean_degree: f64,
    /// Probability that a followee is drawn from the follower's trait group.
    #[arg(long, default_value_t = 0.0)]
    pub homophily: f64,
    #[arg(long, default_value_t = 0.5)]
    pub trait_fraction: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct HomophilyLogArgs {
    #[arg(long)]
    pub graph: PathBuf,
    /// CSV `node,trait` as written by `synth graph`.
    #[arg(long)]
    pub traits: PathBuf,
    /// Daily adoption rate of trait-0 nodes.
    #[arg(long, default_value_t = 0.002)]
    pub rate0: f64,
    /// Daily adoption rate of trait-1 nodes.
    #[arg(long, default_value_t = 0.01)]
    pub rate1: f64,
    #[arg(long, default_value_t = 60)]
    pub horizon: Day,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthCascadeArgs {
    #[arg(long)]
    pub graph: PathBuf,
    /// Restrict to one mechanism; all four compete when omitted.
    #[arg(long, value_enum)]
    pub mechanism: Option<Mechanism>,
    #[arg(long, default_value_t = 0.089)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.146)]
    pub phi: f64,
    #[arg(long, default_value_t = 0.032)]
    pub activity: f64,
    #[arg(long, default_value_t = 60e-6)]
    pub r: f64,
    #[arg(long, default_value_t = 0.0)]
    pub shock_prob: f64,
    #[command(flatten)]
    pub shocks: ShockArgs,
    #[arg(long, default_value_t = 10)]
    pub seeds: usize,
    #[arg(long, default_value_t = 0.18)]
    pub stop_fraction: f64,
    #[arg(long, default_value_t = 730)]
    pub horizon: Day,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    /// Directory holding `*.manifest.json` files.
    #[arg(long)]
    pub dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Failure of a CLI run, carrying its exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Lab(LabError),
}

impl From<LabError> for CliError {
    fn from(e: LabError) -> Self {
        CliError::Lab(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Lab(LabError::NoConvergence { .. }) => 3,
            CliError::Lab(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Lab(e) => write!(f, "{e}"),
        }
    }
}

fn has_flag(argv: &[String], flag: &str) -> bool {
    argv.iter().any(|a| a == flag || a.starts_with(&format!("{flag}=")))
}

fn config_path(argv: &[String]) -> Option<String> {
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = a.strip_prefix("--config=") {
            return Some(v.to_string());
        }
    }
    None
}

/// Appends `--key value` for every config entry whose flag is absent from `argv`.
pub fn merge_config(mut argv: Vec<String>) -> Result<Vec<String>, CliError> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::Lab(LabError::io(&path, e)))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| CliError::Usage(format!("{path}: {}", e.message())))?;
    let mut extra = Vec::new();
    for (key, value) in table {
        let flag = format!("--{}", key.replace('_', "-"));
        if flag == "--config" || has_flag(&argv, &flag) {
            continue;
        }
        let scalar = |v: &toml::Value| -> Result<String, CliError> {
            match v {
                toml::Value::String(s) => Ok(s.clone()),
                toml::Value::Integer(i) => Ok(i.to_string()),
                toml::Value::Float(x) => Ok(x.to_string()),
                _ => Err(CliError::Usage(format!("{path}: `{key}` must be a scalar or a list of scalars"))),
            }
        };
        match &value {
            toml::Value::Boolean(true) => extra.push(flag),
            toml::Value::Boolean(false) => {}
            toml::Value::Array(items) => {
                for v in items {
                    extra.push(flag.clone());
                    extra.push(scalar(v)?);
                }
            }
            v => {
                extra.push(flag);
                extra.push(scalar(v)?);
            }
        }
    }
    argv.extend(extra);
    Ok(argv)
}

fn thread_count(flag: Option<usize>) -> Result<usize, CliError> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{THREADS_ENV}={v} is not a thread count"))),
        _ => Ok(flag.unwrap_or(0)),
    }
}

/// Parses `argv` (program name first), runs the stage and returns the exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<String> = argv
        .into_iter()
        .map(|a| a.into().to_string_lossy().into_owned())
        .collect();
    let argv = match merge_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("contagion-lab: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.exit_code() == 0 { 0 } else { 1 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("contagion-lab: {e}");
            e.exit_code()
        }
    }
}

/// Runs a parsed command inside a dedicated worker pool.
pub fn execute(cli: Cli) -> Result<(), CliError> {
    let threads = thread_count(cli.global.threads)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {threads} threads: {e}")))?;
    pool.install(|| run::run(&cli))
}
