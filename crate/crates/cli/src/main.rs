//! `rsift` command line: phantom generation, target field, single filter
//! runs, randomized subset filtering, labeling, classifier training and
//! prediction, and report tables. Every stage writes a JSON manifest under
//! `<out-dir>/manifests/`.

mod config;
mod manifest;
mod predictions;
mod stages;

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::error;

use config::{Config, ConfigError, ExperimentKind};
use manifest::{FileHash, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "rsift", version, about = "Randomized subset filtering of tractograms")]
pub struct Cli {
    /// Master seed; every stage seed is derived from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Directory for outputs and default inputs.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Generate a phantom and build an experiment tractogram from it.
    Phantom(PhantomArgs),
    /// Build the target density field from a reference tractogram.
    Target(TargetArgs),
    /// Filter the whole tractogram once.
    Filter(FilterArgs),
    /// Run the filter on random subsets and collect votes.
    Rsift(RsiftArgs),
    /// Turn a vote ledger into labels.
    Label(LabelArgs),
    /// Train the classifier with cross-validation on rSIFT labels.
    Train(TrainArgs),
    /// Score streamlines with a trained classifier.
    Predict(PredictArgs),
    /// Write the report tables.
    Report(ReportArgs),
    /// Find the smallest subset size that retains as much as the full run.
    ProbeMinSubset(ProbeArgs),
    /// Re-run a stage from its manifest and check the outputs match.
    Replay(ReplayArgs),
}

impl Command {
    pub fn stage_name(&self) -> &'static str {
        match self {
            Command::Phantom(_) => "phantom",
            Command::Target(_) => "target",
            Command::Filter(_) => "filter",
            Command::Rsift(_) => "rsift",
            Command::Label(_) => "label",
            Command::Train(_) => "train",
            Command::Predict(_) => "predict",
            Command::Report(_) => "report",
            Command::ProbeMinSubset(_) => "probe-min-subset",
            Command::Replay(_) => "replay",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct PhantomArgs {
    /// TOML file with phantom parameters (overrides the config's [phantom]).
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub experiment: Option<ExperimentKind>,
    /// Experiment tractogram; `<stem>.gt.tck` and `<stem>.labels.csv` go next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TargetArgs {
    /// Reference tractogram [default: <out-dir>/phantom.gt.tck].
    #[arg(long)]
    pub tractogram: Option<PathBuf>,
    /// [default: <out-dir>/target.field]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct FilterArgs {
    /// [default: <out-dir>/phantom.tck]
    #[arg(long)]
    pub tractogram: Option<PathBuf>,
    /// [default: <out-dir>/target.field]
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// [default: <out-dir>/filter.csv]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RsiftArgs {
    #[arg(long)]
    pub tractogram: Option<PathBuf>,
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Comma-separated subset sizes.
    #[arg(long, value_delimiter = ',')]
    pub subset_sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub tau: Option<u32>,
    /// Vote ledger [default: <out-dir>/ledger.csv]; run files go to `runs/` beside it.
    #[arg(long)]
    pub ledger: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct LabelArgs {
    /// [default: <out-dir>/ledger.csv]
    #[arg(long)]
    pub ledger: Option<PathBuf>,
    /// [default: <out-dir>/labels.csv]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClassSet {
    /// Plausible vs implausible.
    Binary,
    /// Plausible, implausible and inconclusive.
    Multi,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub tractogram: Option<PathBuf>,
    /// [default: <out-dir>/labels.csv]
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "binary")]
    pub classes: ClassSet,
    /// Output prefix: writes `.bin`, `.json` and `.folds.csv` [default: <out-dir>/model].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub tractogram: Option<PathBuf>,
    /// Weight file; its metadata is the same path with a `.json` extension
    /// [default: <out-dir>/model.bin].
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Also write dense-layer activations to `<stem>.embeddings.csv`.
    #[arg(long)]
    pub embeddings: bool,
    /// [default: <out-dir>/predictions.csv]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub tractogram: Option<PathBuf>,
    /// [default: <out-dir>/ledger.csv]
    #[arg(long)]
    pub ledger: Option<PathBuf>,
    /// rSIFT labels; recomputed from the ledger when absent.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Truth sidecar of a phantom experiment.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Classifier predictions.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Also write `summary.json`.
    #[arg(long)]
    pub summary: bool,
    /// [default: <out-dir>/report]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub tractogram: Option<PathBuf>,
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// [default: <out-dir>/probe.csv]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

pub mod exit {
    pub const FAILURE: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const CONFIG: i32 = 3;
    pub const INPUT: i32 = 4;
    pub const FILTER: i32 = 5;
    pub const TRAINING: i32 = 6;
    pub const REPLAY_MISMATCH: i32 = 7;
}

#[derive(Debug, thiserror::Error)]
#[error("replay of {stage} does not match the manifest: {files:?}")]
pub struct ReplayMismatch {
    pub stage: String,
    pub files: Vec<PathBuf>,
}

fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return exit::CONFIG;
        }
        if cause.is::<ReplayMismatch>() {
            return exit::REPLAY_MISMATCH;
        }
        if let Some(e) = cause.downcast_ref::<rsift::Error>() {
            use rsift::Error as E;
            return match e {
                E::DegenerateSubset(_) | E::NoMinSubsetSize => exit::FILTER,
                E::NonFiniteGradient(_) | E::EmptyClass(_) | E::MissingClassInFold { .. } => exit::TRAINING,
                E::InvalidArgument(_) => exit::CONFIG,
                _ => exit::INPUT,
            };
        }
        if cause.is::<std::io::Error>() {
            return exit::INPUT;
        }
    }
    exit::FAILURE
}

pub struct Context {
    pub out_dir: PathBuf,
    pub config: Config,
    pub threads: usize,
}

pub struct StageReport {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub timings_ms: BTreeMap<String, f64>,
}

fn resolve_config(cli: &Cli) -> Result<Config> {
    let config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    let seed = cli.seed.unwrap_or(config.seed);
    Ok(config.with_seed(seed))
}

fn hash_all(paths: &[PathBuf]) -> Result<Vec<FileHash>> {
    paths.iter().map(|p| FileHash::of(p)).collect()
}

fn execute(cli: &Cli, args: &[String], config: Config, write_manifest: bool) -> Result<StageReport> {
    let ctx = Context { out_dir: cli.out_dir.clone(), config, threads: rayon::current_num_threads() };
    std::fs::create_dir_all(&ctx.out_dir)?;
    let report = stages::run(&cli.command, &ctx)?;
    if write_manifest {
        let manifest = RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            stage: cli.command.stage_name().to_string(),
            args: args.to_vec(),
            seeds: ctx.config.seeds(),
            config: ctx.config.clone(),
            threads: ctx.threads,
            inputs: hash_all(&report.inputs)?,
            outputs: hash_all(&report.outputs)?,
            timings_ms: report.timings_ms.clone(),
        };
        manifest.save(&RunManifest::path_for(&ctx.out_dir, cli.command.stage_name()))?;
    }
    Ok(report)
}

fn replay(manifest_path: &std::path::Path) -> Result<()> {
    let manifest = RunManifest::load(manifest_path)?;
    let cli = Cli::try_parse_from(std::iter::once("rsift".to_string()).chain(manifest.args.iter().cloned()))?;
    if matches!(cli.command, Command::Replay(_)) {
        bail!("a manifest cannot replay another replay");
    }
    for input in &manifest.inputs {
        let now = FileHash::of(&input.path)?;
        if now.sha256 != input.sha256 {
            log::error!("input {} changed since the manifest was written", input.path.display());
            return Err(ReplayMismatch { stage: manifest.stage, files: vec![input.path.clone()] }.into());
        }
    }
    let report = execute(&cli, &manifest.args, manifest.config.clone(), false)?;
    let produced = hash_all(&report.outputs)?;
    let mut differing: Vec<PathBuf> = Vec::new();
    for recorded in &manifest.outputs {
        match produced.iter().find(|p| p.path == recorded.path) {
            Some(p) if p.sha256 == recorded.sha256 => {}
            _ => differing.push(recorded.path.clone()),
        }
    }
    if produced.len() != manifest.outputs.len() {
        differing.extend(
            produced
                .iter()
                .filter(|p| !manifest.outputs.iter().any(|r| r.path == p.path))
                .map(|p| p.path.clone()),
        );
    }
    if !differing.is_empty() {
        return Err(ReplayMismatch { stage: manifest.stage, files: differing }.into());
    }
    log::info!("replay of {} reproduced {} outputs", manifest.stage, produced.len());
    Ok(())
}

fn run(cli: &Cli, args: &[String]) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(ConfigError::Invalid("--threads must be >= 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    if let Command::Replay(r) = &cli.command {
        return replay(&r.manifest);
    }
    let config = resolve_config(cli)?;
    execute(cli, args, config, true)?;
    Ok(())
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            std::process::exit(if e.use_stderr() { exit::USAGE } else { 0 });
        }
    };
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    if let Err(e) = run(&cli, &args) {
        error!("{e:#}");
        std::process::exit(exit_code(&e));
    }
}
