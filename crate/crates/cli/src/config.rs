use std::path::Path;

use serde::{Deserialize, Serialize};

use rsift::classifier::TrainConfig;
use rsift::filter::FilterParams;
use rsift::phantom::PhantomSpec;
use rsift::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    /// Ground truth only.
    None,
    /// Half kept, half rotated into false positives, rotated filler.
    Fp,
    /// Half kept, half replicated 2/3/5/10/49 times.
    Redundancy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// Total size of the false-positive experiment; defaults to the
    /// reference ratio times the ground-truth size.
    pub fp_total: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig { kind: ExperimentKind::Fp, fp_total: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetConfig {
    pub direction_bins: usize,
}

impl Default for TargetConfig {
    fn default() -> Self {
        TargetConfig { direction_bins: 6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RsiftSection {
    pub tau: u32,
    /// Explicit schedule; when empty, `{M, M/2, M/4, n_min}` with `n_min`
    /// either given below or probed.
    pub subset_sizes: Vec<usize>,
    pub n_min: Option<usize>,
    pub max_retries: u32,
}

impl Default for RsiftSection {
    fn default() -> Self {
        RsiftSection { tau: 5, subset_sizes: Vec::new(), n_min: None, max_retries: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSection {
    pub survivor_fraction: f64,
}

impl Default for ProbeSection {
    fn default() -> Self {
        ProbeSection { survivor_fraction: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictConfig {
    pub threshold: f64,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig { threshold: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub bin_width_mm: f64,
    pub exact_votes: u32,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig { bin_width_mm: 10.0, exact_votes: 5 }
    }
}

/// Everything a stage may read. Section seeds are not set by hand: they are
/// derived from the master `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub phantom: PhantomSpec,
    pub experiment: ExperimentConfig,
    pub target: TargetConfig,
    pub filter: FilterParams,
    pub rsift: RsiftSection,
    pub probe: ProbeSection,
    pub train: TrainConfig,
    pub predict: PredictConfig,
    pub report: ReportConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub master: u64,
    pub phantom: u64,
    pub experiment: u64,
    pub rsift: u64,
    pub probe: u64,
    pub train: u64,
}

impl Seeds {
    pub fn from_master(master: u64) -> Seeds {
        Seeds {
            master,
            phantom: derive_seed(master, &[1]),
            experiment: derive_seed(master, &[2]),
            rsift: derive_seed(master, &[3]),
            probe: derive_seed(master, &[4]),
            train: derive_seed(master, &[5]),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}")]
    Read { path: String, source: std::io::Error },
    #[error("invalid config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.display().to_string(), source })?;
        Config::parse(&text).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse { path: path.display().to_string(), message },
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        let config: Config = toml::from_str(text)
            .map_err(|e| ConfigError::Parse { path: String::new(), message: e.to_string() })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |e: rsift::Error| ConfigError::Invalid(e.to_string());
        self.phantom.validate().map_err(bad)?;
        if self.target.direction_bins == 0 {
            return Err(ConfigError::Invalid("target.direction_bins must be >= 1".into()));
        }
        if !(self.filter.epsilon_rel >= 0.0) {
            return Err(ConfigError::Invalid("filter.epsilon_rel must be >= 0".into()));
        }
        if self.rsift.tau == 0 {
            return Err(ConfigError::Invalid("rsift.tau must be >= 1".into()));
        }
        if !(self.probe.survivor_fraction > 0.0) {
            return Err(ConfigError::Invalid("probe.survivor_fraction must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.predict.threshold) {
            return Err(ConfigError::Invalid("predict.threshold must lie in [0, 1]".into()));
        }
        if !(self.report.bin_width_mm > 0.0) || self.report.exact_votes == 0 {
            return Err(ConfigError::Invalid("report.bin_width_mm and report.exact_votes must be positive".into()));
        }
        self.train.validate(2).map_err(bad)?;
        Ok(())
    }

    /// Copy with every section seed set from the master seed.
    pub fn with_seed(mut self, master: u64) -> Config {
        let seeds = Seeds::from_master(master);
        self.seed = master;
        self.phantom.rng_seed = seeds.phantom;
        self.train.seed = seeds.train;
        self
    }

    pub fn seeds(&self) -> Seeds {
        Seeds::from_master(self.seed)
    }
}
