//! JSON experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mmc_core::numerics::Rng;
use mmc_core::pipelines::{AggregatorConfig, ClusteringConfig, MetaConfig, PipelineConfig};
use mmc_core::learner::LearnerConfig;
use mmc_core::problems::{generate_modal_bank, ClassBank, EpisodeConfig, ModalMixtureSpec, SplitTag};

use crate::mmfb::{load_feature_bank, MmfbError};

pub const SEED_ENV: &str = "MMC_SEED";

/// Root-stream ids derived from the experiment seed.
pub const DATA_STREAM: u64 = 0;
pub const TRAIN_STREAM: u64 = 1;
pub const EVAL_STREAM: u64 = 2;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("{SEED_ENV}={0:?} is not an unsigned integer")]
    SeedEnv(String),
}

/// Where the class banks come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    /// Synthetic modal mixture generated from the experiment seed.
    Modal(ModalMixtureSpec),
    /// One MMFB file whose classes are split at random.
    Mmfb { path: PathBuf, test_fraction: f64 },
    /// Separate meta-train and meta-test MMFB files.
    Split { train: PathBuf, test: PathBuf },
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Modal(ModalMixtureSpec::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub n_problems: usize,
    pub fiveway_problems: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { n_problems: 1000, fiveway_problems: 600 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub episode: EpisodeConfig,
    pub learner: LearnerConfig,
    pub meta: MetaConfig,
    pub clustering: ClusteringConfig,
    pub aggregator: AggregatorConfig,
    pub eval: EvalConfig,
    pub seed: u64,
}

impl ExperimentConfig {
    /// Reads, parses and validates a config file; relative data paths are
    /// resolved against the file's directory and `MMC_SEED` overrides the
    /// seed.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let bytes = std::fs::read(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        let mut cfg: ExperimentConfig =
            serde_json::from_slice(&bytes).map_err(|source| ConfigError::Parse { path: path.to_path_buf(), source })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        if let Ok(v) = std::env::var(SEED_ENV) {
            cfg.seed = v.trim().parse().map_err(|_| ConfigError::SeedEnv(v))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.data {
            DataConfig::Modal(_) => {}
            DataConfig::Mmfb { path, .. } => fix(path),
            DataConfig::Split { train, test } => {
                fix(train);
                fix(test);
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |e: mmc_core::Error| ConfigError::Invalid(e.to_string());
        match &self.data {
            DataConfig::Modal(spec) => spec.validate().map_err(bad)?,
            DataConfig::Mmfb { test_fraction, .. } => {
                if !(*test_fraction > 0.0 && *test_fraction < 1.0) {
                    return Err(ConfigError::Invalid(format!("data.mmfb.test_fraction must lie in (0, 1), got {}", test_fraction)));
                }
            }
            DataConfig::Split { .. } => {}
        }
        self.episode.validate().map_err(bad)?;
        self.pipeline().validate().map_err(bad)?;
        if self.eval.n_problems < 2 || self.eval.fiveway_problems < 2 {
            return Err(ConfigError::Invalid("eval.n_problems and eval.fiveway_problems must be at least 2".into()));
        }
        Ok(())
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            learner: self.learner.clone(),
            meta: self.meta,
            clustering: self.clustering,
            aggregator: self.aggregator.clone(),
        }
    }

    pub fn root_rng(&self) -> Rng {
        Rng::new(self.seed)
    }

    /// Seed of the evaluation episode streams.
    pub fn eval_seed(&self) -> u64 {
        self.root_rng().stream(EVAL_STREAM).next_u64()
    }

    pub fn load_data(&self) -> Result<Banks, MmfbError> {
        let rng = self.root_rng().stream(DATA_STREAM);
        match &self.data {
            DataConfig::Modal(spec) => {
                let b = generate_modal_bank(spec, &rng)?;
                Ok(Banks { train: b.meta_train, test: b.meta_test })
            }
            DataConfig::Mmfb { path, test_fraction } => {
                let all = load_feature_bank(path, SplitTag::MetaTrain)?;
                let mut ids = all.class_ids();
                rng.clone().shuffle(&mut ids);
                let n_test = ((ids.len() as f64) * test_fraction).floor() as usize;
                let (train, test) = all.split_by(&ids[..n_test])?;
                Ok(Banks { train, test })
            }
            DataConfig::Split { train, test } => Ok(Banks {
                train: load_feature_bank(train, SplitTag::MetaTrain)?,
                test: load_feature_bank(test, SplitTag::MetaTest)?,
            }),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Banks {
    pub train: ClassBank,
    pub test: ClassBank,
}
