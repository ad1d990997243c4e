//! Trained models on disk.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mmc_core::aggregator::{AggParams, AggregateModel};
use mmc_core::clustering::{Centroids, EmbeddingSpec};
use mmc_core::learner::{LearnerInit, TrainConfig};
use mmc_core::pipelines::MethodId;

use crate::config::ExperimentConfig;

pub const FORMAT_VERSION: u32 = 1;

/// The training pipeline that produced a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMethod {
    E2e,
    ThreeStep,
    SingleMaml,
    Ensemble,
}

impl TrainMethod {
    /// Evaluation methods a checkpoint of this kind can serve.
    pub fn methods(self, has_centroids: bool) -> Vec<MethodId> {
        let mut out = match self {
            TrainMethod::ThreeStep | TrainMethod::E2e => vec![MethodId::MetaMeta],
            TrainMethod::SingleMaml => vec![MethodId::SingleMaml],
            TrainMethod::Ensemble => vec![
                MethodId::SingleMaml,
                MethodId::HardBagging,
                MethodId::SoftBagging,
                MethodId::MmcWholeData,
            ],
        };
        if has_centroids {
            out.push(MethodId::NearestCluster);
        }
        out
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: not a valid checkpoint: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("{path}: checkpoint format version {found} is newer than supported version {FORMAT_VERSION}")]
    Version { path: PathBuf, found: u64 },
    #[error("{path}: inconsistent checkpoint: {source}")]
    Invalid { path: PathBuf, source: mmc_core::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub method: TrainMethod,
    /// Experiment seed the model was trained from.
    pub seed: u64,
    pub config: ExperimentConfig,
    pub tcfg: TrainConfig,
    pub embedding: EmbeddingSpec,
    pub learners: Vec<LearnerInit>,
    pub agg: Option<AggParams>,
    pub centroids: Option<Centroids>,
}

impl Checkpoint {
    pub fn from_model(method: TrainMethod, config: &ExperimentConfig, model: &AggregateModel) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            method,
            seed: config.seed,
            config: config.clone(),
            tcfg: model.tcfg,
            embedding: model.embedding,
            learners: model.learners.clone(),
            agg: Some(model.agg.clone()),
            centroids: model.centroids.clone(),
        }
    }

    pub fn from_learners(method: TrainMethod, config: &ExperimentConfig, learners: Vec<LearnerInit>) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            method,
            seed: config.seed,
            config: config.clone(),
            tcfg: config.learner.train,
            embedding: config.clustering.embedding,
            learners,
            agg: None,
            centroids: None,
        }
    }

    pub fn available_methods(&self) -> Vec<MethodId> {
        let mut m = self.method.methods(self.centroids.is_some());
        if self.agg.is_none() {
            m.retain(|x| !matches!(x, MethodId::MetaMeta | MethodId::MmcWholeData));
        }
        m
    }

    pub fn feature_dim(&self) -> usize {
        self.learners.first().map_or(0, |l| l.feature_dim())
    }

    /// The learners and aggregation network as one model, if the checkpoint
    /// has a network.
    pub fn aggregate_model(&self) -> Result<Option<AggregateModel>, mmc_core::Error> {
        match &self.agg {
            Some(agg) => AggregateModel::new(
                self.learners.clone(),
                self.tcfg,
                agg.clone(),
                self.centroids.clone(),
                self.embedding,
            )
            .map(Some),
            None => Ok(None),
        }
    }

    fn validate(&self) -> Result<(), mmc_core::Error> {
        if self.learners.is_empty() {
            return Err(mmc_core::Error::Invalid("checkpoint has no learners".into()));
        }
        for l in &self.learners {
            l.validate()?;
        }
        self.tcfg.validate()?;
        self.aggregate_model().map(|_| ())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_json()).map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })?;
        let parse = |source| CheckpointError::Parse { path: path.to_path_buf(), source };
        let value: serde_json::Value = serde_json::from_slice(&bytes).map_err(parse)?;
        if let Some(found) = value.get("format_version").and_then(|v| v.as_u64()) {
            if found > FORMAT_VERSION as u64 {
                return Err(CheckpointError::Version { path: path.to_path_buf(), found });
            }
        }
        let ckpt: Checkpoint = serde_json::from_value(value).map_err(parse)?;
        ckpt.validate().map_err(|source| CheckpointError::Invalid { path: path.to_path_buf(), source })?;
        Ok(ckpt)
    }
}
