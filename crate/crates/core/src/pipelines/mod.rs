//! Training pipelines (end-to-end and three-step), the baseline methods and a
//! uniform per-episode prediction interface shared by all of them.

mod predict;
mod training;

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::clustering::{EmbeddingSpec, KMeansConfig};
use crate::error::{bail, Error, Result};
use crate::learner::MamlConfig;
use crate::numerics::GradOrder;

pub use predict::{
    ensemble_predict, fiveway_predict, nearest_cluster_predict, nearest_cluster_route, EpisodeScorer, MethodPredictor,
    Predictor, Score, VoteMode,
};
pub use training::{
    cluster_pools, end_to_end_batch_grad, random_aggregate_model, train_baseline_ensemble, train_end_to_end,
    train_three_step, train_whole_data_aggregator, ThreeStepRun,
};

/// Outer-loop settings shared by every pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaConfig {
    /// Number of learners.
    pub k: usize,
    /// Problems per meta-batch.
    pub batch_size: usize,
    pub meta_lr: f64,
    pub meta_iterations: usize,
    pub order: GradOrder,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self { k: 4, batch_size: 8, meta_lr: 1e-3, meta_iterations: 2000, order: GradOrder::Second }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.batch_size == 0 {
            bail!(Config, "k and batch_size must be at least 1 (k={}, batch_size={})", self.k, self.batch_size);
        }
        self.maml().validate()
    }

    pub fn maml(&self) -> MamlConfig {
        MamlConfig {
            meta_lr: self.meta_lr,
            batch_size: self.batch_size,
            meta_iterations: self.meta_iterations,
            order: self.order,
        }
    }
}

/// Clustering step of the three-step pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringConfig {
    pub embedding: EmbeddingSpec,
    /// Problems sampled and embedded for k-means.
    pub corpus_size: usize,
    pub kmeans: KMeansConfig,
    /// Probes per class when routing classes to clusters.
    pub samples_per_class: usize,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self { embedding: EmbeddingSpec::PositiveAbs, corpus_size: 2000, kmeans: KMeansConfig::default(), samples_per_class: 25 }
    }
}

/// How the two dropout figures of [`AggregatorConfig`] are read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropoutReading {
    /// The figures are probabilities of dropping a unit.
    Drop,
    /// The figures are probabilities of keeping a unit.
    #[default]
    Keep,
}

/// Aggregation network shape and its training schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AggregatorConfig {
    pub hidden: Vec<usize>,
    pub dropout_input: f64,
    pub dropout_hidden: f64,
    pub dropout_reading: DropoutReading,
    pub meta_lr: f64,
    pub meta_iterations: usize,
}

impl Default for AggregatorConfig {
    fn default() -> Self {
        Self {
            hidden: alloc::vec![256, 256],
            dropout_input: 0.9,
            dropout_hidden: 0.6,
            dropout_reading: DropoutReading::Keep,
            meta_lr: 1e-3,
            meta_iterations: 2000,
        }
    }
}

impl AggregatorConfig {
    /// Input and hidden-layer drop probabilities.
    pub fn drop_probs(&self) -> (f64, f64) {
        match self.dropout_reading {
            DropoutReading::Drop => (self.dropout_input, self.dropout_hidden),
            DropoutReading::Keep => (1.0 - self.dropout_input, 1.0 - self.dropout_hidden),
        }
    }

    pub fn maml(&self, batch_size: usize) -> MamlConfig {
        MamlConfig { meta_lr: self.meta_lr, batch_size, meta_iterations: self.meta_iterations, order: GradOrder::First }
    }
}

/// Everything a training pipeline needs besides the data and the seed.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub learner: crate::learner::LearnerConfig,
    pub meta: MetaConfig,
    pub clustering: ClusteringConfig,
    pub aggregator: AggregatorConfig,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.learner.validate()?;
        self.meta.validate()?;
        if self.clustering.corpus_size < self.meta.k {
            bail!(Config, "clustering corpus ({}) is smaller than k ({})", self.clustering.corpus_size, self.meta.k);
        }
        if self.clustering.samples_per_class == 0 || self.clustering.kmeans.restarts == 0 {
            bail!(Config, "samples_per_class and kmeans restarts must be at least 1");
        }
        let (range, lo_ok, hi_ok) = match self.aggregator.dropout_reading {
            DropoutReading::Drop => ("[0, 1)", true, false),
            DropoutReading::Keep => ("(0, 1]", false, true),
        };
        for (name, p) in [("dropout_input", self.aggregator.dropout_input), ("dropout_hidden", self.aggregator.dropout_hidden)] {
            let ok = (p > 0.0 || (lo_ok && p == 0.0)) && (p < 1.0 || (hi_ok && p == 1.0));
            if !ok {
                bail!(Config, "aggregator {} must lie in {}, got {}", name, range, p);
            }
        }
        self.aggregator.maml(self.meta.batch_size).validate()
    }
}

/// The evaluated methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodId {
    SingleMaml,
    HardBagging,
    SoftBagging,
    MmcWholeData,
    NearestCluster,
    MetaMeta,
}

impl MethodId {
    pub const ALL: [MethodId; 6] = [
        MethodId::SingleMaml,
        MethodId::HardBagging,
        MethodId::SoftBagging,
        MethodId::MmcWholeData,
        MethodId::NearestCluster,
        MethodId::MetaMeta,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodId::SingleMaml => "single_maml",
            MethodId::HardBagging => "hard_bagging",
            MethodId::SoftBagging => "soft_bagging",
            MethodId::MmcWholeData => "mmc_whole_data",
            MethodId::NearestCluster => "nearest_cluster",
            MethodId::MetaMeta => "meta_meta",
        }
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodId::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(alloc::format!("unknown method {:?}", String::from(s))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in MethodId::ALL {
            assert_eq!(m.as_str().parse::<MethodId>().unwrap(), m);
        }
        assert!("maml".parse::<MethodId>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(PipelineConfig::default().validate().is_ok());
        let mut c = PipelineConfig::default();
        c.meta.k = 0;
        assert!(c.validate().is_err());
        let mut c = PipelineConfig::default();
        c.meta.batch_size = 0;
        assert!(c.validate().is_err());
        let mut c = PipelineConfig::default();
        c.aggregator.dropout_input = 0.0;
        assert!(c.validate().is_err());
        c.aggregator.dropout_reading = DropoutReading::Drop;
        assert!(c.validate().is_ok());
        c.aggregator.dropout_input = 1.0;
        assert!(c.validate().is_err());
    }
}
