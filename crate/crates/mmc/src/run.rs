//! The train, eval and make-data commands as library calls.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mmc_core::eval::{evaluate, evaluate_fiveway, EvalReport};
use mmc_core::numerics::Rng;
use mmc_core::pipelines::{
    train_baseline_ensemble, train_end_to_end, train_three_step, train_whole_data_aggregator, MethodId,
    MethodPredictor, VoteMode,
};
use mmc_core::problems::{generate_modal_bank, ModalMixtureSpec, ProblemDistribution};
use mmc_core::progress::TrainLog;

use crate::checkpoint::{Checkpoint, CheckpointError, TrainMethod};
use crate::config::{ConfigError, ExperimentConfig, DATA_STREAM, TRAIN_STREAM};
use crate::mmfb::{save_feature_bank, MmfbError};

/// Errors caused by how the tool was invoked rather than by the run itself.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Usage(#[from] UsageError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] MmfbError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Core(#[from] mmc_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl RunError {
    /// Process exit code: 2 for usage and configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Usage(_) | RunError::Config(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, RunError>;

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(UsageError(msg.into()).into())
}

/// Trains `method` under `cfg`. `warm_start` is only meaningful for
/// end-to-end training.
pub fn train(cfg: &ExperimentConfig, method: TrainMethod, warm_start: Option<&Checkpoint>) -> Result<(Checkpoint, TrainLog)> {
    if warm_start.is_some() && method != TrainMethod::E2e {
        return usage("--warm-start is only supported with --method e2e");
    }
    let banks = cfg.load_data()?;
    let dist = ProblemDistribution::new(&banks.train, cfg.episode);
    let pipeline = cfg.pipeline();
    let rng = cfg.root_rng().stream(TRAIN_STREAM);
    let mut log = TrainLog::new();
    let ckpt = match method {
        TrainMethod::ThreeStep => {
            let run = train_three_step(&dist, &pipeline, &rng, &mut log)?;
            Checkpoint::from_model(method, cfg, &run.model)
        }
        TrainMethod::E2e => {
            let start = match warm_start {
                Some(w) => {
                    let Some(model) = w.aggregate_model()? else {
                        return usage("warm-start checkpoint has no aggregation network");
                    };
                    if model.feature_dim() != banks.train.feature_dim() {
                        return usage(format!(
                            "warm-start checkpoint expects {} features, data has {}",
                            model.feature_dim(),
                            banks.train.feature_dim()
                        ));
                    }
                    Some(model)
                }
                None => None,
            };
            let model = train_end_to_end(&dist, &pipeline, start.as_ref(), &rng, &mut log)?;
            Checkpoint::from_model(method, cfg, &model)
        }
        TrainMethod::SingleMaml => {
            let learners = train_baseline_ensemble(&dist, 1, &cfg.learner, &cfg.meta.maml(), &rng.stream(0), &mut log)?;
            Checkpoint::from_learners(method, cfg, learners)
        }
        TrainMethod::Ensemble => {
            let learners =
                train_baseline_ensemble(&dist, cfg.meta.k, &cfg.learner, &cfg.meta.maml(), &rng.stream(0), &mut log)?;
            let model = train_whole_data_aggregator(&dist, learners, &pipeline, &rng.stream(1), &mut log)?;
            Checkpoint::from_model(method, cfg, &model)
        }
    };
    Ok((ckpt, log))
}

pub fn write_log(log: &TrainLog, path: &Path) -> Result<()> {
    let io = |source| RunError::Io { path: path.to_path_buf(), source };
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for r in &log.records {
        serde_json::to_writer(&mut out, r).expect("log record serializes");
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Evaluates each of `methods` from `ckpt` on the meta-test bank of `cfg`,
/// one-vs-all by default or 5-way with `fiveway`.
pub fn evaluate_checkpoint(
    cfg: &ExperimentConfig,
    ckpt: &Checkpoint,
    methods: &[MethodId],
    n_problems: Option<usize>,
    fiveway: bool,
) -> Result<Vec<EvalReport>> {
    let available = ckpt.available_methods();
    for m in methods {
        if !available.contains(m) {
            let why = match m {
                MethodId::NearestCluster => " (it needs a checkpoint with centroids)",
                _ => "",
            };
            return usage(format!(
                "method {} is not available from a {:?} checkpoint{}; available: {}",
                m,
                ckpt.method,
                why,
                available.iter().map(|m| m.as_str()).collect::<Vec<_>>().join(",")
            ));
        }
    }
    let banks = cfg.load_data()?;
    if ckpt.feature_dim() != banks.test.feature_dim() {
        return usage(format!(
            "checkpoint expects {} features but the evaluation data has {}",
            ckpt.feature_dim(),
            banks.test.feature_dim()
        ));
    }
    let model = ckpt.aggregate_model()?;
    let seed = cfg.eval_seed();
    let k = ckpt.learners.len();
    let mut reports = Vec::with_capacity(methods.len());
    for &m in methods {
        let predictor = match m {
            MethodId::SingleMaml => MethodPredictor::Single { learner: &ckpt.learners[0], tcfg: ckpt.tcfg },
            MethodId::HardBagging => MethodPredictor::Bagging { learners: &ckpt.learners, tcfg: ckpt.tcfg, mode: VoteMode::Hard },
            MethodId::SoftBagging => MethodPredictor::Bagging { learners: &ckpt.learners, tcfg: ckpt.tcfg, mode: VoteMode::Soft },
            MethodId::MmcWholeData | MethodId::MetaMeta => {
                MethodPredictor::Aggregate(model.as_ref().expect("availability checked above"))
            }
            MethodId::NearestCluster => MethodPredictor::NearestCluster(model.as_ref().expect("availability checked above")),
        };
        let start = Instant::now();
        let mut report = if fiveway {
            evaluate_fiveway(&predictor, m, k, &banks.test, n_problems.unwrap_or(cfg.eval.fiveway_problems), seed)?
        } else {
            evaluate(&predictor, m, k, &banks.test, &cfg.episode, n_problems.unwrap_or(cfg.eval.n_problems), seed)?
        };
        report.wall_time_s = start.elapsed().as_secs_f64();
        reports.push(report);
    }
    Ok(reports)
}

/// Paths written by [`make_data`] for `prefix`.
pub fn data_paths(prefix: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let with = |suffix: &str| {
        let mut s = prefix.as_os_str().to_owned();
        s.push(suffix);
        PathBuf::from(s)
    };
    (with(".train.mmfb"), with(".test.mmfb"), with(".modes.json"))
}

/// Generates a modal-mixture bank from `seed` (drawn exactly as a modal
/// experiment config with the same seed would) and writes its two splits
/// and the ground-truth mode map.
pub fn make_data(spec: &ModalMixtureSpec, seed: u64, prefix: &Path) -> Result<()> {
    spec.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let banks = generate_modal_bank(spec, &Rng::new(seed).stream(DATA_STREAM))?;
    let (train, test, modes) = data_paths(prefix);
    save_feature_bank(&banks.meta_train, &train)?;
    save_feature_bank(&banks.meta_test, &test)?;
    let text = serde_json::to_string_pretty(&banks.modes).expect("mode map serializes");
    std::fs::write(&modes, text).map_err(|source| RunError::Io { path: modes.clone(), source })?;
    Ok(())
}
