//! One learner: a small MLP scorer, the inner training algorithm (a few plain
//! gradient-descent steps from a learned initialization) and MAML
//! meta-training of that initialization.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::exec::par_map;
use crate::numerics::{
    adam_step, meta_grad, mlp_forward_batch, mlp_forward_tape, mlp_init, unroll_descent, Activation,
    AdamConfig, AdamState, Array, GradOrder, Mat, ParamSet, Rng, Tape, Var,
};
use crate::problems::{Example, Label, Problem, ProblemStream};
use crate::progress::TrainLog;

/// How the lone positive support example is weighted in the inner loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositiveWeight {
    /// The positive counts as much as all negatives together.
    #[default]
    Balanced,
    Unweighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub inner_lr: f64,
    pub inner_steps: usize,
    pub positive_weight: PositiveWeight,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { inner_lr: 0.01, inner_steps: 5, positive_weight: PositiveWeight::Balanced }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.inner_lr > 0.0) {
            bail!(Config, "inner_lr must be positive, got {}", self.inner_lr);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MamlConfig {
    pub meta_lr: f64,
    pub batch_size: usize,
    pub meta_iterations: usize,
    pub order: GradOrder,
}

impl Default for MamlConfig {
    fn default() -> Self {
        Self { meta_lr: 1e-3, batch_size: 8, meta_iterations: 2000, order: GradOrder::Second }
    }
}

impl MamlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.meta_lr > 0.0) || self.batch_size == 0 {
            bail!(Config, "meta_lr and batch_size must be positive");
        }
        Ok(())
    }
}

/// Learner architecture (hidden widths between the features and the two
/// logits) and its inner training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub train: TrainConfig,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self { hidden: alloc::vec![32], activation: Activation::Relu, train: TrainConfig::default() }
    }
}

impl LearnerConfig {
    pub fn arch(&self, feature_dim: usize) -> Vec<usize> {
        let mut arch = Vec::with_capacity(self.hidden.len() + 2);
        arch.push(feature_dim);
        arch.extend_from_slice(&self.hidden);
        arch.push(2);
        arch
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) {
            bail!(Config, "hidden layer widths must be positive, got {:?}", self.hidden);
        }
        self.train.validate()
    }
}

/// A learner's initialization together with its architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerInit {
    pub params: ParamSet,
    pub arch: Vec<usize>,
    pub activation: Activation,
}

impl LearnerInit {
    /// A freshly initialized learner; `arch` runs from the feature dimension to
    /// the two logits (no, yes).
    pub fn random(arch: &[usize], activation: Activation, rng: &mut Rng) -> Result<Self> {
        if arch.last() != Some(&2) {
            bail!(Config, "a learner must end in 2 logits, got architecture {:?}", arch);
        }
        Ok(Self { params: mlp_init(arch, rng)?, arch: arch.to_vec(), activation })
    }

    pub fn feature_dim(&self) -> usize {
        self.arch[0]
    }

    pub fn validate(&self) -> Result<()> {
        if self.arch.len() < 2 || self.arch.last() != Some(&2) {
            bail!(Config, "a learner must end in 2 logits, got architecture {:?}", self.arch);
        }
        let expected = mlp_init(&self.arch, &mut Rng::new(0))?;
        self.params.ensure_congruent(&expected, "learner parameters")
    }
}

/// Support set as a matrix with labels and per-example loss weights.
pub struct SupportBatch {
    pub features: Mat,
    pub labels: Vec<usize>,
    pub weights: Vec<f64>,
}

impl SupportBatch {
    pub fn new(train_set: &[Example], mode: PositiveWeight) -> Result<Self> {
        if train_set.is_empty() {
            bail!(Invalid, "cannot train on an empty support set");
        }
        let n_pos = train_set.iter().filter(|e| e.label.is_positive()).count();
        if n_pos == 0 {
            bail!(Invalid, "support set has no positive example");
        }
        let n_neg = train_set.len() - n_pos;
        // canonical row order, so the loss is bit-identical under any
        // permutation of the support set
        let mut order: Vec<&Example> = train_set.iter().collect();
        order.sort_by(|a, b| {
            (b.label.index(), a.class_id)
                .cmp(&(a.label.index(), b.class_id))
                .then_with(|| a.features.data().iter().map(|v| v.to_bits()).cmp(b.features.data().iter().map(|v| v.to_bits())))
        });
        let features = Mat::from_rows(order.iter().map(|e| &e.features))?;
        let labels = order.iter().map(|e| e.label.index()).collect();
        let weights = order
            .iter()
            .map(|e| match (mode, e.label) {
                (PositiveWeight::Balanced, Label::Positive) if n_neg > 0 => n_neg as f64 / n_pos as f64,
                _ => 1.0,
            })
            .collect();
        Ok(Self { features, labels, weights })
    }

    /// Unweighted batch, used for query losses.
    pub fn queries(test_set: &[Example]) -> Result<Self> {
        if test_set.is_empty() {
            bail!(Invalid, "empty query set");
        }
        Ok(Self {
            features: Mat::from_rows(test_set.iter().map(|e| &e.features))?,
            labels: test_set.iter().map(|e| e.label.index()).collect(),
            weights: alloc::vec![1.0; test_set.len()],
        })
    }

    /// Mean weighted cross-entropy of the MLP over this batch.
    pub fn loss(&self, tape: &mut Tape, params: &[Var], activation: Activation) -> Var {
        let x = tape.constant(self.features.clone());
        let logits = mlp_forward_tape(tape, params, x, activation);
        tape.softmax_cross_entropy(logits, &self.labels, &self.weights)
    }
}

fn check_dims(init: &LearnerInit, cols: usize) -> Result<()> {
    if init.feature_dim() != cols {
        bail!(Shape, "examples have {} features but the learner expects {}", cols, init.feature_dim());
    }
    Ok(())
}

/// Adapts `params` on the tape: `tcfg.inner_steps` gradient-descent steps of
/// the mean weighted support loss. The result stays differentiable with
/// respect to `params` (to first order only under [`GradOrder::First`]).
pub fn inner_train_tape(
    tape: &mut Tape,
    params: &[Var],
    support: &SupportBatch,
    activation: Activation,
    tcfg: &TrainConfig,
    order: GradOrder,
) -> Result<Vec<Var>> {
    unroll_descent(tape, params, tcfg.inner_steps, tcfg.inner_lr, order, |t, p| {
        Ok(support.loss(t, p, activation))
    })
}

/// Fits a learner to one support set, returning the adapted parameters.
pub fn inner_train(init: &LearnerInit, train_set: &[Example], tcfg: &TrainConfig) -> Result<ParamSet> {
    tcfg.validate()?;
    let support = SupportBatch::new(train_set, tcfg.positive_weight)?;
    check_dims(init, support.features.cols)?;
    let mut tape = Tape::new();
    let theta = tape.leaves(&init.params)?;
    let adapted = inner_train_tape(&mut tape, &theta, &support, init.activation, tcfg, GradOrder::First)?;
    tape.to_params(&init.params, &adapted)
}

/// Raw (no, yes) logits.
pub fn score(params: &ParamSet, x: &Array, activation: Activation) -> Result<(f64, f64)> {
    let out = mlp_forward_batch(params, &Mat::from_array(x)?, activation)?;
    if out.cols != 2 {
        bail!(Shape, "learner must output 2 logits, got {}", out.cols);
    }
    Ok((out.data[0], out.data[1]))
}

/// (no, yes) logits for every row of `xs`.
pub fn score_batch(params: &ParamSet, xs: &Mat, activation: Activation) -> Result<Vec<(f64, f64)>> {
    let out = mlp_forward_batch(params, xs, activation)?;
    if out.cols != 2 {
        bail!(Shape, "learner must output 2 logits, got {}", out.cols);
    }
    Ok((0..out.rows).map(|r| (out.get(r, 0), out.get(r, 1))).collect())
}

/// Positive iff the yes logit is strictly larger; ties are negative.
pub fn predict_from_logits(no: f64, yes: f64) -> bool {
    yes > no
}

/// Query loss of the adapted learner for one problem and its gradient with
/// respect to the initialization.
pub fn maml_problem_grad(
    init: &LearnerInit,
    problem: &Problem,
    tcfg: &TrainConfig,
    order: GradOrder,
) -> Result<(f64, ParamSet)> {
    let support = SupportBatch::new(&problem.train_set, tcfg.positive_weight)?;
    let queries = SupportBatch::queries(&problem.test_set)?;
    check_dims(init, support.features.cols)?;
    let act = init.activation;
    meta_grad(
        &init.params,
        tcfg.inner_steps,
        tcfg.inner_lr,
        order,
        |t, p| Ok(support.loss(t, p, act)),
        |t, p| Ok(queries.loss(t, p, act)),
    )
}

/// Mean per-problem loss and gradient over a batch, reduced in index order.
pub fn maml_batch_grad(
    init: &LearnerInit,
    batch: &[Problem],
    tcfg: &TrainConfig,
    order: GradOrder,
) -> Result<(f64, ParamSet)> {
    let parts = par_map(batch, |_, p| maml_problem_grad(init, p, tcfg, order));
    mean_of(&init.params, parts)
}

pub(crate) fn mean_of(like: &ParamSet, parts: Vec<Result<(f64, ParamSet)>>) -> Result<(f64, ParamSet)> {
    let n = parts.len() as f64;
    let mut loss = 0.0;
    let mut acc = alloc::vec![0.0; like.num_scalars()];
    for part in parts {
        let (l, g) = part?;
        loss += l;
        for (a, v) in acc.iter_mut().zip(g.flatten()) {
            *a += v;
        }
    }
    for a in &mut acc {
        *a /= n;
    }
    Ok((loss / n, like.unflatten(&acc)?))
}

pub(crate) fn next_batch(stream: &mut dyn ProblemStream, b: usize) -> Result<Vec<Problem>> {
    (0..b).map(|_| stream.next_problem()).collect()
}

/// MAML: Adam on the mean query loss of the adapted learner over batches
/// of problems drawn from `stream`.
pub fn maml_train(
    stream: &mut dyn ProblemStream,
    init: &LearnerInit,
    tcfg: &TrainConfig,
    mcfg: &MamlConfig,
    log: &mut TrainLog,
    phase: &str,
) -> Result<LearnerInit> {
    tcfg.validate()?;
    mcfg.validate()?;
    init.validate()?;
    let mut params = init.params.clone();
    let mut adam = AdamState::new(&params, AdamConfig::with_lr(mcfg.meta_lr))?;
    for it in 0..mcfg.meta_iterations {
        let batch = next_batch(stream, mcfg.batch_size)?;
        let current = LearnerInit { params, ..init.clone() };
        let (loss, grad) = maml_batch_grad(&current, &batch, tcfg, mcfg.order)?;
        if !loss.is_finite() {
            bail!(Invalid, "{}", format!("meta-loss diverged at iteration {}", it));
        }
        let (next_adam, next_params) = adam_step(&adam, &current.params, &grad)?;
        adam = next_adam;
        params = next_params;
        log.push(phase, it, loss);
    }
    Ok(LearnerInit { params, ..init.clone() })
}
