//! The meta-aggregation network and the aggregate scoring function built from
//! it: per episode, every learner is fitted to the support set, and the
//! network reads the support embedding together with all learners' raw
//! logits to emit the final (no, yes) scores.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::clustering::{embed_support, Centroids, EmbeddingSpec};
use crate::error::{bail, Result};
use crate::exec::par_map;
use crate::learner::{inner_train, mean_of, next_batch, score_batch, MamlConfig, TrainConfig, LearnerInit};
use crate::numerics::{adam_step, mlp_init, AdamConfig, AdamState, Array, Mat, ParamSet, Rng, Tape, Var};
use crate::problems::{Example, Problem, ProblemStream};
use crate::progress::TrainLog;

/// Parameters of the aggregation network and its input layout.
///
/// The input row is `[embedding (embed_dim) | no_1, yes_1, ..., no_k, yes_k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggParams {
    pub params: ParamSet,
    pub hidden: Vec<usize>,
    /// Drop probability on the input layer.
    pub dropout_input: f64,
    /// Drop probability after every hidden layer.
    pub dropout_hidden: f64,
    pub embed_dim: usize,
    pub k: usize,
}

impl AggParams {
    pub fn random(
        embed_dim: usize,
        k: usize,
        hidden: &[usize],
        dropout_input: f64,
        dropout_hidden: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if k == 0 || embed_dim == 0 {
            bail!(Config, "aggregator needs k >= 1 and a positive embedding dimension");
        }
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(embed_dim + 2 * k);
        dims.extend_from_slice(hidden);
        dims.push(2);
        let agg = Self {
            params: mlp_init(&dims, rng)?,
            hidden: hidden.to_vec(),
            dropout_input,
            dropout_hidden,
            embed_dim,
            k,
        };
        agg.validate()?;
        Ok(agg)
    }

    pub fn input_width(&self) -> usize {
        self.embed_dim + 2 * self.k
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(self.input_width());
        dims.extend_from_slice(&self.hidden);
        dims.push(2);
        dims
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("dropout_input", self.dropout_input), ("dropout_hidden", self.dropout_hidden)] {
            if !(0.0..1.0).contains(&p) {
                bail!(Config, "{} must lie in [0, 1), got {}", name, p);
            }
        }
        if self.k == 0 || self.embed_dim == 0 {
            bail!(Config, "aggregator needs k >= 1 and a positive embedding dimension");
        }
        let expected = mlp_init(&self.dims(), &mut Rng::new(0))?;
        self.params.ensure_congruent(&expected, "aggregator parameters")
    }

    pub fn with_params(&self, params: ParamSet) -> Result<Self> {
        self.params.ensure_congruent(&params, "aggregator parameters")?;
        Ok(Self { params, ..self.clone() })
    }
}

/// Inverted-dropout multipliers for a batch of `rows` inputs: one matrix for
/// the input layer and one per hidden layer, with entries 0 (dropped) or
/// `1 / (1 - p)` (kept).
pub fn dropout_masks(agg: &AggParams, rows: usize, rng: &mut Rng) -> Vec<Mat> {
    let mut widths = Vec::with_capacity(agg.hidden.len() + 1);
    widths.push((agg.input_width(), agg.dropout_input));
    widths.extend(agg.hidden.iter().map(|&h| (h, agg.dropout_hidden)));
    widths
        .into_iter()
        .map(|(w, p)| {
            let keep = 1.0 / (1.0 - p);
            let data = (0..rows * w).map(|_| if rng.uniform() < p { 0.0 } else { keep }).collect();
            Mat::new(rows, w, data)
        })
        .collect()
}

/// Forward pass of the aggregation network on the tape. `input` is
/// `n x input_width`; `masks` (from [`dropout_masks`]) switch on dropout.
pub fn agg_forward_tape(tape: &mut Tape, vars: &[Var], input: Var, masks: Option<&[Mat]>) -> Var {
    let layers = vars.len() / 2;
    let apply = |tape: &mut Tape, h: Var, i: usize| match masks {
        Some(m) => {
            let c = tape.constant(m[i].clone());
            tape.mul(h, c)
        }
        None => h,
    };
    let mut h = apply(tape, input, 0);
    for l in 0..layers {
        let z = tape.matmul(h, vars[2 * l]);
        let z = tape.add_row(z, vars[2 * l + 1]);
        h = if l + 1 == layers {
            z
        } else {
            let a = tape.relu(z);
            apply(tape, a, l + 1)
        };
    }
    h
}

/// Builds the aggregator input on the tape from the support embedding and
/// each learner's `n x 2` logits.
pub fn agg_input_tape(tape: &mut Tape, embed: &Array, learner_logits: &[Var]) -> Var {
    let rows = tape.value(learner_logits[0]).rows;
    let mut data = Vec::with_capacity(rows * embed.len());
    for _ in 0..rows {
        data.extend_from_slice(embed.data());
    }
    let e = tape.constant(Mat::new(rows, embed.len(), data));
    let mut parts = Vec::with_capacity(learner_logits.len() + 1);
    parts.push(e);
    parts.extend_from_slice(learner_logits);
    tape.concat_cols(&parts)
}

/// Whether [`agg_forward`] runs with dropout.
pub enum AggMode<'a> {
    Train(&'a mut Rng),
    Eval,
}

/// The aggregation network on a single input; `learner_logits` holds
/// `[no_1, yes_1, ..., no_k, yes_k]`.
pub fn agg_forward(agg: &AggParams, embed: &Array, learner_logits: &Array, mode: AggMode<'_>) -> Result<Array> {
    if embed.shape() != [agg.embed_dim] || learner_logits.shape() != [2 * agg.k] {
        bail!(
            Shape,
            "aggregator expects an embedding of {} and {} learner logits, got {:?} and {:?}",
            agg.embed_dim,
            2 * agg.k,
            embed.shape(),
            learner_logits.shape()
        );
    }
    let mut row = embed.data().to_vec();
    row.extend_from_slice(learner_logits.data());
    let mut tape = Tape::new();
    let vars = constants(&mut tape, &agg.params)?;
    let input = tape.constant(Mat::new(1, row.len(), row));
    let masks = match mode {
        AggMode::Train(rng) => Some(dropout_masks(agg, 1, rng)),
        AggMode::Eval => None,
    };
    let out = agg_forward_tape(&mut tape, &vars, input, masks.as_deref());
    Ok(tape.value(out).to_array(&[2]))
}

fn constants(tape: &mut Tape, params: &ParamSet) -> Result<Vec<Var>> {
    params.arrays().map(|a| Mat::from_array(a).map(|m| tape.constant(m))).collect()
}

/// The whole meta-meta classifier: k learner initializations, their shared
/// inner training, and the aggregation network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregateModel {
    pub learners: Vec<LearnerInit>,
    pub tcfg: TrainConfig,
    pub agg: AggParams,
    pub centroids: Option<Centroids>,
    pub embedding: EmbeddingSpec,
}

impl AggregateModel {
    pub fn new(
        learners: Vec<LearnerInit>,
        tcfg: TrainConfig,
        agg: AggParams,
        centroids: Option<Centroids>,
        embedding: EmbeddingSpec,
    ) -> Result<Self> {
        let model = Self { learners, tcfg, agg, centroids, embedding };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.learners.is_empty() {
            bail!(Config, "need at least one learner");
        }
        for l in &self.learners {
            l.validate()?;
            if l.arch != self.learners[0].arch {
                bail!(Config, "learner architectures differ: {:?} vs {:?}", l.arch, self.learners[0].arch);
            }
        }
        self.tcfg.validate()?;
        self.agg.validate()?;
        if self.agg.k != self.learners.len() {
            bail!(Config, "aggregator expects {} learners, model has {}", self.agg.k, self.learners.len());
        }
        if self.agg.embed_dim != self.feature_dim() {
            bail!(Config, "aggregator embedding width {} differs from feature dimension {}", self.agg.embed_dim, self.feature_dim());
        }
        if let Some(c) = &self.centroids {
            if c.k != self.learners.len() || c.dim() != self.feature_dim() {
                bail!(Config, "centroids ({} of dimension {}) do not match the learners", c.k, c.dim());
            }
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.learners.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.learners[0].feature_dim()
    }

    /// Fits every learner to `d_trn` and embeds it, once per episode.
    pub fn adapt(&self, d_trn: &[Example]) -> Result<Adapted<'_>> {
        let embed = embed_support(d_trn, self.embedding)?;
        let fitted = self.learners.iter().map(|l| inner_train(l, d_trn, &self.tcfg)).collect::<Result<_>>()?;
        Ok(Adapted { model: self, fitted, embed })
    }
}

/// An [`AggregateModel`] fitted to one support set.
#[derive(Debug, Clone)]
pub struct Adapted<'a> {
    model: &'a AggregateModel,
    pub fitted: Vec<ParamSet>,
    pub embed: Array,
}

impl Adapted<'_> {
    /// Each fitted learner's (no, yes) logits for every row of `xs`.
    pub fn learner_logits(&self, xs: &Mat) -> Result<Vec<Vec<(f64, f64)>>> {
        self.fitted
            .iter()
            .zip(&self.model.learners)
            .map(|(p, l)| score_batch(p, xs, l.activation))
            .collect()
    }

    /// Aggregate (no, yes) scores, eval mode.
    pub fn score_batch(&self, xs: &Mat) -> Result<Vec<(f64, f64)>> {
        let input = agg_input(&self.embed, &self.learner_logits(xs)?);
        let mut tape = Tape::new();
        let vars = constants(&mut tape, &self.model.agg.params)?;
        let x = tape.constant(input);
        let out = agg_forward_tape(&mut tape, &vars, x, None);
        let m = tape.value(out);
        Ok((0..m.rows).map(|r| (m.get(r, 0), m.get(r, 1))).collect())
    }
}

fn agg_input(embed: &Array, logits: &[Vec<(f64, f64)>]) -> Mat {
    let rows = logits[0].len();
    let width = embed.len() + 2 * logits.len();
    let mut data = Vec::with_capacity(rows * width);
    for r in 0..rows {
        data.extend_from_slice(embed.data());
        for l in logits {
            data.push(l[r].0);
            data.push(l[r].1);
        }
    }
    Mat::new(rows, width, data)
}

/// Aggregate (no, yes) scores for one query `x`, computed from scratch.
pub fn aggregate_score(model: &AggregateModel, d_trn: &[Example], x: &Array) -> Result<(f64, f64)> {
    if x.shape() != [model.feature_dim()] {
        bail!(Shape, "query has shape {:?}, expected [{}]", x.shape(), model.feature_dim());
    }
    let mut logits = Vec::with_capacity(2 * model.k());
    for l in &model.learners {
        let fitted = inner_train(l, d_trn, &model.tcfg)?;
        let (no, yes) = crate::learner::score(&fitted, x, l.activation)?;
        logits.push(no);
        logits.push(yes);
    }
    let embed = embed_support(d_trn, model.embedding)?;
    let out = agg_forward(&model.agg, &embed, &Array::vector(logits), AggMode::Eval)?;
    Ok((out.data()[0], out.data()[1]))
}

/// Query loss of the aggregation network on one problem with the learners
/// held fixed, and its gradient with respect to the network parameters.
fn agg_problem_grad(model: &AggregateModel, agg: &ParamSet, problem: &Problem, rng: &mut Rng) -> Result<(f64, ParamSet)> {
    let adapted = model.adapt(&problem.train_set)?;
    let xs = Mat::from_rows(problem.test_set.iter().map(|e| &e.features))?;
    let input = agg_input(&adapted.embed, &adapted.learner_logits(&xs)?);
    let labels: Vec<usize> = problem.test_set.iter().map(|e| e.label.index()).collect();
    let weights = alloc::vec![1.0; labels.len()];
    let masks = dropout_masks(&model.agg, xs.rows, rng);
    crate::numerics::grad(agg, |tape, vars| {
        let x = tape.constant(input);
        let logits = agg_forward_tape(tape, vars, x, Some(&masks));
        Ok(tape.softmax_cross_entropy(logits, &labels, &weights))
    })
}

/// Trains the aggregation network with Adam on the mean query cross-entropy
/// of the aggregate scores. The learners are not touched.
pub fn train_aggregator(
    stream: &mut dyn ProblemStream,
    model: &AggregateModel,
    mcfg: &MamlConfig,
    rng: &Rng,
    log: &mut TrainLog,
    phase: &str,
) -> Result<AggParams> {
    model.validate()?;
    mcfg.validate()?;
    let mut params = model.agg.params.clone();
    let mut adam = AdamState::new(&params, AdamConfig::with_lr(mcfg.meta_lr))?;
    for it in 0..mcfg.meta_iterations {
        let batch = next_batch(stream, mcfg.batch_size)?;
        let it_rng = rng.stream(it as u64);
        let parts = par_map(&batch, |i, p| agg_problem_grad(model, &params, p, &mut it_rng.stream(i as u64)));
        let (loss, grad) = mean_of(&params, parts)?;
        if !loss.is_finite() {
            bail!(Invalid, "aggregator loss diverged at iteration {}", it);
        }
        let (next_adam, next_params) = adam_step(&adam, &params, &grad)?;
        adam = next_adam;
        params = next_params;
        log.push(phase, it, loss);
    }
    model.agg.with_params(params)
}

/// Mean eval-mode query loss of the aggregate model over `problems`.
pub fn aggregate_loss(model: &AggregateModel, problems: &[Problem]) -> Result<f64> {
    let losses: Vec<f64> = par_map(problems, |_, p| -> Result<f64> {
        let adapted = model.adapt(&p.train_set)?;
        let xs = Mat::from_rows(p.test_set.iter().map(|e| &e.features))?;
        let scores = adapted.score_batch(&xs)?;
        let mut total = 0.0;
        for ((no, yes), e) in scores.into_iter().zip(&p.test_set) {
            total += crate::numerics::cross_entropy(&Array::vector(alloc::vec![no, yes]), e.label.index(), 1.0)?;
        }
        Ok(total / p.test_set.len() as f64)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / problems.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Activation;
    use crate::problems::{generate_modal_bank, sample_problem, EpisodeConfig, FixedProblems, ModalMixtureSpec};
    use alloc::vec;

    fn small_model(k: usize, seed: u64) -> AggregateModel {
        let mut rng = Rng::new(seed);
        let learners = (0..k).map(|_| LearnerInit::random(&[4, 6, 2], Activation::Relu, &mut rng).unwrap()).collect();
        let agg = AggParams::random(4, k, &[8, 8], 0.5, 0.5, &mut rng).unwrap();
        AggregateModel::new(learners, TrainConfig::default(), agg, None, EmbeddingSpec::PositiveAbs).unwrap()
    }

    fn small_problem(seed: u64) -> Problem {
        let spec = ModalMixtureSpec { feature_dim: 4, modes: 2, classes_per_mode: 12, examples_per_class: 10, ..Default::default() };
        let banks = generate_modal_bank(&spec, &Rng::new(seed)).unwrap();
        let cfg = EpisodeConfig { n_neg_train: 5, n_pos_test: 4, n_neg_test: 4, n_neg_classes: 5 };
        sample_problem(&banks.meta_train, &cfg, &mut Rng::new(seed + 1)).unwrap()
    }

    #[test]
    fn layout_and_widths() {
        let m = small_model(3, 0);
        assert_eq!(m.agg.input_width(), 10);
        assert_eq!(m.agg.params.entries()[0].1.shape(), &[10, 8]);
        let e = Array::vector(vec![0.0; 4]);
        assert!(agg_forward(&m.agg, &e, &Array::vector(vec![0.0; 5]), AggMode::Eval).is_err());
    }

    #[test]
    fn zero_weights_give_output_bias() {
        let m = small_model(2, 1);
        let arrays: Vec<Array> = m
            .agg
            .params
            .entries()
            .iter()
            .map(|(n, a)| if n == "b2" { Array::vector(vec![0.25, -1.5]) } else { a.map(|_| 0.0) })
            .collect();
        let agg = m.agg.with_params(m.agg.params.with_arrays(arrays).unwrap()).unwrap();
        let out = agg_forward(&agg, &Array::vector(vec![3.0; 4]), &Array::vector(vec![1.0, -2.0, 5.0, 0.5]), AggMode::Eval)
            .unwrap();
        assert_eq!(out.data(), &[0.25, -1.5]);
    }

    #[test]
    fn no_dropout_train_equals_eval() {
        let m = small_model(2, 2);
        let agg = AggParams { dropout_input: 0.0, dropout_hidden: 0.0, ..m.agg.clone() };
        let e = Array::vector(vec![0.3, -0.2, 1.0, 0.0]);
        let l = Array::vector(vec![0.1, 0.2, -0.3, 0.4]);
        let a = agg_forward(&agg, &e, &l, AggMode::Eval).unwrap();
        let b = agg_forward(&agg, &e, &l, AggMode::Train(&mut Rng::new(9))).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, agg_forward(&agg, &e, &l, AggMode::Eval).unwrap());
    }

    #[test]
    fn cached_matches_uncached() {
        let m = small_model(3, 3);
        let p = small_problem(4);
        let adapted = m.adapt(&p.train_set).unwrap();
        let xs = Mat::from_rows(p.test_set.iter().map(|e| &e.features)).unwrap();
        let batch = adapted.score_batch(&xs).unwrap();
        for (e, b) in p.test_set.iter().zip(batch) {
            let s = aggregate_score(&m, &p.train_set, &e.features).unwrap();
            assert!((s.0 - b.0).abs() < 1e-12 && (s.1 - b.1).abs() < 1e-12, "{:?} vs {:?}", s, b);
        }
    }

    #[test]
    fn zero_iterations_keep_everything() {
        let m = small_model(2, 5);
        let mcfg = MamlConfig { meta_iterations: 0, ..Default::default() };
        let mut stream = FixedProblems::new(vec![]);
        let agg = train_aggregator(&mut stream, &m, &mcfg, &Rng::new(0), &mut TrainLog::new(), "agg").unwrap();
        assert_eq!(agg, m.agg);
    }

    #[test]
    fn training_reduces_loss_on_fixed_batch() {
        let mut m = small_model(2, 6);
        m.agg.dropout_input = 0.0;
        m.agg.dropout_hidden = 0.0;
        let problems: Vec<Problem> = (0..4).map(|i| small_problem(10 + i)).collect();
        let before = aggregate_loss(&m, &problems).unwrap();
        let served: Vec<Problem> = problems.iter().cycle().take(4 * 30).cloned().collect();
        let mcfg = MamlConfig { meta_lr: 1e-2, batch_size: 4, meta_iterations: 30, ..Default::default() };
        let agg =
            train_aggregator(&mut FixedProblems::new(served), &m, &mcfg, &Rng::new(1), &mut TrainLog::new(), "agg").unwrap();
        let learners = m.learners.clone();
        m.agg = agg;
        assert_eq!(m.learners, learners);
        let after = aggregate_loss(&m, &problems).unwrap();
        assert!(after < before, "{} -> {}", before, after);
    }
}
