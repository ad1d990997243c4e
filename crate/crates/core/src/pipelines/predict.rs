use alloc::boxed::Box;
use alloc::vec::Vec;

use crate::aggregator::{Adapted, AggregateModel};
use crate::clustering::{assign, embed_support};
use crate::error::{bail, Result};
use crate::learner::{inner_train, predict_from_logits, score, score_batch, LearnerInit, TrainConfig};
use crate::numerics::{math, Activation, Array, Mat, ParamSet};
use crate::problems::{Example, FiveWayProblem, Label};

/// A method's verdict on one query: the binary prediction and a real-valued
/// yes-score used to rank the query across several one-vs-all problems.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    pub positive: bool,
    pub yes: f64,
}

/// A method fitted to one support set.
pub trait EpisodeScorer {
    /// Scores every row of `xs`.
    fn score(&self, xs: &Mat) -> Result<Vec<Score>>;
}

/// Anything that turns a support set into an [`EpisodeScorer`].
pub trait Predictor: Sync {
    fn adapt<'a>(&'a self, d_trn: &[Example]) -> Result<Box<dyn EpisodeScorer + 'a>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VoteMode {
    Hard,
    Soft,
}

fn yes_probability(no: f64, yes: f64) -> f64 {
    // softmax over (no, yes)
    if yes >= no {
        1.0 / (1.0 + math::exp(no - yes))
    } else {
        let e = math::exp(yes - no);
        e / (1.0 + e)
    }
}

fn mean_yes_probability(logits: &[(f64, f64)]) -> f64 {
    logits.iter().map(|&(n, y)| yes_probability(n, y)).sum::<f64>() / logits.len() as f64
}

/// Ensemble decision from each fitted learner's (no, yes) logits.
///
/// Soft: mean softmax yes-probability above 0.5 (exactly 0.5 is negative).
/// Hard: majority of per-learner predictions, with a split vote decided by
/// the soft rule.
pub fn ensemble_predict(logits: &[(f64, f64)], mode: VoteMode) -> bool {
    assert!(!logits.is_empty(), "ensemble needs at least one learner");
    let soft = mean_yes_probability(logits) > 0.5;
    match mode {
        VoteMode::Soft => soft,
        VoteMode::Hard => {
            let yes = logits.iter().filter(|&&(n, y)| predict_from_logits(n, y)).count();
            let no = logits.len() - yes;
            match yes.cmp(&no) {
                core::cmp::Ordering::Greater => true,
                core::cmp::Ordering::Less => false,
                core::cmp::Ordering::Equal => soft,
            }
        }
    }
}

/// Index of the learner whose centroid is nearest to the support embedding.
pub fn nearest_cluster_route(model: &AggregateModel, d_trn: &[Example]) -> Result<usize> {
    let Some(c) = &model.centroids else {
        bail!(Config, "nearest-cluster prediction needs a model with centroids");
    };
    assign(c, &embed_support(d_trn, c.embedding)?)
}

/// Prediction of the nearest cluster's learner alone, fitted to `d_trn`.
pub fn nearest_cluster_predict(model: &AggregateModel, d_trn: &[Example], x: &Array) -> Result<bool> {
    let j = nearest_cluster_route(model, d_trn)?;
    let l = &model.learners[j];
    let fitted = inner_train(l, d_trn, &model.tcfg)?;
    let (no, yes) = score(&fitted, x, l.activation)?;
    Ok(predict_from_logits(no, yes))
}

/// The evaluated methods behind one interface. The aggregate variant serves
/// both the meta-meta classifier and its whole-data ablation.
#[derive(Debug, Clone, Copy)]
pub enum MethodPredictor<'a> {
    Single { learner: &'a LearnerInit, tcfg: TrainConfig },
    Bagging { learners: &'a [LearnerInit], tcfg: TrainConfig, mode: VoteMode },
    Aggregate(&'a AggregateModel),
    NearestCluster(&'a AggregateModel),
}

struct LearnerScorer {
    params: ParamSet,
    activation: Activation,
}

impl EpisodeScorer for LearnerScorer {
    fn score(&self, xs: &Mat) -> Result<Vec<Score>> {
        Ok(score_batch(&self.params, xs, self.activation)?
            .into_iter()
            .map(|(no, yes)| Score { positive: predict_from_logits(no, yes), yes })
            .collect())
    }
}

struct BaggingScorer {
    fitted: Vec<LearnerScorer>,
    mode: VoteMode,
}

impl EpisodeScorer for BaggingScorer {
    fn score(&self, xs: &Mat) -> Result<Vec<Score>> {
        let per_learner: Vec<Vec<(f64, f64)>> =
            self.fitted.iter().map(|f| score_batch(&f.params, xs, f.activation)).collect::<Result<_>>()?;
        Ok((0..xs.rows)
            .map(|r| {
                let logits: Vec<(f64, f64)> = per_learner.iter().map(|l| l[r]).collect();
                Score { positive: ensemble_predict(&logits, self.mode), yes: mean_yes_probability(&logits) }
            })
            .collect())
    }
}

struct AggregateScorer<'a>(Adapted<'a>);

impl EpisodeScorer for AggregateScorer<'_> {
    fn score(&self, xs: &Mat) -> Result<Vec<Score>> {
        Ok(self
            .0
            .score_batch(xs)?
            .into_iter()
            .map(|(no, yes)| Score { positive: predict_from_logits(no, yes), yes })
            .collect())
    }
}

fn fit(learner: &LearnerInit, d_trn: &[Example], tcfg: &TrainConfig) -> Result<LearnerScorer> {
    Ok(LearnerScorer { params: inner_train(learner, d_trn, tcfg)?, activation: learner.activation })
}

impl Predictor for MethodPredictor<'_> {
    fn adapt<'a>(&'a self, d_trn: &[Example]) -> Result<Box<dyn EpisodeScorer + 'a>> {
        Ok(match *self {
            MethodPredictor::Single { learner, tcfg } => Box::new(fit(learner, d_trn, &tcfg)?),
            MethodPredictor::Bagging { learners, tcfg, mode } => {
                if learners.is_empty() {
                    bail!(Config, "ensemble needs at least one learner");
                }
                let fitted = learners.iter().map(|l| fit(l, d_trn, &tcfg)).collect::<Result<_>>()?;
                Box::new(BaggingScorer { fitted, mode })
            }
            MethodPredictor::Aggregate(model) => Box::new(AggregateScorer(model.adapt(d_trn)?)),
            MethodPredictor::NearestCluster(model) => {
                let j = nearest_cluster_route(model, d_trn)?;
                Box::new(fit(&model.learners[j], d_trn, &model.tcfg)?)
            }
        })
    }
}

/// 5-way classification through five one-vs-all problems: class `i`'s
/// support is its own example as the positive and the other four as
/// negatives. Each query goes to the class whose adapted scorer gives it
/// the largest yes-score (lowest class index on ties).
pub fn fiveway_predict(predictor: &dyn Predictor, fw: &FiveWayProblem) -> Result<Vec<usize>> {
    if fw.supports.len() != fw.classes.len() {
        bail!(Invalid, "need one support example per class");
    }
    let xs = Mat::from_rows(fw.queries.iter().map(|(x, _)| x))?;
    let mut best = alloc::vec![(0usize, f64::NEG_INFINITY); xs.rows];
    for i in 0..fw.classes.len() {
        // negatives in class-id order, so the support set does not depend on
        // where the other classes sit in the episode
        let mut negatives: Vec<usize> = (0..fw.classes.len()).filter(|&j| j != i).collect();
        negatives.sort_by_key(|&j| fw.classes[j]);
        let mut support = Vec::with_capacity(fw.classes.len());
        support.push(Example { features: fw.supports[i].clone(), label: Label::Positive, class_id: fw.classes[i] });
        for j in negatives {
            support.push(Example { features: fw.supports[j].clone(), label: Label::Negative, class_id: fw.classes[j] });
        }
        let scores = predictor.adapt(&support)?.score(&xs)?;
        for (b, s) in best.iter_mut().zip(scores) {
            if s.yes > b.1 {
                *b = (i, s.yes);
            }
        }
    }
    Ok(best.into_iter().map(|(i, _)| i).collect())
}
