use alloc::vec::Vec;

use super::{ClassBank, EpisodeConfig, Example, Label, Problem};
use crate::error::{bail, Error, Result};
use crate::numerics::{Array, Rng};

/// A source of learning problems.
pub trait ProblemStream {
    fn next_problem(&mut self) -> Result<Problem>;
}

/// A class bank paired with the episode sizes it is sampled at: the
/// distribution of distributions that training pipelines draw from.
#[derive(Debug, Clone, Copy)]
pub struct ProblemDistribution<'a> {
    pub bank: &'a ClassBank,
    pub episode: EpisodeConfig,
}

impl<'a> ProblemDistribution<'a> {
    pub fn new(bank: &'a ClassBank, episode: EpisodeConfig) -> Self {
        Self { bank, episode }
    }

    pub fn stream(&self, rng: Rng) -> EpisodeStream<'a> {
        EpisodeStream { bank: self.bank, cfg: self.episode, pool: None, rng }
    }

    /// Problems whose positive class is drawn from `pool` only.
    pub fn routed(&self, pool: Vec<u32>, rng: Rng) -> EpisodeStream<'a> {
        EpisodeStream { bank: self.bank, cfg: self.episode, pool: Some(pool), rng }
    }
}

/// Unbounded stream of sampled episodes.
#[derive(Debug, Clone)]
pub struct EpisodeStream<'a> {
    bank: &'a ClassBank,
    cfg: EpisodeConfig,
    pool: Option<Vec<u32>>,
    rng: Rng,
}

impl ProblemStream for EpisodeStream<'_> {
    fn next_problem(&mut self) -> Result<Problem> {
        match &self.pool {
            Some(pool) => sample_problem_routed(self.bank, &self.cfg, &mut self.rng, pool),
            None => sample_problem(self.bank, &self.cfg, &mut self.rng),
        }
    }
}

/// A finite list of problems, served in order.
#[derive(Debug, Clone)]
pub struct FixedProblems {
    problems: Vec<Problem>,
    next: usize,
}

impl FixedProblems {
    pub fn new(problems: Vec<Problem>) -> Self {
        Self { problems, next: 0 }
    }
}

impl ProblemStream for FixedProblems {
    fn next_problem(&mut self) -> Result<Problem> {
        let p = self.problems.get(self.next).cloned().ok_or(Error::StreamExhausted(self.next))?;
        self.next += 1;
        Ok(p)
    }
}

fn pick_image(bank: &ClassBank, class_idx: usize, rng: &mut Rng) -> Array {
    let ex = &bank.classes()[class_idx].examples;
    ex[rng.below(ex.len())].clone()
}

/// One support or query block of negatives: each slot picks a class from
/// `classes` uniformly with replacement, then one of its images.
fn negatives(bank: &ClassBank, classes: &[usize], n: usize, rng: &mut Rng) -> Vec<Example> {
    (0..n)
        .map(|_| {
            let c = classes[rng.below(classes.len())];
            Example {
                features: pick_image(bank, c, rng),
                label: Label::Negative,
                class_id: bank.classes()[c].class_id,
            }
        })
        .collect()
}

fn sample_with_positive(bank: &ClassBank, cfg: &EpisodeConfig, rng: &mut Rng, pos: usize) -> Result<Problem> {
    let n = bank.num_classes();
    let others: Vec<usize> = (0..n).filter(|&i| i != pos).collect();
    let pos_id = bank.classes()[pos].class_id;
    let pos_images = &bank.classes()[pos].examples;

    let neg_train = rng.choose_distinct(&others, cfg.n_neg_classes);
    let support_idx = rng.below(pos_images.len());
    let mut train_set = Vec::with_capacity(1 + cfg.n_neg_train);
    train_set.push(Example { features: pos_images[support_idx].clone(), label: Label::Positive, class_id: pos_id });
    train_set.extend(negatives(bank, &neg_train, cfg.n_neg_train, rng));

    let neg_test = rng.choose_distinct(&others, cfg.n_neg_classes);
    let mut test_set = Vec::with_capacity(cfg.n_pos_test + cfg.n_neg_test);
    for _ in 0..cfg.n_pos_test {
        // query positives avoid the support image whenever the class has another
        let i = if pos_images.len() > 1 {
            let j = rng.below(pos_images.len() - 1);
            if j >= support_idx {
                j + 1
            } else {
                j
            }
        } else {
            0
        };
        test_set.push(Example { features: pos_images[i].clone(), label: Label::Positive, class_id: pos_id });
    }
    test_set.extend(negatives(bank, &neg_test, cfg.n_neg_test, rng));

    let ids = |v: &[usize]| v.iter().map(|&i| bank.classes()[i].class_id).collect::<Vec<_>>();
    let mut p = Problem::new(train_set, test_set, pos_id, bank.mode_of(pos_id));
    p.train_negative_classes = ids(&neg_train);
    p.test_negative_classes = ids(&neg_test);
    Ok(p)
}

fn check_capacity(bank: &ClassBank, cfg: &EpisodeConfig) -> Result<()> {
    cfg.validate()?;
    if bank.num_classes() < cfg.n_neg_classes + 1 {
        bail!(
            Sampling,
            "bank has {} classes but an episode needs 1 positive and {} negative classes",
            bank.num_classes(),
            cfg.n_neg_classes
        );
    }
    Ok(())
}

/// Samples one one-vs-all episode.
///
/// A positive class is chosen uniformly. The support set holds one image of
/// it plus `n_neg_train` negatives drawn from `n_neg_classes` distinct
/// negative classes, picking the class for each slot with replacement. The
/// query set holds `n_pos_test` positives and `n_neg_test` negatives from an
/// independently drawn set of negative classes.
pub fn sample_problem(bank: &ClassBank, cfg: &EpisodeConfig, rng: &mut Rng) -> Result<Problem> {
    check_capacity(bank, cfg)?;
    let pos = rng.below(bank.num_classes());
    sample_with_positive(bank, cfg, rng, pos)
}

/// As [`sample_problem`], with the positive class drawn from `positive_pool`.
/// Negatives still come from the whole bank.
pub fn sample_problem_routed(
    bank: &ClassBank,
    cfg: &EpisodeConfig,
    rng: &mut Rng,
    positive_pool: &[u32],
) -> Result<Problem> {
    if positive_pool.is_empty() {
        bail!(Sampling, "positive pool is empty");
    }
    check_capacity(bank, cfg)?;
    let id = positive_pool[rng.below(positive_pool.len())];
    let Some(pos) = bank.class_index(id) else {
        bail!(Sampling, "pool class {} is not in the bank", id);
    };
    sample_with_positive(bank, cfg, rng, pos)
}

/// A 5-way, one-shot episode.
#[derive(Debug, Clone, PartialEq)]
pub struct FiveWayProblem {
    pub classes: [u32; 5],
    /// One support example per class, in class order.
    pub supports: Vec<Array>,
    /// Query features with their class index in `0..5`.
    pub queries: Vec<(Array, usize)>,
}

pub const FIVEWAY_QUERIES_PER_CLASS: usize = 15;

/// Samples 5 distinct classes with one support and 15 query images each.
/// Support and queries are disjoint whenever a class has at least 16 images.
pub fn sample_fiveway(bank: &ClassBank, rng: &mut Rng) -> Result<FiveWayProblem> {
    if bank.num_classes() < 5 {
        bail!(Sampling, "5-way episodes need at least 5 classes, bank has {}", bank.num_classes());
    }
    let all: Vec<usize> = (0..bank.num_classes()).collect();
    let chosen = rng.choose_distinct(&all, 5);
    let mut classes = [0u32; 5];
    let mut supports = Vec::with_capacity(5);
    let mut queries = Vec::with_capacity(5 * FIVEWAY_QUERIES_PER_CLASS);
    for (k, &c) in chosen.iter().enumerate() {
        let data = &bank.classes()[c];
        classes[k] = data.class_id;
        let n = data.examples.len();
        let idx: Vec<usize> = (0..n).collect();
        if n > FIVEWAY_QUERIES_PER_CLASS {
            let picked = rng.choose_distinct(&idx, FIVEWAY_QUERIES_PER_CLASS + 1);
            supports.push(data.examples[picked[0]].clone());
            for &q in &picked[1..] {
                queries.push((data.examples[q].clone(), k));
            }
        } else {
            let s = rng.below(n);
            supports.push(data.examples[s].clone());
            let rest: Vec<usize> = if n > 1 { idx.into_iter().filter(|&i| i != s).collect() } else { idx };
            for _ in 0..FIVEWAY_QUERIES_PER_CLASS {
                let q = rest[rng.below(rest.len())];
                queries.push((data.examples[q].clone(), k));
            }
        }
    }
    Ok(FiveWayProblem { classes, supports, queries })
}
