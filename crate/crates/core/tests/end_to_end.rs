mod common;

use common::{fd_grad, rel_err};
use mmc_core::aggregator::{dropout_masks, AggregateModel};
use mmc_core::learner::TrainConfig;
use mmc_core::numerics::{Activation, GradOrder, Mat, Rng};
use mmc_core::pipelines::{end_to_end_batch_grad, random_aggregate_model, train_end_to_end, PipelineConfig};
use mmc_core::problems::{sample_problem, ClassBank, EpisodeConfig, Problem, ProblemDistribution};
use mmc_core::progress::TrainLog;

fn micro_config(inner_steps: usize) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.meta.k = 2;
    cfg.learner.hidden = vec![3];
    cfg.learner.activation = Activation::Tanh;
    cfg.learner.train = TrainConfig { inner_steps, inner_lr: 0.1, ..TrainConfig::default() };
    cfg.aggregator.hidden = vec![4];
    cfg
}

fn micro_episode() -> EpisodeConfig {
    EpisodeConfig { n_neg_train: 3, n_pos_test: 2, n_neg_test: 2, n_neg_classes: 2 }
}

fn micro_batch(bank: &ClassBank, n: usize, seed: u64) -> Vec<Problem> {
    let mut rng = Rng::new(seed);
    (0..n).map(|_| sample_problem(bank, &micro_episode(), &mut rng).unwrap()).collect()
}

fn batch_loss(model: &AggregateModel, batch: &[Problem], masks: Option<&[Vec<Mat>]>) -> f64 {
    end_to_end_batch_grad(model, batch, GradOrder::Second, masks).unwrap().0
}

fn check_meta_gradient(inner_steps: usize, with_masks: bool) {
    let bank = common::gaussian_bank(5, 6, 3, 11);
    let batch = micro_batch(&bank, 2, 12);
    let model = random_aggregate_model(3, &micro_config(inner_steps), &Rng::new(13)).unwrap();
    let masks: Option<Vec<Vec<Mat>>> = with_masks.then(|| {
        let mut rng = Rng::new(14);
        batch.iter().map(|p| dropout_masks(&model.agg, p.test_set.len(), &mut rng)).collect()
    });
    let masks = masks.as_deref();
    let (_, learner_grads, agg_grad) = end_to_end_batch_grad(&model, &batch, GradOrder::Second, masks).unwrap();

    for (j, g) in learner_grads.iter().enumerate() {
        let fd = fd_grad(&model.learners[j].params, |p| {
            let mut m = model.clone();
            m.learners[j].params = p.clone();
            batch_loss(&m, &batch, masks)
        });
        let err = rel_err(&g.flatten(), &fd);
        assert!(err < 1e-4, "m={} masks={} learner {}: relative error {}", inner_steps, with_masks, j, err);
    }
    let fd = fd_grad(&model.agg.params, |p| {
        let mut m = model.clone();
        m.agg = m.agg.with_params(p.clone()).unwrap();
        batch_loss(&m, &batch, masks)
    });
    let err = rel_err(&agg_grad.flatten(), &fd);
    assert!(err < 1e-4, "m={} masks={} aggregator: relative error {}", inner_steps, with_masks, err);
}

#[test]
fn meta_gradient_one_inner_step() {
    check_meta_gradient(1, false);
    check_meta_gradient(1, true);
}

#[test]
fn meta_gradient_five_inner_steps() {
    check_meta_gradient(5, false);
    check_meta_gradient(5, true);
}

#[test]
fn first_order_drops_only_second_order_terms() {
    let bank = common::gaussian_bank(5, 6, 3, 21);
    let batch = micro_batch(&bank, 2, 22);
    let model = random_aggregate_model(3, &micro_config(0), &Rng::new(23)).unwrap();
    let second = end_to_end_batch_grad(&model, &batch, GradOrder::Second, None).unwrap();
    let first = end_to_end_batch_grad(&model, &batch, GradOrder::First, None).unwrap();
    assert_eq!(first, second);
}

#[test]
fn zero_iterations_return_the_initialization() {
    let bank = common::gaussian_bank(5, 6, 3, 31);
    let dist = ProblemDistribution::new(&bank, micro_episode());
    let mut cfg = micro_config(1);
    cfg.meta.meta_iterations = 0;
    let rng = Rng::new(32);
    let mut log = TrainLog::new();
    let trained = train_end_to_end(&dist, &cfg, None, &rng, &mut log).unwrap();
    assert_eq!(trained, random_aggregate_model(3, &cfg, &rng.stream(0)).unwrap());
    assert!(log.records.is_empty());
}

#[test]
fn training_is_reproducible_and_logged() {
    let bank = common::gaussian_bank(5, 6, 3, 41);
    let dist = ProblemDistribution::new(&bank, micro_episode());
    let mut cfg = micro_config(2);
    cfg.meta.meta_iterations = 5;
    cfg.meta.batch_size = 2;
    let run = || {
        let mut log = TrainLog::new();
        let m = train_end_to_end(&dist, &cfg, None, &Rng::new(42), &mut log).unwrap();
        (m, log)
    };
    let (a, log_a) = run();
    let (b, log_b) = run();
    assert_eq!(a, b);
    assert_eq!(log_a, log_b);
    assert_eq!(log_a.phase("end_to_end").count(), 5);
    assert_ne!(a, random_aggregate_model(3, &cfg, &Rng::new(42).stream(0)).unwrap());

    let warm = train_end_to_end(&dist, &cfg, Some(&a), &Rng::new(43), &mut TrainLog::new()).unwrap();
    assert_ne!(warm, a);
    assert_eq!(warm.learners.len(), 2);
}

#[test]
fn zero_k_or_batch_is_a_configuration_error() {
    let bank = common::gaussian_bank(5, 6, 3, 51);
    let dist = ProblemDistribution::new(&bank, micro_episode());
    for (k, b) in [(0, 2), (2, 0)] {
        let mut cfg = micro_config(1);
        cfg.meta.k = k;
        cfg.meta.batch_size = b;
        let err = train_end_to_end(&dist, &cfg, None, &Rng::new(1), &mut TrainLog::new()).unwrap_err();
        assert!(matches!(err, mmc_core::Error::Config(_)), "{:?}", err);
    }
}
