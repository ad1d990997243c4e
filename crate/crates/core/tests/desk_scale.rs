//! Seed-pinned training runs on the default modal mixture.

use std::sync::OnceLock;

use mmc_core::eval::evaluate;
use mmc_core::learner::{maml_train, LearnerInit, TrainConfig};
use mmc_core::numerics::Rng;
use mmc_core::pipelines::{train_baseline_ensemble, train_three_step, MethodId, MethodPredictor, PipelineConfig, ThreeStepRun};
use mmc_core::problems::{
    generate_modal_bank, sample_problem_routed, ClassBank, ClassData, EpisodeConfig, ModalBanks, ModalMixtureSpec,
    ProblemDistribution, SplitTag,
};
use mmc_core::progress::TrainLog;

struct Fixture {
    banks: ModalBanks,
    run: ThreeStepRun,
    members: Vec<LearnerInit>,
    tcfg: TrainConfig,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let banks = generate_modal_bank(&ModalMixtureSpec::default(), &Rng::new(1)).unwrap();
        let dist = ProblemDistribution::new(&banks.meta_train, EpisodeConfig::default());
        let cfg = PipelineConfig::default();
        let run = train_three_step(&dist, &cfg, &Rng::new(2), &mut TrainLog::new()).unwrap();
        let members =
            train_baseline_ensemble(&dist, 4, &cfg.learner, &cfg.meta.maml(), &Rng::new(3), &mut TrainLog::new()).unwrap();
        Fixture { banks, run, members, tcfg: cfg.learner.train }
    })
}

/// Meta-test classes of one ground-truth mode.
fn mode_bank(banks: &ModalBanks, mode: u32) -> ClassBank {
    let classes: Vec<ClassData> =
        banks.meta_test.classes().iter().filter(|c| banks.modes[&c.class_id] == mode).cloned().collect();
    ClassBank::new(banks.meta_test.feature_dim(), classes, SplitTag::MetaTest).unwrap()
}

fn accuracy_on_mode(learner: &LearnerInit, f: &Fixture, mode: u32, n: usize, seed: u64) -> f64 {
    // positives from the mode, negatives from the whole meta-test bank
    let pool: Vec<u32> = mode_bank(&f.banks, mode).class_ids();
    let ep = EpisodeConfig::default();
    let root = Rng::new(seed);
    let predictor = MethodPredictor::Single { learner, tcfg: f.tcfg };
    let mut correct = 0usize;
    let mut total = 0usize;
    for i in 0..n as u64 {
        let p = sample_problem_routed(&f.banks.meta_test, &ep, &mut root.stream(i), &pool).unwrap();
        let xs = mmc_core::numerics::Mat::from_rows(p.test_set.iter().map(|e| &e.features)).unwrap();
        let scores = mmc_core::pipelines::Predictor::adapt(&predictor, &p.train_set).unwrap().score(&xs).unwrap();
        correct += scores.iter().zip(&p.test_set).filter(|(s, e)| s.positive == e.label.is_positive()).count();
        total += p.test_set.len();
    }
    correct as f64 / total as f64
}

#[test]
fn specialists_beat_single_maml_on_their_own_mode() {
    let f = fixture();
    for (j, learner) in f.run.model.learners.iter().enumerate() {
        // the mode most of this cluster's classes come from
        let mut votes = [0usize; 4];
        for id in &f.run.pools[j] {
            votes[f.banks.modes[id] as usize] += 1;
        }
        let mode = (0..4).max_by_key(|&m| votes[m]).unwrap() as u32;
        let own = accuracy_on_mode(learner, f, mode, 300, 10 + j as u64);
        let single = accuracy_on_mode(&f.members[0], f, mode, 300, 10 + j as u64);
        assert!(own > single, "cluster {} (mode {}): specialist {:.4} vs single {:.4}", j, mode, own, single);
    }
}

#[test]
fn aggregator_beats_every_learner_alone() {
    let f = fixture();
    let ep = EpisodeConfig::default();
    let bank = &f.banks.meta_test;
    let agg = evaluate(&MethodPredictor::Aggregate(&f.run.model), MethodId::MetaMeta, 4, bank, &ep, 500, 20).unwrap();
    for (j, learner) in f.run.model.learners.iter().enumerate() {
        let alone = evaluate(&MethodPredictor::Single { learner, tcfg: f.tcfg }, MethodId::SingleMaml, 1, bank, &ep, 500, 20)
            .unwrap();
        assert!(agg.mean >= alone.mean + 0.03, "aggregate {:.4} vs learner {} alone {:.4}", agg.mean, j, alone.mean);
    }
}

#[test]
fn ensemble_members_are_each_single_maml_level() {
    let f = fixture();
    let ep = EpisodeConfig::default();
    let bank = &f.banks.meta_test;
    let acc: Vec<f64> = f
        .members
        .iter()
        .map(|l| {
            evaluate(&MethodPredictor::Single { learner: l, tcfg: f.tcfg }, MethodId::SingleMaml, 1, bank, &ep, 500, 30)
                .unwrap()
                .mean
        })
        .collect();
    for a in &acc {
        assert!((a - acc[0]).abs() <= 0.03, "member accuracies {:?}", acc);
    }
}

#[test]
fn maml_learns_a_separable_single_mode_family() {
    let spec = ModalMixtureSpec { feature_dim: 8, modes: 1, classes_per_mode: 128, noise_sigma: 0.3, ..ModalMixtureSpec::default() };
    let banks = generate_modal_bank(&spec, &Rng::new(40)).unwrap();
    let cfg = PipelineConfig::default();
    let dist = ProblemDistribution::new(&banks.meta_train, EpisodeConfig::default());
    let init = LearnerInit::random(&cfg.learner.arch(8), cfg.learner.activation, &mut Rng::new(41)).unwrap();
    let trained =
        maml_train(&mut dist.stream(Rng::new(42)), &init, &cfg.learner.train, &cfg.meta.maml(), &mut TrainLog::new(), "maml")
            .unwrap();
    let ep = EpisodeConfig { n_neg_classes: 15, ..EpisodeConfig::default() };
    let r = evaluate(&MethodPredictor::Single { learner: &trained, tcfg: cfg.learner.train }, MethodId::SingleMaml, 1, &banks.meta_test, &ep, 300, 43)
        .unwrap();
    assert!(r.mean > 0.9, "post-adaptation accuracy {:.4}", r.mean);
}
