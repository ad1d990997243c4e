mod common;

use std::collections::BTreeSet;

use mmc_core::numerics::Rng;
use mmc_core::problems::{
    generate_modal_bank, sample_fiveway, sample_problem, sample_problem_routed, EpisodeConfig, ModalMixtureSpec,
    ProblemDistribution, ProblemStream,
};
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF, Discrete, Hypergeometric};

fn default_train_bank() -> mmc_core::problems::ClassBank {
    generate_modal_bank(&ModalMixtureSpec::default(), &Rng::new(7)).unwrap().meta_train
}

#[test]
fn ten_thousand_default_episodes_follow_the_protocol() {
    let bank = default_train_bank();
    let cfg = EpisodeConfig::default();
    let mut stream = ProblemDistribution::new(&bank, cfg).stream(Rng::new(1));
    let mut distinct_slots = 0usize;
    for _ in 0..10_000 {
        let p = stream.next_problem().unwrap();
        assert_eq!(p.train_set.len(), 51);
        assert_eq!(p.test_set.len(), 100);
        assert_eq!(p.train_set.iter().filter(|e| e.label.is_positive()).count(), 1);
        assert_eq!(p.test_set.iter().filter(|e| e.label.is_positive()).count(), 50);
        for e in p.train_set.iter().chain(&p.test_set) {
            assert_eq!(e.label.is_positive(), e.class_id == p.positive_class);
        }
        assert!(!p.train_negative_classes.contains(&p.positive_class));
        assert!(!p.test_negative_classes.contains(&p.positive_class));
        assert_eq!(p.train_negative_classes.iter().collect::<BTreeSet<_>>().len(), 50);
        assert_eq!(p.test_negative_classes.iter().collect::<BTreeSet<_>>().len(), 50);
        let used: BTreeSet<u32> = p.train_set.iter().filter(|e| !e.label.is_positive()).map(|e| e.class_id).collect();
        assert!(used.iter().all(|c| p.train_negative_classes.contains(c)));
        let used_test: BTreeSet<u32> =
            p.test_set.iter().filter(|e| !e.label.is_positive()).map(|e| e.class_id).collect();
        assert!(used_test.iter().all(|c| p.test_negative_classes.contains(c)));
        distinct_slots += used.len();
    }
    // 50 slots filled with replacement from 50 classes cover 50 (1 - (49/50)^50) classes on average
    let expected = 50.0 * (1.0 - (49.0f64 / 50.0).powi(50));
    let mean = distinct_slots as f64 / 10_000.0;
    assert!((mean - expected).abs() < 0.1, "mean distinct negative classes {} vs {}", mean, expected);
}

#[test]
fn support_and_query_negative_classes_are_drawn_independently() {
    let bank = default_train_bank();
    let cfg = EpisodeConfig::default();
    let n = 10_000u64;
    let others = (bank.num_classes() - 1) as u64;
    let mut counts = vec![0u64; 51];
    let mut rng = Rng::new(2);
    for _ in 0..n {
        let p = sample_problem(&bank, &cfg, &mut rng).unwrap();
        let a: BTreeSet<_> = p.train_negative_classes.iter().collect();
        let overlap = p.test_negative_classes.iter().filter(|c| a.contains(c)).count();
        counts[overlap] += 1;
    }
    // two independent 50-subsets of the 191 candidates overlap hypergeometrically
    let h = Hypergeometric::new(others, 50, 50).unwrap();
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let (mut obs, mut exp) = (0.0, 0.0);
    for (x, &c) in counts.iter().enumerate() {
        obs += c as f64;
        exp += n as f64 * h.pmf(x as u64);
        if exp >= 5.0 {
            bins.push((obs, exp));
            obs = 0.0;
            exp = 0.0;
        }
    }
    let last = bins.last_mut().unwrap();
    last.0 += obs;
    last.1 += exp;
    let stat: f64 = bins.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let p_value = 1.0 - ChiSquared::new((bins.len() - 1) as f64).unwrap().cdf(stat);
    assert!(p_value > 0.01, "chi-squared {} over {} bins, p = {}", stat, bins.len(), p_value);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn sampled_problems_match_their_configuration(
        n_neg_train in 1usize..60,
        n_pos_test in 1usize..40,
        n_neg_test in 1usize..40,
        n_neg_classes in 1usize..20,
        seed in any::<u64>(),
    ) {
        let bank = common::gaussian_bank(24, 3, 2, 5);
        let cfg = EpisodeConfig { n_neg_train, n_pos_test, n_neg_test, n_neg_classes };
        let p = sample_problem(&bank, &cfg, &mut Rng::new(seed)).unwrap();
        prop_assert_eq!(p.train_set.len(), 1 + n_neg_train);
        prop_assert_eq!(p.test_set.iter().filter(|e| e.label.is_positive()).count(), n_pos_test);
        prop_assert_eq!(p.test_set.iter().filter(|e| !e.label.is_positive()).count(), n_neg_test);
        prop_assert!(p.train_set.iter().chain(&p.test_set).all(|e| e.label.is_positive() == (e.class_id == p.positive_class)));
    }
}

#[test]
fn routed_positives_stay_in_the_pool_and_never_reappear_as_negatives() {
    let bank = default_train_bank();
    let cfg = EpisodeConfig::default();
    let ids = bank.class_ids();
    let pool: Vec<u32> = ids.iter().copied().step_by(5).collect();
    let mut rng = Rng::new(3);
    for _ in 0..1000 {
        let p = sample_problem_routed(&bank, &cfg, &mut rng, &pool).unwrap();
        assert!(pool.contains(&p.positive_class));
        assert!(p.train_set.iter().chain(&p.test_set).all(|e| e.label.is_positive() == (e.class_id == p.positive_class)));
    }
    assert!(sample_problem_routed(&bank, &cfg, &mut rng, &[]).is_err());
}

#[test]
fn full_pool_routing_is_plain_sampling() {
    let bank = default_train_bank();
    let cfg = EpisodeConfig::default();
    let ids = bank.class_ids();
    for seed in 0..20 {
        let a = sample_problem(&bank, &cfg, &mut Rng::new(seed)).unwrap();
        let b = sample_problem_routed(&bank, &cfg, &mut Rng::new(seed), &ids).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn fiveway_episodes_are_reproducible_and_disjoint() {
    let bank = default_train_bank();
    for seed in 0..50 {
        let fw = sample_fiveway(&bank, &mut Rng::new(seed)).unwrap();
        assert_eq!(fw, sample_fiveway(&bank, &mut Rng::new(seed)).unwrap());
        assert_eq!(fw.supports.len(), 5);
        assert_eq!(fw.queries.len(), 75);
        assert_eq!(fw.classes.iter().collect::<BTreeSet<_>>().len(), 5);
        for (x, k) in &fw.queries {
            assert_ne!(x, &fw.supports[*k]);
        }
    }
}

#[test]
fn modal_examples_have_the_expected_squared_norm() {
    let spec = ModalMixtureSpec { examples_per_class: 400, ..ModalMixtureSpec::default() };
    let banks = generate_modal_bank(&spec, &Rng::new(4)).unwrap();
    let mut total = 0.0;
    let mut n = 0usize;
    for bank in [&banks.meta_train, &banks.meta_test] {
        for c in bank.classes() {
            for x in &c.examples {
                total += x.data().iter().map(|v| v * v).sum::<f64>();
                n += 1;
            }
        }
    }
    assert!(n >= 100_000);
    let expected = spec.signal_radius.powi(2) + spec.feature_dim as f64 * spec.noise_sigma.powi(2);
    let mean = total / n as f64;
    assert!((mean - expected).abs() / expected < 0.02, "mean squared norm {} vs {}", mean, expected);
}

#[test]
fn class_means_of_different_modes_are_orthogonal() {
    let spec = ModalMixtureSpec { noise_sigma: 0.0, examples_per_class: 1, ..ModalMixtureSpec::default() };
    let banks = generate_modal_bank(&spec, &Rng::new(5)).unwrap();
    let means: Vec<(u32, Vec<f64>)> = [&banks.meta_train, &banks.meta_test]
        .iter()
        .flat_map(|b| b.classes().iter().map(|c| (banks.modes[&c.class_id], c.examples[0].data().to_vec())))
        .collect();
    assert_eq!(means.len(), spec.modes * spec.classes_per_mode);
    for (ma, a) in &means {
        let norm: f64 = a.iter().map(|v| v * v).sum();
        assert!((norm - 9.0).abs() < 1e-5);
        for (mb, b) in &means {
            if ma != mb {
                assert_eq!(a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>(), 0.0);
            }
        }
    }
    let per_mode_test = banks.meta_test.num_classes() / spec.modes;
    assert_eq!(per_mode_test, 16);
    assert_eq!(banks.meta_train.num_classes() / spec.modes, 48);
}
