mod common;

use mmc_core::clustering::{
    adjusted_rand_index, assign, embed_problem, kmeans, partition_classes, Centroids, EmbeddingSpec, KMeansConfig,
};
use mmc_core::numerics::{Array, Rng};
use mmc_core::problems::{
    generate_modal_bank, ClassBank, ClassData, EpisodeConfig, ModalMixtureSpec, ProblemDistribution, ProblemStream,
    SplitTag,
};
use proptest::prelude::*;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn mean_of(points: &[&Array]) -> Vec<f64> {
    let d = points[0].len();
    (0..d).map(|i| points.iter().map(|p| p.data()[i]).sum::<f64>() / points.len() as f64).collect()
}

/// Best 2-partition by exhaustive search: (inertia, centroids sorted).
fn brute_force_two_means(points: &[Array]) -> (f64, Vec<Vec<f64>>) {
    let n = points.len();
    let mut best: Option<(f64, Vec<Vec<f64>>)> = None;
    for mask in 1u32..(1 << n) - 1 {
        let a: Vec<&Array> = (0..n).filter(|i| (mask >> i) & 1 == 1).map(|i| &points[i]).collect();
        let b: Vec<&Array> = (0..n).filter(|i| (mask >> i) & 1 == 0).map(|i| &points[i]).collect();
        let (ma, mb) = (mean_of(&a), mean_of(&b));
        let inertia = a.iter().map(|p| sq_dist(p.data(), &ma)).sum::<f64>()
            + b.iter().map(|p| sq_dist(p.data(), &mb)).sum::<f64>();
        if best.as_ref().is_none_or(|(bi, _)| inertia < *bi) {
            let mut cs = vec![ma, mb];
            cs.sort_by(|x, y| x.partial_cmp(y).unwrap());
            best = Some((inertia, cs));
        }
    }
    best.unwrap()
}

#[test]
fn four_point_instance_matches_exhaustive_search() {
    let points: Vec<Array> =
        [[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]].iter().map(|p| Array::vector(p.to_vec())).collect();
    let (best_inertia, best_centres) = brute_force_two_means(&points);
    assert_eq!(best_centres, vec![vec![0.0, 0.5], vec![10.0, 0.5]]);
    for seed in 0..20 {
        let fit = kmeans(&points, 2, &KMeansConfig::default(), &Rng::new(seed)).unwrap();
        let mut got: Vec<Vec<f64>> = fit.centres.iter().map(|c| c.data().to_vec()).collect();
        got.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_eq!(got, best_centres);
        assert_eq!(fit.inertia, best_inertia);
        assert_eq!(fit.assignments[0], fit.assignments[1]);
        assert_ne!(fit.assignments[0], fit.assignments[2]);
    }
}

#[test]
fn inertia_never_increases_over_one_hundred_runs() {
    let mut rng = Rng::new(1);
    for run in 0..100u64 {
        let n = 10 + rng.below(60);
        let d = 1 + rng.below(5);
        let k = 1 + rng.below(6);
        let points: Vec<Array> = (0..n).map(|_| Array::vector((0..d).map(|_| 3.0 * rng.normal()).collect())).collect();
        let fit = kmeans(&points, k, &KMeansConfig { max_iters: 50, restarts: 3 }, &Rng::new(run)).unwrap();
        assert_eq!(fit.run_histories.len(), 3);
        for h in &fit.run_histories {
            assert!(!h.is_empty());
            for w in h.windows(2) {
                assert!(w[1] <= w[0], "run {}: inertia rose from {} to {}", run, w[0], w[1]);
            }
        }
        let best = fit.run_histories.iter().map(|h| *h.last().unwrap()).fold(f64::INFINITY, f64::min);
        assert_eq!(fit.inertia, best);
        // final assignments are what assign() gives on the final centres
        let c = fit.centroids(EmbeddingSpec::PositiveRaw).unwrap();
        for (p, &a) in points.iter().zip(&fit.assignments) {
            assert_eq!(assign(&c, p).unwrap(), a);
        }
    }
}

fn modal_with_sigma(sigma: f64, seed: u64) -> mmc_core::problems::ModalBanks {
    let spec = ModalMixtureSpec { noise_sigma: sigma, ..ModalMixtureSpec::default() };
    generate_modal_bank(&spec, &Rng::new(seed)).unwrap()
}

#[test]
fn embedded_problems_recover_modes() {
    let banks = modal_with_sigma(0.3, 2);
    let dist = ProblemDistribution::new(&banks.meta_train, EpisodeConfig::default());
    let mut stream = dist.stream(Rng::new(3));
    let mut points = Vec::new();
    let mut truth = Vec::new();
    for _ in 0..2000 {
        let p = stream.next_problem().unwrap();
        points.push(embed_problem(&p, EmbeddingSpec::PositiveAbs).unwrap());
        truth.push(banks.modes[&p.positive_class] as usize);
    }
    let fit = kmeans(&points, 4, &KMeansConfig::default(), &Rng::new(4)).unwrap();
    let ari = adjusted_rand_index(&fit.assignments, &truth);
    assert!(ari >= 0.99, "adjusted Rand index {}", ari);
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

#[test]
fn class_partition_recovers_modes_exactly() {
    let banks = modal_with_sigma(0.3, 5);
    let dist = ProblemDistribution::new(&banks.meta_train, EpisodeConfig::default());
    let mut stream = dist.stream(Rng::new(6));
    let points: Vec<Array> =
        (0..2000).map(|_| embed_problem(&stream.next_problem().unwrap(), EmbeddingSpec::PositiveAbs).unwrap()).collect();
    let fit = kmeans(&points, 4, &KMeansConfig::default(), &Rng::new(7)).unwrap();
    let centroids = fit.centroids(EmbeddingSpec::PositiveAbs).unwrap();
    let partition = partition_classes(&banks.meta_train, &centroids, EmbeddingSpec::PositiveAbs, 5, &Rng::new(8)).unwrap();
    assert_eq!(partition.len(), banks.meta_train.num_classes());
    // best matching of clusters to modes
    let best = permutations(4)
        .into_iter()
        .map(|perm| partition.iter().filter(|(id, &c)| perm[c] == banks.modes[id] as usize).count())
        .max()
        .unwrap();
    assert_eq!(best, partition.len());
}

#[test]
fn single_probe_partition_is_that_probe_assignment() {
    let classes: Vec<ClassData> = (0..6u32)
        .map(|c| ClassData { class_id: c, examples: vec![Array::vector(vec![c as f64, -(c as f64) * 0.5])] })
        .collect();
    let bank = ClassBank::new(2, classes, SplitTag::MetaTrain).unwrap();
    let centroids = Centroids::new(
        vec![Array::vector(vec![0.0, 0.0]), Array::vector(vec![4.0, 2.0])],
        EmbeddingSpec::PositiveAbs,
        0.0,
    )
    .unwrap();
    let partition = partition_classes(&bank, &centroids, EmbeddingSpec::PositiveAbs, 1, &Rng::new(1)).unwrap();
    for c in bank.classes() {
        let expected = assign(&centroids, &EmbeddingSpec::PositiveAbs.apply(&c.examples[0])).unwrap();
        assert_eq!(partition[&c.class_id], expected);
    }
}

#[test]
fn embedding_ignores_negatives_and_queries() {
    let bank = common::gaussian_bank(8, 5, 4, 9);
    let cfg = EpisodeConfig { n_neg_train: 6, n_pos_test: 3, n_neg_test: 3, n_neg_classes: 4 };
    let mut rng = Rng::new(10);
    for _ in 0..20 {
        let p = mmc_core::problems::sample_problem(&bank, &cfg, &mut rng).unwrap();
        let before = embed_problem(&p, EmbeddingSpec::PositiveAbs).unwrap();
        let mut q = p.clone();
        for e in q.train_set.iter_mut().filter(|e| !e.label.is_positive()).chain(q.test_set.iter_mut()) {
            e.features = e.features.map(|v| v * -3.0 + 1.0);
        }
        q.train_set.reverse();
        q.test_set.truncate(1);
        assert_eq!(embed_problem(&q, EmbeddingSpec::PositiveAbs).unwrap(), before);
        assert_eq!(embed_problem(&q, EmbeddingSpec::PositiveRaw).unwrap(), p.positive_example().unwrap().features);
    }
}

proptest! {
    #[test]
    fn assign_matches_exhaustive_scan(
        centres in prop::collection::vec(prop::collection::vec(-5i32..5, 3), 1..6),
        point in prop::collection::vec(-5i32..5, 3),
    ) {
        let mu: Vec<Array> = centres.iter().map(|c| Array::vector(c.iter().map(|&v| v as f64).collect())).collect();
        let x = Array::vector(point.iter().map(|&v| v as f64).collect());
        let c = Centroids::new(mu.clone(), EmbeddingSpec::PositiveRaw, 0.0).unwrap();
        let mut best = 0;
        for j in 1..mu.len() {
            if sq_dist(mu[j].data(), x.data()) < sq_dist(mu[best].data(), x.data()) {
                best = j;
            }
        }
        prop_assert_eq!(assign(&c, &x).unwrap(), best);
    }
}
