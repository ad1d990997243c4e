//! Problem embeddings, k-means over embedded problems and routing of classes
//! to clusters.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::exec::par_map;
use crate::numerics::{math, Array, Rng};
use crate::problems::{positive_of, ClassBank, Example, Problem};

/// How a support set is mapped to a vector. Both variants look only at the
/// positive support example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSpec {
    PositiveRaw,
    /// Coordinate-wise absolute value of the positive features.
    #[default]
    PositiveAbs,
}

impl EmbeddingSpec {
    pub fn apply(&self, features: &Array) -> Array {
        match self {
            EmbeddingSpec::PositiveRaw => features.clone(),
            EmbeddingSpec::PositiveAbs => features.map(math::abs),
        }
    }
}

/// Embeds a support set through its single positive example.
pub fn embed_support(train_set: &[Example], spec: EmbeddingSpec) -> Result<Array> {
    Ok(spec.apply(&positive_of(train_set)?.features))
}

pub fn embed_problem(problem: &Problem, spec: EmbeddingSpec) -> Result<Array> {
    embed_support(&problem.train_set, spec)
}

/// Cluster centres in embedding space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Centroids {
    pub k: usize,
    pub mu: Vec<Array>,
    pub embedding: EmbeddingSpec,
    pub inertia: f64,
}

impl Centroids {
    pub fn new(mu: Vec<Array>, embedding: EmbeddingSpec, inertia: f64) -> Result<Self> {
        if mu.is_empty() {
            bail!(Invalid, "need at least one centroid");
        }
        let dim = mu[0].len();
        if mu.iter().any(|m| m.shape() != [dim]) {
            bail!(Shape, "centroids must be vectors of one dimension");
        }
        if !(inertia >= 0.0) {
            bail!(Invalid, "inertia must be non-negative");
        }
        Ok(Self { k: mu.len(), mu, embedding, inertia })
    }

    pub fn dim(&self) -> usize {
        self.mu[0].len()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centre; ties go to the lowest index.
fn nearest(centres: &[Vec<f64>], p: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centres.iter().enumerate() {
        let d = sq_dist(c, p);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Nearest centroid by Euclidean distance, lowest index on ties.
pub fn assign(centroids: &Centroids, point: &Array) -> Result<usize> {
    if point.len() != centroids.dim() {
        bail!(Shape, "point has dimension {}, centroids have {}", point.len(), centroids.dim());
    }
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.mu.iter().enumerate() {
        let d = sq_dist(c.data(), point.data());
        if d < best.1 {
            best = (j, d);
        }
    }
    Ok(best.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KMeansConfig {
    pub max_iters: usize,
    pub restarts: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self { max_iters: 100, restarts: 8 }
    }
}

/// Result of [`kmeans`]: the best restart by inertia.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub centres: Vec<Array>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    /// Inertia after every assignment step of the winning restart.
    pub history: Vec<f64>,
    /// The same for every restart, in restart order.
    pub run_histories: Vec<Vec<f64>>,
}

impl KMeansFit {
    pub fn centroids(&self, embedding: EmbeddingSpec) -> Result<Centroids> {
        Centroids::new(self.centres.clone(), embedding, self.inertia)
    }
}

struct Run {
    centres: Vec<Vec<f64>>,
    assignments: Vec<usize>,
    inertia: f64,
    history: Vec<f64>,
}

fn kmeans_pp(points: &[&[f64]], k: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centres = vec![points[rng.below(n)].to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centres[0])).collect();
    while centres.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let target = rng.uniform() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if acc > target && w > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.below(n)
        };
        let c = points[idx].to_vec();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centres.push(c);
    }
    centres
}

fn assign_all(points: &[&[f64]], centres: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    points.iter().map(|p| nearest(centres, p)).unzip()
}

fn lloyd(points: &[&[f64]], k: usize, max_iters: usize, rng: &mut Rng) -> Run {
    let dim = points[0].len();
    let mut centres = kmeans_pp(points, k, rng);
    let (mut assignments, mut dists) = assign_all(points, &centres);
    let mut history = vec![dists.iter().sum::<f64>()];
    for _ in 0..max_iters {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p.iter()) {
                *s += v;
            }
        }
        let mut taken = vec![false; points.len()];
        for j in 0..k {
            if counts[j] > 0 {
                centres[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            } else {
                // empty cluster: move it onto the point farthest from its own
                // centre (lowest index on ties)
                let mut best: Option<(usize, f64)> = None;
                for (i, &d) in dists.iter().enumerate() {
                    if !taken[i] && best.map_or(true, |(_, bd)| d > bd) {
                        best = Some((i, d));
                    }
                }
                if let Some((i, _)) = best {
                    taken[i] = true;
                    centres[j] = points[i].to_vec();
                }
            }
        }
        let (next, next_d) = assign_all(points, &centres);
        let inertia: f64 = next_d.iter().sum();
        debug_assert!(
            inertia <= history.last().unwrap() * (1.0 + 1e-12) + 1e-12,
            "k-means inertia increased"
        );
        history.push(inertia);
        let changed = next != assignments;
        assignments = next;
        dists = next_d;
        if !changed {
            break;
        }
    }
    Run { centres, assignments, inertia: *history.last().unwrap(), history }
}

/// Lloyd's algorithm with k-means++ seeding, keeping the best of `restarts`
/// runs by final inertia (lowest restart index on ties).
pub fn kmeans(points: &[Array], k: usize, cfg: &KMeansConfig, rng: &Rng) -> Result<KMeansFit> {
    if k == 0 {
        bail!(Config, "k must be at least 1");
    }
    if points.len() < k {
        bail!(Config, "k-means needs at least k={} points, got {}", k, points.len());
    }
    if cfg.restarts == 0 {
        bail!(Config, "k-means needs at least one restart");
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.shape() != [dim]) {
        bail!(Shape, "all points must be vectors of dimension {}", dim);
    }
    let views: Vec<&[f64]> = points.iter().map(|p| p.data()).collect();
    let restarts: Vec<u64> = (0..cfg.restarts as u64).collect();
    let runs = par_map(&restarts, |_, &r| lloyd(&views, k, cfg.max_iters, &mut rng.stream(r)));
    let mut best = 0;
    for (i, r) in runs.iter().enumerate() {
        if r.inertia < runs[best].inertia {
            best = i;
        }
    }
    let run_histories = runs.iter().map(|r| r.history.clone()).collect();
    let winner = &runs[best];
    Ok(KMeansFit {
        centres: winner.centres.iter().map(|c| Array::vector(c.clone())).collect(),
        assignments: winner.assignments.clone(),
        inertia: winner.inertia,
        history: winner.history.clone(),
        run_histories,
    })
}

/// Routes each class to the cluster most of its `samples_per_class` probe
/// embeddings land in (lowest cluster index on ties). A probe is a support
/// set whose positive is one random image of the class.
pub fn partition_classes(
    bank: &ClassBank,
    centroids: &Centroids,
    spec: EmbeddingSpec,
    samples_per_class: usize,
    rng: &Rng,
) -> Result<BTreeMap<u32, usize>> {
    if bank.num_classes() == 0 {
        bail!(Invalid, "cannot partition an empty bank");
    }
    if samples_per_class == 0 {
        bail!(Config, "samples_per_class must be at least 1");
    }
    let mut out = BTreeMap::new();
    for class in bank.classes() {
        let mut crng = rng.stream(class.class_id as u64);
        let mut votes = vec![0usize; centroids.k];
        for _ in 0..samples_per_class {
            let image = &class.examples[crng.below(class.examples.len())];
            votes[assign(centroids, &spec.apply(image))?] += 1;
        }
        let mut winner = 0;
        for (j, &v) in votes.iter().enumerate() {
            if v > votes[winner] {
                winner = j;
            }
        }
        out.insert(class.class_id, winner);
    }
    Ok(out)
}

fn choose2(n: usize) -> f64 {
    let n = n as f64;
    n * (n - 1.0) / 2.0
}

/// Adjusted Rand index between two labelings of the same points.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must have equal length");
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0usize; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let index: f64 = table.iter().flatten().map(|&c| choose2(c)).sum();
    let rows: f64 = table.iter().map(|r| choose2(r.iter().sum())).sum();
    let cols: f64 = (0..kb).map(|j| choose2(table.iter().map(|r| r[j]).sum())).sum();
    let total = choose2(a.len());
    let expected = rows * cols / total;
    let max = (rows + cols) / 2.0;
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}
