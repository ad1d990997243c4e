use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::PipelineConfig;
use crate::aggregator::{agg_forward_tape, agg_input_tape, train_aggregator, AggParams, AggregateModel};
use crate::clustering::{embed_problem, embed_support, kmeans, partition_classes, KMeansFit};
use crate::error::{bail, Result};
use crate::exec::par_map;
use crate::learner::{inner_train_tape, maml_train, mean_of, next_batch, LearnerConfig, LearnerInit, MamlConfig, SupportBatch};
use crate::numerics::{adam_step, mlp_forward_tape, AdamConfig, AdamState, Array, GradOrder, Mat, ParamSet, Rng, Tape};
use crate::problems::{Problem, ProblemDistribution, ProblemStream};
use crate::progress::TrainLog;

/// A freshly initialized model: `cfg.meta.k` learners on distinct random
/// streams and a random aggregation network.
pub fn random_aggregate_model(feature_dim: usize, cfg: &PipelineConfig, rng: &Rng) -> Result<AggregateModel> {
    cfg.validate()?;
    let k = cfg.meta.k;
    let arch = cfg.learner.arch(feature_dim);
    let learners = (0..k)
        .map(|j| LearnerInit::random(&arch, cfg.learner.activation, &mut rng.stream(j as u64)))
        .collect::<Result<Vec<_>>>()?;
    let a = &cfg.aggregator;
    let (din, dhid) = a.drop_probs();
    let agg = AggParams::random(feature_dim, k, &a.hidden, din, dhid, &mut rng.stream(k as u64))?;
    AggregateModel::new(learners, cfg.learner.train, agg, None, cfg.clustering.embedding)
}

fn pack(model: &AggregateModel) -> Result<ParamSet> {
    let mut entries = Vec::new();
    for (j, l) in model.learners.iter().enumerate() {
        for (name, a) in l.params.entries() {
            entries.push((format!("learner{}.{}", j, name), a.clone()));
        }
    }
    for (name, a) in model.agg.params.entries() {
        entries.push((format!("agg.{}", name), a.clone()));
    }
    ParamSet::new(entries)
}

fn unpack(model: &AggregateModel, packed: &ParamSet) -> Result<(Vec<ParamSet>, ParamSet)> {
    let mut arrays = packed.arrays().cloned();
    let mut take = |like: &ParamSet| like.with_arrays(arrays.by_ref().take(like.len()).collect());
    let learners = model.learners.iter().map(|l| take(&l.params)).collect::<Result<Vec<_>>>()?;
    let agg = take(&model.agg.params)?;
    Ok((learners, agg))
}

fn with_packed(model: &AggregateModel, packed: &ParamSet) -> Result<AggregateModel> {
    let (learners, agg) = unpack(model, packed)?;
    let mut next = model.clone();
    for (l, p) in next.learners.iter_mut().zip(learners) {
        l.params = p;
    }
    next.agg = next.agg.with_params(agg)?;
    Ok(next)
}

/// Query loss of the aggregate scores on one problem, differentiated through
/// every learner's inner loop; gradient returned in packed order.
fn end_to_end_problem_grad(
    model: &AggregateModel,
    problem: &Problem,
    order: GradOrder,
    masks: Option<&[Mat]>,
) -> Result<(f64, ParamSet)> {
    let packed = pack(model)?;
    let support = SupportBatch::new(&problem.train_set, model.tcfg.positive_weight)?;
    let queries = SupportBatch::queries(&problem.test_set)?;
    if support.features.cols != model.feature_dim() {
        bail!(Shape, "examples have {} features but the model expects {}", support.features.cols, model.feature_dim());
    }
    let embed = embed_support(&problem.train_set, model.embedding)?;
    crate::numerics::grad(&packed, |tape: &mut Tape, vars| {
        let mut offset = 0;
        let xq = tape.constant(queries.features.clone());
        let mut logits = Vec::with_capacity(model.k());
        for l in &model.learners {
            let theta = &vars[offset..offset + l.params.len()];
            offset += l.params.len();
            let adapted = inner_train_tape(tape, theta, &support, l.activation, &model.tcfg, order)?;
            logits.push(mlp_forward_tape(tape, &adapted, xq, l.activation));
        }
        let input = agg_input_tape(tape, &embed, &logits);
        let out = agg_forward_tape(tape, &vars[offset..], input, masks);
        Ok(tape.softmax_cross_entropy(out, &queries.labels, &queries.weights))
    })
}

/// Mean query loss of the aggregate scoring function over `batch` and its
/// gradient with respect to every learner initialization and the
/// aggregation network. `masks` holds one set of dropout masks per problem;
/// `None` runs the network in eval mode.
pub fn end_to_end_batch_grad(
    model: &AggregateModel,
    batch: &[Problem],
    order: GradOrder,
    masks: Option<&[Vec<Mat>]>,
) -> Result<(f64, Vec<ParamSet>, ParamSet)> {
    if batch.is_empty() {
        bail!(Config, "empty meta-batch");
    }
    if let Some(m) = masks {
        if m.len() != batch.len() {
            bail!(Config, "need one dropout mask set per problem");
        }
    }
    let parts = par_map(batch, |i, p| end_to_end_problem_grad(model, p, order, masks.map(|m| m[i].as_slice())));
    let (loss, g) = mean_of(&pack(model)?, parts)?;
    let (learners, agg) = unpack(model, &g)?;
    Ok((loss, learners, agg))
}

/// Joint Adam training of all learner initializations and the aggregation
/// network, differentiating through every learner's inner loop. Starts from
/// `warm_start` when given, otherwise from a random model.
pub fn train_end_to_end(
    dist: &ProblemDistribution<'_>,
    cfg: &PipelineConfig,
    warm_start: Option<&AggregateModel>,
    rng: &Rng,
    log: &mut TrainLog,
) -> Result<AggregateModel> {
    cfg.validate()?;
    let mut model = match warm_start {
        Some(m) => {
            m.validate()?;
            m.clone()
        }
        None => random_aggregate_model(dist.bank.feature_dim(), cfg, &rng.stream(0))?,
    };
    let mut stream = dist.stream(rng.stream(1));
    let drop_rng = rng.stream(2);
    let mut packed = pack(&model)?;
    let mut adam = AdamState::new(&packed, AdamConfig::with_lr(cfg.meta.meta_lr))?;
    for it in 0..cfg.meta.meta_iterations {
        let batch = next_batch(&mut stream, cfg.meta.batch_size)?;
        let it_rng = drop_rng.stream(it as u64);
        let masks: Vec<Vec<Mat>> = batch
            .iter()
            .enumerate()
            .map(|(i, p)| crate::aggregator::dropout_masks(&model.agg, p.test_set.len(), &mut it_rng.stream(i as u64)))
            .collect();
        let parts =
            par_map(&batch, |i, p| end_to_end_problem_grad(&model, p, cfg.meta.order, Some(masks[i].as_slice())));
        let (loss, grad) = mean_of(&packed, parts)?;
        if !loss.is_finite() {
            bail!(Invalid, "meta-loss diverged at iteration {}", it);
        }
        let (next_adam, next) = adam_step(&adam, &packed, &grad)?;
        adam = next_adam;
        packed = next;
        model = with_packed(&model, &packed)?;
        log.push("end_to_end", it, loss);
    }
    Ok(model)
}

/// Class pools per cluster from a class-to-cluster map.
pub fn cluster_pools(partition: &BTreeMap<u32, usize>, k: usize) -> Result<Vec<Vec<u32>>> {
    let mut pools = alloc::vec![Vec::new(); k];
    for (&class_id, &c) in partition {
        if c >= k {
            bail!(Invalid, "class {} routed to cluster {} but k = {}", class_id, c, k);
        }
        pools[c].push(class_id);
    }
    if let Some(j) = pools.iter().position(|p| p.is_empty()) {
        bail!(Invalid, "cluster {} received no classes", j);
    }
    Ok(pools)
}

/// Output of [`train_three_step`] with the intermediate clustering results.
#[derive(Debug, Clone)]
pub struct ThreeStepRun {
    pub model: AggregateModel,
    pub kmeans: KMeansFit,
    pub partition: BTreeMap<u32, usize>,
    pub pools: Vec<Vec<u32>>,
}

fn phase_name(prefix: &str, j: usize) -> String {
    format!("{}{}", prefix, j)
}

/// Clusters embedded problems, meta-trains one learner per cluster on
/// problems whose positive class belongs to it, then trains the aggregation
/// network on unrestricted problems with the learners frozen.
pub fn train_three_step(
    dist: &ProblemDistribution<'_>,
    cfg: &PipelineConfig,
    rng: &Rng,
    log: &mut TrainLog,
) -> Result<ThreeStepRun> {
    cfg.validate()?;
    let k = cfg.meta.k;
    let emb = cfg.clustering.embedding;

    let mut corpus = dist.stream(rng.stream(0));
    let points = (0..cfg.clustering.corpus_size)
        .map(|_| embed_problem(&corpus.next_problem()?, emb))
        .collect::<Result<Vec<Array>>>()?;
    let fit = kmeans(&points, k, &cfg.clustering.kmeans, &rng.stream(1))?;
    let centroids = fit.centroids(emb)?;

    let partition = partition_classes(dist.bank, &centroids, emb, cfg.clustering.samples_per_class, &rng.stream(2))?;
    let pools = cluster_pools(&partition, k)?;

    let arch = cfg.learner.arch(dist.bank.feature_dim());
    let mcfg = cfg.meta.maml();
    let learner_rng = rng.stream(3);
    let trained = par_map(&pools, |j, pool| {
        let r = learner_rng.stream(j as u64);
        let mut local = TrainLog::new();
        let result = train_member(dist, Some(pool.clone()), &arch, &cfg.learner, &mcfg, &r, &mut local, &phase_name("cluster", j));
        result.map(|l| (l, local))
    });
    let mut learners = Vec::with_capacity(k);
    for t in trained {
        let (l, local) = t?;
        log.records.extend(local.records);
        learners.push(l);
    }

    let a = &cfg.aggregator;
    let (din, dhid) = a.drop_probs();
    let agg = AggParams::random(dist.bank.feature_dim(), k, &a.hidden, din, dhid, &mut rng.stream(4))?;
    let mut model = AggregateModel::new(learners, cfg.learner.train, agg, Some(centroids), emb)?;
    let mut stream = dist.stream(rng.stream(5));
    model.agg = train_aggregator(&mut stream, &model, &a.maml(cfg.meta.batch_size), &rng.stream(6), log, "aggregator")?;
    Ok(ThreeStepRun { model, kmeans: fit, partition, pools })
}

#[allow(clippy::too_many_arguments)]
fn train_member(
    dist: &ProblemDistribution<'_>,
    pool: Option<Vec<u32>>,
    arch: &[usize],
    lcfg: &LearnerConfig,
    mcfg: &MamlConfig,
    rng: &Rng,
    log: &mut TrainLog,
    phase: &str,
) -> Result<LearnerInit> {
    let init = LearnerInit::random(arch, lcfg.activation, &mut rng.stream(0))?;
    let mut stream = match pool {
        Some(p) => dist.routed(p, rng.stream(1)),
        None => dist.stream(rng.stream(1)),
    };
    maml_train(&mut stream, &init, &lcfg.train, mcfg, log, phase)
}

/// `k` learners, each meta-trained on the full distribution from its own
/// random stream. Member 0 alone is the single-MAML baseline.
pub fn train_baseline_ensemble(
    dist: &ProblemDistribution<'_>,
    k: usize,
    lcfg: &LearnerConfig,
    mcfg: &MamlConfig,
    rng: &Rng,
    log: &mut TrainLog,
) -> Result<Vec<LearnerInit>> {
    if k == 0 {
        bail!(Config, "ensemble needs at least one member");
    }
    lcfg.validate()?;
    let arch = lcfg.arch(dist.bank.feature_dim());
    let ids: Vec<usize> = (0..k).collect();
    let trained = par_map(&ids, |_, &j| {
        let mut local = TrainLog::new();
        train_member(dist, None, &arch, lcfg, mcfg, &rng.stream(j as u64), &mut local, &phase_name("member", j))
            .map(|l| (l, local))
    });
    let mut out = Vec::with_capacity(k);
    for t in trained {
        let (l, local) = t?;
        log.records.extend(local.records);
        out.push(l);
    }
    Ok(out)
}

/// Aggregation network trained over learners that all saw the whole
/// distribution (no clustering).
pub fn train_whole_data_aggregator(
    dist: &ProblemDistribution<'_>,
    learners: Vec<LearnerInit>,
    cfg: &PipelineConfig,
    rng: &Rng,
    log: &mut TrainLog,
) -> Result<AggregateModel> {
    let a = &cfg.aggregator;
    let (din, dhid) = a.drop_probs();
    let agg =
        AggParams::random(dist.bank.feature_dim(), learners.len(), &a.hidden, din, dhid, &mut rng.stream(0))?;
    let mut model = AggregateModel::new(learners, cfg.learner.train, agg, None, cfg.clustering.embedding)?;
    let mut stream = dist.stream(rng.stream(1));
    model.agg = train_aggregator(&mut stream, &model, &a.maml(cfg.meta.batch_size), &rng.stream(2), log, "aggregator")?;
    Ok(model)
}
