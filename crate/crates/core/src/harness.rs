//! Supervised training, evaluation, cross-validation and ablation studies.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::autodiff::{Adam, Matrix, ParamStore, Tape, Var};
use crate::config::{EmbeddingMode, RunConfig};
use crate::embed::{self, argmax, EmbeddingModel, PretrainHistory};
use crate::error::{Error, Result};
use crate::graph::{stratified_folds, Dataset, FoldSplit, Graph};
use crate::init;
use crate::rnn::{self, ClassifierHead, LstmWeights};
use crate::walk::{self, GumbelNoise, Ordering};

/// Derives an independent seed for a named stream.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    // splitmix64 finalizer over the folded parts
    let mut x = base;
    for &p in parts {
        x = x.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(p);
        x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        x ^= x >> 31;
    }
    x
}

const STREAM_INIT: u64 = 1;
const STREAM_TRAIN: u64 = 2;
const STREAM_EVAL: u64 = 3;
const STREAM_PRETRAIN: u64 = 4;
const STREAM_EMBED: u64 = 5;
/// Runs over the whole dataset rather than one fold.
const STREAM_WHOLE: u64 = u64::MAX;

/// Sum over graphs of `−ln p[label]`.
pub fn supervised_loss(predictions: &[Vec<f64>], labels: &[usize]) -> f64 {
    predictions
        .iter()
        .zip(labels)
        .map(|(p, &l)| -p[l].ln())
        .sum()
}

/// Per-graph mean of [`supervised_loss`].
pub fn mean_supervised_loss(predictions: &[Vec<f64>], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    supervised_loss(predictions, labels) / labels.len() as f64
}

/// Embedding matrix for the configured mode.
pub fn embedding_for(
    mode: EmbeddingMode,
    k: usize,
    d: usize,
    rng: &mut impl Rng,
) -> Option<Matrix> {
    match mode {
        EmbeddingMode::Pretrained => None,
        EmbeddingMode::Randomized => Some(init::normal(rng, (k, d), 1.0)),
        EmbeddingMode::Raw => Some(Array2::eye(k)),
    }
}

/// Fresh parameters for the supervised model around a fixed embedding.
pub fn init_model(
    cfg: &RunConfig,
    embedding: Matrix,
    num_classes: usize,
    rng: &mut impl Rng,
) -> ParamStore {
    let d = embedding.ncols();
    let mut params = ParamStore::new();
    params.insert("E", embedding);
    walk::init_walk_params(&mut params, rng, cfg.k_rw);
    rnn::init_lstm(&mut params, rng, d, cfg.h);
    rnn::init_head(&mut params, rng, cfg.h, cfg.h_cls, num_classes);
    params
}

struct Forward<'t> {
    logits: Var<'t>,
    leaves: Vec<(String, Var<'t>)>,
}

fn forward<'t>(
    tape: &'t Tape,
    params: &ParamStore,
    graph: &Graph,
    cfg: &RunConfig,
    training: bool,
    rng: &mut impl Rng,
) -> Result<Forward<'t>> {
    let walk_cfg = cfg.walk();
    let n = graph.num_nodes();
    let finetune = training && cfg.finetune_embeddings;
    let e = params.leaf(tape, "E", finetune)?;
    let mut leaves = vec![("E".to_string(), e)];

    let steps = if cfg.ordering == Ordering::Learned {
        let learn_walk = training;
        let c = params.leaf(tape, walk::C_NAME, learn_walk)?;
        let eps = params.leaf(tape, walk::EPS_NAME, learn_walk)?;
        leaves.push((walk::C_NAME.to_string(), c));
        leaves.push((walk::EPS_NAME.to_string(), eps));
        let noise = GumbelNoise::sample(rng, walk_cfg.sequence_len(n), n);
        walk::sample_sequence(tape, graph, c, eps, &walk_cfg, &noise)?.steps
    } else {
        let mut order = walk::baseline_order(graph, cfg.ordering, rng)?;
        order.truncate(walk_cfg.sequence_len(n));
        walk::taped_permutation(tape, &order, n).steps
    };

    let (x, nb) = rnn::node_feature_matrices(tape, graph, e)?;
    let lstm = LstmWeights::record(tape, params, training, cfg.tie_hidden_if)?;
    let head = ClassifierHead::record(tape, params, training)?;
    let h_g = rnn::encode_graph(&steps, x, nb, &lstm)?;
    let logits = head.logits(h_g)?;
    leaves.extend(lstm.leaves);
    leaves.extend(head.leaves);
    Ok(Forward { logits, leaves })
}

/// One epoch of training statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean per-graph cross-entropy of the sampled training forward passes.
    pub loss: f64,
    /// Accuracy of the sampled training forward passes.
    pub accuracy: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParamStore,
    pub epochs: Vec<EpochStats>,
}

/// Trains walk, LSTM and head parameters (and `E` when fine-tuning) on
/// `graphs` with Adam, one fresh walk per graph per epoch. `on_epoch` is
/// called after every epoch with the current parameters.
pub fn train(
    graphs: &[&Graph],
    cfg: &RunConfig,
    params: ParamStore,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochStats, &ParamStore) -> Result<()>,
) -> Result<TrainOutcome> {
    if graphs.is_empty() {
        return Err(Error::argument("training set is empty"));
    }
    if let Some(g) = graphs.iter().find(|g| g.num_nodes() == 0) {
        return Err(Error::argument(format!(
            "graph with label {} has no nodes",
            g.label()
        )));
    }
    let mut params = params;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[STREAM_TRAIN]));
    let mut adam = Adam::new(cfg.lr);
    let mut order: Vec<usize> = (0..graphs.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads: BTreeMap<String, Matrix> = BTreeMap::new();
            for &gi in batch {
                let g = graphs[gi];
                let tape = Tape::new();
                let fwd = forward(&tape, &params, g, cfg, true, &mut rng)?;
                let loss = fwd.logits.softmax_cross_entropy(&[g.label()])?;
                loss_sum += loss.item();
                if argmax(fwd.logits.value_ref().iter().copied()) == g.label() {
                    correct += 1;
                }
                let gr = tape.backward(loss)?;
                rnn::collect_grads(&fwd.leaves, &gr, &mut grads);
            }
            adam.step(&mut params, &grads);
        }
        adam.decay(cfg.lr_decay);
        let stats = EpochStats {
            epoch,
            loss: loss_sum / graphs.len() as f64,
            accuracy: correct as f64 / graphs.len() as f64,
            seconds: started.elapsed().as_secs_f64(),
        };
        if !stats.loss.is_finite() || !params.all_finite() {
            return Err(Error::argument(format!(
                "training diverged at epoch {epoch} (loss {})",
                stats.loss
            )));
        }
        on_epoch(&stats, &params)?;
        history.push(stats);
    }
    Ok(TrainOutcome {
        params,
        epochs: history,
    })
}

/// Accuracy and mean loss of predictions averaged over several walks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
    pub predictions: Vec<Vec<f64>>,
}

/// Predicts each graph by averaging class probabilities over `num_samples`
/// independent walks and taking the argmax.
pub fn evaluate(
    params: &ParamStore,
    graphs: &[&Graph],
    cfg: &RunConfig,
    num_samples: usize,
    rng: &mut impl Rng,
) -> Result<Evaluation> {
    if num_samples == 0 {
        return Err(Error::argument("num_samples must be ≥ 1"));
    }
    let mut predictions = Vec::with_capacity(graphs.len());
    let mut correct = 0;
    for g in graphs {
        let mut avg: Option<Vec<f64>> = None;
        for _ in 0..num_samples {
            let tape = Tape::new();
            let fwd = forward(&tape, params, g, cfg, false, rng)?;
            let probs = fwd.logits.softmax_rows().value();
            match &mut avg {
                Some(a) => a.iter_mut().zip(probs.iter()).for_each(|(a, p)| *a += p),
                None => avg = Some(probs.iter().copied().collect()),
            }
        }
        let avg: Vec<f64> = avg
            .expect("num_samples ≥ 1")
            .into_iter()
            .map(|p| p / num_samples as f64)
            .collect();
        if argmax(avg.iter().copied()) == g.label() {
            correct += 1;
        }
        predictions.push(avg);
    }
    let labels: Vec<usize> = graphs.iter().map(|g| g.label()).collect();
    Ok(Evaluation {
        accuracy: correct as f64 / graphs.len().max(1) as f64,
        loss: mean_supervised_loss(&predictions, &labels),
        predictions,
    })
}

/// One row of metrics.csv.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub fold: usize,
    pub epoch: usize,
    pub split: &'static str,
    pub loss: f64,
    pub accuracy: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PretrainSummary {
    pub fold: usize,
    pub graphs: usize,
    pub nodes: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub node_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub config: RunConfig,
    pub dataset: String,
    pub seed: u64,
    pub per_fold_accuracy: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub pretrain: Vec<PretrainSummary>,
    #[serde(skip)]
    pub records: Vec<EpochRecord>,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Errors if any test graph is used for training or pretraining.
pub fn check_leakage(
    train: &[usize],
    test: &[usize],
    pretrain: &[usize],
    pretrain_on_all: bool,
) -> Result<()> {
    let test: BTreeSet<usize> = test.iter().copied().collect();
    if let Some(i) = train.iter().find(|i| test.contains(i)) {
        return Err(Error::argument(format!(
            "graph {i} is in both train and test"
        )));
    }
    if !pretrain_on_all {
        if let Some(i) = pretrain.iter().find(|i| test.contains(i)) {
            return Err(Error::argument(format!(
                "test graph {i} used for pretraining"
            )));
        }
    }
    Ok(())
}

/// Builds the embedding for one fold, pretraining when configured.
pub fn fold_embedding(
    dataset: &Dataset,
    pretrain_ids: &[usize],
    cfg: &RunConfig,
    seed: u64,
) -> Result<(Matrix, Option<PretrainHistory>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[STREAM_EMBED]));
    if let Some(e) = embedding_for(cfg.embedding, dataset.k, cfg.d, &mut rng) {
        return Ok((e, None));
    }
    let graphs: Vec<&Graph> = pretrain_ids.iter().map(|&i| &dataset.graphs[i]).collect();
    let pseed = derive_seed(seed, &[STREAM_PRETRAIN]);
    let mut prng = ChaCha8Rng::seed_from_u64(pseed);
    let (model, history) = embed::pretrain(
        &graphs,
        dataset.k,
        &cfg.pretrain(pseed),
        &dataset.name,
        &mut prng,
    )?;
    Ok((model.embedding().clone(), Some(history)))
}

/// Pretrains node embeddings on every graph of `dataset`.
pub fn pretrain_all(
    dataset: &Dataset,
    cfg: &RunConfig,
) -> Result<(EmbeddingModel, PretrainHistory)> {
    let graphs: Vec<&Graph> = dataset.graphs.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[STREAM_WHOLE]));
    embed::pretrain(
        &graphs,
        dataset.k,
        &cfg.pretrain(cfg.seed),
        &dataset.name,
        &mut rng,
    )
}

/// A model trained on a whole dataset, with its accuracy on that dataset.
#[derive(Debug, Clone)]
pub struct FullTraining {
    pub outcome: TrainOutcome,
    pub evaluation: Evaluation,
}

/// Builds the configured embedding from every graph, trains on all of
/// them and evaluates the result on the same graphs.
pub fn train_all(
    dataset: &Dataset,
    cfg: &RunConfig,
    on_epoch: impl FnMut(&EpochStats, &ParamStore) -> Result<()>,
) -> Result<FullTraining> {
    let all: Vec<usize> = (0..dataset.len()).collect();
    let seed = derive_seed(cfg.seed, &[STREAM_WHOLE]);
    let (embedding, _) = fold_embedding(dataset, &all, cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[STREAM_INIT]));
    let params = init_model(cfg, embedding, dataset.num_classes, &mut rng);
    let graphs: Vec<&Graph> = dataset.graphs.iter().collect();
    let outcome = train(&graphs, cfg, params, seed, on_epoch)?;
    let mut eval_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[STREAM_EVAL]));
    let evaluation = evaluate(
        &outcome.params,
        &graphs,
        cfg,
        cfg.num_eval_samples,
        &mut eval_rng,
    )?;
    Ok(FullTraining {
        outcome,
        evaluation,
    })
}

/// Where cross-validation writes per-fold checkpoints, if anywhere.
pub struct Outputs<'a> {
    pub checkpoints: Option<&'a Path>,
}

/// Stratified k-fold cross-validation: per fold, pretrain (if configured)
/// on the training folds, train, and evaluate on the held-out fold.
pub fn cross_validate(dataset: &Dataset, cfg: &RunConfig, out: Outputs<'_>) -> Result<Metrics> {
    let split = stratified_folds(&dataset.labels(), cfg.folds, cfg.seed)?;
    cross_validate_split(dataset, cfg, &split, out)
}

pub fn cross_validate_split(
    dataset: &Dataset,
    cfg: &RunConfig,
    split: &FoldSplit,
    out: Outputs<'_>,
) -> Result<Metrics> {
    cfg.validate()?;
    if let Some(g) = dataset
        .graphs
        .iter()
        .find(|g| g.neighbor_radius() < cfg.neighbor_radius())
    {
        return Err(Error::argument(format!(
            "neighbor sets computed to radius {}, need {}",
            g.neighbor_radius(),
            cfg.neighbor_radius()
        )));
    }
    let mut records = Vec::new();
    let mut per_fold = Vec::with_capacity(split.num_folds);
    let mut pretrain_summaries = Vec::new();

    for fold in 0..split.num_folds {
        let fold_seed = derive_seed(cfg.seed, &[fold as u64]);
        let train_ids = split.train_indices(fold);
        let test_ids = split.test_indices(fold);
        let pretrain_ids: Vec<usize> = if cfg.pretrain_on_all {
            (0..dataset.len()).collect()
        } else {
            train_ids.clone()
        };
        check_leakage(&train_ids, &test_ids, &pretrain_ids, cfg.pretrain_on_all)?;

        let (embedding, history) = fold_embedding(dataset, &pretrain_ids, cfg, fold_seed)?;
        if let Some(h) = &history {
            let last = h.loss.len() - 1;
            for (epoch, &loss) in h.loss.iter().enumerate() {
                records.push(EpochRecord {
                    fold,
                    epoch,
                    split: "pretrain",
                    loss,
                    accuracy: (epoch == last).then_some(h.accuracy),
                    seconds: 0.0,
                });
            }
            pretrain_summaries.push(PretrainSummary {
                fold,
                graphs: pretrain_ids.len(),
                nodes: pretrain_ids
                    .iter()
                    .map(|&i| dataset.graphs[i].num_nodes())
                    .sum(),
                initial_loss: h.loss[0],
                final_loss: h.loss[last],
                node_accuracy: h.accuracy,
            });
        }

        let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(fold_seed, &[STREAM_INIT]));
        let params = init_model(cfg, embedding, dataset.num_classes, &mut init_rng);
        let train_graphs: Vec<&Graph> = train_ids.iter().map(|&i| &dataset.graphs[i]).collect();
        let test_graphs: Vec<&Graph> = test_ids.iter().map(|&i| &dataset.graphs[i]).collect();
        let mut last_test = None;
        let outcome = train(&train_graphs, cfg, params, fold_seed, |stats, params| {
            records.push(EpochRecord {
                fold,
                epoch: stats.epoch,
                split: "train",
                loss: stats.loss,
                accuracy: Some(stats.accuracy),
                seconds: stats.seconds,
            });
            let is_last = stats.epoch + 1 == cfg.epochs;
            let due = cfg.eval_every > 0 && (stats.epoch + 1) % cfg.eval_every == 0;
            if is_last || due {
                let started = Instant::now();
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    fold_seed,
                    &[STREAM_EVAL, stats.epoch as u64],
                ));
                let ev = evaluate(params, &test_graphs, cfg, cfg.num_eval_samples, &mut rng)?;
                records.push(EpochRecord {
                    fold,
                    epoch: stats.epoch,
                    split: "test",
                    loss: ev.loss,
                    accuracy: Some(ev.accuracy),
                    seconds: started.elapsed().as_secs_f64(),
                });
                last_test = Some(ev.accuracy);
            }
            Ok(())
        })?;
        let acc = match last_test {
            Some(a) => a,
            // zero epochs: evaluate the untrained model
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(fold_seed, &[STREAM_EVAL]));
                evaluate(
                    &outcome.params,
                    &test_graphs,
                    cfg,
                    cfg.num_eval_samples,
                    &mut rng,
                )?
                .accuracy
            }
        };
        log::info!(
            "{} fold {}/{}: test accuracy {:.4}",
            dataset.name,
            fold + 1,
            split.num_folds,
            acc
        );
        if let Some(dir) = out.checkpoints {
            fs::create_dir_all(dir)?;
            let meta = serde_json::json!({ "fold": fold, "seed": cfg.seed, "test_accuracy": acc });
            outcome
                .params
                .save(&dir.join(format!("fold{fold}.json")), Some(meta))?;
        }
        per_fold.push(acc);
    }

    let (mean, std) = mean_std(&per_fold);
    Ok(Metrics {
        config: cfg.clone(),
        dataset: dataset.name.clone(),
        seed: cfg.seed,
        per_fold_accuracy: per_fold,
        mean,
        std,
        pretrain: pretrain_summaries,
        records,
    })
}

fn csv_float(v: f64) -> String {
    format!("{v}")
}

/// Writes metrics.csv: `fold,epoch,split,loss,accuracy,seconds`. The
/// wall-clock column is left empty unless `record_timing` is set, so reruns
/// are byte-identical by default.
pub fn write_metrics_csv(path: &Path, records: &[EpochRecord], record_timing: bool) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(out, "fold,epoch,split,loss,accuracy,seconds")?;
    for r in records {
        let acc = r.accuracy.map(csv_float).unwrap_or_default();
        let secs = if record_timing {
            format!("{:.6}", r.seconds)
        } else {
            String::new()
        };
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.fold,
            r.epoch,
            r.split,
            csv_float(r.loss),
            acc,
            secs
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Short content hash of the config echo.
pub fn run_id(cfg: &RunConfig) -> String {
    let digest = Sha256::digest(cfg.to_json().to_string().as_bytes());
    digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
}

pub fn summary_json(metrics: &Metrics) -> serde_json::Value {
    serde_json::json!({
        "config": metrics.config.to_json(),
        "dataset": metrics.dataset,
        "per_fold_accuracy": metrics.per_fold_accuracy,
        "mean": metrics.mean,
        "std": metrics.std,
        "seed": metrics.seed,
        "run_id": run_id(&metrics.config),
        "folds": "stratified, seeded by `seed`",
        "evaluation": format!(
            "argmax of class probabilities averaged over {} walk samples, final epoch",
            metrics.config.num_eval_samples
        ),
        "pretrain": metrics.pretrain,
    })
}

/// Writes summary.json and metrics.csv into `dir`.
pub fn write_run(dir: &Path, metrics: &Metrics) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&summary_json(metrics))?,
    )?;
    write_metrics_csv(
        &dir.join("metrics.csv"),
        &metrics.records,
        metrics.config.record_timing,
    )
}

pub fn write_config_echo(dir: &Path, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(
        dir.join("config.json"),
        serde_json::to_string_pretty(&cfg.to_json())?,
    )?;
    Ok(())
}

/// Result of one arm of an ablation study, averaged over seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationArm {
    pub name: String,
    pub per_seed_mean: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

fn run_arm(
    dataset: &Dataset,
    base: &RunConfig,
    name: String,
    configure: impl Fn(&mut RunConfig),
    out: Option<&Path>,
) -> Result<AblationArm> {
    let mut per_seed = Vec::with_capacity(base.seeds);
    for s in 0..base.seeds {
        let mut cfg = base.clone();
        configure(&mut cfg);
        cfg.seed = base.seed + s as u64;
        let dir = out.map(|o| o.join(&name).join(format!("seed-{}", cfg.seed)));
        if let Some(d) = &dir {
            write_config_echo(d, &cfg)?;
        }
        let metrics = cross_validate(dataset, &cfg, Outputs { checkpoints: None })?;
        if let Some(d) = &dir {
            write_run(d, &metrics)?;
        }
        log::info!(
            "{name} seed {}: mean accuracy {:.4}",
            cfg.seed,
            metrics.mean
        );
        per_seed.push(metrics.mean);
    }
    let (mean, std) = mean_std(&per_seed);
    let arm = AblationArm {
        name: name.clone(),
        per_seed_mean: per_seed,
        mean,
        std,
    };
    if let Some(o) = out {
        fs::write(
            o.join(&name).join("summary.json"),
            serde_json::to_string_pretty(&arm)?,
        )?;
    }
    Ok(arm)
}

/// Cross-validates every node ordering over `cfg.seeds` seeds.
pub fn ablate_ordering(
    dataset: &Dataset,
    cfg: &RunConfig,
    out: Option<&Path>,
) -> Result<Vec<AblationArm>> {
    Ordering::ALL
        .iter()
        .map(|&o| {
            run_arm(
                dataset,
                cfg,
                format!("ordering-{o}"),
                |c| c.ordering = o,
                out,
            )
        })
        .collect()
}

/// Cross-validates every embedding mode over `cfg.seeds` seeds.
pub fn ablate_embedding(
    dataset: &Dataset,
    cfg: &RunConfig,
    out: Option<&Path>,
) -> Result<Vec<AblationArm>> {
    EmbeddingMode::ALL
        .iter()
        .map(|&m| {
            run_arm(
                dataset,
                cfg,
                format!("embedding-{m}"),
                |c| c.embedding = m,
                out,
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridPoint {
    pub d: usize,
    pub tau: f64,
    pub h: usize,
    pub h_cls: usize,
    pub mean: f64,
    pub std: f64,
}

/// Cross-validates every combination of the configured grid values.
pub fn grid_search(
    dataset: &Dataset,
    cfg: &RunConfig,
    out: Option<&Path>,
) -> Result<Vec<GridPoint>> {
    let mut points = Vec::new();
    for &d in &cfg.grid_d {
        for &tau in &cfg.grid_tau {
            for &h in &cfg.grid_h {
                for &h_cls in &cfg.grid_h_cls {
                    let run = RunConfig {
                        d,
                        tau,
                        h,
                        h_cls,
                        ..cfg.clone()
                    };
                    run.validate()?;
                    let dir = out.map(|o| o.join(format!("d{d}-tau{tau}-h{h}-hcls{h_cls}")));
                    if let Some(dir) = &dir {
                        write_config_echo(dir, &run)?;
                    }
                    let metrics = cross_validate(dataset, &run, Outputs { checkpoints: None })?;
                    if let Some(dir) = &dir {
                        write_run(dir, &metrics)?;
                    }
                    log::info!(
                        "grid d={d} tau={tau} h={h} h_cls={h_cls}: {:.4}",
                        metrics.mean
                    );
                    points.push(GridPoint {
                        d,
                        tau,
                        h,
                        h_cls,
                        mean: metrics.mean,
                        std: metrics.std,
                    });
                }
            }
        }
    }
    Ok(points)
}

/// Highest-mean grid point; earlier points win ties.
pub fn best_grid_point(points: &[GridPoint]) -> Option<&GridPoint> {
    points
        .iter()
        .fold(None, |best: Option<&GridPoint>, p| match best {
            Some(b) if b.mean >= p.mean => Some(b),
            _ => Some(p),
        })
}
