//! Unsupervised node-embedding pretraining.
//!
//! Each node's label is predicted from the distance-weighted sum of its
//! neighbors' embeddings,
//!
//! ```text
//! F_i = Σ_s w_s Σ_{j ∈ N_s(i)} H_j E
//! Y_i = softmax(ReLU(F_i W1 + b1) W2 + b2)
//! ```
//!
//! trained with the summed cross-entropy over every node of every training
//! graph. The node itself never contributes to its own context.

use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, Matrix, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::init;

pub const PARAM_NAMES: [&str; 6] = ["E", "w", "W1", "b1", "W2", "b2"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    /// Neighborhood radius.
    pub radius: usize,
    pub dim: usize,
    /// Predictor hidden size; defaults to `dim`.
    pub hidden: Option<usize>,
    pub epochs: usize,
    pub lr: f64,
    /// Graphs are grouped into minibatches of at least this many nodes.
    pub batch_nodes: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            radius: 2,
            dim: 32,
            hidden: None,
            epochs: 100,
            lr: 1e-4,
            batch_nodes: 256,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMeta {
    pub k: usize,
    pub d: usize,
    #[serde(rename = "K")]
    pub radius: usize,
    pub dataset: String,
    pub seed: u64,
}

/// Embedding matrix, distance weights and node-label predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    pub params: ParamStore,
    pub meta: EmbeddingMeta,
}

/// Per-epoch pretraining record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PretrainHistory {
    /// `loss[0]` is the summed loss before any update; `loss[e]` after `e`
    /// epochs.
    pub loss: Vec<f64>,
    /// Node-label prediction accuracy after training.
    pub accuracy: f64,
}

impl EmbeddingModel {
    /// Fresh model: `w` all ones, `E` ~ N(0, 1/√d), hidden layer
    /// Xavier-uniform, output layer and biases zero (uniform initial
    /// predictions).
    pub fn init(rng: &mut impl Rng, k: usize, cfg: &PretrainConfig, dataset: &str) -> Self {
        let d = cfg.dim;
        let h = cfg.hidden.unwrap_or(d);
        let mut params = ParamStore::new();
        params.insert("E", init::normal(rng, (k, d), 1.0 / (d as f64).sqrt()));
        params.insert("w", Array2::ones((1, cfg.radius)));
        params.insert("W1", init::xavier_uniform(rng, d, h));
        params.insert("b1", Array2::zeros((1, h)));
        params.insert("W2", Array2::zeros((h, k)));
        params.insert("b2", Array2::zeros((1, k)));
        EmbeddingModel {
            params,
            meta: EmbeddingMeta {
                k,
                d,
                radius: cfg.radius,
                dataset: dataset.to_string(),
                seed: cfg.seed,
            },
        }
    }

    pub fn embedding(&self) -> &Matrix {
        self.params.get("E").expect("E present")
    }

    pub fn distance_weights(&self) -> &Matrix {
        self.params.get("w").expect("w present")
    }

    fn p(&self, name: &str) -> &Matrix {
        self.params.get(name).expect("predictor weights present")
    }

    /// Context vector `F` of node `i`.
    pub fn neighbor_context(&self, graph: &Graph, i: usize) -> Array1<f64> {
        let e = self.embedding();
        let w = self.distance_weights();
        let mut f = Array1::zeros(e.ncols());
        for s in 1..=self.meta.radius {
            let ws = w[[0, s - 1]];
            for &j in graph.neighbor_set(s, i) {
                f.scaled_add(ws, &e.row(graph.node_labels()[j]));
            }
        }
        f
    }

    /// Predicted node-label distribution for context `f`.
    pub fn predict_node_label(&self, f: &Array1<f64>) -> Array1<f64> {
        let hidden = (f.dot(self.p("W1")) + self.p("b1").row(0)).mapv(|x| x.max(0.0));
        let logits = hidden.dot(self.p("W2")) + self.p("b2").row(0);
        let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let ex = logits.mapv(|v| (v - max).exp());
        let z = ex.sum();
        ex / z
    }

    pub fn metadata_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.meta).expect("plain data")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.params.save(path, Some(self.metadata_json()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (params, meta) = ParamStore::load(path)?;
        for name in PARAM_NAMES {
            params.expect(name)?;
        }
        let meta = meta.ok_or_else(|| Error::Checkpoint("embedding metadata missing".into()))?;
        let meta: EmbeddingMeta = serde_json::from_value(meta)
            .map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
        Ok(EmbeddingModel { params, meta })
    }
}

/// Per-graph constant `M_s H`: row `i` counts the labels found at distance
/// exactly `s` from `i`.
pub fn distance_label_counts(graph: &Graph, s: usize, k: usize) -> Matrix {
    let mut c = Array2::zeros((graph.num_nodes(), k));
    for i in 0..graph.num_nodes() {
        for &j in graph.neighbor_set(s, i) {
            c[[i, graph.node_labels()[j]]] += 1.0;
        }
    }
    c
}

struct TapedModel<'t> {
    e: Var<'t>,
    w: Var<'t>,
    w1: Var<'t>,
    b1: Var<'t>,
    w2: Var<'t>,
    b2: Var<'t>,
}

impl<'t> TapedModel<'t> {
    fn record(tape: &'t Tape, params: &ParamStore) -> Result<Self> {
        Ok(TapedModel {
            e: params.leaf(tape, "E", true)?,
            w: params.leaf(tape, "w", true)?,
            w1: params.leaf(tape, "W1", true)?,
            b1: params.leaf(tape, "b1", true)?,
            w2: params.leaf(tape, "W2", true)?,
            b2: params.leaf(tape, "b2", true)?,
        })
    }

    fn grads(&self, g: &crate::autodiff::Gradients) -> std::collections::BTreeMap<String, Matrix> {
        [
            ("E", self.e),
            ("w", self.w),
            ("W1", self.w1),
            ("b1", self.b1),
            ("W2", self.w2),
            ("b2", self.b2),
        ]
        .into_iter()
        .map(|(n, v)| (n.to_string(), g.wrt(v)))
        .collect()
    }

    /// Logits for every node of `graph` (n×k).
    fn logits(&self, tape: &'t Tape, graph: &Graph, radius: usize, k: usize) -> Result<Var<'t>> {
        let n = graph.num_nodes();
        let mut weighted: Option<Var<'t>> = None;
        for s in 1..=radius {
            let counts = tape.constant(distance_label_counts(graph, s, k));
            let ws = self.w.slice_cols(s - 1, 1)?.broadcast(n, k)?;
            let term = ws.mul(counts)?;
            weighted = Some(match weighted {
                Some(acc) => acc.add(term)?,
                None => term,
            });
        }
        let weighted = weighted.ok_or_else(|| Error::argument("radius must be ≥ 1"))?;
        let f = weighted.matmul(self.e)?;
        let hidden = f.matmul(self.w1)?.add_row(self.b1)?.relu();
        hidden.matmul(self.w2)?.add_row(self.b2)
    }
}

fn check_radius(graphs: &[&Graph], radius: usize) -> Result<()> {
    if let Some(g) = graphs.iter().find(|g| g.neighbor_radius() < radius) {
        return Err(Error::argument(format!(
            "neighbor sets computed to radius {} but pretraining needs {radius}",
            g.neighbor_radius()
        )));
    }
    Ok(())
}

/// Summed cross-entropy and number of correctly predicted nodes.
pub fn evaluate_nodes(model: &EmbeddingModel, graphs: &[&Graph]) -> Result<(f64, usize)> {
    check_radius(graphs, model.meta.radius)?;
    let mut loss = 0.0;
    let mut correct = 0;
    for g in graphs {
        if g.num_nodes() == 0 {
            continue;
        }
        let tape = Tape::new();
        let m = TapedModel::record(&tape, &model.params)?;
        let logits = m.logits(&tape, g, model.meta.radius, model.meta.k)?;
        loss += logits.softmax_cross_entropy(g.node_labels())?.item();
        let z = logits.value();
        correct += z
            .axis_iter(Axis(0))
            .zip(g.node_labels())
            .filter(|(row, &l)| argmax(row.iter().copied()) == l)
            .count();
    }
    Ok((loss, correct))
}

pub(crate) fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Trains an embedding model on `graphs` with Adam.
pub fn pretrain(
    graphs: &[&Graph],
    k: usize,
    cfg: &PretrainConfig,
    dataset: &str,
    rng: &mut impl Rng,
) -> Result<(EmbeddingModel, PretrainHistory)> {
    if graphs.is_empty() {
        return Err(Error::argument("pretraining needs at least one graph"));
    }
    if cfg.radius == 0 || cfg.dim == 0 {
        return Err(Error::argument("pretraining radius and dim must be ≥ 1"));
    }
    check_radius(graphs, cfg.radius)?;
    let mut model = EmbeddingModel::init(rng, k, cfg, dataset);
    let mut adam = Adam::new(cfg.lr);
    let mut history = vec![evaluate_nodes(&model, graphs)?.0];
    let mut order: Vec<usize> = (0..graphs.len()).collect();

    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        let mut start = 0;
        while start < order.len() {
            let mut end = start;
            let mut nodes = 0;
            while end < order.len() && nodes < cfg.batch_nodes {
                nodes += graphs[order[end]].num_nodes();
                end += 1;
            }
            let tape = Tape::new();
            let m = TapedModel::record(&tape, &model.params)?;
            let mut total: Option<Var<'_>> = None;
            for &gi in &order[start..end] {
                let g = graphs[gi];
                if g.num_nodes() == 0 {
                    continue;
                }
                let loss = m
                    .logits(&tape, g, cfg.radius, k)?
                    .softmax_cross_entropy(g.node_labels())?;
                total = Some(match total {
                    Some(t) => t.add(loss)?,
                    None => loss,
                });
            }
            if let Some(total) = total {
                let grads = tape.backward(total)?;
                adam.step(&mut model.params, &m.grads(&grads));
            }
            start = end;
        }
        history.push(evaluate_nodes(&model, graphs)?.0);
    }

    let (_, correct) = evaluate_nodes(&model, graphs)?;
    let total_nodes: usize = graphs.iter().map(|g| g.num_nodes()).sum();
    Ok((
        model,
        PretrainHistory {
            loss: history,
            accuracy: correct as f64 / total_nodes.max(1) as f64,
        },
    ))
}
