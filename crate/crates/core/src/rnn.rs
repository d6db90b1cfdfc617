//! Neighbor-augmented LSTM over soft node sequences.
//!
//! For a step vector `v` over the nodes of a graph the inputs are the mixed
//! node embedding `e_v = Σ_j v_j e_j` and mixed neighborhood embedding
//! `Nb_v = Σ_j v_j Nb_j`, where `Nb_j` sums the embeddings of `j`'s direct
//! neighbors. Every gate receives both:
//!
//! ```text
//! i = σ(e W_ii + Nb W_ni + h W_hi + b_i)
//! f = σ(e W_if + Nb W_nf + h W_hf + b_f)
//! g = tanh(e W_ig + Nb W_ng + h W_hg + b_g)
//! o = σ(e W_io + Nb W_no + h W_ho + b_o)
//! c' = f c + i g,   h' = o tanh(c')
//! ```
//!
//! Vectors are 1×n rows, so weights are stored input-major (`d×h`).
//! The graph vector is the sum of all hidden states.

use ndarray::Array2;
use rand::Rng;

use crate::autodiff::{concat_cols, Gradients, Matrix, ParamStore, Tape, Var};
use crate::error::Result;
use crate::graph::Graph;
use crate::init;

pub const GATES: [char; 4] = ['i', 'f', 'g', 'o'];

pub fn input_name(gate: char) -> String {
    format!("W_i{gate}")
}

pub fn neighbor_name(gate: char) -> String {
    format!("W_n{gate}")
}

pub fn hidden_name(gate: char) -> String {
    format!("W_h{gate}")
}

pub fn bias_name(gate: char) -> String {
    format!("b_{gate}")
}

pub const HEAD_NAMES: [&str; 4] = ["head_W1", "head_b1", "head_W2", "head_b2"];

/// Names of all twelve gate matrices and four biases.
pub fn lstm_param_names() -> Vec<String> {
    GATES
        .iter()
        .flat_map(|&g| {
            [
                input_name(g),
                neighbor_name(g),
                hidden_name(g),
                bias_name(g),
            ]
        })
        .collect()
}

/// Gate weights uniform in ±√(1/h); forget bias 1, other biases 0.
pub fn init_lstm(params: &mut ParamStore, rng: &mut impl Rng, d: usize, h: usize) {
    let a = (1.0 / h as f64).sqrt();
    for g in GATES {
        params.insert(input_name(g), init::uniform(rng, (d, h), -a, a));
        params.insert(neighbor_name(g), init::uniform(rng, (d, h), -a, a));
        params.insert(hidden_name(g), init::uniform(rng, (h, h), -a, a));
        let bias = if g == 'f' { 1.0 } else { 0.0 };
        params.insert(bias_name(g), Array2::from_elem((1, h), bias));
    }
}

/// Two-layer classifier head, Xavier-uniform weights and zero biases.
pub fn init_head(
    params: &mut ParamStore,
    rng: &mut impl Rng,
    h: usize,
    h_cls: usize,
    num_classes: usize,
) {
    params.insert("head_W1", init::xavier_uniform(rng, h, h_cls));
    params.insert("head_b1", Array2::zeros((1, h_cls)));
    params.insert("head_W2", init::xavier_uniform(rng, h_cls, num_classes));
    params.insert("head_b2", Array2::zeros((1, num_classes)));
}

/// Collects gradients for named leaves.
pub fn collect_grads<'t>(
    leaves: &[(String, Var<'t>)],
    grads: &Gradients,
    out: &mut std::collections::BTreeMap<String, Matrix>,
) {
    for (name, v) in leaves {
        if !v.requires_grad() {
            continue;
        }
        let g = grads.wrt(*v);
        match out.get_mut(name) {
            Some(acc) => *acc += &g,
            None => {
                out.insert(name.clone(), g);
            }
        }
    }
}

/// LSTM weights recorded on a tape, gate blocks concatenated `[i f g o]`.
#[derive(Debug, Clone)]
pub struct LstmWeights<'t> {
    pub input: Var<'t>,
    pub neighbor: Var<'t>,
    pub hidden: Var<'t>,
    pub bias: Var<'t>,
    pub size: usize,
    pub leaves: Vec<(String, Var<'t>)>,
}

impl<'t> LstmWeights<'t> {
    /// With `tie_hidden_if` the input gate's hidden matrix `W_hi` is also used
    /// by the forget gate and `W_hf` is ignored.
    pub fn record(
        tape: &'t Tape,
        params: &ParamStore,
        trainable: bool,
        tie_hidden_if: bool,
    ) -> Result<Self> {
        let mut leaves = Vec::new();
        let mut leaf = |name: String| -> Result<Var<'t>> {
            let v = params.leaf(tape, &name, trainable)?;
            leaves.push((name, v));
            Ok(v)
        };
        let mut blocks: [Vec<Var<'t>>; 4] = Default::default();
        for g in GATES {
            blocks[0].push(leaf(input_name(g))?);
            blocks[1].push(leaf(neighbor_name(g))?);
            blocks[2].push(if tie_hidden_if && g == 'f' {
                blocks[2][0]
            } else {
                leaf(hidden_name(g))?
            });
            blocks[3].push(leaf(bias_name(g))?);
        }
        let size = blocks[3][0].shape().1;
        Ok(LstmWeights {
            input: concat_cols(&blocks[0])?,
            neighbor: concat_cols(&blocks[1])?,
            hidden: concat_cols(&blocks[2])?,
            bias: concat_cols(&blocks[3])?,
            size,
            leaves,
        })
    }
}

/// Inputs for one LSTM step.
#[derive(Debug, Clone, Copy)]
pub struct StepFeatures<'t> {
    pub node: Var<'t>,
    pub neighborhood: Var<'t>,
}

#[derive(Debug, Clone, Copy)]
pub struct LstmState<'t> {
    pub h: Var<'t>,
    pub c: Var<'t>,
}

impl<'t> LstmState<'t> {
    pub fn zeros(tape: &'t Tape, size: usize) -> Self {
        LstmState {
            h: tape.constant(Array2::zeros((1, size))),
            c: tape.constant(Array2::zeros((1, size))),
        }
    }
}

/// Per-graph node embeddings `X = H E` and neighborhood sums `Nb = A X`.
pub fn node_feature_matrices<'t>(
    tape: &'t Tape,
    graph: &Graph,
    embedding: Var<'t>,
) -> Result<(Var<'t>, Var<'t>)> {
    let k = embedding.shape().0;
    let x = tape.constant(graph.one_hot(k)).matmul(embedding)?;
    let nb = tape.constant(graph.adjacency_matrix()).matmul(x)?;
    Ok((x, nb))
}

/// Mixed features of a (soft) step vector `v`.
pub fn soft_features<'t>(v: Var<'t>, x: Var<'t>, nb: Var<'t>) -> Result<StepFeatures<'t>> {
    Ok(StepFeatures {
        node: v.matmul(x)?,
        neighborhood: v.matmul(nb)?,
    })
}

pub fn lstm_step<'t>(
    features: StepFeatures<'t>,
    state: LstmState<'t>,
    w: &LstmWeights<'t>,
) -> Result<LstmState<'t>> {
    let h = w.size;
    let z = features
        .node
        .matmul(w.input)?
        .add(features.neighborhood.matmul(w.neighbor)?)?
        .add(state.h.matmul(w.hidden)?)?
        .add(w.bias)?;
    let i = z.slice_cols(0, h)?.sigmoid();
    let f = z.slice_cols(h, h)?.sigmoid();
    let g = z.slice_cols(2 * h, h)?.tanh();
    let o = z.slice_cols(3 * h, h)?.sigmoid();
    let c = f.mul(state.c)?.add(i.mul(g)?)?;
    let h = o.mul(c.tanh())?;
    Ok(LstmState { h, c })
}

/// Runs the LSTM over `steps` from a zero state and returns `Σ_t h_t`.
pub fn encode_graph<'t>(
    steps: &[Var<'t>],
    x: Var<'t>,
    nb: Var<'t>,
    w: &LstmWeights<'t>,
) -> Result<Var<'t>> {
    let tape = x.tape();
    let mut state = LstmState::zeros(tape, w.size);
    let mut total: Option<Var<'t>> = None;
    for &v in steps {
        state = lstm_step(soft_features(v, x, nb)?, state, w)?;
        total = Some(match total {
            Some(t) => t.add(state.h)?,
            None => state.h,
        });
    }
    total.ok_or_else(|| crate::error::Error::argument("sequence must have at least one step"))
}

/// Two-layer classifier `softmax(ReLU(h W1 + b1) W2 + b2)`.
#[derive(Debug, Clone)]
pub struct ClassifierHead<'t> {
    pub w1: Var<'t>,
    pub b1: Var<'t>,
    pub w2: Var<'t>,
    pub b2: Var<'t>,
    pub leaves: Vec<(String, Var<'t>)>,
}

impl<'t> ClassifierHead<'t> {
    pub fn record(tape: &'t Tape, params: &ParamStore, trainable: bool) -> Result<Self> {
        let vars = HEAD_NAMES
            .iter()
            .map(|n| params.leaf(tape, n, trainable))
            .collect::<Result<Vec<_>>>()?;
        Ok(ClassifierHead {
            w1: vars[0],
            b1: vars[1],
            w2: vars[2],
            b2: vars[3],
            leaves: HEAD_NAMES
                .iter()
                .map(|n| n.to_string())
                .zip(vars.iter().copied())
                .collect(),
        })
    }

    /// Unnormalized class scores.
    pub fn logits(&self, h_g: Var<'t>) -> Result<Var<'t>> {
        h_g.matmul(self.w1)?
            .add_row(self.b1)?
            .relu()
            .matmul(self.w2)?
            .add_row(self.b2)
    }

    pub fn classify(&self, h_g: Var<'t>) -> Result<Var<'t>> {
        Ok(self.logits(h_g)?.softmax_rows())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(d: usize, h: usize, seed: u64) -> ParamStore {
        let mut p = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        init_lstm(&mut p, &mut rng, d, h);
        init_head(&mut p, &mut rng, h, 5, 2);
        p
    }

    fn path(n: usize) -> Graph {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        let mut g = Graph::new((0..n).map(|i| i % 2).collect(), &edges, 0).unwrap();
        g.compute_neighbor_sets(1);
        g
    }

    #[test]
    fn zero_weights_give_zero_graph_vector() {
        let mut p = params(3, 4, 1);
        for name in lstm_param_names() {
            p.get_mut(&name).unwrap().fill(0.0);
        }
        let g = path(4);
        let tape = Tape::new();
        let e = tape.constant(init::normal(&mut ChaCha8Rng::seed_from_u64(2), (2, 3), 1.0));
        let (x, nb) = node_feature_matrices(&tape, &g, e).unwrap();
        let w = LstmWeights::record(&tape, &p, false, false).unwrap();
        let seq = crate::walk::taped_permutation(&tape, &[0, 1, 2, 3], 4);
        let hg = encode_graph(&seq.steps, x, nb, &w).unwrap();
        assert!(hg.value().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_hot_step_selects_node_and_neighbors() {
        let g = path(3);
        let tape = Tape::new();
        let e = tape.constant(ndarray::arr2(&[[1.0, 0.0], [0.0, 2.0]]));
        let (x, nb) = node_feature_matrices(&tape, &g, e).unwrap();
        let v = tape.constant(ndarray::arr2(&[[0.0, 1.0, 0.0]]));
        let f = soft_features(v, x, nb).unwrap();
        // node 1 has label 1; neighbors 0 and 2 both label 0
        assert_eq!(f.node.value(), ndarray::arr2(&[[0.0, 2.0]]));
        assert_eq!(f.neighborhood.value(), ndarray::arr2(&[[2.0, 0.0]]));
    }

    #[test]
    fn isolated_node_has_zero_neighborhood() {
        let mut g = Graph::new(vec![0, 1], &[], 0).unwrap();
        g.compute_neighbor_sets(1);
        let tape = Tape::new();
        let e = tape.constant(ndarray::arr2(&[[1.0], [3.0]]));
        let (x, nb) = node_feature_matrices(&tape, &g, e).unwrap();
        let v = tape.constant(ndarray::arr2(&[[0.0, 1.0]]));
        assert_eq!(
            soft_features(v, x, nb).unwrap().neighborhood.value()[[0, 0]],
            0.0
        );
    }

    #[test]
    fn half_mix_averages_features() {
        let g = path(3);
        let tape = Tape::new();
        let e = tape.constant(ndarray::arr2(&[[1.0, -1.0], [0.5, 2.0]]));
        let (x, nb) = node_feature_matrices(&tape, &g, e).unwrap();
        let pick =
            |row: [f64; 3]| soft_features(tape.constant(ndarray::arr2(&[row])), x, nb).unwrap();
        let a = pick([1.0, 0.0, 0.0]);
        let b = pick([0.0, 0.0, 1.0]);
        let mix = pick([0.5, 0.0, 0.5]);
        let avg = (a.node.value() + b.node.value()) * 0.5;
        assert!((mix.node.value() - avg).iter().all(|d| d.abs() < 1e-15));
        let avg_nb = (a.neighborhood.value() + b.neighborhood.value()) * 0.5;
        assert!((mix.neighborhood.value() - avg_nb)
            .iter()
            .all(|d| d.abs() < 1e-15));
    }

    #[test]
    fn gates_bounded_and_state_finite() {
        let p = params(3, 4, 7);
        let tape = Tape::new();
        let w = LstmWeights::record(&tape, &p, false, false).unwrap();
        let mut state = LstmState::zeros(&tape, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let f = StepFeatures {
                node: tape.constant(init::normal(&mut rng, (1, 3), 3.0)),
                neighborhood: tape.constant(init::normal(&mut rng, (1, 3), 3.0)),
            };
            state = lstm_step(f, state, &w).unwrap();
            assert!(state
                .h
                .value()
                .iter()
                .all(|v| v.is_finite() && v.abs() < 1.0));
            assert!(state.c.value().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn zero_head_is_uniform_and_ln2() {
        let mut p = params(3, 4, 3);
        for n in HEAD_NAMES {
            p.get_mut(n).unwrap().fill(0.0);
        }
        let tape = Tape::new();
        let head = ClassifierHead::record(&tape, &p, true).unwrap();
        let hg = tape.constant(ndarray::arr2(&[[0.3, -2.0, 1.0, 4.0]]));
        let probs = head.classify(hg).unwrap().value();
        assert_eq!(probs, ndarray::arr2(&[[0.5, 0.5]]));
        let ce = head
            .logits(hg)
            .unwrap()
            .softmax_cross_entropy(&[1])
            .unwrap()
            .item();
        assert!((ce - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn tied_hidden_uses_input_gate_matrix() {
        let p = params(2, 3, 4);
        let tape = Tape::new();
        let w = LstmWeights::record(&tape, &p, true, true).unwrap();
        let hidden = w.hidden.value();
        let hi = p.get("W_hi").unwrap();
        assert_eq!(hidden.slice(ndarray::s![.., 3..6]), hi.view());
        assert!(!w.leaves.iter().any(|(n, _)| n == "W_hf"));
    }
}
