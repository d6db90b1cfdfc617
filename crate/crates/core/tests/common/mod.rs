#![allow(dead_code)]

use std::path::PathBuf;

use graphlstm::autodiff::{Matrix, Tape, Var};
use graphlstm::Graph;
use ndarray::Array2;
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn mutag_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/MUTAG")
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(lo..hi))
}

/// Entries bounded away from zero, for ops with a kink there.
pub fn random_nonzero(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    Array2::from_shape_fn((rows, cols), |_| {
        let m = rng.random_range(0.05..2.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Random simplex row.
pub fn random_simplex(rng: &mut impl Rng, n: usize) -> Matrix {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
    let z: f64 = raw.iter().sum();
    Array2::from_shape_fn((1, n), |(_, j)| raw[j] / z)
}

/// Reduces any output to a scalar with fixed random weights so every entry
/// of the output receives a distinct upstream gradient.
pub fn weighted_sum<'t>(out: Var<'t>, weights: &Matrix) -> Var<'t> {
    let w = out.tape().constant(weights.clone());
    out.mul(w).expect("weights match output").sum()
}

/// Largest relative error between the reverse-mode gradient of `f` and a
/// central finite difference, over every entry of every input.
pub fn grad_check<F>(inputs: &[Matrix], f: F) -> f64
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|m| tape.param(m.clone())).collect();
    let loss = f(&tape, &vars);
    let grads = tape.backward(loss).expect("scalar loss");
    let analytic: Vec<Matrix> = vars.iter().map(|&v| grads.wrt(v)).collect();

    let eval = |perturbed: &[Matrix]| -> f64 {
        let t = Tape::new();
        let vs: Vec<Var<'_>> = perturbed.iter().map(|m| t.constant(m.clone())).collect();
        f(&t, &vs).item()
    };

    let mut worst: f64 = 0.0;
    let mut work: Vec<Matrix> = inputs.to_vec();
    for (idx, input) in inputs.iter().enumerate() {
        for ((r, c), &x) in input.indexed_iter() {
            work[idx][[r, c]] = x + FD_STEP;
            let up = eval(&work);
            work[idx][[r, c]] = x - FD_STEP;
            let down = eval(&work);
            work[idx][[r, c]] = x;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic[idx][[r, c]];
            worst = worst.max(relative_error(a, numeric));
        }
    }
    worst
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Erdős–Rényi graph with `k` node labels; may be disconnected.
pub fn random_graph(rng: &mut impl Rng, n: usize, p: f64, k: usize, radius: usize) -> Graph {
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(p) {
                edges.push((i, j));
            }
        }
    }
    let mut g = Graph::new(labels, &edges, rng.random_range(0..2)).expect("valid graph");
    g.compute_neighbor_sets(radius);
    g
}

/// Random connected graph: a random spanning tree plus extra edges.
pub fn random_connected_graph(
    rng: &mut impl Rng,
    n: usize,
    extra: f64,
    k: usize,
    radius: usize,
) -> Graph {
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let mut edges = Vec::new();
    for i in 1..n {
        edges.push((rng.random_range(0..i), i));
    }
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(extra) {
                edges.push((i, j));
            }
        }
    }
    let mut g = Graph::new(labels, &edges, rng.random_range(0..2)).expect("valid graph");
    g.compute_neighbor_sets(radius);
    g
}
