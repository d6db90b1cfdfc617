#![allow(clippy::needless_range_loop)]

mod common;

use common::{grad_check, random_connected_graph, random_graph, random_matrix, weighted_sum};
use graphlstm::autodiff::{Matrix, Tape, Var};
use graphlstm::walk::{self, GumbelNoise, MaskMode, Ordering, WalkConfig};
use graphlstm::Graph;
use ndarray::Array2;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// Walk computed step by step with explicit loops.
fn trace_by_hand(w: &[Vec<f64>], noise: &[Vec<f64>], tau: f64, mode: MaskMode) -> Vec<Vec<f64>> {
    let n = w.len();
    let mut t = vec![1.0; n];
    let mut logits = vec![0.0; n];
    let mut steps = Vec::new();
    for g in noise {
        let z: Vec<f64> = (0..n).map(|j| (logits[j] + g[j]) / tau).collect();
        let v = softmax(&z);
        for j in 0..n {
            t[j] *= 1.0 - v[j];
        }
        logits = (0..n)
            .map(|j| {
                let row: f64 = (0..n).map(|i| v[i] * w[i][j]).sum();
                match mode {
                    MaskMode::Paper => row * t[j],
                    MaskMode::Logmask => row + (t[j] + 1e-10).ln(),
                }
            })
            .collect();
        steps.push(v);
    }
    steps
}

fn run(graph: &Graph, c: &[f64], eps: f64, cfg: &WalkConfig, noise: &GumbelNoise) -> Vec<Vec<f64>> {
    let tape = Tape::new();
    let cv = tape.constant(Array2::from_shape_vec((1, c.len()), c.to_vec()).unwrap());
    let ev = tape.scalar(eps);
    walk::sample_sequence(&tape, graph, cv, ev, cfg, noise)
        .unwrap()
        .to_values()
        .steps
}

#[test]
fn path_graph_walk_matches_hand_trace() {
    // 0 - 1 - 2 - 3
    let mut g = Graph::new(vec![0, 1, 0, 1], &[(0, 1), (1, 2), (2, 3)], 0).unwrap();
    g.compute_neighbor_sets(2);
    let (c, eps) = ([2.0, 0.5], -1.0);
    let w = vec![
        vec![-1.0, 2.0, 0.5, -1.0],
        vec![2.0, -1.0, 2.0, 0.5],
        vec![0.5, 2.0, -1.0, 2.0],
        vec![-1.0, 0.5, 2.0, -1.0],
    ];
    assert_eq!(
        walk::weight_matrix(&g, &c, eps),
        Array2::from_shape_fn((4, 4), |(i, j)| w[i][j])
    );
    let noise = GumbelNoise {
        draws: vec![
            vec![0.3, -0.2, 1.1, 0.0],
            vec![-0.5, 0.4, 0.2, 0.9],
            vec![1.2, -1.0, 0.1, 0.3],
            vec![0.0, 0.7, -0.3, -0.8],
        ],
    };
    for mode in [MaskMode::Paper, MaskMode::Logmask] {
        for tau in [1.0, 0.5, 0.1] {
            let cfg = WalkConfig {
                tau,
                k_rw: 2,
                mask_mode: mode,
                walk_len: None,
            };
            let got = run(&g, &c, eps, &cfg, &noise);
            let expected = trace_by_hand(&w, &noise.draws, tau, mode);
            for (a, b) in got.iter().flatten().zip(expected.iter().flatten()) {
                assert!((a - b).abs() < 1e-12, "{mode:?} tau={tau}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn hard_limit_visits_neighbors_in_logmask_mode() {
    // With a tiny temperature and a strong preference for direct
    // neighbors, every step moves to an unvisited adjacent node.
    let mut g = Graph::new(vec![0; 5], &[(0, 1), (1, 2), (2, 3), (3, 4)], 0).unwrap();
    g.compute_neighbor_sets(1);
    let mut noise = GumbelNoise {
        draws: vec![vec![0.0; 5]; 5],
    };
    noise.draws[0][0] = 1.0;
    let cfg = WalkConfig {
        tau: 1e-3,
        k_rw: 1,
        mask_mode: MaskMode::Logmask,
        walk_len: None,
    };
    let steps = run(&g, &[10.0], -10.0, &cfg, &noise);
    let order: Vec<usize> = steps
        .iter()
        .map(|s| {
            s.iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0
        })
        .collect();
    assert_eq!(order, vec![0, 1, 2, 3, 4]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn steps_are_distributions_and_trace_shrinks(seed in any::<u64>(), n in 1usize..12, tau in 0.05f64..2.0, logmask in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(&mut rng, n, 0.3, 3, 2);
        let cfg = WalkConfig {
            tau,
            k_rw: 2,
            mask_mode: if logmask { MaskMode::Logmask } else { MaskMode::Paper },
            walk_len: None,
        };
        let (seq, _) = walk::sample_sequence_values(&g, &[2.0, 1.0], -0.5, &cfg, &mut rng).unwrap();
        prop_assert_eq!(seq.len(), n);
        prop_assert_eq!(seq.mask_trace.len(), n + 1);
        for v in &seq.steps {
            prop_assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(v.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
        for (i, pair) in seq.mask_trace.windows(2).enumerate() {
            for j in 0..n {
                let (a, b) = (pair[0][j], pair[1][j]);
                prop_assert_eq!(b, a * (1.0 - seq.steps[i][j]));
                prop_assert!(b <= a + 1e-15 && b >= 0.0);
            }
        }
    }

    #[test]
    fn walk_is_permutation_equivariant(seed in any::<u64>(), n in 2usize..10, logmask in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_connected_graph(&mut rng, n, 0.2, 3, 2);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let cfg = WalkConfig {
            tau: 0.5,
            k_rw: 2,
            mask_mode: if logmask { MaskMode::Logmask } else { MaskMode::Paper },
            walk_len: None,
        };
        let noise = GumbelNoise::sample(&mut rng, n, n);
        let base = run(&g, &[3.0, 1.0], -1.0, &cfg, &noise);
        let moved = run(&g.permuted(&perm), &[3.0, 1.0], -1.0, &cfg, &noise.permuted(&perm));
        for (a, b) in base.iter().zip(&moved) {
            for j in 0..n {
                prop_assert!((a[j] - b[perm[j]]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn cold_softmax_picks_the_gumbel_max(seed in any::<u64>(), n in 2usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = random_matrix(&mut rng, 1, n, -3.0, 3.0);
        let noise = GumbelNoise::sample(&mut rng, 1, n).draws.remove(0);
        let tape = Tape::new();
        let v = walk::gumbel_softmax(tape.constant(logits.clone()), 1e-6, &noise).unwrap().value();
        let argmax = |xs: Vec<f64>| xs.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        let perturbed: Vec<f64> = logits.iter().zip(&noise).map(|(l, g)| l + g).collect();
        prop_assert_eq!(argmax(v.iter().copied().collect()), argmax(perturbed));
    }

    #[test]
    fn baseline_orders_are_permutations(seed in any::<u64>(), n in 1usize..15, which in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(&mut rng, n, 0.25, 2, 1);
        let method = [Ordering::Random, Ordering::Bfs, Ordering::Dfs][which];
        let mut order = walk::baseline_order(&g, method, &mut rng).unwrap();
        order.sort_unstable();
        prop_assert_eq!(order, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn bfs_order_never_moves_closer_to_the_root(seed in any::<u64>(), n in 1usize..15) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_connected_graph(&mut rng, n, 0.15, 2, n);
        let order = walk::baseline_order(&g, Ordering::Bfs, &mut rng).unwrap();
        let root = order[0];
        let depth = |v: usize| (1..=n).find(|&s| g.neighbor_set(s, root).contains(&v)).unwrap_or(0);
        let depths: Vec<usize> = order.iter().map(|&v| depth(v)).collect();
        prop_assert!(depths.windows(2).all(|w| w[0] <= w[1]), "{:?}", depths);
    }
}

/// Weighted sum over every step of a walk driven by `v = [C, ε]`.
fn walk_loss<'t>(
    tape: &'t Tape,
    v: &[Var<'t>],
    g: &Graph,
    cfg: &WalkConfig,
    noise: &GumbelNoise,
    weights: &Matrix,
) -> Var<'t> {
    let n = g.num_nodes();
    let seq = walk::sample_sequence(tape, g, v[0], v[1], cfg, noise).unwrap();
    let mut total = tape.scalar(0.0);
    for (i, step) in seq.steps.iter().enumerate() {
        let w = Array2::from_shape_fn((1, n), |(_, j)| weights[[i, j]]);
        total = total.add(weighted_sum(*step, &w)).unwrap();
    }
    total
}

#[test]
fn walk_gradients_reach_c_and_epsilon() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for (trial, mode) in [MaskMode::Paper, MaskMode::Logmask]
        .into_iter()
        .cycle()
        .take(10)
        .enumerate()
    {
        let g = random_connected_graph(&mut rng, 5 + trial % 4, 0.25, 2, 2);
        let n = g.num_nodes();
        let noise = GumbelNoise::sample(&mut rng, n, n);
        let cfg = WalkConfig {
            tau: 0.5 + 0.1 * trial as f64,
            k_rw: 2,
            mask_mode: mode,
            walk_len: None,
        };
        let weights = random_matrix(&mut rng, n, n, -1.0, 1.0);
        let inputs = vec![
            random_matrix(&mut rng, 1, 2, 0.0, 5.0),
            random_matrix(&mut rng, 1, 1, -1.0, 1.0),
        ];
        let err = grad_check(&inputs, |t, v| walk_loss(t, v, &g, &cfg, &noise, &weights));
        assert!(err < 1e-3, "{mode:?}: relative error {err}");

        let tape = Tape::new();
        let c = tape.param(inputs[0].clone());
        let e = tape.param(inputs[1].clone());
        let out = walk_loss(&tape, &[c, e], &g, &cfg, &noise, &weights);
        let grads = tape.backward(out).unwrap();
        assert!(grads.wrt(c).iter().any(|&x| x != 0.0));
        assert!(grads.wrt(e)[[0, 0]] != 0.0);
    }
}
