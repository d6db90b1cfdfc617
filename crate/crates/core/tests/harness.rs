mod common;

use common::mutag_dir;
use graphlstm::cli::load_dataset;
use graphlstm::harness::{self, check_leakage, mean_std, EpochRecord, Outputs};
use graphlstm::{stratified_folds, Dataset, EmbeddingMode, Graph, RunConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_config() -> RunConfig {
    RunConfig {
        d: 8,
        h: 8,
        h_cls: 8,
        epochs: 3,
        folds: 3,
        pretrain_epochs: 2,
        max_nodes: Some(13),
        num_eval_samples: 2,
        ..RunConfig::default()
    }
}

fn small_dataset(cfg: &RunConfig) -> Dataset {
    load_dataset(&mutag_dir(), cfg).unwrap()
}

#[test]
fn cv_mean_and_std_agree_with_folds() {
    let cfg = small_config();
    let ds = small_dataset(&cfg);
    let m = harness::cross_validate(&ds, &cfg, Outputs { checkpoints: None }).unwrap();
    assert_eq!(m.per_fold_accuracy.len(), 3);
    let mean = m.per_fold_accuracy.iter().sum::<f64>() / 3.0;
    let var = m
        .per_fold_accuracy
        .iter()
        .map(|a| (a - mean).powi(2))
        .sum::<f64>()
        / 3.0;
    assert!((m.mean - mean).abs() < 1e-12);
    assert!((m.std - var.sqrt()).abs() < 1e-12);
    assert_eq!(m.pretrain.len(), 3);
    for p in &m.pretrain {
        assert!(
            p.graphs < ds.len(),
            "pretraining must exclude the test fold"
        );
    }
}

fn untimed(records: &[EpochRecord]) -> Vec<(usize, usize, &str, f64, Option<f64>)> {
    records
        .iter()
        .map(|r| (r.fold, r.epoch, r.split, r.loss, r.accuracy))
        .collect()
}

#[test]
fn cv_is_reproducible() {
    let cfg = RunConfig {
        embedding: EmbeddingMode::Randomized,
        ..small_config()
    };
    let ds = small_dataset(&cfg);
    let a = harness::cross_validate(&ds, &cfg, Outputs { checkpoints: None }).unwrap();
    let b = harness::cross_validate(&ds, &cfg, Outputs { checkpoints: None }).unwrap();
    assert_eq!(a.per_fold_accuracy, b.per_fold_accuracy);
    assert_eq!(untimed(&a.records), untimed(&b.records));
    let c = harness::cross_validate(
        &ds,
        &RunConfig { seed: 1, ..cfg },
        Outputs { checkpoints: None },
    )
    .unwrap();
    assert_ne!(untimed(&a.records), untimed(&c.records));
}

#[test]
fn training_loss_trends_down() {
    let cfg = RunConfig {
        epochs: 30,
        lr: 5e-3,
        embedding: EmbeddingMode::Randomized,
        ..small_config()
    };
    let ds = small_dataset(&cfg);
    let full = harness::train_all(&ds, &cfg, |_, _| Ok(())).unwrap();
    let loss: Vec<f64> = full.outcome.epochs.iter().map(|e| e.loss).collect();
    let head = loss[..5].iter().sum::<f64>() / 5.0;
    let tail = loss[loss.len() - 5..].iter().sum::<f64>() / 5.0;
    assert!(tail < head, "{loss:?}");
}

#[test]
fn checkpoints_are_written_per_fold() {
    let cfg = RunConfig {
        epochs: 1,
        folds: 2,
        ..small_config()
    };
    let ds = small_dataset(&cfg);
    let dir = tempfile::tempdir().unwrap();
    harness::cross_validate(
        &ds,
        &cfg,
        Outputs {
            checkpoints: Some(dir.path()),
        },
    )
    .unwrap();
    let count = std::fs::read_dir(dir.path()).unwrap().count();
    assert!(count >= 2, "{count} checkpoint files");
}

proptest! {
    #[test]
    fn fold_splits_never_leak(labels in proptest::collection::vec(0usize..2, 8..40), folds in 2usize..6, seed in any::<u64>()) {
        let split = stratified_folds(&labels, folds, seed).unwrap();
        for f in 0..folds {
            let train = split.train_indices(f);
            let test = split.test_indices(f);
            prop_assert!(check_leakage(&train, &test, &train, false).is_ok());
            prop_assert!(check_leakage(&train, &test, &(0..labels.len()).collect::<Vec<_>>(), true).is_ok());
            if !test.is_empty() {
                let all: Vec<usize> = (0..labels.len()).collect();
                prop_assert!(check_leakage(&train, &test, &all, false).is_err());
                let mut bad = train.clone();
                bad.push(test[0]);
                prop_assert!(check_leakage(&bad, &test, &train, false).is_err());
            }
        }
    }

    #[test]
    fn mean_std_is_population(values in proptest::collection::vec(0.0f64..1.0, 1..20)) {
        let (m, s) = mean_std(&values);
        let n = values.len() as f64;
        let sq = values.iter().map(|v| v * v).sum::<f64>() / n;
        prop_assert!((s * s - (sq - m * m)).abs() < 1e-9);
        prop_assert!(values.iter().any(|&v| v <= m + 1e-12) && values.iter().any(|&v| v >= m - 1e-12));
    }
}

/// Training-set loss after every epoch, measured with the same walk noise
/// each time. Each 10-epoch window's mean loss is compared with the mean of
/// the 10 epochs before it.
#[test]
fn mutag_training_loss_falls_over_most_ten_epoch_windows() {
    let cfg = RunConfig::default();
    let ds = load_dataset(&mutag_dir(), &cfg).unwrap();
    let graphs: Vec<&Graph> = ds.graphs.iter().collect();
    let mut loss = Vec::new();
    harness::train_all(&ds, &cfg, |_, params| {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        loss.push(harness::evaluate(params, &graphs, &cfg, cfg.num_eval_samples, &mut rng)?.loss);
        Ok(())
    })
    .unwrap();
    let mean = |w: &[f64]| w.iter().sum::<f64>() / w.len() as f64;
    let windows = loss.len() - 19;
    let falling = (0..windows)
        .filter(|&e| mean(&loss[e + 10..e + 20]) <= mean(&loss[e..e + 10]))
        .count();
    assert!(
        falling as f64 >= 0.8 * windows as f64,
        "{falling}/{windows} windows non-increasing: {loss:?}"
    );
}
