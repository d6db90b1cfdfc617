//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 unreadable or
//! malformed dataset, 3 runtime failure.

use std::ffi::OsString;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{EmbeddingMode, RunConfig};
use crate::error::{Error, Result};
use crate::graph::{parse_tu_dataset, Dataset};
use crate::harness::{self, EpochRecord, Outputs};
use crate::walk::{MaskMode, Ordering};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "graphlstm",
    version,
    about = "Graph classification with learned random-walk orderings and a neighbor-augmented LSTM"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Pretrain node embeddings on every graph of a dataset.
    Pretrain(CommonArgs),
    /// Train on the whole dataset and save the model.
    Train(CommonArgs),
    /// Stratified k-fold cross-validation.
    Cv(CommonArgs),
    /// Compare learned, random, BFS and DFS node orderings.
    AblateOrdering(CommonArgs),
    /// Compare pretrained, randomized and raw node embeddings.
    AblateEmbedding(CommonArgs),
    /// Cross-validate every point of the configured hyperparameter grid.
    Grid(CommonArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// TU dataset directory.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Flat JSON config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: runs/<command>).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    ordering: Option<String>,
    #[arg(long)]
    embedding: Option<String>,
    #[arg(long = "mask-mode")]
    mask_mode: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long = "walk-len")]
    walk_len: Option<usize>,
    #[arg(long = "finetune-embeddings")]
    finetune_embeddings: bool,
    #[arg(long = "num-eval-samples")]
    num_eval_samples: Option<usize>,
    /// Number of seeds for ablation studies.
    #[arg(long)]
    seeds: Option<usize>,
    /// Override any config key, e.g. `--set d=64 --set lr=0.001`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Pretrain(_) => "pretrain",
            Command::Train(_) => "train",
            Command::Cv(_) => "cv",
            Command::AblateOrdering(_) => "ablate-ordering",
            Command::AblateEmbedding(_) => "ablate-embedding",
            Command::Grid(_) => "grid",
        }
    }

    fn args(&self) -> &CommonArgs {
        match self {
            Command::Pretrain(a)
            | Command::Train(a)
            | Command::Cv(a)
            | Command::AblateOrdering(a)
            | Command::AblateEmbedding(a)
            | Command::Grid(a) => a,
        }
    }
}

fn config_err(key: &str, e: impl std::fmt::Display) -> Error {
    Error::Config {
        key: key.to_string(),
        message: e.to_string(),
    }
}

fn build_config(args: &CommonArgs) -> Result<RunConfig> {
    let mut doc = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| config_err("config", format!("{}: {e}", path.display())))?;
            // validates and names offending keys
            RunConfig::from_json_str(&text)?.to_json()
        }
        None => RunConfig::default().to_json(),
    };
    let obj = doc.as_object_mut().expect("config serializes to an object");
    let mut set = |key: &str, value: serde_json::Value| {
        obj.insert(key.to_string(), value);
    };
    if let Some(d) = &args.dataset {
        set("dataset", d.display().to_string().into());
    }
    if let Some(v) = args.seed {
        set("seed", v.into());
    }
    if let Some(v) = args.tau {
        set("tau", v.into());
    }
    if let Some(v) = &args.ordering {
        v.parse::<Ordering>()
            .map_err(|e| config_err("ordering", e))?;
        set("ordering", v.as_str().into());
    }
    if let Some(v) = &args.embedding {
        v.parse::<EmbeddingMode>()
            .map_err(|e| config_err("embedding", e))?;
        set("embedding", v.as_str().into());
    }
    if let Some(v) = &args.mask_mode {
        v.parse::<MaskMode>()
            .map_err(|e| config_err("mask_mode", e))?;
        set("mask_mode", v.as_str().into());
    }
    if let Some(v) = args.epochs {
        set("epochs", v.into());
    }
    if let Some(v) = args.folds {
        set("folds", v.into());
    }
    if let Some(v) = args.walk_len {
        set("walk_len", v.into());
    }
    if args.finetune_embeddings {
        set("finetune_embeddings", true.into());
    }
    if let Some(v) = args.num_eval_samples {
        set("num_eval_samples", v.into());
    }
    if let Some(v) = args.seeds {
        set("seeds", v.into());
    }
    for kv in &args.set {
        let (key, raw) = kv
            .split_once('=')
            .ok_or_else(|| config_err(kv, "expected KEY=VALUE"))?;
        let value =
            serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.into()));
        set(key, value);
    }
    RunConfig::from_json_str(&doc.to_string())
}

/// Loads a dataset, applies the node cap and computes neighbor sets.
pub fn load_dataset(path: &Path, cfg: &RunConfig) -> Result<Dataset> {
    let mut ds = parse_tu_dataset(path)?;
    if let Some(cap) = cfg.max_nodes {
        ds.retain_max_nodes(cap);
    }
    if ds.is_empty() {
        return Err(Error::format(
            path.display().to_string(),
            0,
            "dataset has no graphs",
        ));
    }
    ds.compute_neighbor_sets(cfg.neighbor_radius());
    log::info!(
        "{}: {} graphs, k={}, {} classes, mean |V| {:.2}",
        ds.name,
        ds.len(),
        ds.k,
        ds.num_classes,
        ds.mean_nodes()
    );
    Ok(ds)
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } => EXIT_USAGE,
        e if e.is_data_error() => EXIT_DATA,
        _ => EXIT_RUNTIME,
    }
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let cfg = match build_config(cli.command.args()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    let Some(dataset_path) = cfg.dataset.clone().map(PathBuf::from) else {
        eprintln!("error: --dataset is required");
        return EXIT_USAGE;
    };
    let dataset = match load_dataset(&dataset_path, &cfg) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("error: dataset {}: {e}", dataset_path.display());
            return EXIT_DATA;
        }
    };
    let out = cli
        .command
        .args()
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(cli.command.name()));

    let result = panic::catch_unwind(AssertUnwindSafe(|| {
        dispatch(&cli.command, &cfg, &dataset, &out)
    }));
    match result {
        Ok(Ok(())) => EXIT_OK,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            match e {
                Error::Config { .. } => EXIT_USAGE,
                _ => EXIT_RUNTIME,
            }
        }
        Err(_) => {
            eprintln!("error: training panicked");
            EXIT_RUNTIME
        }
    }
}

fn dispatch(cmd: &Command, cfg: &RunConfig, dataset: &Dataset, out: &Path) -> Result<()> {
    harness::write_config_echo(out, cfg)?;
    match cmd {
        Command::Pretrain(_) => pretrain(cfg, dataset, out),
        Command::Train(_) => train(cfg, dataset, out),
        Command::Cv(_) => {
            let metrics = harness::cross_validate(
                dataset,
                cfg,
                Outputs {
                    checkpoints: Some(&out.join("checkpoints")),
                },
            )?;
            log::info!("mean accuracy {:.4} ± {:.4}", metrics.mean, metrics.std);
            harness::write_run(out, &metrics)
        }
        Command::AblateOrdering(_) => {
            let arms = harness::ablate_ordering(dataset, cfg, Some(out))?;
            write_json(&out.join("ablation.json"), &arms)
        }
        Command::AblateEmbedding(_) => {
            let arms = harness::ablate_embedding(dataset, cfg, Some(out))?;
            write_json(&out.join("ablation.json"), &arms)
        }
        Command::Grid(_) => {
            let points = harness::grid_search(dataset, cfg, Some(out))?;
            let best = harness::best_grid_point(&points);
            write_json(
                &out.join("grid.json"),
                &serde_json::json!({ "points": points, "best": best }),
            )
        }
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn pretrain(cfg: &RunConfig, dataset: &Dataset, out: &Path) -> Result<()> {
    let (model, history) = harness::pretrain_all(dataset, cfg)?;
    model.save(&out.join("embeddings.json"))?;
    let last = history.loss.len() - 1;
    let records: Vec<EpochRecord> = history
        .loss
        .iter()
        .enumerate()
        .map(|(epoch, &loss)| EpochRecord {
            fold: 0,
            epoch,
            split: "pretrain",
            loss,
            accuracy: (epoch == last).then_some(history.accuracy),
            seconds: 0.0,
        })
        .collect();
    harness::write_metrics_csv(&out.join("metrics.csv"), &records, false)?;
    log::info!(
        "pretraining loss {:.3} -> {:.3}, node accuracy {:.4}",
        history.loss[0],
        history.loss[last],
        history.accuracy
    );
    Ok(())
}

fn train(cfg: &RunConfig, dataset: &Dataset, out: &Path) -> Result<()> {
    let mut records = Vec::new();
    let full = harness::train_all(dataset, cfg, |s, _| {
        log::info!(
            "epoch {}: loss {:.4} accuracy {:.4}",
            s.epoch,
            s.loss,
            s.accuracy
        );
        records.push(EpochRecord {
            fold: 0,
            epoch: s.epoch,
            split: "train",
            loss: s.loss,
            accuracy: Some(s.accuracy),
            seconds: s.seconds,
        });
        Ok(())
    })?;
    let (outcome, ev) = (full.outcome, full.evaluation);
    let ckpt = out.join("checkpoints");
    fs::create_dir_all(&ckpt)?;
    outcome.params.save(
        &ckpt.join("model.json"),
        Some(serde_json::json!({ "dataset": dataset.name, "seed": cfg.seed, "config": cfg.to_json() })),
    )?;
    harness::write_metrics_csv(&out.join("metrics.csv"), &records, cfg.record_timing)?;
    write_json(
        &out.join("summary.json"),
        &serde_json::json!({
            "config": cfg.to_json(),
            "dataset": dataset.name,
            "seed": cfg.seed,
            "run_id": harness::run_id(cfg),
            "train_accuracy": ev.accuracy,
            "train_loss": ev.loss,
        }),
    )
}
