//! C ABI for graphlstm.
//!
//! Conventions:
//!
//! - Every fallible function returns a `GlStatus`. On failure a message is
//!   stored for the calling thread and can be read with
//!   `gl_last_error_message`.
//! - Objects are opaque handles created through an out-pointer and released
//!   with the matching `_free` function. Passing NULL to a `_free` function
//!   is a no-op.
//! - Strings handed to the caller are released with `gl_string_free`.
//! - Input strings are NUL-terminated UTF-8. Pointers must be valid for the
//!   duration of the call; handles must come from this library and must not
//!   be used after they are freed.
//! - Panics never cross the boundary; they surface as `GL_STATUS_PANIC`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use graphlstm::autodiff::ParamStore;
use graphlstm::embed::EmbeddingModel;
use graphlstm::harness::{self, Metrics, Outputs};
use graphlstm::{cli, Dataset, Error, RunConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// An argument was out of its domain or shapes did not match.
    Argument = 3,
    /// A configuration value was malformed or out of range.
    Config = 4,
    /// The dataset was missing or malformed.
    Data = 5,
    /// Reading or writing a file failed.
    Io = 6,
    /// A checkpoint was missing entries or malformed.
    Checkpoint = 7,
    /// An index or buffer was too small.
    OutOfRange = 8,
    /// The library panicked; the message holds the panic payload.
    Panic = 9,
}

/// Run configuration.
pub struct GlConfig(RunConfig);

/// A loaded dataset with neighbor sets computed.
pub struct GlDataset(Dataset);

/// Cross-validation results.
pub struct GlMetrics(Metrics);

/// A pretrained node-embedding model.
pub struct GlEmbedding(EmbeddingModel);

/// A trained classifier together with the configuration it was trained with.
pub struct GlModel {
    params: ParamStore,
    config: RunConfig,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct GlDatasetInfo {
    pub num_graphs: usize,
    pub total_nodes: usize,
    /// Size of the node-label alphabet.
    pub num_node_labels: usize,
    pub num_classes: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct GlCvSummary {
    pub mean: f64,
    /// Population standard deviation over folds.
    pub std: f64,
    pub num_folds: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct GlPretrainReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub node_accuracy: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct GlTrainReport {
    pub epochs: usize,
    pub final_loss: f64,
    /// Accuracy on the training graphs under the evaluation protocol.
    pub train_accuracy: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let clean = message.replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(clean).ok());
}

struct Fail(GlStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Config { .. } => GlStatus::Config,
            Error::Checkpoint(_) | Error::Json(_) => GlStatus::Checkpoint,
            Error::Io(_) => GlStatus::Io,
            e if e.is_data_error() => GlStatus::Data,
            _ => GlStatus::Argument,
        };
        Fail(status, e.to_string())
    }
}

type Outcome = Result<(), Fail>;

fn guard(f: impl FnOnce() -> Outcome) -> GlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GlStatus::Ok,
        Ok(Err(Fail(status, message))) => {
            set_last_error(&message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {message}"));
            GlStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(GlStatus::NullPointer, format!("{name} is NULL")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(GlStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    p.as_ref()
        .ok_or_else(|| Fail(GlStatus::NullPointer, format!("{name} is NULL")))
}

unsafe fn mut_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    p.as_mut()
        .ok_or_else(|| Fail(GlStatus::NullPointer, format!("{name} is NULL")))
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Outcome {
    if out.is_null() {
        return Err(Fail(GlStatus::NullPointer, "output pointer is NULL".into()));
    }
    out.write(value);
    Ok(())
}

unsafe fn write_handle<T>(out: *mut *mut T, value: T) -> Outcome {
    if out.is_null() {
        return Err(Fail(GlStatus::NullPointer, "output pointer is NULL".into()));
    }
    out.write(Box::into_raw(Box::new(value)));
    Ok(())
}

unsafe fn free_handle<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

fn to_c_string(s: String) -> Result<*mut c_char, Fail> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Fail(GlStatus::Argument, "string contains NUL".into()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn gl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Releases a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn gl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Default configuration.
#[no_mangle]
pub unsafe extern "C" fn gl_config_default(out: *mut *mut GlConfig) -> GlStatus {
    guard(|| write_handle(out, GlConfig(RunConfig::default())))
}

/// Parses a flat JSON configuration; absent keys take their defaults.
#[no_mangle]
pub unsafe extern "C" fn gl_config_from_json(
    json: *const c_char,
    out: *mut *mut GlConfig,
) -> GlStatus {
    guard(|| {
        let cfg = RunConfig::from_json_str(str_arg(json, "json")?)?;
        write_handle(out, GlConfig(cfg))
    })
}

/// Sets one key from a JSON value, e.g. `("d", "64")` or
/// `("ordering", "\"bfs\"")`. A value that is not JSON is taken as a string.
#[no_mangle]
pub unsafe extern "C" fn gl_config_set(
    cfg: *mut GlConfig,
    key: *const c_char,
    value: *const c_char,
) -> GlStatus {
    guard(|| {
        let cfg = mut_arg(cfg, "cfg")?;
        let key = str_arg(key, "key")?;
        let raw = str_arg(value, "value")?;
        let value =
            serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.into()));
        let mut doc = cfg.0.to_json();
        doc[key] = value;
        cfg.0 = RunConfig::from_json_str(&doc.to_string())?;
        Ok(())
    })
}

/// Serializes the configuration as JSON; free the result with
/// `gl_string_free`.
#[no_mangle]
pub unsafe extern "C" fn gl_config_to_json(
    cfg: *const GlConfig,
    out: *mut *mut c_char,
) -> GlStatus {
    guard(|| {
        let cfg = ref_arg(cfg, "cfg")?;
        let text = serde_json::to_string_pretty(&cfg.0.to_json()).map_err(Error::from)?;
        write_out(out, to_c_string(text)?)
    })
}

#[no_mangle]
pub unsafe extern "C" fn gl_config_free(cfg: *mut GlConfig) {
    free_handle(cfg);
}

/// Loads a TU dataset directory, applying the configured node cap and
/// computing the neighbor sets the configuration needs.
#[no_mangle]
pub unsafe extern "C" fn gl_dataset_load(
    dir: *const c_char,
    cfg: *const GlConfig,
    out: *mut *mut GlDataset,
) -> GlStatus {
    guard(|| {
        let dir = str_arg(dir, "dir")?;
        let cfg = ref_arg(cfg, "cfg")?;
        let ds = cli::load_dataset(Path::new(dir), &cfg.0)?;
        write_handle(out, GlDataset(ds))
    })
}

#[no_mangle]
pub unsafe extern "C" fn gl_dataset_info(
    ds: *const GlDataset,
    out: *mut GlDatasetInfo,
) -> GlStatus {
    guard(|| {
        let ds = &ref_arg(ds, "dataset")?.0;
        write_out(
            out,
            GlDatasetInfo {
                num_graphs: ds.len(),
                total_nodes: ds.total_nodes(),
                num_node_labels: ds.k,
                num_classes: ds.num_classes,
            },
        )
    })
}

/// Dense class index of graph `index`.
#[no_mangle]
pub unsafe extern "C" fn gl_dataset_graph_label(
    ds: *const GlDataset,
    index: usize,
    out: *mut usize,
) -> GlStatus {
    guard(|| {
        let ds = &ref_arg(ds, "dataset")?.0;
        let g = ds.graphs.get(index).ok_or_else(|| {
            Fail(
                GlStatus::OutOfRange,
                format!("graph {index} of {}", ds.len()),
            )
        })?;
        write_out(out, g.label())
    })
}

#[no_mangle]
pub unsafe extern "C" fn gl_dataset_free(ds: *mut GlDataset) {
    free_handle(ds);
}

/// Stratified k-fold cross-validation.
#[no_mangle]
pub unsafe extern "C" fn gl_cross_validate(
    ds: *const GlDataset,
    cfg: *const GlConfig,
    out: *mut *mut GlMetrics,
) -> GlStatus {
    guard(|| {
        let ds = &ref_arg(ds, "dataset")?.0;
        let cfg = &ref_arg(cfg, "cfg")?.0;
        let metrics = harness::cross_validate(ds, cfg, Outputs { checkpoints: None })?;
        write_handle(out, GlMetrics(metrics))
    })
}

#[no_mangle]
pub unsafe extern "C" fn gl_metrics_summary(
    m: *const GlMetrics,
    out: *mut GlCvSummary,
) -> GlStatus {
    guard(|| {
        let m = &ref_arg(m, "metrics")?.0;
        write_out(
            out,
            GlCvSummary {
                mean: m.mean,
                std: m.std,
                num_folds: m.per_fold_accuracy.len(),
            },
        )
    })
}

#[no_mangle]
pub unsafe extern "C" fn gl_metrics_fold_accuracy(
    m: *const GlMetrics,
    fold: usize,
    out: *mut f64,
) -> GlStatus {
    guard(|| {
        let m = &ref_arg(m, "metrics")?.0;
        let acc = m.per_fold_accuracy.get(fold).ok_or_else(|| {
            Fail(
                GlStatus::OutOfRange,
                format!("fold {fold} of {}", m.per_fold_accuracy.len()),
            )
        })?;
        write_out(out, *acc)
    })
}

/// Writes summary.json and metrics.csv into `dir`.
#[no_mangle]
pub unsafe extern "C" fn gl_metrics_write(m: *const GlMetrics, dir: *const c_char) -> GlStatus {
    guard(|| {
        let m = &ref_arg(m, "metrics")?.0;
        let dir = Path::new(str_arg(dir, "dir")?);
        std::fs::create_dir_all(dir).map_err(Error::from)?;
        harness::write_run(dir, m)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn gl_metrics_free(m: *mut GlMetrics) {
    free_handle(m);
}

/// Pretrains node embeddings on every graph. `report` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn gl_pretrain(
    ds: *const GlDataset,
    cfg: *const GlConfig,
    out: *mut *mut GlEmbedding,
    report: *mut GlPretrainReport,
) -> GlStatus {
    guard(|| {
        let ds = &ref_arg(ds, "dataset")?.0;
        let cfg = &ref_arg(cfg, "cfg")?.0;
        let (model, history) = harness::pretrain_all(ds, cfg)?;
        if !report.is_null() {
            write_out(
                report,
                GlPretrainReport {
                    initial_loss: history.loss[0],
                    final_loss: *history.loss.last().expect("initial loss present"),
                    node_accuracy: history.accuracy,
                },
            )?;
        }
        write_handle(out, GlEmbedding(model))
    })
}

/// Shape of the embedding matrix `E` (node labels × dimension).
#[no_mangle]
pub unsafe extern "C" fn gl_embedding_shape(
    e: *const GlEmbedding,
    rows: *mut usize,
    cols: *mut usize,
) -> GlStatus {
    guard(|| {
        let e = ref_arg(e, "embedding")?.0.embedding();
        write_out(rows, e.nrows())?;
        write_out(cols, e.ncols())
    })
}

/// Copies `E` row-major into `buf`, which must hold rows × cols doubles.
#[no_mangle]
pub unsafe extern "C" fn gl_embedding_copy(
    e: *const GlEmbedding,
    buf: *mut f64,
    len: usize,
) -> GlStatus {
    guard(|| {
        let e = ref_arg(e, "embedding")?.0.embedding();
        if buf.is_null() {
            return Err(Fail(GlStatus::NullPointer, "buf is NULL".into()));
        }
        if len < e.len() {
            return Err(Fail(
                GlStatus::OutOfRange,
                format!("buffer holds {len}, need {}", e.len()),
            ));
        }
        for (i, &v) in e.iter().enumerate() {
            buf.add(i).write(v);
        }
        Ok(())
    })
}

/// Saves the embedding model as JSON with keys `E`, `w`, the predictor
/// weights and `metadata`.
#[no_mangle]
pub unsafe extern "C" fn gl_embedding_save(e: *const GlEmbedding, path: *const c_char) -> GlStatus {
    guard(|| {
        let e = &ref_arg(e, "embedding")?.0;
        e.save(Path::new(str_arg(path, "path")?))?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn gl_embedding_free(e: *mut GlEmbedding) {
    free_handle(e);
}

/// Trains on every graph of the dataset. `report` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn gl_train(
    ds: *const GlDataset,
    cfg: *const GlConfig,
    out: *mut *mut GlModel,
    report: *mut GlTrainReport,
) -> GlStatus {
    guard(|| {
        let ds = &ref_arg(ds, "dataset")?.0;
        let cfg = &ref_arg(cfg, "cfg")?.0;
        let full = harness::train_all(ds, cfg, |_, _| Ok(()))?;
        if !report.is_null() {
            write_out(
                report,
                GlTrainReport {
                    epochs: full.outcome.epochs.len(),
                    final_loss: full.outcome.epochs.last().map_or(f64::NAN, |e| e.loss),
                    train_accuracy: full.evaluation.accuracy,
                },
            )?;
        }
        write_handle(
            out,
            GlModel {
                params: full.outcome.params,
                config: cfg.clone(),
            },
        )
    })
}

/// Saves parameters with the training configuration in the metadata.
#[no_mangle]
pub unsafe extern "C" fn gl_model_save(m: *const GlModel, path: *const c_char) -> GlStatus {
    guard(|| {
        let m = ref_arg(m, "model")?;
        let meta = serde_json::json!({ "config": m.config.to_json() });
        m.params
            .save(Path::new(str_arg(path, "path")?), Some(meta))?;
        Ok(())
    })
}

/// Loads a model saved by `gl_model_save` or the `train` command.
#[no_mangle]
pub unsafe extern "C" fn gl_model_load(path: *const c_char, out: *mut *mut GlModel) -> GlStatus {
    guard(|| {
        let (params, meta) = ParamStore::load(Path::new(str_arg(path, "path")?))?;
        let config = meta
            .as_ref()
            .and_then(|m| m.get("config"))
            .ok_or_else(|| Error::Checkpoint("metadata has no config".into()))?;
        let config = RunConfig::from_json_str(&config.to_string())?;
        write_handle(out, GlModel { params, config })
    })
}

/// Class probabilities of graph `index`, averaged over the configured
/// number of walk samples drawn from `seed`. Writes `num_classes` values
/// into `probs` and the count into `written` (which may be NULL).
#[no_mangle]
pub unsafe extern "C" fn gl_model_predict(
    m: *const GlModel,
    ds: *const GlDataset,
    index: usize,
    seed: u64,
    probs: *mut f64,
    capacity: usize,
    written: *mut usize,
) -> GlStatus {
    guard(|| {
        let m = ref_arg(m, "model")?;
        let ds = &ref_arg(ds, "dataset")?.0;
        let g = ds.graphs.get(index).ok_or_else(|| {
            Fail(
                GlStatus::OutOfRange,
                format!("graph {index} of {}", ds.len()),
            )
        })?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ev = harness::evaluate(
            &m.params,
            &[g],
            &m.config,
            m.config.num_eval_samples,
            &mut rng,
        )?;
        let p = &ev.predictions[0];
        if probs.is_null() {
            return Err(Fail(GlStatus::NullPointer, "probs is NULL".into()));
        }
        if capacity < p.len() {
            return Err(Fail(
                GlStatus::OutOfRange,
                format!("buffer holds {capacity}, need {}", p.len()),
            ));
        }
        for (i, &v) in p.iter().enumerate() {
            probs.add(i).write(v);
        }
        if !written.is_null() {
            written.write(p.len());
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn gl_model_free(m: *mut GlModel) {
    free_handle(m);
}
