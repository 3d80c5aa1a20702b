//! C ABI over the `dgcnn` crate.
//!
//! Every fallible call returns a [`DgcnnStatus`]; on failure the message is
//! available from [`dgcnn_last_error`] on the same thread. Models live
//! behind the opaque [`DgcnnClassifier`] handle, created by one of the
//! constructors and released with [`dgcnn_classifier_free`]. Coordinates
//! cross the boundary as row-major `double` arrays.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use dgcnn::config::{RunConfig, Task};
use dgcnn::graph::knn_graph;
use dgcnn::models::{Classifier, ClassifierConfig};
use dgcnn::{Error, FeatureMatrix, Real};

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DgcnnStatus {
    Ok = 0,
    NullPointer = 1,
    /// Bad argument value or configuration.
    InvalidArgument = 2,
    /// Array sizes or feature widths do not fit the model.
    Dimension = 3,
    /// Non-finite input or output.
    Numeric = 4,
    Io = 5,
    /// Checkpoint does not match the model.
    Checkpoint = 6,
    /// Malformed data or configuration file.
    Data = 7,
    /// A Rust panic was caught at the boundary.
    Panic = 8,
}

/// Opaque classifier handle.
pub struct DgcnnClassifier {
    model: Classifier,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("interior nul bytes were replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

struct Failure(DgcnnStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Parameter(_) | Error::Config(_) | Error::Index(_) | Error::Contract(_) => {
                DgcnnStatus::InvalidArgument
            }
            Error::Dimension(_) => DgcnnStatus::Dimension,
            Error::Numeric(_) => DgcnnStatus::Numeric,
            Error::Io { .. } => DgcnnStatus::Io,
            Error::Checkpoint(_) => DgcnnStatus::Checkpoint,
            Error::Data(_) | Error::Parse { .. } | Error::DegenerateBatch(_) => DgcnnStatus::Data,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: DgcnnStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

/// Runs `f`, recording any error or panic for [`dgcnn_last_error`].
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DgcnnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DgcnnStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            DgcnnStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(fail(DgcnnStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    non_null(p, what)?;
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(DgcnnStatus::InvalidArgument, format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

/// Copies `n × f` doubles into a feature matrix.
unsafe fn cloud_arg(points: *const f64, n: usize, f: usize) -> Result<FeatureMatrix, Failure> {
    non_null(points, "points")?;
    let len = n
        .checked_mul(f)
        .ok_or_else(|| fail(DgcnnStatus::Dimension, "n × f overflows"))?;
    let values = std::slice::from_raw_parts(points, len).iter().map(|&v| v as Real).collect();
    Ok(FeatureMatrix::new(n, f, values)?)
}

unsafe fn store_handle(out: *mut *mut DgcnnClassifier, model: Classifier) {
    *out = Box::into_raw(Box::new(DgcnnClassifier { model }));
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dgcnn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dgcnn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Fresh classifier with the reduced desk-scale widths.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn dgcnn_classifier_new_desk(
    num_classes: usize,
    seed: u64,
    out: *mut *mut DgcnnClassifier,
) -> DgcnnStatus {
    guard(|| {
        non_null(out, "out")?;
        let model = Classifier::new(ClassifierConfig::desk(num_classes), seed)?;
        store_handle(out, model);
        Ok(())
    })
}

/// Classifier described by a run configuration file (for example the
/// `config.resolved.toml` written by `dgcnn train`) with weights read from
/// `checkpoint`. `checkpoint` may be NULL to keep the seeded initial weights.
///
/// # Safety
/// `config_path` must be a NUL-terminated string, `checkpoint` NULL or a
/// NUL-terminated string, and `out` valid for one handle.
#[no_mangle]
pub unsafe extern "C" fn dgcnn_classifier_open(
    config_path: *const c_char,
    checkpoint: *const c_char,
    out: *mut *mut DgcnnClassifier,
) -> DgcnnStatus {
    guard(|| {
        non_null(out, "out")?;
        let config = path_arg(config_path, "config_path")?;
        let cfg = RunConfig::resolve(Some(&config), &[])?;
        if cfg.task != Task::Classification {
            return Err(fail(DgcnnStatus::InvalidArgument, "configuration is not a classification run"));
        }
        let mut model = Classifier::new(cfg.classifier, cfg.seed)?;
        if !checkpoint.is_null() {
            model.store.load(&path_arg(checkpoint, "checkpoint")?)?;
        }
        store_handle(out, model);
        Ok(())
    })
}

/// Replaces the handle's weights with a checkpoint of the same architecture.
///
/// # Safety
/// `handle` must come from a constructor and not be freed; `path` must be
/// a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dgcnn_classifier_load(handle: *mut DgcnnClassifier, path: *const c_char) -> DgcnnStatus {
    guard(|| {
        non_null(handle, "handle")?;
        let path = path_arg(path, "path")?;
        (*handle).model.store.load(&path)?;
        Ok(())
    })
}

/// Writes the handle's weights as a checkpoint.
///
/// # Safety
/// As for [`dgcnn_classifier_load`].
#[no_mangle]
pub unsafe extern "C" fn dgcnn_classifier_save(handle: *const DgcnnClassifier, path: *const c_char) -> DgcnnStatus {
    guard(|| {
        non_null(handle, "handle")?;
        let path = path_arg(path, "path")?;
        (*handle).model.store.save(&path)?;
        Ok(())
    })
}

/// Number of logits per cloud; 0 for a NULL handle.
///
/// # Safety
/// `handle` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dgcnn_classifier_num_classes(handle: *const DgcnnClassifier) -> usize {
    if handle.is_null() {
        0
    } else {
        (*handle).model.config.num_classes
    }
}

/// Evaluation-mode logits of one cloud of `n` points with `dim` channels.
/// `out` receives `out_len` doubles, which must equal the class count.
///
/// # Safety
/// `handle` must be live, `points` readable for `n·dim` doubles and `out`
/// writable for `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn dgcnn_classifier_logits(
    handle: *const DgcnnClassifier,
    points: *const f64,
    n: usize,
    dim: usize,
    out: *mut f64,
    out_len: usize,
) -> DgcnnStatus {
    guard(|| {
        non_null(handle, "handle")?;
        non_null(out, "out")?;
        let model = &(*handle).model;
        if out_len != model.config.num_classes {
            return Err(fail(
                DgcnnStatus::Dimension,
                format!("out holds {out_len} values, the model has {} classes", model.config.num_classes),
            ));
        }
        let cloud = cloud_arg(points, n, dim)?;
        let logits = model.logits(&cloud)?;
        for (i, v) in logits.into_iter().enumerate() {
            *out.add(i) = v as f64;
        }
        Ok(())
    })
}

/// Most likely class of one cloud.
///
/// # Safety
/// As for [`dgcnn_classifier_logits`]; `class_out` writable for one value.
#[no_mangle]
pub unsafe extern "C" fn dgcnn_classifier_predict(
    handle: *const DgcnnClassifier,
    points: *const f64,
    n: usize,
    dim: usize,
    class_out: *mut usize,
) -> DgcnnStatus {
    guard(|| {
        non_null(handle, "handle")?;
        non_null(class_out, "class_out")?;
        let cloud = cloud_arg(points, n, dim)?;
        *class_out = (*handle).model.predict(&cloud)?;
        Ok(())
    })
}

/// Releases a handle. NULL is ignored.
///
/// # Safety
/// `handle` must be NULL or a live handle, and is dangling afterwards.
#[no_mangle]
pub unsafe extern "C" fn dgcnn_classifier_free(handle: *mut DgcnnClassifier) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// k nearest neighbours of every point by squared Euclidean distance, ties
/// to the lower index. Row `i` of `out` (length `n·k`) lists the neighbours
/// of point `i`, nearest first. With `self_loop` the point counts as its
/// own nearest neighbour.
///
/// # Safety
/// `points` readable for `n·f` doubles, `out` writable for `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn dgcnn_knn_graph(
    points: *const f64,
    n: usize,
    f: usize,
    k: usize,
    self_loop: bool,
    out: *mut usize,
    out_len: usize,
) -> DgcnnStatus {
    guard(|| {
        non_null(out, "out")?;
        if Some(out_len) != n.checked_mul(k) {
            return Err(fail(DgcnnStatus::Dimension, format!("out holds {out_len} indices, need n·k = {n}·{k}")));
        }
        let cloud = cloud_arg(points, n, f)?;
        let graph = knn_graph(&cloud, k, self_loop)?;
        ptr::copy_nonoverlapping(graph.neighbors().as_ptr(), out, out_len);
        Ok(())
    })
}
