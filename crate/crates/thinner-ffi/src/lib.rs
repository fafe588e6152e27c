//! C ABI for the thinner library.
//!
//! Every function returns a [`ThinnerStatus`]. On any non-`Ok` status a
//! thread-local message reachable through [`thinner_last_error`] describes
//! what went wrong, and out-parameters are left untouched. Handles handed
//! back through `out` pointers own their contents and must be released with
//! the matching `*_free` function exactly once; passing them to any other
//! function after that is undefined behaviour, as with any C library.
//!
//! The companion header `include/thinner.h` is generated from this file at
//! build time.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use thinner::data::{generate_synthetic, load_idx, Dataset, SyntheticSpec};
use thinner::network::{evaluate, load_model, save_model, Model};
use thinner::pruning::{
    prune_gradually_global, prune_layer_sequential, prune_layerwise_gradual, PruneConfig, Scheme,
};
use thinner::scoring::{dump_scores, score_model, Metric};
use thinner::Error;

/// Result of every call in this library.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThinnerStatus {
    /// The call succeeded and its out-parameters are valid.
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// The operating system reported an I/O failure.
    Io = 3,
    /// A file was read but its contents are not what they claim to be
    /// (bad magic, bad checksum, truncation, unsupported version).
    Format = 4,
    /// An argument value was invalid: unparseable JSON, an unknown metric
    /// or scheme name, or a configuration field out of range.
    InvalidArgument = 5,
    /// The request is structurally impossible, e.g. it would thin a layer
    /// below its floor.
    Infeasible = 6,
    /// Any other failure; the error message has the details.
    Internal = 7,
}

/// Opaque handle to a model.
pub struct ThinnerModel {
    inner: Model,
}

/// Opaque handle to a dataset held in memory.
pub struct ThinnerDataset {
    inner: Dataset,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn fail(status: ThinnerStatus, message: &str) -> ThinnerStatus {
    let message = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(message).unwrap_or_default();
    });
    status
}

fn fail_with(e: &Error) -> ThinnerStatus {
    fail(status_of(e), &e.to_string())
}

fn status_of(e: &Error) -> ThinnerStatus {
    match e {
        Error::Io(_) => ThinnerStatus::Io,
        Error::Json(_)
        | Error::Config(_)
        | Error::UnknownTask(_)
        | Error::DegenerateSplit { .. } => ThinnerStatus::InvalidArgument,
        Error::Checksum(_)
        | Error::ModelFormat(_)
        | Error::ModelVersion { .. }
        | Error::IdxMagic { .. }
        | Error::CountMismatch { .. }
        | Error::Truncated { .. } => ThinnerStatus::Format,
        Error::InfeasibleSelection { .. } | Error::FloorViolation { .. } => {
            ThinnerStatus::Infeasible
        }
        _ => ThinnerStatus::Internal,
    }
}

fn guarded<F: FnOnce() -> ThinnerStatus>(f: F) -> ThinnerStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(ThinnerStatus::Internal, "internal panic"),
    }
}

/// # Safety
/// `ptr` must be null or point to a nul-terminated string.
unsafe fn required_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, ThinnerStatus> {
    if ptr.is_null() {
        return Err(fail(ThinnerStatus::NullPointer, &format!("{what} is null")));
    }
    unsafe { CStr::from_ptr(ptr) }.to_str().map_err(|_| {
        fail(
            ThinnerStatus::InvalidUtf8,
            &format!("{what} is not valid UTF-8"),
        )
    })
}

/// # Safety
/// `ptr` must be null or valid for reads of `T`.
unsafe fn required_ref<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, ThinnerStatus> {
    unsafe { ptr.as_ref() }
        .ok_or_else(|| fail(ThinnerStatus::NullPointer, &format!("{what} is null")))
}

fn required_out<T>(ptr: *mut T, what: &str) -> Result<(), ThinnerStatus> {
    if ptr.is_null() {
        Err(fail(ThinnerStatus::NullPointer, &format!("{what} is null")))
    } else {
        Ok(())
    }
}

macro_rules! try_status {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(status) => return status,
        }
    };
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn thinner_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the most recent failure on the calling thread. Never null;
/// empty when nothing has failed yet. The pointer stays valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn thinner_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

// --- models -----------------------------------------------------------------

/// Loads a model file and stores a new handle in `*out`.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn thinner_model_load(
    path: *const c_char,
    out: *mut *mut ThinnerModel,
) -> ThinnerStatus {
    guarded(|| {
        let path = try_status!(unsafe { required_str(path, "path") });
        try_status!(required_out(out, "out"));
        match load_model(Path::new(path)) {
            Ok(model) => {
                unsafe { *out = Box::into_raw(Box::new(ThinnerModel { inner: model })) };
                ThinnerStatus::Ok
            }
            Err(e) => fail_with(&e),
        }
    })
}

/// Writes the model to `path` (atomically: temp file plus rename).
///
/// # Safety
/// `model` must be a live handle; `path` must be a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn thinner_model_save(
    model: *const ThinnerModel,
    path: *const c_char,
) -> ThinnerStatus {
    guarded(|| {
        let model = try_status!(unsafe { required_ref(model, "model") });
        let path = try_status!(unsafe { required_str(path, "path") });
        match save_model(&model.inner, Path::new(path)) {
            Ok(()) => ThinnerStatus::Ok,
            Err(e) => fail_with(&e),
        }
    })
}

/// Releases a model handle. Passing null is a no-op.
///
/// # Safety
/// `model` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn thinner_model_free(model: *mut ThinnerModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Stores the number of prunable neurons in `*out`.
///
/// # Safety
/// `model` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn thinner_model_prunable_neurons(
    model: *const ThinnerModel,
    out: *mut usize,
) -> ThinnerStatus {
    guarded(|| {
        let model = try_status!(unsafe { required_ref(model, "model") });
        try_status!(required_out(out, "out"));
        unsafe { *out = model.inner.total_prunable() };
        ThinnerStatus::Ok
    })
}

/// Stores the number of layers in `*out`.
///
/// # Safety
/// `model` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn thinner_model_layer_count(
    model: *const ThinnerModel,
    out: *mut usize,
) -> ThinnerStatus {
    guarded(|| {
        let model = try_status!(unsafe { required_ref(model, "model") });
        try_status!(required_out(out, "out"));
        unsafe { *out = model.inner.layers().len() };
        ThinnerStatus::Ok
    })
}

/// Stores the total scalar parameter count in `*out`.
///
/// # Safety
/// `model` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn thinner_model_param_count(
    model: *const ThinnerModel,
    out: *mut usize,
) -> ThinnerStatus {
    guarded(|| {
        let model = try_status!(unsafe { required_ref(model, "model") });
        try_status!(required_out(out, "out"));
        unsafe { *out = model.inner.param_count() };
        ThinnerStatus::Ok
    })
}

// --- datasets ---------------------------------------------------------------

/// Loads an IDX image/label file pair and stores a new handle in `*out`.
///
/// # Safety
/// `images` and `labels` must be nul-terminated strings; `out` must be
/// valid for writes.
#[no_mangle]
pub unsafe extern "C" fn thinner_dataset_load_idx(
    images: *const c_char,
    labels: *const c_char,
    out: *mut *mut ThinnerDataset,
) -> ThinnerStatus {
    guarded(|| {
        let images = try_status!(unsafe { required_str(images, "images") });
        let labels = try_status!(unsafe { required_str(labels, "labels") });
        try_status!(required_out(out, "out"));
        match load_idx(Path::new(images), Path::new(labels)) {
            Ok(data) => {
                unsafe { *out = Box::into_raw(Box::new(ThinnerDataset { inner: data })) };
                ThinnerStatus::Ok
            }
            Err(e) => fail_with(&e),
        }
    })
}

/// Generates a synthetic dataset and stores a new handle in `*out`.
///
/// `spec_json` describes the task, e.g.
/// `{"task": "bars", "classes": 2, "shape": [1, 16, 16], "noise": 0.1}`.
/// Generation is deterministic in (`spec_json`, `n`, `seed`).
///
/// # Safety
/// `spec_json` must be a nul-terminated string; `out` must be valid for
/// writes.
#[no_mangle]
pub unsafe extern "C" fn thinner_dataset_synthetic(
    spec_json: *const c_char,
    n: usize,
    seed: u64,
    out: *mut *mut ThinnerDataset,
) -> ThinnerStatus {
    guarded(|| {
        let spec_json = try_status!(unsafe { required_str(spec_json, "spec_json") });
        try_status!(required_out(out, "out"));
        let spec: SyntheticSpec = match serde_json::from_str(spec_json) {
            Ok(spec) => spec,
            Err(e) => return fail_with(&Error::from(e)),
        };
        match generate_synthetic(&spec, n, seed) {
            Ok(data) => {
                unsafe { *out = Box::into_raw(Box::new(ThinnerDataset { inner: data })) };
                ThinnerStatus::Ok
            }
            Err(e) => fail_with(&e),
        }
    })
}

/// Releases a dataset handle. Passing null is a no-op.
///
/// # Safety
/// `dataset` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn thinner_dataset_free(dataset: *mut ThinnerDataset) {
    if !dataset.is_null() {
        drop(unsafe { Box::from_raw(dataset) });
    }
}

/// Stores the number of samples in `*out`.
///
/// # Safety
/// `dataset` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn thinner_dataset_len(
    dataset: *const ThinnerDataset,
    out: *mut usize,
) -> ThinnerStatus {
    guarded(|| {
        let dataset = try_status!(unsafe { required_ref(dataset, "dataset") });
        try_status!(required_out(out, "out"));
        unsafe { *out = dataset.inner.len() };
        ThinnerStatus::Ok
    })
}

/// Stores the number of classes in `*out`.
///
/// # Safety
/// `dataset` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn thinner_dataset_classes(
    dataset: *const ThinnerDataset,
    out: *mut usize,
) -> ThinnerStatus {
    guarded(|| {
        let dataset = try_status!(unsafe { required_ref(dataset, "dataset") });
        try_status!(required_out(out, "out"));
        unsafe { *out = dataset.inner.classes() };
        ThinnerStatus::Ok
    })
}

// --- evaluation, scoring, pruning -------------------------------------------

/// Stores the model's classification accuracy on the dataset in
/// `*out_accuracy` (a fraction in `[0, 1]`).
///
/// # Safety
/// `model` and `dataset` must be live handles; `out_accuracy` must be valid
/// for writes.
#[no_mangle]
pub unsafe extern "C" fn thinner_evaluate(
    model: *const ThinnerModel,
    dataset: *const ThinnerDataset,
    out_accuracy: *mut f64,
) -> ThinnerStatus {
    guarded(|| {
        let model = try_status!(unsafe { required_ref(model, "model") });
        let dataset = try_status!(unsafe { required_ref(dataset, "dataset") });
        try_status!(required_out(out_accuracy, "out_accuracy"));
        match evaluate(&model.inner, &dataset.inner) {
            Ok(accuracy) => {
                unsafe { *out_accuracy = accuracy };
                ThinnerStatus::Ok
            }
            Err(e) => fail_with(&e),
        }
    })
}

/// Scores every prunable neuron with the named metric (`"mean"`, `"std"`
/// or `"aaws"`) and writes the table as CSV to `path`.
///
/// # Safety
/// `model` and `dataset` must be live handles; `metric` and `path` must be
/// nul-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn thinner_dump_scores(
    model: *const ThinnerModel,
    dataset: *const ThinnerDataset,
    metric: *const c_char,
    path: *const c_char,
) -> ThinnerStatus {
    guarded(|| {
        let model = try_status!(unsafe { required_ref(model, "model") });
        let dataset = try_status!(unsafe { required_ref(dataset, "dataset") });
        let metric = try_status!(unsafe { required_str(metric, "metric") });
        let path = try_status!(unsafe { required_str(path, "path") });
        let metric: Metric = match metric.parse() {
            Ok(metric) => metric,
            Err(e) => return fail_with(&e),
        };
        let table = match score_model(&model.inner, metric, &dataset.inner) {
            Ok(table) => table,
            Err(e) => return fail_with(&e),
        };
        match dump_scores(&table, Path::new(path)) {
            Ok(()) => ThinnerStatus::Ok,
            Err(e) => fail_with(&e),
        }
    })
}

/// Prunes a copy of the model and stores the thinned copy in `*out`; the
/// input handle is left as it was.
///
/// `scheme` is `"global"`, `"layerwise"` or `"sequential"` (the sequential
/// scheme reads the configured ratio as a per-layer fraction).
/// `config_json` is a JSON object with the same fields as the library's
/// pruning configuration; missing fields take their defaults, so `"{}"` is
/// accepted. When the config names an artifact directory, per-round
/// checkpoints, score dumps and the report files are written there.
///
/// # Safety
/// `model`, `train_set` and `val_set` must be live handles; `scheme` and
/// `config_json` must be nul-terminated strings; `out` must be valid for
/// writes.
#[no_mangle]
pub unsafe extern "C" fn thinner_prune(
    model: *const ThinnerModel,
    train_set: *const ThinnerDataset,
    val_set: *const ThinnerDataset,
    scheme: *const c_char,
    config_json: *const c_char,
    out: *mut *mut ThinnerModel,
) -> ThinnerStatus {
    guarded(|| {
        let model = try_status!(unsafe { required_ref(model, "model") });
        let train_set = try_status!(unsafe { required_ref(train_set, "train_set") });
        let val_set = try_status!(unsafe { required_ref(val_set, "val_set") });
        let scheme = try_status!(unsafe { required_str(scheme, "scheme") });
        let config_json = try_status!(unsafe { required_str(config_json, "config_json") });
        try_status!(required_out(out, "out"));
        let scheme: Scheme = match scheme.parse() {
            Ok(scheme) => scheme,
            Err(e) => return fail_with(&e),
        };
        let config: PruneConfig = match serde_json::from_str(config_json) {
            Ok(config) => config,
            Err(e) => return fail_with(&Error::from(e)),
        };
        let start = model.inner.clone();
        let result = match scheme {
            Scheme::Global => {
                prune_gradually_global(start, &train_set.inner, &val_set.inner, &config)
            }
            Scheme::Layerwise => {
                prune_layerwise_gradual(start, &train_set.inner, &val_set.inner, &config)
            }
            Scheme::Sequential => prune_layer_sequential(
                start,
                &train_set.inner,
                &val_set.inner,
                config.ratio,
                &config,
            ),
        };
        match result {
            Ok((pruned, _report)) => {
                unsafe { *out = Box::into_raw(Box::new(ThinnerModel { inner: pruned })) };
                ThinnerStatus::Ok
            }
            Err(e) => fail_with(&e),
        }
    })
}
