//! C interface to the leafbench harness.
//!
//! Every fallible function returns `LB_OK` or a nonzero error code and
//! stores a message retrievable with [`lb_last_error_message`]. Objects are
//! handed out as opaque pointers and released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use leafbench::dataset::{class_distribution, load_manifest, ClassRegistry, DatasetManifest};
use leafbench::experiment::{self, ExperimentConfig};
use leafbench::metrics::{classification_report, confusion_matrix_k, summarize, ConfusionMatrix};
use leafbench::model_zoo::{adapt_head, Architecture, ArchitectureSpec, BackboneScale, ModelHandle};
use leafbench::nn::{Shape, Tensor};
use leafbench::splitter::{stratified_split, write_split_files, SplitAssignment, SplitKind, SplitSpec};
use leafbench::Error;

pub const LB_OK: i32 = 0;
pub const LB_ERR_NULL_POINTER: i32 = 1;
pub const LB_ERR_INVALID_UTF8: i32 = 2;
pub const LB_ERR_BUFFER_TOO_SMALL: i32 = 3;
pub const LB_ERR_PANIC: i32 = 99;

pub const LB_SPLIT_TRAIN: i32 = 0;
pub const LB_SPLIT_VAL: i32 = 1;
pub const LB_SPLIT_TEST: i32 = 2;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum Failure {
    Core(Error),
    Ffi(i32, String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            LB_OK
        }
        Ok(Err(Failure::Core(e))) => {
            set_last_error(e.to_string());
            e.code()
        }
        Ok(Err(Failure::Ffi(code, msg))) => {
            set_last_error(msg);
            code
        }
        Err(_) => {
            set_last_error("internal panic".into());
            LB_ERR_PANIC
        }
    }
}

fn null(what: &str) -> Failure {
    Failure::Ffi(LB_ERR_NULL_POINTER, format!("{what} is null"))
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn as_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Ffi(LB_ERR_INVALID_UTF8, format!("{what} is not UTF-8")))
}

unsafe fn put<T>(out: *mut *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

fn to_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).map_or(ptr::null_mut(), CString::into_raw)
}

/// Message of the last failed call on this thread, or NULL. The caller
/// owns the returned string and releases it with [`lb_string_free`].
#[no_mangle]
pub extern "C" fn lb_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null_mut(), |c| c.clone().into_raw()))
}

/// # Safety
/// `s` must come from this library and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lb_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version; static storage, do not free.
#[no_mangle]
pub extern "C" fn lb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

pub struct LbManifest {
    inner: DatasetManifest,
}

/// Loads an `image_id,label` manifest with the five-class registry.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn lb_manifest_load(path: *const c_char, out: *mut *mut LbManifest) -> i32 {
    guard(|| {
        let path = PathBuf::from(as_str(path, "path")?);
        let inner = load_manifest(&path, &ClassRegistry::cassava())?;
        put(out, LbManifest { inner }, "out")
    })
}

/// # Safety
/// `m` must be a live manifest handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn lb_manifest_len(m: *const LbManifest) -> usize {
    m.as_ref().map_or(0, |m| m.inner.len())
}

/// Writes the per-class counts into `counts[0..cap]`.
///
/// # Safety
/// `counts` must point to `cap` writable values.
#[no_mangle]
pub unsafe extern "C" fn lb_manifest_class_counts(m: *const LbManifest, counts: *mut usize, cap: usize) -> i32 {
    guard(|| {
        let m = as_ref(m, "manifest")?;
        let dist = class_distribution(&m.inner);
        if counts.is_null() {
            return Err(null("counts"));
        }
        if cap < dist.counts.len() {
            return Err(Failure::Ffi(LB_ERR_BUFFER_TOO_SMALL, format!("need {} slots", dist.counts.len())));
        }
        ptr::copy_nonoverlapping(dist.counts.as_ptr(), counts, dist.counts.len());
        Ok(())
    })
}

/// # Safety
/// `m` must come from [`lb_manifest_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lb_manifest_free(m: *mut LbManifest) {
    free(m)
}

pub struct LbSplit {
    inner: SplitAssignment,
}

/// # Safety
/// `m` must be a live manifest handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn lb_split_stratified(
    m: *const LbManifest,
    train: f64,
    val: f64,
    test: f64,
    seed: u64,
    out: *mut *mut LbSplit,
) -> i32 {
    guard(|| {
        let m = as_ref(m, "manifest")?;
        let spec = SplitSpec::new(train, val, test, seed)?;
        let inner = stratified_split(&m.inner, &spec)?;
        put(out, LbSplit { inner }, "out")
    })
}

fn split_kind(kind: i32) -> Result<SplitKind, Failure> {
    match kind {
        LB_SPLIT_TRAIN => Ok(SplitKind::Train),
        LB_SPLIT_VAL => Ok(SplitKind::Val),
        LB_SPLIT_TEST => Ok(SplitKind::Test),
        other => Err(Failure::Core(Error::InvalidSpec(format!("unknown split kind {other}")))),
    }
}

/// Number of records in split `kind` (`LB_SPLIT_*`), or 0 for a bad handle.
///
/// # Safety
/// `s` must be a live split handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn lb_split_size(s: *const LbSplit, kind: i32) -> usize {
    match (s.as_ref(), split_kind(kind)) {
        (Some(s), Ok(k)) => s.inner.get(k).len(),
        _ => 0,
    }
}

/// Copies the manifest indices of split `kind` into `out[0..cap]`.
///
/// # Safety
/// `out` must point to `cap` writable values.
#[no_mangle]
pub unsafe extern "C" fn lb_split_indices(s: *const LbSplit, kind: i32, out: *mut usize, cap: usize) -> i32 {
    guard(|| {
        let s = as_ref(s, "split")?;
        let idx = s.inner.get(split_kind(kind)?);
        if out.is_null() {
            return Err(null("out"));
        }
        if cap < idx.len() {
            return Err(Failure::Ffi(LB_ERR_BUFFER_TOO_SMALL, format!("need {} slots", idx.len())));
        }
        ptr::copy_nonoverlapping(idx.as_ptr(), out, idx.len());
        Ok(())
    })
}

/// Writes `train.txt`, `val.txt`, `test.txt` and `split.json` into `dir`.
///
/// # Safety
/// Handles must be live and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn lb_split_write_files(s: *const LbSplit, m: *const LbManifest, dir: *const c_char) -> i32 {
    guard(|| {
        let s = as_ref(s, "split")?;
        let m = as_ref(m, "manifest")?;
        let dir = PathBuf::from(as_str(dir, "dir")?);
        write_split_files(&dir, &s.inner, &m.inner)?;
        Ok(())
    })
}

/// # Safety
/// `s` must come from [`lb_split_stratified`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lb_split_free(s: *mut LbSplit) {
    free(s)
}

pub struct LbConfusion {
    inner: ConfusionMatrix,
}

/// Aggregate scores of a confusion matrix.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LbSummary {
    pub accuracy: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    pub macro_f1: f64,
    pub mean_binary_accuracy: f64,
}

/// Counts `n` label pairs over `num_classes` classes.
///
/// # Safety
/// `y_true` and `y_pred` must each point to `n` readable values.
#[no_mangle]
pub unsafe extern "C" fn lb_confusion_new(
    y_true: *const usize,
    y_pred: *const usize,
    n: usize,
    num_classes: usize,
    out: *mut *mut LbConfusion,
) -> i32 {
    guard(|| {
        if y_true.is_null() || y_pred.is_null() {
            return Err(null("labels"));
        }
        let t = std::slice::from_raw_parts(y_true, n);
        let p = std::slice::from_raw_parts(y_pred, n);
        let inner = confusion_matrix_k(t, p, num_classes)?;
        put(out, LbConfusion { inner }, "out")
    })
}

/// Count of samples with true class `truth` predicted as `pred`; 0 when
/// out of range.
///
/// # Safety
/// `cm` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn lb_confusion_get(cm: *const LbConfusion, truth: usize, pred: usize) -> u64 {
    match cm.as_ref() {
        Some(cm) if truth < cm.inner.num_classes() && pred < cm.inner.num_classes() => cm.inner.get(truth, pred),
        _ => 0,
    }
}

/// # Safety
/// `cm` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lb_confusion_summary(cm: *const LbConfusion, out: *mut LbSummary) -> i32 {
    guard(|| {
        let cm = as_ref(cm, "confusion")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let s = summarize(&cm.inner);
        *out = LbSummary {
            accuracy: s.overall_accuracy,
            weighted_precision: s.weighted.precision,
            weighted_recall: s.weighted.recall,
            weighted_f1: s.weighted.f1,
            macro_f1: s.macro_avg.f1,
            mean_binary_accuracy: s.mean_binary_accuracy,
        };
        Ok(())
    })
}

/// Rendered classification report; NULL on a bad handle. Free with
/// [`lb_string_free`].
///
/// # Safety
/// `cm` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn lb_confusion_report(cm: *const LbConfusion) -> *mut c_char {
    let Some(cm) = cm.as_ref() else {
        set_last_error("confusion is null".into());
        return ptr::null_mut();
    };
    let registry = if cm.inner.num_classes() == ClassRegistry::cassava().len() {
        ClassRegistry::cassava()
    } else {
        ClassRegistry::new(
            (0..cm.inner.num_classes())
                .map(|id| leafbench::dataset::ClassEntry {
                    id,
                    code: format!("class{id}"),
                    long_name: format!("class {id}"),
                })
                .collect(),
        )
        .expect("sequential ids")
    };
    to_c_string(classification_report(&cm.inner, &registry).render())
}

/// # Safety
/// `cm` must come from [`lb_confusion_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lb_confusion_free(cm: *mut LbConfusion) {
    free(cm)
}

pub struct LbModel {
    inner: ModelHandle,
}

/// Seeded random network for `arch` with a `num_classes` softmax head.
/// `full_scale` selects the published widths and depths instead of the
/// reduced desk-scale backbone.
///
/// # Safety
/// `arch` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lb_model_create(
    arch: *const c_char,
    num_classes: usize,
    input_size: usize,
    full_scale: bool,
    seed: u64,
    out: *mut *mut LbModel,
) -> i32 {
    guard(|| {
        let arch = Architecture::parse(as_str(arch, "arch")?)?;
        let scale = if full_scale { BackboneScale::FULL } else { BackboneScale::DESK };
        let base = ModelHandle::random(&ArchitectureSpec::of(arch), scale, input_size, seed)?;
        let inner = adapt_head(base, num_classes, seed)?;
        put(out, LbModel { inner }, "out")
    })
}

/// # Safety
/// `m` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn lb_model_param_count(m: *const LbModel) -> usize {
    m.as_ref().map_or(0, |m| m.inner.param_count())
}

/// # Safety
/// `m` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn lb_model_num_classes(m: *const LbModel) -> usize {
    m.as_ref().map_or(0, |m| m.inner.head.out_classes)
}

/// Class probabilities for `n` preprocessed images stored as NCHW floats of
/// side `input_size`. Writes `n * num_classes` values into `probs`.
///
/// # Safety
/// `pixels` must hold `n * 3 * side * side` floats and `probs` must have
/// room for `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn lb_model_predict(
    m: *const LbModel,
    pixels: *const f32,
    n: usize,
    probs: *mut f64,
    cap: usize,
) -> i32 {
    guard(|| {
        let m = as_ref(m, "model")?;
        if pixels.is_null() || probs.is_null() {
            return Err(null("buffer"));
        }
        let side = m.inner.input_size();
        let k = m.inner.head.out_classes;
        if cap < n * k {
            return Err(Failure::Ffi(LB_ERR_BUFFER_TOO_SMALL, format!("need {} slots", n * k)));
        }
        let data = std::slice::from_raw_parts(pixels, n * 3 * side * side).to_vec();
        let rows = m.inner.predict_proba(&Tensor::from_vec(Shape::new(n, 3, side, side), data))?;
        for (i, v) in rows.into_iter().flatten().enumerate() {
            *probs.add(i) = v;
        }
        Ok(())
    })
}

/// # Safety
/// `m` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn lb_model_save(m: *const LbModel, path: *const c_char) -> i32 {
    guard(|| {
        let m = as_ref(m, "model")?;
        m.inner.save(&PathBuf::from(as_str(path, "path")?), "ffi")?;
        Ok(())
    })
}

/// Replaces the weights of `m` with those stored at `path`.
///
/// # Safety
/// `m` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn lb_model_load(m: *mut LbModel, path: *const c_char) -> i32 {
    guard(|| {
        let m = m.as_mut().ok_or_else(|| null("model"))?;
        m.inner.load(&PathBuf::from(as_str(path, "path")?))?;
        Ok(())
    })
}

/// # Safety
/// `m` must come from [`lb_model_create`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lb_model_free(m: *mut LbModel) {
    free(m)
}

/// Runs one architecture of the experiment described by the JSON config at
/// `config_path` and fills `out` with its test scores.
///
/// # Safety
/// Strings must be NUL-terminated; `out` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn lb_experiment_run(config_path: *const c_char, arch: *const c_char, out: *mut LbSummary) -> i32 {
    guard(|| {
        let cfg = ExperimentConfig::load(&PathBuf::from(as_str(config_path, "config_path")?))?;
        let art = experiment::run(&cfg, as_str(arch, "arch")?)?;
        if let Some(out) = out.as_mut() {
            let s = &art.summary;
            *out = LbSummary {
                accuracy: s.accuracy,
                weighted_precision: s.precision,
                weighted_recall: s.recall,
                weighted_f1: s.f1,
                macro_f1: s.macro_f1,
                mean_binary_accuracy: s.mean_binary_accuracy,
            };
        }
        Ok(())
    })
}
