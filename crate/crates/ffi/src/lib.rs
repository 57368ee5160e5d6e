//! C ABI over `kdlab`.
//!
//! Conventions:
//! - Every fallible function returns a [`KdlabStatus`]; `KDLAB_OK` is zero.
//!   On failure, [`kdlab_last_error`] describes the most recent error on the
//!   calling thread.
//! - Datasets and networks are opaque handles created by `kdlab_dataset_generate`,
//!   `kdlab_*_load` or training functions and released with the matching
//!   `kdlab_*_free`. Freeing a null handle is a no-op.
//! - Strings returned through `char **` out-parameters are owned by the
//!   caller and must be released with [`kdlab_string_free`].
//! - Configs are passed as the same JSON documents the CLI reads.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use kdlab::cli::ExperimentConfig;
use kdlab::datagen::{load_dataset, save_dataset, MixedFeatureDataset, Split};
use kdlab::evalcal::{distribution_error, ece, fit_temperature, nll, PNorm};
use kdlab::netlib::{Checkpoint, Network};
use kdlab::tensor::Tensor;
use kdlab::trainlab::{init_network, train_student, train_teacher};
use kdlab::Error;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KdlabStatus {
    KdlabOk = 0,
    /// A required pointer argument was null.
    KdlabErrNull = 1,
    /// An argument was out of range or inconsistent.
    KdlabErrInvalid = 2,
    /// The config document failed to parse or validate.
    KdlabErrConfig = 3,
    /// A dataset, checkpoint or config file does not exist.
    KdlabErrMissing = 4,
    KdlabErrIo = 5,
    /// Tensor shapes did not match.
    KdlabErrShape = 6,
    /// Training produced non-finite values.
    KdlabErrNumeric = 7,
    /// Malformed external data.
    KdlabErrParse = 8,
    /// The dataset carries no ground-truth label distributions.
    KdlabErrNoGroundTruth = 9,
    /// A panic was caught at the boundary.
    KdlabErrInternal = 10,
}

/// Dataset splits.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KdlabSplit {
    KdlabSplitTrain = 0,
    KdlabSplitHoldout = 1,
    KdlabSplitTemperatureHoldout = 2,
    KdlabSplitTest = 3,
}

/// Norms for distribution error.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KdlabNorm {
    KdlabNormL1 = 0,
    KdlabNormL2 = 1,
    KdlabNormLinf = 2,
}

/// Opaque dataset handle.
pub struct KdlabDataset {
    inner: MixedFeatureDataset,
}

/// Opaque network handle.
pub struct KdlabNetwork {
    inner: Network,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).unwrap_or_default());
}

fn status_of(e: &Error) -> KdlabStatus {
    match e {
        Error::Config { .. } => KdlabStatus::KdlabErrConfig,
        Error::MissingArtifact(_) => KdlabStatus::KdlabErrMissing,
        Error::Io { .. } => KdlabStatus::KdlabErrIo,
        Error::Shape { .. } => KdlabStatus::KdlabErrShape,
        Error::NonFinite { .. } | Error::Diverged { .. } | Error::DegenerateGeometricMean => {
            KdlabStatus::KdlabErrNumeric
        }
        Error::Parse { .. } | Error::Json(_) | Error::Csv(_) => KdlabStatus::KdlabErrParse,
        Error::NoGroundTruth => KdlabStatus::KdlabErrNoGroundTruth,
        Error::Invalid(_) | Error::MissingGradient(_) => KdlabStatus::KdlabErrInvalid,
    }
}

struct Fail(KdlabStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(KdlabStatus::KdlabErrNull, format!("`{what}` is null"))
}

/// Runs `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> KdlabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            KdlabStatus::KdlabOk
        }
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            KdlabStatus::KdlabErrInternal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(KdlabStatus::KdlabErrInvalid, format!("`{what}` is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

fn config_from(json: &str) -> Result<ExperimentConfig, Fail> {
    let mut cfg = ExperimentConfig::from_json(json)?;
    cfg.validate()?;
    cfg.resolve();
    Ok(cfg)
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).unwrap_or_default().into_raw()
}

/// Message for the most recent failure on this thread; empty after a
/// success. The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn kdlab_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn kdlab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be null or a pointer obtained from this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn kdlab_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Runs the command-line front end in-process and returns its exit code.
///
/// # Safety
/// `argv` must point to `argc` valid NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn kdlab_cli_run(argc: c_int, argv: *const *const c_char) -> c_int {
    let mut args = vec!["kdlab".to_string()];
    if argc > 0 && !argv.is_null() {
        for i in 0..argc as usize {
            let p = *argv.add(i);
            if p.is_null() {
                return kdlab::cli::EXIT_CONFIG;
            }
            args.push(CStr::from_ptr(p).to_string_lossy().into_owned());
        }
    }
    catch_unwind(|| kdlab::cli::run(args)).unwrap_or(kdlab::cli::EXIT_FAILURE)
}

/// Samples the dataset described by the `data` section of a config.
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn kdlab_dataset_generate(config_json: *const c_char, out: *mut *mut KdlabDataset) -> KdlabStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let cfg = config_from(str_arg(config_json, "config_json")?)?;
        let (inner, _) = cfg.dataset()?;
        *out = Box::into_raw(Box::new(KdlabDataset { inner }));
        Ok(())
    })
}

/// Loads a dataset directory.
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn kdlab_dataset_load(dir: *const c_char, out: *mut *mut KdlabDataset) -> KdlabStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let inner = load_dataset(&PathBuf::from(str_arg(dir, "dir")?))?;
        *out = Box::into_raw(Box::new(KdlabDataset { inner }));
        Ok(())
    })
}

/// Writes a dataset directory.
///
/// # Safety
/// `ds` must be a live handle and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn kdlab_dataset_save(ds: *const KdlabDataset, dir: *const c_char) -> KdlabStatus {
    guard(|| {
        let ds = ref_arg(ds, "ds")?;
        save_dataset(&ds.inner, &PathBuf::from(str_arg(dir, "dir")?))?;
        Ok(())
    })
}

/// # Safety
/// `ds` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn kdlab_dataset_free(ds: *mut KdlabDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Example count, patches per input, patch width and class count. Any
/// out-pointer may be null.
///
/// # Safety
/// `ds` must be a live handle; non-null out-pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn kdlab_dataset_shape(
    ds: *const KdlabDataset,
    examples: *mut usize,
    patches: *mut usize,
    patch_dim: *mut usize,
    classes: *mut usize,
) -> KdlabStatus {
    guard(|| {
        let d = &ref_arg(ds, "ds")?.inner;
        for (p, v) in [
            (examples, d.len()),
            (patches, d.patches),
            (patch_dim, d.patch_dim),
            (classes, d.classes),
        ] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Copies the inputs (`examples * patches * patch_dim` values, row-major)
/// into `buf` of length `len`.
///
/// # Safety
/// `ds` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn kdlab_dataset_inputs(ds: *const KdlabDataset, buf: *mut f64, len: usize) -> KdlabStatus {
    guard(|| {
        let d = &ref_arg(ds, "ds")?.inner;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let src = d.inputs();
        if len != src.len() {
            return Err(Fail(
                KdlabStatus::KdlabErrShape,
                format!("buffer holds {len} values, dataset has {}", src.len()),
            ));
        }
        std::slice::from_raw_parts_mut(buf, len).copy_from_slice(src);
        Ok(())
    })
}

/// Copies the labels into `buf` of length `len` (one per example).
///
/// # Safety
/// `ds` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn kdlab_dataset_labels(ds: *const KdlabDataset, buf: *mut usize, len: usize) -> KdlabStatus {
    guard(|| {
        let d = &ref_arg(ds, "ds")?.inner;
        if buf.is_null() {
            return Err(null("buf"));
        }
        if len != d.len() {
            return Err(Fail(
                KdlabStatus::KdlabErrShape,
                format!("buffer holds {len} labels, dataset has {}", d.len()),
            ));
        }
        std::slice::from_raw_parts_mut(buf, len).copy_from_slice(d.labels());
        Ok(())
    })
}

/// A new handle holding one split of `ds`; `split` is a `KdlabSplit` value.
///
/// # Safety
/// `ds` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn kdlab_dataset_split(
    ds: *const KdlabDataset,
    split: c_int,
    out: *mut *mut KdlabDataset,
) -> KdlabStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let d = &ref_arg(ds, "ds")?.inner;
        let s = match split {
            x if x == KdlabSplit::KdlabSplitTrain as c_int => Split::Train,
            x if x == KdlabSplit::KdlabSplitHoldout as c_int => Split::Holdout,
            x if x == KdlabSplit::KdlabSplitTemperatureHoldout as c_int => Split::TemperatureHoldout,
            x if x == KdlabSplit::KdlabSplitTest as c_int => Split::Test,
            other => return Err(Fail(KdlabStatus::KdlabErrInvalid, format!("unknown split {other}"))),
        };
        let inner = d.split(s)?;
        *out = Box::into_raw(Box::new(KdlabDataset { inner }));
        Ok(())
    })
}

/// Trains a teacher as configured by the `teacher` section of the config.
/// When `out_dir` is non-null, checkpoints are written under it. When
/// `record_json` is non-null it receives the run record as JSON.
///
/// # Safety
/// Pointers must be valid; `out_dir` and `record_json` may be null.
#[no_mangle]
pub unsafe extern "C" fn kdlab_train_teacher(
    config_json: *const c_char,
    ds: *const KdlabDataset,
    out_dir: *const c_char,
    out: *mut *mut KdlabNetwork,
    record_json: *mut *mut c_char,
) -> KdlabStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let cfg = config_from(str_arg(config_json, "config_json")?)?;
        let d = &ref_arg(ds, "ds")?.inner;
        let dir = if out_dir.is_null() {
            None
        } else {
            Some(PathBuf::from(str_arg(out_dir, "out_dir")?))
        };
        let arch = cfg.teacher.architecture.architecture(d.patches, d.patch_dim, d.classes);
        let mut net = init_network(arch, cfg.seed)?;
        let record = train_teacher(&mut net, d, &cfg.teacher_config(None), dir.as_deref())?;
        if let Some(r) = record_json.as_mut() {
            *r = into_c_string(serde_json::to_string(&record).map_err(Error::from)?);
        }
        *out = Box::into_raw(Box::new(KdlabNetwork { inner: net }));
        Ok(())
    })
}

/// Distills a student (the `student` section of the config) from `teacher`.
///
/// # Safety
/// Pointers must be valid; `record_json` may be null.
#[no_mangle]
pub unsafe extern "C" fn kdlab_distill(
    config_json: *const c_char,
    teacher: *const KdlabNetwork,
    ds: *const KdlabDataset,
    out: *mut *mut KdlabNetwork,
    record_json: *mut *mut c_char,
) -> KdlabStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let cfg = config_from(str_arg(config_json, "config_json")?)?;
        let t = &ref_arg(teacher, "teacher")?.inner;
        let d = &ref_arg(ds, "ds")?.inner;
        let arch = cfg.student.architecture.architecture(d.patches, d.patch_dim, d.classes);
        let mut student = init_network(arch, cfg.student_seed())?;
        let record = train_student(&mut student, t, d, &cfg.distill_config(None))?;
        if let Some(r) = record_json.as_mut() {
            *r = into_c_string(serde_json::to_string(&record).map_err(Error::from)?);
        }
        *out = Box::into_raw(Box::new(KdlabNetwork { inner: student }));
        Ok(())
    })
}

/// Loads the network from a checkpoint directory.
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn kdlab_network_load(dir: *const c_char, out: *mut *mut KdlabNetwork) -> KdlabStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let ck = Checkpoint::load(&PathBuf::from(str_arg(dir, "dir")?))?;
        *out = Box::into_raw(Box::new(KdlabNetwork { inner: ck.network }));
        Ok(())
    })
}

/// Saves the network as a checkpoint directory.
///
/// # Safety
/// `net` must be a live handle and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn kdlab_network_save(net: *const KdlabNetwork, dir: *const c_char) -> KdlabStatus {
    guard(|| {
        let n = &ref_arg(net, "net")?.inner;
        Checkpoint {
            network: n.clone(),
            epoch: 0,
            seed: 0,
            config_hash: String::new(),
            buffer: None,
        }
        .save(&PathBuf::from(str_arg(dir, "dir")?))?;
        Ok(())
    })
}

/// # Safety
/// `net` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn kdlab_network_free(net: *mut KdlabNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Input width and class count. Either out-pointer may be null.
///
/// # Safety
/// `net` must be a live handle; non-null out-pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn kdlab_network_shape(
    net: *const KdlabNetwork,
    input_width: *mut usize,
    classes: *mut usize,
) -> KdlabStatus {
    guard(|| {
        let a = &ref_arg(net, "net")?.inner.arch;
        if let Some(p) = input_width.as_mut() {
            *p = a.input_width();
        }
        if let Some(p) = classes.as_mut() {
            *p = a.classes;
        }
        Ok(())
    })
}

/// Class probabilities (rows renormalized onto the simplex) for `rows`
/// inputs of the network's input width, written to `probs`
/// (`rows * classes` values).
///
/// # Safety
/// `inputs` must hold `rows * input_width` values and `probs` room for
/// `rows * classes`.
#[no_mangle]
pub unsafe extern "C" fn kdlab_network_predict(
    net: *const KdlabNetwork,
    inputs: *const f64,
    rows: usize,
    probs: *mut f64,
) -> KdlabStatus {
    guard(|| {
        let n = &ref_arg(net, "net")?.inner;
        if inputs.is_null() {
            return Err(null("inputs"));
        }
        if probs.is_null() {
            return Err(null("probs"));
        }
        let w = n.arch.input_width();
        let x = std::slice::from_raw_parts(inputs, rows * w);
        let p = n.predict_rows(x, rows, 512)?.normalized();
        std::slice::from_raw_parts_mut(probs, rows * n.arch.classes).copy_from_slice(p.data());
        Ok(())
    })
}

/// Mean distance between the network's predictions and the dataset's true
/// label distributions; `norm` is a `KdlabNorm` value.
///
/// # Safety
/// Handles must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn kdlab_distribution_error(
    net: *const KdlabNetwork,
    ds: *const KdlabDataset,
    norm: c_int,
    out: *mut f64,
) -> KdlabStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let n = &ref_arg(net, "net")?.inner;
        let d = &ref_arg(ds, "ds")?.inner;
        let norm = match norm {
            x if x == KdlabNorm::KdlabNormL1 as c_int => PNorm::L1,
            x if x == KdlabNorm::KdlabNormL2 as c_int => PNorm::L2,
            x if x == KdlabNorm::KdlabNormLinf as c_int => PNorm::Linf,
            other => return Err(Fail(KdlabStatus::KdlabErrInvalid, format!("unknown norm {other}"))),
        };
        *out = distribution_error(n, d, norm)?;
        Ok(())
    })
}

unsafe fn matrix_and_labels(
    values: *const f64,
    labels: *const usize,
    rows: usize,
    classes: usize,
) -> Result<(Tensor, Vec<usize>), Fail> {
    if values.is_null() {
        return Err(null("values"));
    }
    if labels.is_null() {
        return Err(null("labels"));
    }
    let t = Tensor::matrix(rows, classes, std::slice::from_raw_parts(values, rows * classes).to_vec())?;
    let y = std::slice::from_raw_parts(labels, rows).to_vec();
    if let Some(&bad) = y.iter().find(|&&l| l >= classes) {
        return Err(Fail(KdlabStatus::KdlabErrInvalid, format!("label {bad} out of range")));
    }
    Ok((t, y))
}

/// Expected calibration error of `rows x classes` probabilities with
/// `bins` equal-width confidence bins.
///
/// # Safety
/// `probs` must hold `rows * classes` values, `labels` `rows`, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn kdlab_ece(
    probs: *const f64,
    labels: *const usize,
    rows: usize,
    classes: usize,
    bins: usize,
    out: *mut f64,
) -> KdlabStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        if bins == 0 {
            return Err(Fail(KdlabStatus::KdlabErrInvalid, "bins must be positive".into()));
        }
        let (p, y) = matrix_and_labels(probs, labels, rows, classes)?;
        *out = ece(&p, &y, bins);
        Ok(())
    })
}

/// Mean negative log-likelihood of `rows x classes` probabilities.
///
/// # Safety
/// `probs` must hold `rows * classes` values, `labels` `rows`, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn kdlab_nll(
    probs: *const f64,
    labels: *const usize,
    rows: usize,
    classes: usize,
    out: *mut f64,
) -> KdlabStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let (p, y) = matrix_and_labels(probs, labels, rows, classes)?;
        *out = nll(&p, &y);
        Ok(())
    })
}

/// Temperature minimizing the NLL of `logits / T` on a holdout.
///
/// # Safety
/// `logits` must hold `rows * classes` values, `labels` `rows`, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn kdlab_fit_temperature(
    logits: *const f64,
    labels: *const usize,
    rows: usize,
    classes: usize,
    out: *mut f64,
) -> KdlabStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let (l, y) = matrix_and_labels(logits, labels, rows, classes)?;
        *out = fit_temperature(&l, &y)?;
        Ok(())
    })
}
