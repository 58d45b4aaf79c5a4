//! C ABI over `sedx`.
//!
//! Every fallible call returns a [`SedxStatus`]. On failure the message is kept
//! per thread and read back with [`sedx_last_error`]. Arrays are row-major
//! `double` buffers; label grids are row-major `uint8_t` with values 0 or 1.
//! No call unwinds across the boundary: a panic maps to `SEDX_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use sedx::labels::LabelGrid;
use sedx::losses::{fc_loss_value, Denominator, ScheduleConfig};
use sedx::model::{load_checkpoint, SedModel};
use sedx::synth::{generate_dataset, DatasetSpec};
use sedx::tensor::DenseArray;
use sedx::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SedxStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Domain = 4,
    Io = 5,
    Format = 6,
    Config = 7,
    Validation = 8,
    NonFinite = 9,
    Panic = 10,
}

impl From<&Error> for SedxStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Dimension { .. } => SedxStatus::Dimension,
            Error::Domain { .. } => SedxStatus::Domain,
            Error::Contract(_) => SedxStatus::InvalidArgument,
            Error::Io { .. } => SedxStatus::Io,
            Error::Format { .. } => SedxStatus::Format,
            Error::Config { .. } => SedxStatus::Config,
            Error::Validation(_) => SedxStatus::Validation,
            Error::NonFinite { .. } => SedxStatus::NonFinite,
        }
    }
}

/// A loaded network, student or teacher weights.
pub struct SedxModel {
    model: SedModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

struct Failure(SedxStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure((&e).into(), e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(SedxStatus::InvalidArgument, msg.into())
}

fn null(what: &str) -> Failure {
    Failure(SedxStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, records any failure and converts panics.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SedxStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            SedxStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            SedxStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut_arg<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sedx_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `cap - 1` bytes) and returns the full message length. Passing
/// a null `buf` or zero `cap` only queries the length. Empty after a success.
///
/// # Safety
/// `buf` must be null or point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn sedx_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let bytes = e.borrow();
        let bytes = bytes.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Loads a checkpoint. The teacher weights are used unless `use_student`.
/// On success `*out` owns a model released with [`sedx_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sedx_model_load(path: *const c_char, use_student: bool, out: *mut *mut SedxModel) -> SedxStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = std::ptr::null_mut();
        let ckpt = load_checkpoint(&path_arg(path, "path")?)?;
        let model = if use_student { ckpt.student } else { ckpt.teacher_model() };
        *out = Box::into_raw(Box::new(SedxModel { model }));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`sedx_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sedx_model_free(model: *mut SedxModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input mel bins, output classes and the frame reduction factor of the network.
///
/// # Safety
/// `model` must be live; each out pointer must be writable.
#[no_mangle]
pub unsafe extern "C" fn sedx_model_dims(
    model: *const SedxModel,
    n_bins: *mut usize,
    n_classes: *mut usize,
    temporal_pool: *mut usize,
) -> SedxStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.model;
        *out_arg(n_bins, "n_bins")? = m.config.n_mels;
        *out_arg(n_classes, "n_classes")? = m.config.n_classes;
        *out_arg(temporal_pool, "temporal_pool")? = m.config.temporal_pool;
        Ok(())
    })
}

/// Frame-level class probabilities for one clip.
///
/// `features` holds `n_frames x n_bins` values. The output has
/// `n_frames / temporal_pool` rows of `n_classes` values; `*out_frames`
/// receives the row count and `out_cap` must cover the whole output.
///
/// # Safety
/// Buffers must hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn sedx_model_predict(
    model: *const SedxModel,
    features: *const f64,
    n_frames: usize,
    n_bins: usize,
    probs: *mut f64,
    out_cap: usize,
    out_frames: *mut usize,
) -> SedxStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.model;
        let x = slice_arg(features, n_frames * n_bins, "features")?;
        let out_frames = out_arg(out_frames, "out_frames")?;
        let x = DenseArray::new(vec![n_frames, n_bins], x.to_vec())?;
        let p = m.predict(&x)?.probs;
        if p.data().len() > out_cap {
            return Err(Failure(
                SedxStatus::Dimension,
                format!("output needs {} values, buffer holds {out_cap}", p.data().len()),
            ));
        }
        slice_mut_arg(probs, p.data().len(), "probs")?.copy_from_slice(p.data());
        *out_frames = p.shape()[0];
        Ok(())
    })
}

/// Frame-wise contrastive loss of one clip.
///
/// `z` holds `n_classes` blocks of `n_frames x dim` projections and `labels`
/// the `n_frames x n_classes` ground-truth grid. `infonce` adds the positive to
/// the denominator; `normalize` L2-normalizes projections first.
///
/// # Safety
/// Buffers must hold the stated number of elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sedx_fc_loss(
    z: *const f64,
    n_classes: usize,
    n_frames: usize,
    dim: usize,
    labels: *const u8,
    tau: f64,
    infonce: bool,
    normalize: bool,
    out: *mut f64,
) -> SedxStatus {
    guard(|| {
        if n_classes == 0 || n_frames == 0 || dim == 0 {
            return Err(invalid("n_classes, n_frames and dim must be positive"));
        }
        let z = slice_arg(z, n_classes * n_frames * dim, "z")?;
        let labels = slice_arg(labels, n_frames * n_classes, "labels")?;
        let out = out_arg(out, "out")?;
        let cfg = ScheduleConfig {
            tau,
            denominator: if infonce { Denominator::WithPositive } else { Denominator::NegativesOnly },
            normalize,
            ..ScheduleConfig::default()
        };
        cfg.validate()?;
        let blocks = z
            .chunks(n_frames * dim)
            .map(|b| DenseArray::new(vec![n_frames, dim], b.to_vec()))
            .collect::<Result<Vec<_>, _>>()?;
        let y = LabelGrid::new(n_frames, n_classes, labels.to_vec())?;
        *out = fc_loss_value(&blocks, &y, &cfg)?;
        Ok(())
    })
}

/// Ramp-up weight of the semi-supervised term at (fractional) epoch `t`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sedx_lambda2(t: f64, lambda1: f64, rampup_epochs: usize, out: *mut f64) -> SedxStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        if !t.is_finite() {
            return Err(invalid("t must be finite"));
        }
        let cfg = ScheduleConfig {
            lambda1,
            rampup_epochs,
            ..ScheduleConfig::default()
        };
        cfg.validate()?;
        *out = sedx::losses::lambda2(t, &cfg);
        Ok(())
    })
}

/// Binary median filter with an odd window; `input` and `output` hold `len`
/// values and may not alias.
///
/// # Safety
/// Buffers must hold `len` elements.
#[no_mangle]
pub unsafe extern "C" fn sedx_median_filter(input: *const u8, len: usize, window: usize, output: *mut u8) -> SedxStatus {
    guard(|| {
        let x = slice_arg(input, len, "input")?;
        let y = sedx::eval::median_filter(x, window)?;
        slice_mut_arg(output, len, "output")?.copy_from_slice(&y);
        Ok(())
    })
}

/// Generates a synthetic dataset from a spec file into `out_dir`.
///
/// # Safety
/// Both arguments must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn sedx_generate(spec_path: *const c_char, out_dir: *const c_char) -> SedxStatus {
    guard(|| {
        let spec = DatasetSpec::read(&path_arg(spec_path, "spec_path")?)?;
        generate_dataset(&spec, &path_arg(out_dir, "out_dir")?)?;
        Ok(())
    })
}

/// Trains from a run config file. `*frame_f1` receives the final macro
/// frame F1; artifacts land in the configured output directory.
///
/// # Safety
/// `config_path` must be a NUL-terminated string; `frame_f1` null or writable.
#[no_mangle]
pub unsafe extern "C" fn sedx_train(config_path: *const c_char, frame_f1: *mut f64) -> SedxStatus {
    guard(|| {
        let cfg = sedx::train::parse_config(&path_arg(config_path, "config_path")?)?;
        let outcome = sedx::train::train(&cfg)?;
        if let Some(f1) = frame_f1.as_mut() {
            *f1 = outcome.metrics.frame_f1();
        }
        Ok(())
    })
}
