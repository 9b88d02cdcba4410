//! C ABI over the pruning library.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_load`
//! functions and released by the matching `*_free`. Every fallible call
//! returns a [`PanningStatus`]; on failure the message is available from
//! [`panning_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;

use panning::data::{synthetic_classification, Dataset};
use panning::metrics::{balanced_batch, FusionWeights};
use panning::model::{Activation, Checkpoint, CheckpointError, Mask, ModelError, NetworkSpec, Parameters};
use panning::pruner::{self, banded_weights, PanningRun, PruneError, RunSettings};
use panning::rl_env::{compute_state, STATE_DIM};
use panning::tensor::Tensor;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PanningStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Model = 3,
    Data = 4,
    Prune = 5,
    Checkpoint = 6,
    Finished = 7,
    Panic = 8,
}

/// Network architecture and parameter values.
pub struct PanningNetwork {
    inner: Parameters,
}

/// Keep/prune flag per weight.
pub struct PanningMask {
    inner: Mask,
}

/// Labeled samples; each sample is a flat row of `f64`.
pub struct PanningDataset {
    inner: Arc<Dataset>,
}

/// An iterative pruning run in progress.
pub struct PanningPruneRun {
    inner: PanningRun,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure {
    status: PanningStatus,
    message: String,
}

impl Failure {
    fn new(status: PanningStatus, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        Failure::new(PanningStatus::Model, e.to_string())
    }
}

impl From<PruneError> for Failure {
    fn from(e: PruneError) -> Self {
        let status = match e {
            PruneError::Finished(_) => PanningStatus::Finished,
            PruneError::Model(_) => PanningStatus::Model,
            PruneError::Config(_) | PruneError::ZeroKeep { .. } => PanningStatus::InvalidArgument,
            _ => PanningStatus::Prune,
        };
        Failure::new(status, e.to_string())
    }
}

impl From<CheckpointError> for Failure {
    fn from(e: CheckpointError) -> Self {
        Failure::new(PanningStatus::Checkpoint, e.to_string())
    }
}

impl From<panning::data::DataError> for Failure {
    fn from(e: panning::data::DataError) -> Self {
        Failure::new(PanningStatus::Data, e.to_string())
    }
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = c);
}

/// Runs `f`, records any failure and converts panics into [`PanningStatus::Panic`].
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PanningStatus {
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|payload| {
        let message = payload
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| payload.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "panic".into());
        Err(Failure::new(PanningStatus::Panic, message))
    });
    match result {
        Ok(()) => {
            set_last_error("");
            PanningStatus::Ok
        }
        Err(f) => {
            set_last_error(&f.message);
            f.status
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::new(PanningStatus::NullPointer, format!("{name} is null")))
}

unsafe fn deref_mut<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure::new(PanningStatus::NullPointer, format!("{name} is null")))
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::new(PanningStatus::NullPointer, "output pointer is null"));
    }
    out.write(value);
    Ok(())
}

unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::new(PanningStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    let s = deref(p, "path").map(|_| CStr::from_ptr(p))?;
    s.to_str()
        .map(PathBuf::from)
        .map_err(|_| Failure::new(PanningStatus::InvalidArgument, "path is not valid UTF-8"))
}

/// Message of the last failed call on this thread; empty after a success.
///
/// The pointer stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn panning_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn panning_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Scheduled pruning ratio after `i` of `t` iterations toward `target`.
#[no_mangle]
pub extern "C" fn panning_schedule_ratio(i: usize, t: usize, target: f64) -> f64 {
    pruner::schedule_ratio(i, t, target)
}

/// LeNet5 for 1×28×28 inputs, initialized from `seed`.
///
/// # Safety
/// `out` must be valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn panning_network_lenet5(seed: u64, out: *mut *mut PanningNetwork) -> PanningStatus {
    guard(|| {
        let inner = Parameters::init(&NetworkSpec::lenet5(), seed)?;
        write_out(out, Box::into_raw(Box::new(PanningNetwork { inner })))
    })
}

/// ReLU MLP `inputs → hidden[0] → … → classes`, initialized from `seed`.
///
/// # Safety
/// `hidden` must point to `n_hidden` readable values (or be null when
/// `n_hidden` is 0); `out` must be valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn panning_network_mlp(
    inputs: usize,
    hidden: *const usize,
    n_hidden: usize,
    classes: usize,
    seed: u64,
    out: *mut *mut PanningNetwork,
) -> PanningStatus {
    guard(|| {
        let hidden = slice(hidden, n_hidden, "hidden")?;
        if inputs == 0 || classes == 0 || hidden.contains(&0) {
            return Err(Failure::new(PanningStatus::InvalidArgument, "layer widths must be positive"));
        }
        let spec = NetworkSpec::mlp(&[inputs], hidden, classes, Activation::Relu);
        let inner = Parameters::init(&spec, seed)?;
        write_out(out, Box::into_raw(Box::new(PanningNetwork { inner })))
    })
}

/// # Safety
/// `net` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn panning_network_free(net: *mut PanningNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Number of prunable weights; 0 for a null handle.
///
/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn panning_network_weight_count(net: *const PanningNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.inner.weight_count())
}

/// Copies the flat weight vector into `out[0..len]`; `len` must equal the weight count.
///
/// # Safety
/// `net` must be a live handle and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn panning_network_weights(net: *const PanningNetwork, out: *mut f64, len: usize) -> PanningStatus {
    guard(|| {
        let net = deref(net, "net")?;
        let w = &net.inner.weights;
        if len != w.len() {
            return Err(Failure::new(PanningStatus::InvalidArgument, format!("buffer holds {len}, need {}", w.len())));
        }
        if out.is_null() {
            return Err(Failure::new(PanningStatus::NullPointer, "out is null"));
        }
        std::ptr::copy_nonoverlapping(w.as_ptr(), out, len);
        Ok(())
    })
}

/// Gaussian-blob classification data with `dims` features per sample.
///
/// # Safety
/// `out` must be valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn panning_dataset_synthetic(
    classes: usize,
    per_class: usize,
    dims: usize,
    separation: f64,
    seed: u64,
    out: *mut *mut PanningDataset,
) -> PanningStatus {
    guard(|| {
        if classes == 0 || per_class == 0 || dims == 0 {
            return Err(Failure::new(PanningStatus::InvalidArgument, "sizes must be positive"));
        }
        let inner = Arc::new(synthetic_classification(classes, per_class, dims, separation, seed));
        write_out(out, Box::into_raw(Box::new(PanningDataset { inner })))
    })
}

/// Dataset from `n` row-major samples of `features` values each.
///
/// LeNet5 expects `features = 784` laid out as one 28×28 channel.
///
/// # Safety
/// `values` must hold `n · features` readable doubles, `labels` `n` values,
/// and `out` must be valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn panning_dataset_from_raw(
    values: *const f64,
    labels: *const u32,
    n: usize,
    features: usize,
    classes: usize,
    image_side: usize,
    out: *mut *mut PanningDataset,
) -> PanningStatus {
    guard(|| {
        let len = n.checked_mul(features).ok_or_else(|| Failure::new(PanningStatus::InvalidArgument, "size overflow"))?;
        let values = slice(values, len, "values")?.to_vec();
        let labels: Vec<usize> = slice(labels, n, "labels")?.iter().map(|&l| l as usize).collect();
        let shape = if image_side > 0 {
            if image_side * image_side != features {
                return Err(Failure::new(PanningStatus::InvalidArgument, "image_side² must equal features"));
            }
            vec![n, 1, image_side, image_side]
        } else {
            vec![n, features]
        };
        let inner = Dataset::new(Tensor::from_vec(&shape, values), labels, classes)?;
        write_out(out, Box::into_raw(Box::new(PanningDataset { inner: Arc::new(inner) })))
    })
}

/// # Safety
/// `data` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn panning_dataset_free(data: *mut PanningDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Starts a run pruning `net` to `target` over `iterations` steps, scoring on
/// a balanced batch of `per_class` samples from each of `classes` classes.
///
/// The run keeps its own copy of the network.
///
/// # Safety
/// `net` and `data` must be live handles; `out` must be valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn panning_run_new(
    net: *const PanningNetwork,
    data: *const PanningDataset,
    classes: usize,
    per_class: usize,
    batch_seed: u64,
    target: f64,
    iterations: usize,
    out: *mut *mut PanningPruneRun,
) -> PanningStatus {
    guard(|| {
        let net = deref(net, "net")?;
        let data = deref(data, "data")?;
        let batch = balanced_batch(&data.inner, classes, per_class, batch_seed)?;
        let inner = PanningRun::new(net.inner.clone(), batch, RunSettings::new(target, iterations))?;
        write_out(out, Box::into_raw(Box::new(PanningPruneRun { inner })))
    })
}

/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn panning_run_free(run: *mut PanningPruneRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// One iteration with fusion weights `(synflow, snip, grasp)`; they must be
/// finite, nonnegative and not all zero.
///
/// # Safety
/// `run` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn panning_run_step(run: *mut PanningPruneRun, synflow: f64, snip: f64, grasp: f64) -> PanningStatus {
    guard(|| {
        let run = deref_mut(run, "run")?;
        let p = FusionWeights::new(synflow, snip, grasp)
            .map_err(|e| Failure::new(PanningStatus::InvalidArgument, e.to_string()))?;
        run.inner.step(p)?;
        Ok(())
    })
}

/// One iteration with the hand-set banded fusion weights.
///
/// # Safety
/// `run` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn panning_run_step_banded(run: *mut PanningPruneRun) -> PanningStatus {
    guard(|| {
        let run = deref_mut(run, "run")?;
        let p = banded_weights(run.inner.next_ratio());
        run.inner.step(p)?;
        Ok(())
    })
}

/// Iterations completed; 0 for a null handle.
///
/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn panning_run_iteration(run: *const PanningPruneRun) -> usize {
    run.as_ref().map_or(0, |r| r.inner.iteration())
}

/// Whether all scheduled iterations have run; true for a null handle.
///
/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn panning_run_is_finished(run: *const PanningPruneRun) -> bool {
    run.as_ref().is_none_or(|r| r.inner.is_finished())
}

/// Effective compression of the current mask.
///
/// # Safety
/// `run` must be a live handle and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn panning_run_rho_e(run: *const PanningPruneRun, out: *mut f64) -> PanningStatus {
    guard(|| write_out(out, deref(run, "run")?.inner.rho_e()))
}

/// Normalized 7-component state: dense loss, dense ΔL, sparse loss, sparse ΔL,
/// scheduled ratio, effective ratio, progress.
///
/// # Safety
/// `run` must be a live handle and `out` valid for 7 writes.
#[no_mangle]
pub unsafe extern "C" fn panning_run_state(run: *const PanningPruneRun, out: *mut f64) -> PanningStatus {
    guard(|| {
        let s = compute_state(&deref(run, "run")?.inner).to_array();
        if out.is_null() {
            return Err(Failure::new(PanningStatus::NullPointer, "out is null"));
        }
        std::ptr::copy_nonoverlapping(s.as_ptr(), out, STATE_DIM);
        Ok(())
    })
}

/// Copy of the current mask as a new handle.
///
/// # Safety
/// `run` must be a live handle; `out` must be valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn panning_run_mask(run: *const PanningPruneRun, out: *mut *mut PanningMask) -> PanningStatus {
    guard(|| {
        let inner = deref(run, "run")?.inner.mask().clone();
        write_out(out, Box::into_raw(Box::new(PanningMask { inner })))
    })
}

/// # Safety
/// `mask` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn panning_mask_free(mask: *mut PanningMask) {
    if !mask.is_null() {
        drop(Box::from_raw(mask));
    }
}

/// Number of weights covered; 0 for a null handle.
///
/// # Safety
/// `mask` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn panning_mask_len(mask: *const PanningMask) -> usize {
    mask.as_ref().map_or(0, |m| m.inner.len())
}

/// Number of kept weights; 0 for a null handle.
///
/// # Safety
/// `mask` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn panning_mask_kept(mask: *const PanningMask) -> usize {
    mask.as_ref().map_or(0, |m| m.inner.count_kept())
}

/// Writes 1 for kept and 0 for pruned weights into `out[0..len]`; `len` must equal the mask length.
///
/// # Safety
/// `mask` must be a live handle and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn panning_mask_copy(mask: *const PanningMask, out: *mut u8, len: usize) -> PanningStatus {
    guard(|| {
        let keep = deref(mask, "mask")?.inner.keep();
        if len != keep.len() {
            return Err(Failure::new(PanningStatus::InvalidArgument, format!("buffer holds {len}, need {}", keep.len())));
        }
        if out.is_null() {
            return Err(Failure::new(PanningStatus::NullPointer, "out is null"));
        }
        for (i, &k) in keep.iter().enumerate() {
            out.add(i).write(k as u8);
        }
        Ok(())
    })
}

/// Fraction of weights that are pruned or lie on no input-to-output path.
///
/// # Safety
/// `net` and `mask` must be live handles and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn panning_effective_compression(
    net: *const PanningNetwork,
    mask: *const PanningMask,
    out: *mut f64,
) -> PanningStatus {
    guard(|| {
        let rho_e = pruner::effective_compression(&deref(net, "net")?.inner, &deref(mask, "mask")?.inner)?;
        write_out(out, rho_e)
    })
}

/// Saves `net` and `mask` as entry `model` of a new checkpoint at `path`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `net` and `mask` live handles.
#[no_mangle]
pub unsafe extern "C" fn panning_checkpoint_save(
    path: *const c_char,
    net: *const PanningNetwork,
    mask: *const PanningMask,
) -> PanningStatus {
    guard(|| {
        let path = path_arg(path)?;
        let net = deref(net, "net")?;
        let mask = deref(mask, "mask")?;
        panning::model::check_mask(&net.inner, &mask.inner)?;
        Checkpoint::single("model", net.inner.clone(), mask.inner.clone()).save(path)?;
        Ok(())
    })
}

/// Loads entry `model` of the checkpoint at `path` into two new handles.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out_net` and `out_mask` must be
/// valid for one pointer write each.
#[no_mangle]
pub unsafe extern "C" fn panning_checkpoint_load(
    path: *const c_char,
    out_net: *mut *mut PanningNetwork,
    out_mask: *mut *mut PanningMask,
) -> PanningStatus {
    guard(|| {
        let path = path_arg(path)?;
        if out_net.is_null() || out_mask.is_null() {
            return Err(Failure::new(PanningStatus::NullPointer, "output pointer is null"));
        }
        let ck = Checkpoint::load(path)?;
        let entry = ck.get("model")?.clone();
        out_net.write(Box::into_raw(Box::new(PanningNetwork { inner: entry.params })));
        out_mask.write(Box::into_raw(Box::new(PanningMask { inner: entry.mask })));
        Ok(())
    })
}
