//! C ABI over the `spgp` library.
//!
//! Objects cross the boundary as opaque pointers (`SpgpTensor`, `SpgpModel`)
//! that must be released with the matching `*_free` function. Every fallible
//! call returns an [`SpgpStatus`]; on failure a human-readable message for
//! the calling thread is available from [`spgp_last_error`]. Outputs are
//! written through caller-provided pointers only when the call succeeds.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use spgp::gp::KernelKind;
use spgp::pooling::{self, MaskVariant};
use spgp::train::{self, TrainConfig, TrainedModel};
use spgp::{io, snapshot, EmbeddingTensor, Error};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpgpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Version = 5,
    Truncated = 6,
    Checksum = 7,
    Data = 8,
    Shape = 9,
    DegenerateMask = 10,
    NoParameters = 11,
    Conditioning = 12,
    Training = 13,
    Config = 14,
    Panic = 15,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpgpMaskVariant {
    Mean = 0,
    Softmax = 1,
    Sigmoid = 2,
    Prior = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpgpKernel {
    Matern32 = 0,
    Matern52 = 1,
}

/// Training options. Obtain defaults from [`spgp_train_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SpgpTrainOptions {
    pub variant: SpgpMaskVariant,
    pub kernel: SpgpKernel,
    pub prior_scale: f64,
    pub max_iters: usize,
    pub restarts: usize,
    pub seed: u64,
    pub standardize: bool,
}

/// Opaque embedding tensor.
pub struct SpgpTensor(EmbeddingTensor);

/// Opaque trained model.
pub struct SpgpModel(TrainedModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(err: &Error) -> SpgpStatus {
    match err {
        Error::Io { .. } => SpgpStatus::Io,
        Error::Format(_) => SpgpStatus::Format,
        Error::Version { .. } => SpgpStatus::Version,
        Error::Truncated { .. } => SpgpStatus::Truncated,
        Error::Checksum { .. } => SpgpStatus::Checksum,
        Error::Data(_) => SpgpStatus::Data,
        Error::Shape(_) => SpgpStatus::Shape,
        Error::DegenerateMask(_) => SpgpStatus::DegenerateMask,
        Error::NoParameters => SpgpStatus::NoParameters,
        Error::Conditioning { .. } => SpgpStatus::Conditioning,
        Error::Training(_) => SpgpStatus::Training,
        Error::Config(_) => SpgpStatus::Config,
    }
}

struct Failure(SpgpStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(SpgpStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(SpgpStatus::InvalidArgument, msg.into())
}

/// Runs `f`, converting errors and panics into a status plus last-error text.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SpgpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            clear_last_error();
            SpgpStatus::Ok
        }
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
            SpgpStatus::Panic
        }
    }
}

unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, Failure> {
    if path.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(path)
        .to_str()
        .map_err(|_| invalid("path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a>(data: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if data.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(data, len))
}

unsafe fn slice_out<'a>(data: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if data.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(data, len))
}

unsafe fn tensor_ref<'a>(t: *const SpgpTensor) -> Result<&'a EmbeddingTensor, Failure> {
    t.as_ref().map(|t| &t.0).ok_or_else(|| null("tensor"))
}

unsafe fn model_ref<'a>(m: *const SpgpModel) -> Result<&'a TrainedModel, Failure> {
    m.as_ref().map(|m| &m.0).ok_or_else(|| null("model"))
}

fn variant_of(v: SpgpMaskVariant) -> MaskVariant {
    match v {
        SpgpMaskVariant::Mean => MaskVariant::Mean,
        SpgpMaskVariant::Softmax => MaskVariant::Softmax,
        SpgpMaskVariant::Sigmoid => MaskVariant::Sigmoid,
        SpgpMaskVariant::Prior => MaskVariant::Prior,
    }
}

fn kernel_of(k: SpgpKernel) -> KernelKind {
    match k {
        SpgpKernel::Matern32 => KernelKind::Matern32,
        SpgpKernel::Matern52 => KernelKind::Matern52,
    }
}

/// Message describing the last failed call on this thread, or null. The
/// pointer stays valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn spgp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static, nul-terminated library version string.
#[no_mangle]
pub extern "C" fn spgp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a tensor from `n * p * m` row-major values (`[seq][pos][dim]`).
///
/// # Safety
/// `values` must point to `n * p * m` readable doubles and `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn spgp_tensor_new(
    n: usize,
    p: usize,
    m: usize,
    values: *const f64,
    out: *mut *mut SpgpTensor,
) -> SpgpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let len = n
            .checked_mul(p)
            .and_then(|v| v.checked_mul(m))
            .ok_or_else(|| invalid("tensor size overflows"))?;
        let vals = slice_arg(values, len, "values")?.to_vec();
        let t = EmbeddingTensor::new(n, p, m, vals)?;
        *out = Box::into_raw(Box::new(SpgpTensor(t)));
        Ok(())
    })
}

/// # Safety
/// `path` must be a nul-terminated string and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spgp_tensor_read(path: *const c_char, out: *mut *mut SpgpTensor) -> SpgpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let t = io::read_tensor(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(SpgpTensor(t)));
        Ok(())
    })
}

/// # Safety
/// `tensor` must come from this library; `path` must be nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn spgp_tensor_write(tensor: *const SpgpTensor, path: *const c_char) -> SpgpStatus {
    guard(|| {
        let t = tensor_ref(tensor)?;
        io::write_tensor(t, path_arg(path)?)?;
        Ok(())
    })
}

/// # Safety
/// `tensor` must come from this library; the output pointers must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn spgp_tensor_dims(
    tensor: *const SpgpTensor,
    n: *mut usize,
    p: *mut usize,
    m: *mut usize,
) -> SpgpStatus {
    guard(|| {
        let t = tensor_ref(tensor)?;
        if n.is_null() || p.is_null() || m.is_null() {
            return Err(null("dimension output"));
        }
        *n = t.n_sequences();
        *p = t.n_positions();
        *m = t.n_dims();
        Ok(())
    })
}

/// # Safety
/// `tensor` must be null or a pointer returned by this library that has not
/// been freed yet.
#[no_mangle]
pub unsafe extern "C" fn spgp_tensor_free(tensor: *mut SpgpTensor) {
    if !tensor.is_null() {
        drop(Box::from_raw(tensor));
    }
}

#[no_mangle]
pub extern "C" fn spgp_train_options_default() -> SpgpTrainOptions {
    let d = TrainConfig::default();
    SpgpTrainOptions {
        variant: SpgpMaskVariant::Mean,
        kernel: SpgpKernel::Matern32,
        prior_scale: d.prior_scale,
        max_iters: d.max_iters,
        restarts: d.restarts,
        seed: d.seed,
        standardize: d.standardize,
    }
}

/// Fits a model on `tensor` with one target per sequence.
///
/// # Safety
/// `tensor` must come from this library, `targets` must point to
/// `n_targets` doubles, `options` may be null for defaults, and `out` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn spgp_model_fit(
    tensor: *const SpgpTensor,
    targets: *const f64,
    n_targets: usize,
    options: *const SpgpTrainOptions,
    out: *mut *mut SpgpModel,
) -> SpgpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let t = tensor_ref(tensor)?;
        let y = slice_arg(targets, n_targets, "targets")?;
        let opts = options.as_ref().copied().unwrap_or_else(|| spgp_train_options_default());
        let config = TrainConfig {
            variant: variant_of(opts.variant),
            kernel: kernel_of(opts.kernel),
            prior_scale: opts.prior_scale,
            max_iters: opts.max_iters,
            restarts: opts.restarts,
            seed: opts.seed,
            standardize: opts.standardize,
            ..TrainConfig::default()
        };
        let model = train::fit(t, y, &config)?;
        *out = Box::into_raw(Box::new(SpgpModel(model)));
        Ok(())
    })
}

/// # Safety
/// `path` must be nul-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn spgp_model_load(path: *const c_char, out: *mut *mut SpgpModel) -> SpgpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let m = snapshot::load_model(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(SpgpModel(m)));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library; `path` must be nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn spgp_model_save(model: *const SpgpModel, path: *const c_char) -> SpgpStatus {
    guard(|| {
        let m = model_ref(model)?;
        snapshot::save_model(m, path_arg(path)?)?;
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a live pointer returned by this library.
#[no_mangle]
pub unsafe extern "C" fn spgp_model_free(model: *mut SpgpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Writes the posterior mean and variance for each sequence of `tensor`
/// into `mean` and `variance`, both of length `len` (the sequence count).
///
/// # Safety
/// Pointers must come from this library or point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn spgp_model_predict(
    model: *const SpgpModel,
    tensor: *const SpgpTensor,
    mean: *mut f64,
    variance: *mut f64,
    len: usize,
) -> SpgpStatus {
    guard(|| {
        let m = model_ref(model)?;
        let t = tensor_ref(tensor)?;
        if len != t.n_sequences() {
            return Err(invalid(format!(
                "output length {len} does not match {} sequences",
                t.n_sequences()
            )));
        }
        let mean_out = slice_out(mean, len, "mean")?;
        let var_out = slice_out(variance, len, "variance")?;
        let d = m.predict(t)?;
        mean_out.copy_from_slice(&d.mean);
        var_out.copy_from_slice(&d.variance);
        Ok(())
    })
}

/// Writes `[log sigma_f^2, log sigma_l, log sigma_eps^2]` into `out`.
///
/// # Safety
/// `model` must come from this library; `out` must hold three doubles.
#[no_mangle]
pub unsafe extern "C" fn spgp_model_hypers(model: *const SpgpModel, out: *mut f64) -> SpgpStatus {
    guard(|| {
        let m = model_ref(model)?;
        let dst = slice_out(out, 3, "out")?;
        dst.copy_from_slice(&m.hypers().as_array());
        Ok(())
    })
}

/// Number of sequence positions the model was trained on.
///
/// # Safety
/// `model` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spgp_model_positions(model: *const SpgpModel, out: *mut usize) -> SpgpStatus {
    guard(|| {
        let m = model_ref(model)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = m.n_positions;
        Ok(())
    })
}

/// Normalized pooling weights, `len` must equal the position count.
///
/// # Safety
/// `model` must come from this library; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn spgp_model_weights(model: *const SpgpModel, out: *mut f64, len: usize) -> SpgpStatus {
    guard(|| {
        let m = model_ref(model)?;
        if len != m.n_positions {
            return Err(invalid(format!(
                "output length {len} does not match {} positions",
                m.n_positions
            )));
        }
        let dst = slice_out(out, len, "out")?;
        dst.copy_from_slice(&pooling::normalized_weights(&m.head, m.n_positions)?);
        Ok(())
    })
}

/// Counts normalized weights strictly below `threshold`.
///
/// # Safety
/// `model` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spgp_model_sparsity(
    model: *const SpgpModel,
    threshold: f64,
    out: *mut usize,
) -> SpgpStatus {
    guard(|| {
        let m = model_ref(model)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let report = pooling::sparsity_report(&m.head, m.n_positions, threshold)?;
        *out = report.zero_count;
        Ok(())
    })
}
