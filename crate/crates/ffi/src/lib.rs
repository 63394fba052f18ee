//! C ABI over `flames-core`.
//!
//! Every function returns a [`FlamesStatus`]; on failure the message is kept
//! per thread and read with [`flames_last_error`]. Panics never cross the
//! boundary. Handles are opaque and must be released with their `_free`
//! function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::BufReader;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use flames_core::events::{ingest_events, SpikeBatch, TimestampOrder};
use flames_core::hippo::{hippo_legs, KernelParams, SaHippoKernel};
use flames_core::kernel::{fft_convolve, readout, step, KernelState, StepConfig};
use flames_core::linalg::C64;
use flames_core::model::config::ModelConfig;
use flames_core::model::forward;
use flames_core::FlamesError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlamesStatus {
    Ok = 0,
    /// A required pointer was null.
    Null = 1,
    Invalid = 2,
    Parse = 3,
    /// A batch was older than the state it was applied to.
    Temporal = 4,
    Unstable = 5,
    Io = 6,
    /// A Rust panic was caught; the handle involved should be freed.
    Panic = 7,
}

impl From<&FlamesError> for FlamesStatus {
    fn from(e: &FlamesError) -> Self {
        match e {
            FlamesError::Parse { .. } | FlamesError::NonMonotonic { .. } | FlamesError::Json(_) => Self::Parse,
            FlamesError::Validation { .. } => Self::Invalid,
            FlamesError::TemporalOrder { .. } => Self::Temporal,
            FlamesError::Unstable { .. } | FlamesError::NotHurwitz { .. } | FlamesError::Singular(_) => Self::Unstable,
            FlamesError::Io { .. } => Self::Io,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: FlamesStatus, msg: impl Into<String>) -> FlamesStatus {
    set_error(msg);
    status
}

fn from_core(e: FlamesError) -> FlamesStatus {
    let status = FlamesStatus::from(&e);
    fail(status, e.to_string())
}

/// Runs `f`, converting panics into [`FlamesStatus::Panic`].
fn guard(f: impl FnOnce() -> FlamesStatus) -> FlamesStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(FlamesStatus::Panic, format!("internal panic: {msg}"))
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, FlamesStatus> {
    if p.is_null() {
        return Err(fail(FlamesStatus::Null, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(FlamesStatus::Invalid, format!("{name} is not valid UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, name: &str) -> Result<&'a [f64], FlamesStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(FlamesStatus::Null, format!("{name} is null")));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, need: usize, name: &str) -> Result<&'a mut [f64], FlamesStatus> {
    if p.is_null() {
        return Err(fail(FlamesStatus::Null, format!("{name} is null")));
    }
    if len < need {
        return Err(fail(
            FlamesStatus::Invalid,
            format!("{name} holds {len} values, {need} required"),
        ));
    }
    Ok(slice::from_raw_parts_mut(p, need))
}

macro_rules! tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(status) => return status,
        }
    };
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn flames_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn flames_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// A spike-aware HiPPO kernel together with its running state.
pub struct FlamesKernel {
    kernel: SaHippoKernel,
    state: KernelState,
    config: StepConfig,
}

/// Creates a kernel with the LegS base matrix, uniform decay `alpha0` and
/// seeded Gaussian couplings. The state starts at zero at time `t0`.
///
/// # Safety
/// `out` must be a valid pointer to write the handle into.
#[no_mangle]
pub unsafe extern "C" fn flames_kernel_new(
    order: usize,
    input_dim: usize,
    output_dim: usize,
    alpha0: f64,
    seed: u64,
    t0: f64,
    out: *mut *mut FlamesKernel,
) -> FlamesStatus {
    guard(|| {
        if out.is_null() {
            return fail(FlamesStatus::Null, "out is null");
        }
        let params = KernelParams {
            alpha0: Some(alpha0),
            seed,
            ..KernelParams::new(order, input_dim, output_dim)
        };
        let kernel = match SaHippoKernel::from_params(&params) {
            Ok(k) => k,
            Err(e) => return from_core(e),
        };
        let handle = FlamesKernel {
            state: KernelState::zeros(order, t0),
            config: StepConfig::for_alpha0(alpha0),
            kernel,
        };
        *out = Box::into_raw(Box::new(handle));
        FlamesStatus::Ok
    })
}

/// Releases a kernel. Null is ignored.
///
/// # Safety
/// `kernel` must come from [`flames_kernel_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn flames_kernel_free(kernel: *mut FlamesKernel) {
    if !kernel.is_null() {
        drop(Box::from_raw(kernel));
    }
}

unsafe fn handle<'a>(kernel: *mut FlamesKernel) -> Result<&'a mut FlamesKernel, FlamesStatus> {
    kernel.as_mut().ok_or_else(|| fail(FlamesStatus::Null, "kernel is null"))
}

/// Writes the state size, input and output widths. Any out pointer may be
/// null.
///
/// # Safety
/// `kernel` must be a live handle; non-null out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn flames_kernel_dims(
    kernel: *mut FlamesKernel,
    order: *mut usize,
    input_dim: *mut usize,
    output_dim: *mut usize,
) -> FlamesStatus {
    guard(|| {
        let h = tri!(handle(kernel));
        for (p, v) in [
            (order, h.kernel.order()),
            (input_dim, h.kernel.input_dim()),
            (output_dim, h.kernel.output_dim()),
        ] {
            if !p.is_null() {
                *p = v;
            }
        }
        FlamesStatus::Ok
    })
}

/// Advances the state to time `t` with `values` (one per input channel)
/// held over the elapsed interval.
///
/// # Safety
/// `values` must point to `len` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn flames_kernel_step(
    kernel: *mut FlamesKernel,
    t: f64,
    values: *const f64,
    len: usize,
) -> FlamesStatus {
    guard(|| {
        let h = tri!(handle(kernel));
        let values = tri!(slice_arg(values, len, "values"));
        let batch = SpikeBatch::new(t, values.to_vec());
        match step(&h.kernel, &h.state, &batch, &h.config) {
            Ok(next) => {
                h.state = next;
                FlamesStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Writes `C x` into `out` (`len ≥ output_dim`).
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn flames_kernel_readout(kernel: *mut FlamesKernel, out: *mut f64, len: usize) -> FlamesStatus {
    guard(|| {
        let h = tri!(handle(kernel));
        let y = readout(&h.kernel, &h.state);
        let dst = tri!(out_slice(out, len, y.len(), "out"));
        dst.copy_from_slice(y.as_slice());
        FlamesStatus::Ok
    })
}

/// Copies the state vector into `out` (`len ≥ order`) and its time into
/// `t` when non-null.
///
/// # Safety
/// `out` must point to `len` writable doubles; `t` may be null.
#[no_mangle]
pub unsafe extern "C" fn flames_kernel_state(
    kernel: *mut FlamesKernel,
    out: *mut f64,
    len: usize,
    t: *mut f64,
) -> FlamesStatus {
    guard(|| {
        let h = tri!(handle(kernel));
        let dst = tri!(out_slice(out, len, h.state.x.len(), "out"));
        dst.copy_from_slice(h.state.x.as_slice());
        if !t.is_null() {
            *t = h.state.last_t;
        }
        FlamesStatus::Ok
    })
}

/// Zeroes the state and sets its time to `t0`.
///
/// # Safety
/// `kernel` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn flames_kernel_reset(kernel: *mut FlamesKernel, t0: f64) -> FlamesStatus {
    guard(|| {
        let h = tri!(handle(kernel));
        h.state = KernelState::zeros(h.kernel.order(), t0);
        FlamesStatus::Ok
    })
}

/// Writes the `order x order` LegS matrix in row-major order.
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn flames_hippo_legs(order: usize, out: *mut f64, len: usize) -> FlamesStatus {
    guard(|| {
        let m = match hippo_legs(order) {
            Ok(m) => m,
            Err(e) => return from_core(e),
        };
        let dst = tri!(out_slice(out, len, order * order, "out"));
        let a = m.matrix();
        for i in 0..order {
            for j in 0..order {
                dst[i * order + j] = a[(i, j)];
            }
        }
        FlamesStatus::Ok
    })
}

/// Linear convolution of `input` (length `n`) with real `taps` (length
/// `taps_len`), truncated to `n` samples and written to `out`.
///
/// # Safety
/// Pointers must reference buffers of the stated lengths; `out` holds `n`.
#[no_mangle]
pub unsafe extern "C" fn flames_fft_convolve(
    taps: *const f64,
    taps_len: usize,
    input: *const f64,
    n: usize,
    out: *mut f64,
) -> FlamesStatus {
    guard(|| {
        let taps = tri!(slice_arg(taps, taps_len, "taps"));
        let input = tri!(slice_arg(input, n, "input"));
        if taps.is_empty() {
            return fail(FlamesStatus::Invalid, "taps must not be empty");
        }
        let dst = tri!(out_slice(out, n, n, "out"));
        let taps: Vec<C64> = taps.iter().map(|&v| C64::new(v, 0.0)).collect();
        for (d, y) in dst.iter_mut().zip(fft_convolve(&taps, input)) {
            *d = y.re;
        }
        FlamesStatus::Ok
    })
}

/// Runs the model on an event file. `config_json` is a JSON object of
/// settings (`"{}"` for the tiny preset). On success `*out_json` receives
/// the scores and summary as a JSON string to release with
/// [`flames_string_free`].
///
/// # Safety
/// String arguments must be NUL-terminated; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn flames_model_run(
    config_json: *const c_char,
    events_path: *const c_char,
    seed: u64,
    out_json: *mut *mut c_char,
) -> FlamesStatus {
    guard(|| {
        if out_json.is_null() {
            return fail(FlamesStatus::Null, "out_json is null");
        }
        let config = tri!(str_arg(config_json, "config_json"));
        let path = tri!(str_arg(events_path, "events_path"));
        let config = match ModelConfig::from_json(config) {
            Ok(c) => c,
            Err(e) => return from_core(e),
        };
        let file = match File::open(path) {
            Ok(f) => f,
            Err(e) => return from_core(FlamesError::io(path, e)),
        };
        let stream = match ingest_events(BufReader::new(file), None, TimestampOrder::Strict) {
            Ok(s) => s,
            Err(e) => return from_core(e),
        };
        let output = match forward(&config, &stream, seed) {
            Ok(o) => o,
            Err(e) => return from_core(e),
        };
        let text = match serde_json::to_string(&output) {
            Ok(t) => t,
            Err(e) => return from_core(e.into()),
        };
        match CString::new(text) {
            Ok(s) => {
                *out_json = s.into_raw();
                FlamesStatus::Ok
            }
            Err(_) => fail(FlamesStatus::Invalid, "output contained a NUL byte"),
        }
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn flames_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
