//! C interface to `mfamp`.
//!
//! Every function returns an [`MfampStatus`]. On failure the message is kept
//! per thread and can be read with [`mfamp_last_error`]. Objects are opaque
//! and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mfamp::amp::{run_amp, AmpOptions, AmpResult, Mode};
use mfamp::instance::{generate_instance, load_instance, save_instance, ProblemInstance};
use mfamp::potential::{mmse, pi_star, potential, spinodal_pi, Spinodal};
use mfamp::state_evolution::{run_se, SeInit, SeOptions, SePoint};
use mfamp::{Error, Eta, ModelParams};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MfampStatus {
    Ok = 0,
    InvalidArgument = 1,
    NullPointer = 2,
    Divergence = 3,
    Numerical = 4,
    Io = 5,
    Format = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Model parameters. `eta` may be `INFINITY` for dictionary learning.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct MfampParams {
    pub alpha: f64,
    pub pi: f64,
    pub rho: f64,
    pub delta: f64,
    pub eta: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MfampMode {
    Calibration = 0,
    Dictionary = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct MfampAmpOptions {
    pub damping: f64,
    pub max_iter: u64,
    pub conv_tol: f64,
    pub init_jitter: f64,
    pub delta_floor: f64,
    pub mode: MfampMode,
    /// Nonzero to use `jitter_seed`; otherwise the instance seed is used.
    pub has_jitter_seed: u8,
    pub jitter_seed: u64,
    /// Nonzero for per-column variance estimates.
    pub column_variances: u8,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct MfampPoint {
    pub t: u64,
    pub e: f64,
    pub d: f64,
    pub residual: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MfampSpinodalKind {
    At = 0,
    NoHardPhase = 1,
    BeyondRange = 2,
}

/// A generated or loaded problem instance.
pub struct MfampInstance(ProblemInstance);

/// The outcome of one message-passing run.
pub struct MfampAmpResult(AmpResult);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> MfampStatus {
    match err {
        Error::InvalidArgument(_) | Error::InvalidSize(_) | Error::ShapeMismatch(_) => MfampStatus::InvalidArgument,
        Error::Divergence { .. } => MfampStatus::Divergence,
        Error::Domain(_) | Error::OracleFailure(_) | Error::Consistency(_) | Error::Scan { .. } => {
            MfampStatus::Numerical
        }
        Error::File(mfamp::FileError::Io { .. }) => MfampStatus::Io,
        Error::File(_) => MfampStatus::Format,
    }
}

struct Failure(MfampStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(MfampStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MfampStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            MfampStatus::Ok
        }
        Ok(Err(Failure(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            MfampStatus::Panic
        }
    }
}

fn eta_of(x: f64) -> Result<Eta, Failure> {
    if x == f64::INFINITY {
        Ok(Eta::Infinite)
    } else {
        Ok(Eta::finite(x)?)
    }
}

unsafe fn params_of(p: *const MfampParams) -> Result<ModelParams, Failure> {
    let p = unsafe { p.as_ref() }.ok_or_else(|| null("params"))?;
    Ok(ModelParams::new(p.alpha, p.pi, p.rho, p.delta, eta_of(p.eta)?)?)
}

unsafe fn path_of<'a>(path: *const c_char) -> Result<&'a str, Failure> {
    if path.is_null() {
        return Err(null("path"));
    }
    unsafe { CStr::from_ptr(path) }
        .to_str()
        .map_err(|_| Failure(MfampStatus::InvalidArgument, "path is not UTF-8".into()))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    unsafe { p.as_mut() }.ok_or_else(|| null(what))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mfamp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the last error message of this thread into `buf`, NUL-terminated
/// and truncated to `len`. Returns the length of the full message, or 0 when
/// the last call succeeded.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn mfamp_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            unsafe {
                ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
                *buf.add(n) = 0;
            }
        }
        bytes.len()
    })
}

/// # Safety
/// `params` must point to a valid struct and `out` to writable storage.
#[no_mangle]
pub unsafe extern "C" fn mfamp_instance_generate(
    params: *const MfampParams,
    n: usize,
    seed: u64,
    out_instance: *mut *mut MfampInstance,
) -> MfampStatus {
    guard(|| {
        let slot = unsafe { out(out_instance, "out_instance") }?;
        let p = unsafe { params_of(params) }?;
        let inst = generate_instance(p, n, seed)?;
        *slot = Box::into_raw(Box::new(MfampInstance(inst)));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mfamp_instance_load(path: *const c_char, out_instance: *mut *mut MfampInstance) -> MfampStatus {
    guard(|| {
        let slot = unsafe { out(out_instance, "out_instance") }?;
        let inst = load_instance(unsafe { path_of(path) }?)?;
        *slot = Box::into_raw(Box::new(MfampInstance(inst)));
        Ok(())
    })
}

/// # Safety
/// `instance` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn mfamp_instance_save(instance: *const MfampInstance, path: *const c_char) -> MfampStatus {
    guard(|| {
        let inst = unsafe { instance.as_ref() }.ok_or_else(|| null("instance"))?;
        save_instance(&inst.0, unsafe { path_of(path) }?)?;
        Ok(())
    })
}

/// Writes `N`, `M` and `P`.
///
/// # Safety
/// `instance` must come from this library; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn mfamp_instance_dims(
    instance: *const MfampInstance,
    n: *mut usize,
    m: *mut usize,
    p: *mut usize,
) -> MfampStatus {
    guard(|| {
        let inst = unsafe { instance.as_ref() }.ok_or_else(|| null("instance"))?;
        *unsafe { out(n, "n") }? = inst.0.n;
        *unsafe { out(m, "m") }? = inst.0.m;
        *unsafe { out(p, "p") }? = inst.0.p;
        Ok(())
    })
}

unsafe fn copy_matrix(src: &ndarray::Array2<f64>, buf: *mut f64, len: usize) -> Result<(), Failure> {
    if buf.is_null() {
        return Err(null("buffer"));
    }
    if len < src.len() {
        return Err(Failure(
            MfampStatus::BufferTooSmall,
            format!("buffer holds {len} values, {} needed", src.len()),
        ));
    }
    for (k, &v) in src.iter().enumerate() {
        unsafe { *buf.add(k) = v };
    }
    Ok(())
}

/// Copies the M×P measurements in row-major order.
///
/// # Safety
/// `buf` must be valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mfamp_instance_copy_y(instance: *const MfampInstance, buf: *mut f64, len: usize) -> MfampStatus {
    guard(|| {
        let inst = unsafe { instance.as_ref() }.ok_or_else(|| null("instance"))?;
        unsafe { copy_matrix(&inst.0.y, buf, len) }
    })
}

/// # Safety
/// `instance` must be null or come from this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn mfamp_instance_free(instance: *mut MfampInstance) {
    if !instance.is_null() {
        drop(unsafe { Box::from_raw(instance) });
    }
}

/// Fills `opts` with the library defaults.
///
/// # Safety
/// `opts` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mfamp_amp_options_default(opts: *mut MfampAmpOptions) -> MfampStatus {
    guard(|| {
        let d = AmpOptions::default();
        *unsafe { out(opts, "opts") }? = MfampAmpOptions {
            damping: d.damping,
            max_iter: d.max_iter as u64,
            conv_tol: d.conv_tol,
            init_jitter: d.init_jitter,
            delta_floor: d.delta_floor,
            mode: MfampMode::Calibration,
            has_jitter_seed: 0,
            jitter_seed: 0,
            column_variances: d.column_variances as u8,
        };
        Ok(())
    })
}

/// Runs message passing. On divergence the partial run is still returned
/// through `out_result` and the status is `Divergence`.
///
/// # Safety
/// `instance` must come from this library, `opts` may be null for defaults,
/// and `out_result` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mfamp_amp_run(
    instance: *const MfampInstance,
    opts: *const MfampAmpOptions,
    out_result: *mut *mut MfampAmpResult,
) -> MfampStatus {
    guard(|| {
        let slot = unsafe { out(out_result, "out_result") }?;
        *slot = ptr::null_mut();
        let inst = unsafe { instance.as_ref() }.ok_or_else(|| null("instance"))?;
        let o = match unsafe { opts.as_ref() } {
            None => AmpOptions::default(),
            Some(o) => AmpOptions {
                damping: o.damping,
                max_iter: o.max_iter as usize,
                conv_tol: o.conv_tol,
                init_jitter: o.init_jitter,
                delta_floor: o.delta_floor,
                mode: match o.mode {
                    MfampMode::Calibration => Mode::Calibration,
                    MfampMode::Dictionary => Mode::Dictionary,
                },
                jitter_seed: (o.has_jitter_seed != 0).then_some(o.jitter_seed),
                column_variances: o.column_variances != 0,
            },
        };
        match run_amp(&inst.0, &o) {
            Ok(res) => {
                *slot = Box::into_raw(Box::new(MfampAmpResult(res)));
                Ok(())
            }
            Err(Error::Divergence { iteration, partial }) => {
                *slot = Box::into_raw(Box::new(MfampAmpResult(*partial)));
                Err(Failure(MfampStatus::Divergence, format!("diverged at iteration {iteration}")))
            }
            Err(e) => Err(e.into()),
        }
    })
}

/// Number of recorded trajectory points (initial state included).
///
/// # Safety
/// `result` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn mfamp_amp_result_len(result: *const MfampAmpResult, len: *mut usize) -> MfampStatus {
    guard(|| {
        let r = unsafe { result.as_ref() }.ok_or_else(|| null("result"))?;
        *unsafe { out(len, "len") }? = r.0.trajectory.len();
        Ok(())
    })
}

/// # Safety
/// `result` must come from this library and `point` be writable.
#[no_mangle]
pub unsafe extern "C" fn mfamp_amp_result_point(
    result: *const MfampAmpResult,
    index: usize,
    point: *mut MfampPoint,
) -> MfampStatus {
    guard(|| {
        let r = unsafe { result.as_ref() }.ok_or_else(|| null("result"))?;
        let slot = unsafe { out(point, "point") }?;
        let tp = r.0.trajectory.get(index).ok_or_else(|| {
            Failure(
                MfampStatus::InvalidArgument,
                format!("index {index} out of range for {} points", r.0.trajectory.len()),
            )
        })?;
        *slot = MfampPoint {
            t: tp.t as u64,
            e: tp.e,
            d: tp.d,
            residual: tp.residual,
        };
        Ok(())
    })
}

/// # Safety
/// `result` must come from this library; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn mfamp_amp_result_summary(
    result: *const MfampAmpResult,
    converged: *mut u8,
    iterations: *mut u64,
    clamped: *mut u64,
) -> MfampStatus {
    guard(|| {
        let r = unsafe { result.as_ref() }.ok_or_else(|| null("result"))?;
        *unsafe { out(converged, "converged") }? = r.0.converged as u8;
        *unsafe { out(iterations, "iterations") }? = r.0.iterations as u64;
        *unsafe { out(clamped, "clamped") }? = r.0.clamped as u64;
        Ok(())
    })
}

/// Copies the N×P signal estimate in row-major order.
///
/// # Safety
/// `buf` must be valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mfamp_amp_result_copy_signal(
    result: *const MfampAmpResult,
    buf: *mut f64,
    len: usize,
) -> MfampStatus {
    guard(|| {
        let r = unsafe { result.as_ref() }.ok_or_else(|| null("result"))?;
        unsafe { copy_matrix(&r.0.a, buf, len) }
    })
}

/// # Safety
/// `result` must be null or come from this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn mfamp_amp_result_free(result: *mut MfampAmpResult) {
    if !result.is_null() {
        drop(unsafe { Box::from_raw(result) });
    }
}

/// Iterates state evolution from the uninformative start (`informed == 0`) or
/// from `(epsilon, epsilon)`, writing the last point.
///
/// # Safety
/// Pointers must be valid; `converged` may be null.
#[no_mangle]
pub unsafe extern "C" fn mfamp_se_run(
    params: *const MfampParams,
    informed: u8,
    epsilon: f64,
    e: *mut f64,
    d: *mut f64,
    converged: *mut u8,
) -> MfampStatus {
    guard(|| {
        let p = unsafe { params_of(params) }?;
        let init = if informed != 0 {
            SeInit::Informed(epsilon)
        } else {
            SeInit::Uninformative
        };
        let traj = run_se(&p, init, &SeOptions::default())?;
        let fp = traj.fixed_point();
        *unsafe { out(e, "e") }? = fp.e;
        *unsafe { out(d, "d") }? = fp.d;
        if let Some(c) = unsafe { converged.as_mut() } {
            *c = traj.converged as u8;
        }
        Ok(())
    })
}

/// # Safety
/// `params` must be valid and `phi` writable.
#[no_mangle]
pub unsafe extern "C" fn mfamp_potential(params: *const MfampParams, e: f64, d: f64, phi: *mut f64) -> MfampStatus {
    guard(|| {
        let p = unsafe { params_of(params) }?;
        *unsafe { out(phi, "phi") }? = potential(SePoint::new(e, d), &p)?;
        Ok(())
    })
}

/// Bayes-optimal `(E*, D*)` and the potential there.
///
/// # Safety
/// `params` must be valid and the outputs writable.
#[no_mangle]
pub unsafe extern "C" fn mfamp_mmse(params: *const MfampParams, e: *mut f64, d: *mut f64, phi: *mut f64) -> MfampStatus {
    guard(|| {
        let p = unsafe { params_of(params) }?;
        let m = mmse(&p)?;
        *unsafe { out(e, "e") }? = m.point.e;
        *unsafe { out(d, "d") }? = m.point.d;
        *unsafe { out(phi, "phi") }? = m.phi;
        Ok(())
    })
}

/// Exact-recovery threshold `α/(α−ρ)`; `InvalidArgument` when `α ≤ ρ`.
///
/// # Safety
/// `value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mfamp_pi_star(alpha: f64, rho: f64, value: *mut f64) -> MfampStatus {
    guard(|| {
        let slot = unsafe { out(value, "value") }?;
        *slot = pi_star(alpha, rho)
            .ok_or_else(|| Failure(MfampStatus::InvalidArgument, format!("alpha={alpha} must exceed rho={rho}")))?;
        Ok(())
    })
}

/// Spinodal sample ratio. `value` is NaN unless `kind` is `At`.
///
/// # Safety
/// The outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn mfamp_spinodal_pi(
    alpha: f64,
    rho: f64,
    eta: f64,
    delta: f64,
    tol: f64,
    kind: *mut MfampSpinodalKind,
    value: *mut f64,
) -> MfampStatus {
    guard(|| {
        let k = unsafe { out(kind, "kind") }?;
        let v = unsafe { out(value, "value") }?;
        let s = spinodal_pi(alpha, rho, eta_of(eta)?, delta, tol)?;
        (*k, *v) = match s {
            Spinodal::At(x) => (MfampSpinodalKind::At, x),
            Spinodal::NoHardPhase => (MfampSpinodalKind::NoHardPhase, f64::NAN),
            Spinodal::BeyondRange => (MfampSpinodalKind::BeyondRange, f64::NAN),
        };
        Ok(())
    })
}
