//! C ABI over the `modbayes` library.
//!
//! Matrices cross the boundary as row-major `double` arrays. Every fallible
//! call returns an [`MbStatus`]; the message of the last failure on the
//! calling thread is available from [`mb_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, c_void, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use modbayes::dataio::{correct_void_fraction, TestCase};
use modbayes::doe::{centered_l2_discrepancy, maximin_lhs, wraparound_l2_discrepancy, DiscrepancyMeasure};
use modbayes::gp::{self, GpConfig, GpModel};
use modbayes::inference::{adaptive_metropolis, AdaptConfig};
use modbayes::tsa::{sequential_tsa, TsaConfig};
use modbayes::Error;
use nalgebra::DMatrix;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    ConfigError = 3,
    DataError = 4,
    GateFailed = 5,
    NumericalError = 6,
    Panic = 7,
}

/// Uniformity measure selector.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MbMeasure {
    CenteredL2 = 0,
    WraparoundL2 = 1,
}

impl From<MbMeasure> for DiscrepancyMeasure {
    fn from(m: MbMeasure) -> Self {
        match m {
            MbMeasure::CenteredL2 => DiscrepancyMeasure::CenteredL2,
            MbMeasure::WraparoundL2 => DiscrepancyMeasure::WraparoundL2,
        }
    }
}

/// Opaque trained Gaussian process.
pub struct MbGp {
    model: GpModel,
}

/// Log posterior callback: `theta` has `dim` entries.
pub type MbLogDensity = Option<extern "C" fn(theta: *const f64, dim: usize, user_data: *mut c_void) -> f64>;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> MbStatus {
    match err {
        Error::Config(_) => MbStatus::ConfigError,
        Error::GateFailed(_) => MbStatus::GateFailed,
        Error::Numerical(_) | Error::DegenerateHull => MbStatus::NumericalError,
        Error::Data(_) | Error::Csv(_) | Error::Io(_) | Error::Json(_) | Error::Simulator { .. } => {
            MbStatus::DataError
        }
        _ => MbStatus::InvalidInput,
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> MbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MbStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            MbStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            MbStatus::Panic
        }
    }
}

unsafe fn input<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn matrix(p: *const f64, rows: usize, cols: usize, what: &'static str) -> Result<DMatrix<f64>, Failure> {
    let n = rows.checked_mul(cols).ok_or(Failure::Lib(Error::InvalidInput("size overflow".into())))?;
    Ok(DMatrix::from_row_slice(rows, cols, input(p, n, what)?))
}

fn write_row_major(m: &DMatrix<f64>, out: &mut [f64]) {
    let c = m.ncols();
    for i in 0..m.nrows() {
        for k in 0..c {
            out[i * c + k] = m[(i, k)];
        }
    }
}

/// Message of the last failure on this thread, or NULL. Free with
/// [`mb_string_free`].
#[no_mangle]
pub extern "C" fn mb_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null_mut(), |c| c.clone().into_raw()))
}

/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn mb_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Squared discrepancy of `n x d` points in the unit cube.
///
/// # Safety
/// `u` holds `n * d` doubles; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn mb_discrepancy(
    u: *const f64,
    n: usize,
    d: usize,
    measure: MbMeasure,
    out: *mut f64,
) -> MbStatus {
    guard(|| {
        let m = matrix(u, n, d, "u")?;
        let v = match measure {
            MbMeasure::CenteredL2 => centered_l2_discrepancy(&m)?,
            MbMeasure::WraparoundL2 => wraparound_l2_discrepancy(&m)?,
        };
        *output(out, 1, "out")?.first_mut().ok_or(Failure::Null("out"))? = v;
        Ok(())
    })
}

/// Maximin Latin hypercube on `[0,1]^d`, written row-major to `out`.
///
/// # Safety
/// `out` holds `n * d` doubles.
#[no_mangle]
pub unsafe extern "C" fn mb_maximin_lhs(n: usize, d: usize, restarts: usize, seed: u64, out: *mut f64) -> MbStatus {
    guard(|| {
        let m = maximin_lhs(n, d, restarts, seed)?;
        write_row_major(&m, output(out, n * d, "out")?);
        Ok(())
    })
}

/// Densitometer correction; `in_range` is set to 1 when it applied.
///
/// # Safety
/// Both pointers are writable.
#[no_mangle]
pub unsafe extern "C" fn mb_correct_void_fraction(measured: f64, corrected: *mut f64, in_range: *mut i32) -> MbStatus {
    guard(|| {
        if corrected.is_null() || in_range.is_null() {
            return Err(Failure::Null("output"));
        }
        let (v, applied) = correct_void_fraction(measured);
        *corrected = v;
        *in_range = applied as i32;
        Ok(())
    })
}

/// Fits a GP to `n x d` inputs; `n_starts = 0` keeps the library default.
/// The handle written to `out` is released with [`mb_gp_free`].
///
/// # Safety
/// `x` holds `n * d` doubles, `y` holds `n`, `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn mb_gp_fit(
    x: *const f64,
    n: usize,
    d: usize,
    y: *const f64,
    nugget: f64,
    n_starts: usize,
    seed: u64,
    out: *mut *mut MbGp,
) -> MbStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let xm = matrix(x, n, d, "x")?;
        let yv = input(y, n, "y")?;
        let mut cfg = GpConfig { nugget, ..GpConfig::default() };
        if n_starts > 0 {
            cfg.n_starts = n_starts;
        }
        let model = gp::fit(&xm, yv, &cfg, seed)?;
        *out = Box::into_raw(Box::new(MbGp { model }));
        Ok(())
    })
}

/// Predictive mean and variance at `m` points.
///
/// # Safety
/// `gp` is a live handle; `x` holds `m * d` doubles; `mean` and `variance`
/// hold `m` doubles each (`variance` may be NULL).
#[no_mangle]
pub unsafe extern "C" fn mb_gp_predict(
    gp: *const MbGp,
    x: *const f64,
    m: usize,
    mean: *mut f64,
    variance: *mut f64,
) -> MbStatus {
    guard(|| {
        let gp = gp.as_ref().ok_or(Failure::Null("gp"))?;
        let xm = matrix(x, m, gp.model.dim(), "x")?;
        let (mu, var) = gp.model.predict(&xm)?;
        output(mean, m, "mean")?.copy_from_slice(&mu);
        if !variance.is_null() {
            output(variance, m, "variance")?.copy_from_slice(&var);
        }
        Ok(())
    })
}

/// Mean squared leave-one-out residual.
///
/// # Safety
/// `gp` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn mb_gp_loocv(gp: *const MbGp, out: *mut f64) -> MbStatus {
    guard(|| {
        let gp = gp.as_ref().ok_or(Failure::Null("gp"))?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        *out = gp.model.loocv_error()?;
        Ok(())
    })
}

/// Serialized model; free the string with [`mb_string_free`].
///
/// # Safety
/// `gp` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn mb_gp_to_json(gp: *const MbGp, out: *mut *mut c_char) -> MbStatus {
    guard(|| {
        let gp = gp.as_ref().ok_or(Failure::Null("gp"))?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let s = gp.model.to_json()?;
        *out = CString::new(s).map_err(|e| Error::Numerical(e.to_string()))?.into_raw();
        Ok(())
    })
}

/// # Safety
/// `gp` is NULL or a handle from [`mb_gp_fit`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mb_gp_free(gp: *mut MbGp) {
    if !gp.is_null() {
        drop(Box::from_raw(gp));
    }
}

/// Partitions `n` tests with design rows `x` (`n x d`). `assignment[i]` is set
/// to 1 for inverse-UQ tests and 0 for validation tests; `n_iuq` receives
/// their count.
///
/// # Safety
/// `ids` holds `n` entries, `x` holds `n * d`, `assignment` holds `n`,
/// `n_iuq` is writable.
#[no_mangle]
pub unsafe extern "C" fn mb_sequential_tsa(
    ids: *const i64,
    x: *const f64,
    n: usize,
    d: usize,
    alpha: f64,
    beta: f64,
    measure: MbMeasure,
    assignment: *mut i32,
    n_iuq: *mut usize,
) -> MbStatus {
    guard(|| {
        let ids = input(ids, n, "ids")?;
        let xs = input(x, n * d, "x")?;
        let out = output(assignment, n, "assignment")?;
        if n_iuq.is_null() {
            return Err(Failure::Null("n_iuq"));
        }
        let tests: Vec<TestCase> =
            (0..n).map(|i| TestCase::new(ids[i], xs[i * d..(i + 1) * d].to_vec(), Vec::new())).collect();
        let cfg = TsaConfig { alpha, beta, measure: measure.into(), ..TsaConfig::default() };
        let outcome = sequential_tsa(&tests, &cfg)?;
        for (slot, id) in out.iter_mut().zip(ids) {
            *slot = outcome.partition.iuq_ids.contains(id) as i32;
        }
        *n_iuq = outcome.partition.iuq_ids.len();
        Ok(())
    })
}

/// Adaptive Metropolis over a caller-supplied log density. `init_std` gives
/// the warm-up proposal; `samples` receives `n_samples x dim` row-major.
///
/// # Safety
/// `init` and `init_std` hold `dim` doubles, `samples` holds
/// `n_samples * dim`, `acceptance_rate` is writable or NULL. `log_density`
/// must be safe to call with `user_data`.
#[no_mangle]
pub unsafe extern "C" fn mb_adaptive_metropolis(
    log_density: MbLogDensity,
    user_data: *mut c_void,
    init: *const f64,
    init_std: *const f64,
    dim: usize,
    n_samples: usize,
    warmup: usize,
    seed: u64,
    samples: *mut f64,
    acceptance_rate: *mut f64,
) -> MbStatus {
    guard(|| {
        let f = log_density.ok_or(Failure::Null("log_density"))?;
        let init = input(init, dim, "init")?;
        let std = input(init_std, dim, "init_std")?;
        let out = output(samples, n_samples * dim, "samples")?;
        let cfg = AdaptConfig::for_ranges(std, 1.0, warmup);
        let chain = adaptive_metropolis(|t| f(t.as_ptr(), t.len(), user_data), init, n_samples, seed, &cfg)?;
        write_row_major(&chain.samples, out);
        if !acceptance_rate.is_null() {
            *acceptance_rate = chain.acceptance_rate;
        }
        Ok(())
    })
}
