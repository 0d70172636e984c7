//! C ABI over `pmefront`: build a pressure problem, check its boundary
//! conditions, and run the height solver.
//!
//! Handles are opaque and owned by the caller once returned; release them
//! with the matching `*_free`. Every fallible call returns a [`PmfStatus`]
//! and leaves a message retrievable with [`pmf_last_error`] on the calling
//! thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use pmefront::domain::Domain;
use pmefront::fichera::{check_conditions, Classification, FicheraTolerances};
use pmefront::fields::Grid;
use pmefront::oracle::ExactPmeSolution;
use pmefront::pme::{solve_pme, PmeRun, PmeRunConfig};
use pmefront::transform::{linearize_f, HState, PmeProblem};
use pmefront::{Error, ErrorClass};

/// Status codes. The first four match the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PmfStatus {
    Ok = 0,
    ConfigError = 1,
    PreconditionError = 2,
    NumericalError = 3,
    NullPointer = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

/// Boundary classification of the linearized operator at `h = 0`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PmfClassification {
    SatisfiesBPrime = 0,
    SatisfiesB = 1,
    SatisfiesBDoublePrimeOnly = 2,
    Fails = 3,
}

/// Opaque pressure problem on a grid.
pub struct PmfProblem {
    inner: PmeProblem,
}

/// Opaque result of a solver run.
pub struct PmfRun {
    inner: PmeRun,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> PmfStatus {
    match e.class() {
        ErrorClass::Config => PmfStatus::ConfigError,
        ErrorClass::Precondition => PmfStatus::PreconditionError,
        ErrorClass::Numerical => PmfStatus::NumericalError,
    }
}

fn guard(f: impl FnOnce() -> Result<(), PmfStatus>) -> PmfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            PmfStatus::Ok
        }
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic".into());
            PmfStatus::Panic
        }
    }
}

fn fail(e: Error) -> PmfStatus {
    set_error(e.to_string());
    status_of(&e)
}

fn null(what: &str) -> PmfStatus {
    set_error(format!("null pointer: {what}"));
    PmfStatus::NullPointer
}

fn store<T>(out: *mut *mut T, value: T) {
    // SAFETY: callers checked `out` for null.
    unsafe { *out = Box::into_raw(Box::new(value)) };
}

/// Copies the last error message of this thread into `buf` as a
/// NUL-terminated string, truncating to `len - 1` bytes. Returns the full
/// message length excluding the terminator.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn pmf_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Quadratic-pressure problem of exponent `m` in `dim` dimensions (1 or 2),
/// taken at time `t0` on its support with `resolution` nodes per direction.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn pmf_problem_quadratic_pressure(
    m: f64,
    dim: u32,
    a0: f64,
    t0: f64,
    resolution: usize,
    out: *mut *mut PmfProblem,
) -> PmfStatus {
    if out.is_null() {
        return null("out");
    }
    guard(|| {
        let exact = match dim {
            1 => ExactPmeSolution::quadratic_pressure_1d(m, a0),
            n => ExactPmeSolution::quadratic_pressure_radial(m, n as usize, a0),
        }
        .map_err(fail)?;
        let inner = PmeProblem::from_exact(&exact, t0, resolution, 2).map_err(fail)?;
        store(out, PmfProblem { inner });
        Ok(())
    })
}

/// Problem on the interval `[a, b]` with initial pressure given by an
/// expression in `x`.
///
/// # Safety
/// `source` must be a NUL-terminated string; `out` must be valid for one
/// handle.
#[no_mangle]
pub unsafe extern "C" fn pmf_problem_interval(
    m: f64,
    a: f64,
    b: f64,
    resolution: usize,
    source: *const c_char,
    out: *mut *mut PmfProblem,
) -> PmfStatus {
    if source.is_null() {
        return null("source");
    }
    if out.is_null() {
        return null("out");
    }
    let src = match CStr::from_ptr(source).to_str() {
        Ok(s) => s.to_owned(),
        Err(_) => return fail(Error::InvalidInput("source is not valid UTF-8".into())),
    };
    guard(|| {
        let dom = Domain::interval(a, b).map_err(fail)?;
        let grid = Grid::for_domain(&dom, resolution, 2).map_err(fail)?;
        let inner = PmeProblem::from_expression(m, dom, grid, &src).map_err(fail)?;
        store(out, PmfProblem { inner });
        Ok(())
    })
}

/// # Safety
/// `problem` must be null or a handle from a `pmf_problem_*` constructor
/// that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn pmf_problem_free(problem: *mut PmfProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Number of grid nodes of the problem.
///
/// # Safety
/// `problem` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pmf_problem_node_count(problem: *const PmfProblem) -> usize {
    problem.as_ref().map_or(0, |p| p.inner.grid().len())
}

/// Classifies the boundary behaviour of the linearized operator at `h = 0`.
///
/// # Safety
/// `problem` must be a live handle; `out` must be valid for one value.
#[no_mangle]
pub unsafe extern "C" fn pmf_check_fichera(
    problem: *const PmfProblem,
    tol_zero: f64,
    tol_strict: f64,
    out: *mut PmfClassification,
) -> PmfStatus {
    let Some(p) = problem.as_ref() else { return null("problem") };
    if out.is_null() {
        return null("out");
    }
    guard(|| {
        let p = &p.inner;
        let st = HState::zero(p, 0.0);
        let co = linearize_f(p, &st).map_err(fail)?;
        let tol = FicheraTolerances { zero_rel: tol_zero, strict_rel: tol_strict };
        let rep = check_conditions(&co, p.domain(), 0.0, tol).map_err(fail)?;
        *out = match rep.classification {
            Classification::SatisfiesBPrime => PmfClassification::SatisfiesBPrime,
            Classification::SatisfiesB => PmfClassification::SatisfiesB,
            Classification::SatisfiesBDoublePrimeOnly => PmfClassification::SatisfiesBDoublePrimeOnly,
            Classification::Fails => PmfClassification::Fails,
        };
        Ok(())
    })
}

/// Runs the implicit height solver from a cold start at `t_start` to `t_end`.
/// `force` nonzero skips the boundary-condition gate.
///
/// # Safety
/// `problem` must be a live handle; `out` must be valid for one handle.
#[no_mangle]
pub unsafe extern "C" fn pmf_solve(
    problem: *const PmfProblem,
    dt: f64,
    t_start: f64,
    t_end: f64,
    force: i32,
    out: *mut *mut PmfRun,
) -> PmfStatus {
    let Some(p) = problem.as_ref() else { return null("problem") };
    if out.is_null() {
        return null("out");
    }
    guard(|| {
        let cfg = PmeRunConfig { dt, t_start, t_end, force: force != 0, ..Default::default() };
        let inner = solve_pme(&p.inner, &cfg).map_err(fail)?;
        store(out, PmfRun { inner });
        Ok(())
    })
}

/// # Safety
/// `run` must be null or a handle from [`pmf_solve`] that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn pmf_run_free(run: *mut PmfRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Time reached by the run; below `t_end` when it stopped early.
///
/// # Safety
/// `run` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pmf_run_attained_t(run: *const PmfRun) -> f64 {
    run.as_ref().map_or(f64::NAN, |r| r.inner.final_state.t)
}

/// Copies the final height into `buf`, which holds `len` values.
///
/// # Safety
/// `run` must be a live handle; `buf` must point to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn pmf_run_final_height(run: *const PmfRun, buf: *mut f64, len: usize) -> PmfStatus {
    let Some(r) = run.as_ref() else { return null("run") };
    if buf.is_null() {
        return null("buf");
    }
    let h = &r.inner.final_state.h.values;
    if len < h.len() {
        set_error(format!("buffer holds {len} values, {} needed", h.len()));
        return PmfStatus::BufferTooSmall;
    }
    ptr::copy_nonoverlapping(h.as_ptr(), buf, h.len());
    PmfStatus::Ok
}

/// Writes the front points at the final sample, flattened by coordinate,
/// into `buf` and their count into `count`. A null `buf` only reports the
/// count.
///
/// # Safety
/// `run` must be a live handle; `count` must be valid; `buf` must be null
/// or hold `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn pmf_run_front(run: *const PmfRun, buf: *mut f64, len: usize, count: *mut usize) -> PmfStatus {
    let Some(r) = run.as_ref() else { return null("run") };
    if count.is_null() {
        return null("count");
    }
    let Some(last) = r.inner.front.samples.last() else {
        *count = 0;
        return PmfStatus::Ok;
    };
    *count = last.points.len();
    if buf.is_null() {
        return PmfStatus::Ok;
    }
    let flat: Vec<f64> = last.points.iter().flatten().copied().collect();
    if len < flat.len() {
        set_error(format!("buffer holds {len} values, {} needed", flat.len()));
        return PmfStatus::BufferTooSmall;
    }
    ptr::copy_nonoverlapping(flat.as_ptr(), buf, flat.len());
    PmfStatus::Ok
}
