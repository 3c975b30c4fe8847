//! C ABI over `nucnorm`.
//!
//! Objects are opaque handles created by `*_new` or returned through out
//! pointers and released with the matching `*_free`. Every fallible call
//! returns a [`NucnormStatus`]; on failure a message is available from
//! [`nucnorm_last_error`] until the next failing call on the same thread.
//! Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nucnorm::operators::{EntryMask, MeasurementMap, MeasurementVector};
use nucnorm::problems::{gen_instance, rel_error};
use nucnorm::solvers::{solve, Profile};
use nucnorm::{DenseMatrix, Error};

/// Result of a fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NucnormStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    SolverAbort = 3,
    Panic = 4,
}

/// Dense real matrix.
pub struct NucnormMatrix {
    inner: DenseMatrix,
}

/// Matrix completion problem: observed positions and values.
pub struct NucnormProblem {
    rows: usize,
    cols: usize,
    map: MeasurementMap,
    b: MeasurementVector,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
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

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> NucnormStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NucnormStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_last_error(format!("null pointer: {what}"));
            NucnormStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            let status = if e.is_input_error() {
                NucnormStatus::InvalidInput
            } else {
                NucnormStatus::SolverAbort
            };
            set_last_error(e.to_string());
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            NucnormStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn store<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn nucnorm_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn nucnorm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a `rows x cols` matrix from `rows * cols` row-major values.
///
/// # Safety
/// `values` must point to `rows * cols` readable doubles; `out` must be a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nucnorm_matrix_new(
    rows: usize,
    cols: usize,
    values: *const f64,
    out: *mut *mut NucnormMatrix,
) -> NucnormStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::InvalidArgument("matrix size overflows".into()))?;
        let data = slice(values, len, "values")?;
        let inner = DenseMatrix::from_row_major(rows, cols, data)?;
        inner.ensure_finite("matrix values")?;
        store(out, NucnormMatrix { inner });
        Ok(())
    })
}

/// # Safety
/// `m` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nucnorm_matrix_free(m: *mut NucnormMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Row count, 0 for NULL.
///
/// # Safety
/// `m` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nucnorm_matrix_rows(m: *const NucnormMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.inner.rows())
}

/// Column count, 0 for NULL.
///
/// # Safety
/// `m` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nucnorm_matrix_cols(m: *const NucnormMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.inner.cols())
}

/// Copies the entries in row-major order into `out`, which holds `len`
/// doubles; `len` must equal rows * cols.
///
/// # Safety
/// `m` must be a live handle and `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn nucnorm_matrix_copy(
    m: *const NucnormMatrix,
    out: *mut f64,
    len: usize,
) -> NucnormStatus {
    guard(|| {
        let m = deref(m, "matrix")?;
        let need = m.inner.rows() * m.inner.cols();
        if len != need {
            return Err(Error::InvalidArgument(format!("buffer holds {len} values, matrix has {need}")).into());
        }
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let dst = std::slice::from_raw_parts_mut(out, len);
        dst.copy_from_slice(&m.inner.to_row_major());
        Ok(())
    })
}

/// Creates a completion problem observing `values[t]` at
/// `(row_index[t], col_index[t])` for `t < count`, 0-based.
///
/// # Safety
/// The three arrays must hold `count` readable elements; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn nucnorm_problem_new(
    rows: usize,
    cols: usize,
    row_index: *const usize,
    col_index: *const usize,
    values: *const f64,
    count: usize,
    out: *mut *mut NucnormProblem,
) -> NucnormStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let ri = slice(row_index, count, "row_index")?;
        let ci = slice(col_index, count, "col_index")?;
        let vals = slice(values, count, "values")?;
        let omega = ri.iter().copied().zip(ci.iter().copied()).collect();
        let mask = EntryMask::new(rows, cols, omega)?;
        let b = MeasurementVector::new(vals.to_vec())?;
        store(
            out,
            NucnormProblem {
                rows,
                cols,
                map: mask.into(),
                b,
            },
        );
        Ok(())
    })
}

/// # Safety
/// `p` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nucnorm_problem_free(p: *mut NucnormProblem) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Number of observed entries, 0 for NULL.
///
/// # Safety
/// `p` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nucnorm_problem_len(p: *const NucnormProblem) -> usize {
    p.as_ref().map_or(0, |p| p.b.len())
}

/// Random rank-`rank` instance with `samples` observed entries. Either out
/// pointer may be NULL if that object is not wanted.
///
/// # Safety
/// Non-NULL out pointers must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn nucnorm_generate(
    rows: usize,
    cols: usize,
    rank: usize,
    samples: usize,
    seed: u64,
    problem_out: *mut *mut NucnormProblem,
    truth_out: *mut *mut NucnormMatrix,
) -> NucnormStatus {
    guard(|| {
        let inst = gen_instance(rows, cols, rank, samples, seed)?;
        let map = inst.map()?;
        if !problem_out.is_null() {
            store(
                problem_out,
                NucnormProblem {
                    rows,
                    cols,
                    map,
                    b: inst.b,
                },
            );
        }
        if !truth_out.is_null() {
            store(truth_out, NucnormMatrix { inner: inst.m });
        }
        Ok(())
    })
}

/// Solves `problem` with a named profile (`fpc1`, `fpc2`, `fpc3`, `fpca`,
/// `bregman`, `fpca-easy`); NULL selects `fpc1`. `seed` drives the
/// approximate SVD sampler.
///
/// # Safety
/// `problem` must be a live handle, `profile` NULL or a NUL-terminated
/// string, and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn nucnorm_solve(
    problem: *const NucnormProblem,
    profile: *const c_char,
    seed: u64,
    out: *mut *mut NucnormMatrix,
) -> NucnormStatus {
    guard(|| {
        let problem = deref(problem, "problem")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let profile = if profile.is_null() {
            Profile::Fpc1
        } else {
            CStr::from_ptr(profile)
                .to_str()
                .map_err(|_| Error::InvalidArgument("profile name is not UTF-8".into()))?
                .parse::<Profile>()?
        };
        let mut cfg = profile.config();
        cfg.seed = seed;
        let report = solve(&problem.map, &problem.b, &cfg)?;
        debug_assert_eq!(report.x_opt.shape(), (problem.rows, problem.cols));
        store(out, NucnormMatrix { inner: report.x_opt });
        Ok(())
    })
}

/// `‖x − truth‖_F / ‖truth‖_F`.
///
/// # Safety
/// Both handles must be live and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn nucnorm_rel_error(
    x: *const NucnormMatrix,
    truth: *const NucnormMatrix,
    out: *mut f64,
) -> NucnormStatus {
    guard(|| {
        let x = deref(x, "x")?;
        let truth = deref(truth, "truth")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        *out = rel_error(&x.inner, &truth.inner)?;
        Ok(())
    })
}
