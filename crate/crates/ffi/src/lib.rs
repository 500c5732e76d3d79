//! C interface to the covshrink estimators.
//!
//! Matrices cross the boundary as opaque `CsMatrix` handles owned by the
//! caller and released with `cs_matrix_free`. Every fallible function returns
//! a `CsStatus`; on failure `cs_last_error` describes the problem for the
//! calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use covshrink::error::{CovError, ErrorClass};
use covshrink::la::{scaled_frobenius_loss, DataMatrix, SymmetricEstimate};
use covshrink::methods::{EstimateContext, Method, MethodEntry};
use covshrink::posdef::{correct_pd, PdCorrectionConfig};
use covshrink::sim::{make_sigma, sample_mvn, ModelSpec};
use nalgebra::DMatrix;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsStatus {
    Ok = 0,
    NullPointer = 1,
    Config = 2,
    Data = 3,
    Numeric = 4,
    Panic = 5,
}

/// Opaque symmetric matrix with its estimator label.
pub struct CsMatrix {
    inner: SymmetricEstimate,
    method: CString,
}

impl CsMatrix {
    fn boxed(inner: SymmetricEstimate) -> *mut CsMatrix {
        let method = CString::new(inner.method()).unwrap_or_default();
        Box::into_raw(Box::new(CsMatrix { inner, method }))
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum Failure {
    Null(&'static str),
    Lib(CovError),
}

impl From<CovError> for Failure {
    fn from(e: CovError) -> Self {
        Failure::Lib(e)
    }
}

type FfiResult = Result<(), Failure>;

fn guard(f: impl FnOnce() -> FfiResult) -> CsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CsStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            CsStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            match e.class() {
                ErrorClass::Config => CsStatus::Config,
                ErrorClass::Data => CsStatus::Data,
                ErrorClass::Numeric => CsStatus::Numeric,
            }
        }
        Err(_) => {
            set_error("internal panic".into());
            CsStatus::Panic
        }
    }
}

unsafe fn matrix_ref<'a>(m: *const CsMatrix, what: &'static str) -> Result<&'a CsMatrix, Failure> {
    m.as_ref().ok_or(Failure::Null(what))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &'static str) -> FfiResult {
    if out.is_null() {
        return Err(Failure::Null(what));
    }
    out.write(value);
    Ok(())
}

fn parse_method(s: &str) -> Result<Method, CovError> {
    if s.trim_start().starts_with('{') {
        serde_json::from_str::<MethodEntry>(s).map_err(CovError::from)?.resolve()
    } else {
        s.parse()
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Estimates a covariance matrix from `n × p` row-major data.
///
/// `method` is a method name such as `"msgcor"` or a JSON object such as
/// `{"name":"adap","delta":1.5}`. `truth` may be NULL unless the method is an
/// oracle. `k_factor` sets `K = round(k_factor · p)` for the g-modeling
/// methods.
///
/// # Safety
/// `data` must point to `n * p` doubles, `method` to a NUL-terminated string,
/// `truth` to a live handle or NULL, and `out` to writable storage.
#[no_mangle]
pub unsafe extern "C" fn cs_estimate(
    data: *const f64,
    n: usize,
    p: usize,
    method: *const c_char,
    truth: *const CsMatrix,
    seed: u64,
    k_factor: f64,
    out: *mut *mut CsMatrix,
) -> CsStatus {
    guard(|| {
        if data.is_null() {
            return Err(Failure::Null("data"));
        }
        if method.is_null() {
            return Err(Failure::Null("method"));
        }
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let len = n.checked_mul(p).ok_or_else(|| CovError::Dimension("n * p overflows".into()))?;
        if len == 0 {
            return Err(CovError::Dimension("data must be non-empty".into()).into());
        }
        let name = CStr::from_ptr(method).to_str().map_err(|_| CovError::Config("method is not valid UTF-8".into()))?;
        let method = parse_method(name)?;
        let values = std::slice::from_raw_parts(data, len);
        let x = DataMatrix::new(DMatrix::from_row_slice(n, p, values))?;
        let truth = truth.as_ref().map(|t| &t.inner);
        let ctx = EstimateContext { truth, seed, k_factor, ..Default::default() };
        let est = method.estimate(&x, &ctx)?;
        out.write(CsMatrix::boxed(est.estimate));
        Ok(())
    })
}

/// Population covariance of simulation model `model_id` (1 to 6).
///
/// # Safety
/// `out` must point to writable storage.
#[no_mangle]
pub unsafe extern "C" fn cs_make_sigma(model_id: u8, p: usize, seed: u64, out: *mut *mut CsMatrix) -> CsStatus {
    guard(|| {
        let sigma = make_sigma(&ModelSpec::new(model_id, p).with_seed(seed))?;
        write_out(out, CsMatrix::boxed(sigma), "out")
    })
}

/// Draws `n` rows of `N(0, sigma)` into `out`, row-major, `n * p` doubles.
///
/// # Safety
/// `sigma` must be a live handle and `out` must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cs_sample_mvn(
    sigma: *const CsMatrix,
    n: usize,
    seed: u64,
    out: *mut f64,
    out_len: usize,
) -> CsStatus {
    guard(|| {
        let sigma = matrix_ref(sigma, "sigma")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let p = sigma.inner.dim();
        if out_len != n * p {
            return Err(CovError::Dimension(format!("buffer holds {out_len} values, need {}", n * p)).into());
        }
        let x = sample_mvn(&sigma.inner, n, seed)?;
        let buf = std::slice::from_raw_parts_mut(out, out_len);
        for (i, row) in x.values().row_iter().enumerate() {
            buf[i * p..(i + 1) * p].iter_mut().zip(row.iter()).for_each(|(b, v)| *b = *v);
        }
        Ok(())
    })
}

/// Positive-definite correction; `grid_size = 20`, `alpha_max = 10` are the
/// usual settings.
///
/// # Safety
/// `m` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cs_correct_pd(
    m: *const CsMatrix,
    grid_size: usize,
    alpha_max: f64,
    out: *mut *mut CsMatrix,
) -> CsStatus {
    guard(|| {
        let m = matrix_ref(m, "m")?;
        let fixed = correct_pd(&m.inner, &PdCorrectionConfig { grid_size, alpha_max })?;
        write_out(out, CsMatrix::boxed(fixed), "out")
    })
}

/// `‖A − B‖_F / p`.
///
/// # Safety
/// `a` and `b` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cs_scaled_frobenius_loss(a: *const CsMatrix, b: *const CsMatrix, out: *mut f64) -> CsStatus {
    guard(|| {
        let loss = scaled_frobenius_loss(&matrix_ref(a, "a")?.inner, &matrix_ref(b, "b")?.inner)?;
        write_out(out, loss, "out")
    })
}

/// Dimension `p`, or 0 for NULL.
///
/// # Safety
/// `m` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn cs_matrix_dim(m: *const CsMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.inner.dim())
}

/// # Safety
/// `m` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cs_matrix_get(m: *const CsMatrix, i: usize, j: usize, out: *mut f64) -> CsStatus {
    guard(|| {
        let m = matrix_ref(m, "m")?;
        let p = m.inner.dim();
        if i >= p || j >= p {
            return Err(CovError::Dimension(format!("index ({i}, {j}) out of range for p = {p}")).into());
        }
        write_out(out, m.inner.values()[(i, j)], "out")
    })
}

/// Copies all `p * p` entries, row-major, into `buf`.
///
/// # Safety
/// `m` must be a live handle and `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cs_matrix_copy(m: *const CsMatrix, buf: *mut f64, len: usize) -> CsStatus {
    guard(|| {
        let m = matrix_ref(m, "m")?;
        if buf.is_null() {
            return Err(Failure::Null("buf"));
        }
        let p = m.inner.dim();
        if len != p * p {
            return Err(CovError::Dimension(format!("buffer holds {len} values, need {}", p * p)).into());
        }
        let out = std::slice::from_raw_parts_mut(buf, len);
        for i in 0..p {
            for j in 0..p {
                out[i * p + j] = m.inner.values()[(i, j)];
            }
        }
        Ok(())
    })
}

/// Estimator label of the matrix, valid while the handle lives.
///
/// # Safety
/// `m` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn cs_matrix_method(m: *const CsMatrix) -> *const c_char {
    m.as_ref().map_or(ptr::null(), |m| m.method.as_ptr())
}

/// Releases a handle. NULL is ignored.
///
/// # Safety
/// `m` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cs_matrix_free(m: *mut CsMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}
