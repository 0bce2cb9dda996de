//! C ABI for the `roughflow` crate.
//!
//! Objects cross the boundary as opaque handles ([`RfFields`], [`RfPath`])
//! that the caller releases with the matching `*_free` function. Every
//! fallible call returns an [`RfStatus`]; on failure the message is kept per
//! thread and can be read with [`rf_last_error`]. Panics are caught and
//! reported as `RF_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use roughflow::densitylab::{yamato_explicit, yamato_fields};
use roughflow::fbm::{covariance, FbmSampler, HurstParam, SamplePath, TimeGrid};
use roughflow::liefields::{hormander_rank, is_nilpotent, parse_field_file, PolyVectorField};
use roughflow::signature::levy_area;
use roughflow::strichartz::{StrichartzSystem, DEFAULT_FLOW_STEPS};
use roughflow::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Numeric = 4,
    Precondition = 5,
    Panic = 6,
}

/// Family of polynomial vector fields.
pub struct RfFields {
    fields: Vec<PolyVectorField>,
}

/// Path sampled on a uniform grid.
pub struct RfPath {
    path: SamplePath,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> RfStatus {
    match e {
        Error::Parse { .. } | Error::Json(_) => RfStatus::Parse,
        Error::Domain(_) | Error::Validation(_) => RfStatus::InvalidArgument,
        Error::Precondition(_) => RfStatus::Precondition,
        _ => RfStatus::Numeric,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (RfStatus, String)>) -> RfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RfStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside roughflow".into());
            RfStatus::Panic
        }
    }
}

fn lift<T>(r: roughflow::Result<T>) -> Result<T, (RfStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null() -> (RfStatus, String) {
    (RfStatus::NullPointer, "null pointer argument".into())
}

fn invalid(msg: impl Into<String>) -> (RfStatus, String) {
    (RfStatus::InvalidArgument, msg.into())
}

unsafe fn slice<'a>(p: *const f64, len: usize) -> Result<&'a [f64], (RfStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null());
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out(out: *mut f64, len: usize, values: &[f64]) -> Result<(), (RfStatus, String)> {
    if out.is_null() {
        return Err(null());
    }
    if len < values.len() {
        return Err(invalid(format!("output buffer holds {len} values, {} needed", values.len())));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

unsafe fn fields_ref<'a>(f: *const RfFields) -> Result<&'a [PolyVectorField], (RfStatus, String)> {
    f.as_ref().map(|f| f.fields.as_slice()).ok_or_else(null)
}

unsafe fn path_ref<'a>(p: *const RfPath) -> Result<&'a SamplePath, (RfStatus, String)> {
    p.as_ref().map(|p| &p.path).ok_or_else(null)
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// fBm covariance `½(s^{2H} + t^{2H} - |t-s|^{2H})`.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn rf_covariance(s: f64, t: f64, hurst: f64, out: *mut f64) -> RfStatus {
    guard(|| {
        let v = lift(HurstParam::new(hurst).and_then(|h| covariance(s, t, h)))?;
        write_out(out, 1, &[v])
    })
}

/// Parse a field file (`m d` header then `d` blocks of `m` polynomial lines).
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn rf_fields_parse(text: *const c_char, out: *mut *mut RfFields) -> RfStatus {
    guard(|| {
        if text.is_null() || out.is_null() {
            return Err(null());
        }
        let s = CStr::from_ptr(text)
            .to_str()
            .map_err(|e| (RfStatus::Parse, format!("field text is not UTF-8: {e}")))?;
        let fields = lift(parse_field_file(s))?;
        *out = Box::into_raw(Box::new(RfFields { fields }));
        Ok(())
    })
}

/// The Yamato family on ℝ³ with three driving components.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn rf_fields_yamato(out: *mut *mut RfFields) -> RfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        *out = Box::into_raw(Box::new(RfFields { fields: yamato_fields() }));
        Ok(())
    })
}

/// # Safety
/// `f` must come from this library and not be used afterwards; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn rf_fields_free(f: *mut RfFields) {
    if !f.is_null() {
        drop(Box::from_raw(f));
    }
}

/// State dimension `m` and number of fields `d`.
///
/// # Safety
/// `f` must be a live handle; `m` and `d` valid for one write each.
#[no_mangle]
pub unsafe extern "C" fn rf_fields_dims(f: *const RfFields, m: *mut usize, d: *mut usize) -> RfStatus {
    guard(|| {
        let fields = fields_ref(f)?;
        if m.is_null() || d.is_null() {
            return Err(null());
        }
        *m = fields.first().map_or(0, PolyVectorField::dim);
        *d = fields.len();
        Ok(())
    })
}

/// Whether every bracket of length `n` vanishes.
///
/// # Safety
/// `f` must be a live handle and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn rf_fields_is_nilpotent(f: *const RfFields, n: usize, out: *mut bool) -> RfStatus {
    guard(|| {
        let fields = fields_ref(f)?;
        if out.is_null() {
            return Err(null());
        }
        *out = lift(is_nilpotent(fields, n))?.0;
        Ok(())
    })
}

/// Rank of the brackets of length ≤ `up_to` at `x`.
///
/// # Safety
/// `x` must hold `len` values, `f` must be live and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn rf_fields_hormander_rank(
    f: *const RfFields,
    x: *const f64,
    len: usize,
    up_to: usize,
    out: *mut usize,
) -> RfStatus {
    guard(|| {
        let fields = fields_ref(f)?;
        let x = slice(x, len)?;
        if out.is_null() {
            return Err(null());
        }
        *out = lift(hormander_rank(fields, x, up_to))?;
        Ok(())
    })
}

/// Path `index` of the stream `seed` of `d`-dimensional fBm on
/// `n_points` uniform points of `[0, horizon]`.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn rf_sample_fbm(
    hurst: f64,
    horizon: f64,
    n_points: usize,
    d: usize,
    seed: u64,
    index: u64,
    out: *mut *mut RfPath,
) -> RfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        let path = lift(
            HurstParam::new(hurst)
                .and_then(|h| FbmSampler::new(h, TimeGrid::new(horizon, n_points)?))
                .and_then(|s| s.sample_one(d, seed, index)),
        )?;
        *out = Box::into_raw(Box::new(RfPath { path }));
        Ok(())
    })
}

/// Path from row-major values (`n_points × d`, first row zero).
///
/// # Safety
/// `values` must hold `n_points * d` values and `out` be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn rf_path_from_values(
    horizon: f64,
    n_points: usize,
    d: usize,
    values: *const f64,
    out: *mut *mut RfPath,
) -> RfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        let v = slice(values, n_points.saturating_mul(d))?.to_vec();
        let path = lift(TimeGrid::new(horizon, n_points).and_then(|g| SamplePath::from_values(g, d, v)))?;
        *out = Box::into_raw(Box::new(RfPath { path }));
        Ok(())
    })
}

/// # Safety
/// `p` must come from this library and not be used afterwards; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn rf_path_free(p: *mut RfPath) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Number of grid points and components.
///
/// # Safety
/// `p` must be live; `n_points` and `d` valid for one write each.
#[no_mangle]
pub unsafe extern "C" fn rf_path_len(p: *const RfPath, n_points: *mut usize, d: *mut usize) -> RfStatus {
    guard(|| {
        let path = path_ref(p)?;
        if n_points.is_null() || d.is_null() {
            return Err(null());
        }
        *n_points = path.len();
        *d = path.dim();
        Ok(())
    })
}

/// Copy the row-major values (`n_points × d`) into `out`.
///
/// # Safety
/// `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn rf_path_values(p: *const RfPath, out: *mut f64, len: usize) -> RfStatus {
    guard(|| write_out(out, len, path_ref(p)?.values()))
}

/// Row-major `d × d` second-level iterated integral `B²_{st}`.
///
/// # Safety
/// `p` must be live and `out` hold `len ≥ d²` values.
#[no_mangle]
pub unsafe extern "C" fn rf_levy_area(p: *const RfPath, s: f64, t: f64, out: *mut f64, len: usize) -> RfStatus {
    guard(|| {
        let m = lift(levy_area(path_ref(p)?, s, t))?;
        let d = m.nrows();
        let row_major: Vec<f64> = (0..d * d).map(|k| m[(k / d, k % d)]).collect();
        write_out(out, len, &row_major)
    })
}

/// `y_t = exp(Z_t)(a)` for fields nilpotent of order `order`.
///
/// # Safety
/// `a` must hold `m` values and `out` hold `out_len ≥ m` values.
#[no_mangle]
pub unsafe extern "C" fn rf_strichartz_solve(
    f: *const RfFields,
    p: *const RfPath,
    order: usize,
    a: *const f64,
    m: usize,
    t: f64,
    out: *mut f64,
    out_len: usize,
) -> RfStatus {
    guard(|| {
        let fields = fields_ref(f)?;
        let path = path_ref(p)?;
        let a = slice(a, m)?;
        let y = lift(StrichartzSystem::new(fields, order).and_then(|s| s.solve(path, a, t, DEFAULT_FLOW_STEPS)))?;
        write_out(out, out_len, &y)
    })
}

/// Closed-form Yamato solution at `t` for a 3-dimensional driver.
///
/// # Safety
/// `a` must hold 3 values and `out` hold `out_len ≥ 3` values.
#[no_mangle]
pub unsafe extern "C" fn rf_yamato_explicit(
    p: *const RfPath,
    a: *const f64,
    t: f64,
    out: *mut f64,
    out_len: usize,
) -> RfStatus {
    guard(|| {
        let y = lift(yamato_explicit(path_ref(p)?, slice(a, 3)?, t))?;
        write_out(out, out_len, &y)
    })
}
