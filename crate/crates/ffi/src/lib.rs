//! C ABI over `haartest`.
//!
//! Handles are opaque and owned by the caller, who frees them with the
//! matching `*_free`. Every fallible call returns an [`HtStatus`]; on failure
//! [`ht_last_error`] holds a message for the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use haartest::characteristics::{a2_lambda, comparability, haar_testing, haar_testing_dual, CubeSource, TestingMode};
use haartest::cli::{envelope, execute};
use haartest::config::RunConfig;
use haartest::dyadic::Grid;
use haartest::measure::{MeasureSpec, MeshMeasure};
use haartest::operator::{DiscreteOperator, Kernel, Truncation};
use haartest::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    CheckFailed = 4,
    Numerical = 5,
    Io = 6,
    Panic = 7,
}

pub struct HtGrid {
    inner: Grid,
}

pub struct HtMeasure {
    inner: MeshMeasure,
}

pub struct HtOperator {
    inner: DiscreteOperator,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct HtComparability {
    pub norm: f64,
    pub testing: f64,
    pub testing_dual: f64,
    pub ratio: f64,
    pub converged: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> HtStatus {
    match e {
        Error::InvalidParameter(_) | Error::TruncationUnderResolved { .. } | Error::MeshExhausted { .. } => HtStatus::InvalidArgument,
        Error::Config(_) => HtStatus::Config,
        Error::CheckFailed { .. } => HtStatus::CheckFailed,
        Error::Io(_) | Error::Csv(_) | Error::Json(_) => HtStatus::Io,
        _ => HtStatus::Numerical,
    }
}

struct Fail(HtStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> HtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            HtStatus::Ok
        }
        Ok(Err(Fail(s, m))) => {
            set_error(&m);
            s
        }
        Err(_) => {
            set_error("panic inside haartest");
            HtStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| Fail(HtStatus::NullPointer, format!("{what} is NULL")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| Fail(HtStatus::NullPointer, format!("{what} is NULL")))
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(HtStatus::NullPointer, format!("{what} is NULL")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(HtStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Message of the last failed call on this thread, or an empty string.
/// Valid until the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn ht_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ht_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Unit-cube grid in `dim` dimensions refined to `max_level`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ht_grid_new(dim: usize, max_level: u32, out: *mut *mut HtGrid) -> HtStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let g = Grid::new(dim, max_level)?;
        *out = Box::into_raw(Box::new(HtGrid { inner: g }));
        Ok(())
    })
}

/// # Safety
/// `grid` must come from [`ht_grid_new`] and not be freed twice. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn ht_grid_free(grid: *mut HtGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Number of finest-level cells, or 0 for NULL.
///
/// # Safety
/// `grid` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ht_grid_cell_count(grid: *const HtGrid) -> usize {
    grid.as_ref().map_or(0, |g| g.inner.cell_count())
}

/// Measure from a spec string such as `"lebesgue"` or `"doubling:2:7"`.
///
/// # Safety
/// `grid` must be a live handle, `spec` a NUL-terminated string, `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ht_measure_new(grid: *const HtGrid, spec: *const c_char, out: *mut *mut HtMeasure) -> HtStatus {
    guard(|| {
        let g = deref(grid, "grid")?;
        let spec: MeasureSpec = string(spec, "spec")?.parse()?;
        let out = out_ptr(out, "out")?;
        let m = MeshMeasure::generate(&g.inner, &spec)?;
        *out = Box::into_raw(Box::new(HtMeasure { inner: m }));
        Ok(())
    })
}

/// Measure with the given mass on each finest-level cell.
///
/// # Safety
/// `masses` must point to `len` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn ht_measure_from_cells(
    grid: *const HtGrid,
    masses: *const f64,
    len: usize,
    out: *mut *mut HtMeasure,
) -> HtStatus {
    guard(|| {
        let g = deref(grid, "grid")?;
        deref(masses, "masses")?;
        let out = out_ptr(out, "out")?;
        let cells = std::slice::from_raw_parts(masses, len).to_vec();
        let m = MeshMeasure::from_cells(g.inner.clone(), cells, "custom")?;
        *out = Box::into_raw(Box::new(HtMeasure { inner: m }));
        Ok(())
    })
}

/// # Safety
/// `m` must come from a measure constructor and not be freed twice. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn ht_measure_free(m: *mut HtMeasure) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// # Safety
/// `m` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ht_measure_total(m: *const HtMeasure, out: *mut f64) -> HtStatus {
    guard(|| {
        *out_ptr(out, "out")? = deref(m, "measure")?.inner.total();
        Ok(())
    })
}

/// Truncated operator with the default truncation for the grid.
/// `kernel` is `hilbert`, `fractional_integral`, `riesz_like` or `zero`.
///
/// # Safety
/// `grid` must be live, `kernel` NUL-terminated and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ht_operator_new(
    grid: *const HtGrid,
    kernel: *const c_char,
    lambda: f64,
    out: *mut *mut HtOperator,
) -> HtStatus {
    guard(|| {
        let g = deref(grid, "grid")?;
        let k = Kernel::from_name(string(kernel, "kernel")?, g.inner.dim(), lambda)?;
        let out = out_ptr(out, "out")?;
        let op = DiscreteOperator::new(&g.inner, &k, &Truncation::default_for(&g.inner))?;
        *out = Box::into_raw(Box::new(HtOperator { inner: op }));
        Ok(())
    })
}

/// # Safety
/// `op` must come from [`ht_operator_new`] and not be freed twice. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn ht_operator_free(op: *mut HtOperator) {
    if !op.is_null() {
        drop(Box::from_raw(op));
    }
}

unsafe fn triple<'a>(
    op: *const HtOperator,
    sigma: *const HtMeasure,
    omega: *const HtMeasure,
) -> Result<(&'a DiscreteOperator, &'a MeshMeasure, &'a MeshMeasure), Fail> {
    Ok((&deref(op, "op")?.inner, &deref(sigma, "sigma")?.inner, &deref(omega, "omega")?.inner))
}

/// Global Haar testing constant over levels `0..depth`; `dual` swaps the
/// roles of the measures and transposes the kernel.
///
/// # Safety
/// All handles must be live and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ht_haar_testing(
    op: *const HtOperator,
    sigma: *const HtMeasure,
    omega: *const HtMeasure,
    depth: u32,
    dual: bool,
    out: *mut f64,
) -> HtStatus {
    guard(|| {
        let (o, s, w) = triple(op, sigma, omega)?;
        let out = out_ptr(out, "out")?;
        let r = if dual {
            haar_testing_dual(o, s, w, TestingMode::Global, depth, 1, 0)?
        } else {
            haar_testing(o, s, w, TestingMode::Global, depth, 1, 0)?
        };
        *out = r.value;
        Ok(())
    })
}

/// Tested operator norm against both Haar testing constants.
///
/// # Safety
/// All handles must be live and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ht_comparability(
    op: *const HtOperator,
    sigma: *const HtMeasure,
    omega: *const HtMeasure,
    depth: u32,
    rotation_samples: u32,
    seed: u64,
    out: *mut HtComparability,
) -> HtStatus {
    guard(|| {
        let (o, s, w) = triple(op, sigma, omega)?;
        let out = out_ptr(out, "out")?;
        let c = comparability(o, s, w, depth, rotation_samples, seed)?;
        *out = HtComparability { norm: c.norm, testing: c.testing, testing_dual: c.testing_dual, ratio: c.ratio, converged: c.converged };
        Ok(())
    })
}

/// Fractional A₂ characteristic over dyadic cubes of levels `0..depth`.
///
/// # Safety
/// Both measures must be live and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ht_a2_lambda(sigma: *const HtMeasure, omega: *const HtMeasure, lambda: f64, depth: u32, out: *mut f64) -> HtStatus {
    guard(|| {
        let (s, w) = (&deref(sigma, "sigma")?.inner, &deref(omega, "omega")?.inner);
        let out = out_ptr(out, "out")?;
        *out = a2_lambda(s, w, lambda, &CubeSource::Dyadic { depth })?.value;
        Ok(())
    })
}

/// Run a TOML config and return the JSON report without run metadata.
/// A failed check still yields the report, with status
/// [`HtStatus::CheckFailed`]. Free the string with [`ht_string_free`].
///
/// # Safety
/// `config` must be NUL-terminated and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ht_run_json(config: *const c_char, out: *mut *mut c_char) -> HtStatus {
    guard(|| {
        let text = string(config, "config")?;
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let cfg = RunConfig::from_toml_str(text)?.resolve()?;
        let outcome = execute(&cfg)?;
        let doc = envelope(&cfg, &outcome, serde_json::Value::Null)?;
        let body = serde_json::to_string_pretty(&doc).map_err(Error::from)?;
        *out = CString::new(body).map_err(|_| Fail(HtStatus::Io, "report contains NUL".into()))?.into_raw();
        match outcome.failure {
            Some(e) => Err(e.into()),
            None => Ok(()),
        }
    })
}

/// # Safety
/// `s` must come from [`ht_run_json`] and not be freed twice. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn ht_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
