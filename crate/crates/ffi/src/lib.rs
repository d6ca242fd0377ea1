//! C interface to `poisson-denoise`.
//!
//! Images cross the boundary as opaque handles created from row-major
//! buffers. Every fallible call returns a [`PdnStatus`]; on failure
//! [`pdn_last_error_message`] describes the error for the calling thread.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use poisson_denoise::experiment::{run_method, Method};
use poisson_denoise::image::{scale_to_source, CountImage, Grid, IntensityImage, SourceField};
use poisson_denoise::lbp::Correlations;
use poisson_denoise::restore::RestoreConfig;
use poisson_denoise::{channel, metrics, Error};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PdnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    DegenerateContrast = 3,
    CountExceedsK = 4,
    ShapeMismatch = 5,
    TooLarge = 6,
    /// LBP divergence or a failed dense factorization.
    Numerical = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PdnMethod {
    Ours = 0,
    Exact = 1,
    Glbp = 2,
    Median = 3,
}

/// Restoration settings. Start from `pdn_config_default`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PdnConfig {
    /// Binomial trial count; 0 picks `max(256, 2 * max count)`.
    pub k: u32,
    pub h: f64,
    pub alpha0: f64,
    pub xi0: f64,
    pub lbp_tol: f64,
    pub lbp_max_sweeps: usize,
    pub damping: f64,
    pub em_tol: f64,
    pub em_max_iters: usize,
    pub mean_field: bool,
}

impl From<&PdnConfig> for RestoreConfig {
    fn from(c: &PdnConfig) -> Self {
        let mut cfg = RestoreConfig {
            k: (c.k != 0).then_some(c.k),
            h: c.h,
            alpha0: c.alpha0,
            xi0: c.xi0,
            em_tol: c.em_tol,
            em_max_iter: c.em_max_iters,
            correlations: if c.mean_field { Correlations::MeanField } else { Correlations::Pairwise },
            ..Default::default()
        };
        cfg.lbp.tol = c.lbp_tol;
        cfg.lbp.max_sweeps = c.lbp_max_sweeps;
        cfg.lbp.damping = c.damping;
        cfg
    }
}

/// Count image handle.
pub struct PdnCounts(CountImage);

/// Real-valued field handle.
pub struct PdnField(IntensityImage);

/// Restoration output handle.
pub struct PdnResult {
    lambda: PdnField,
    alpha: f64,
    iterations: usize,
    converged: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg).unwrap_or_else(|e| {
        let end = e.nul_position();
        CString::new(&e.into_vec()[..end]).expect("truncated at first nul")
    });
    LAST_ERROR.with(|slot| *slot.borrow_mut() = c);
}

fn status_of(e: &Error) -> PdnStatus {
    match e {
        Error::DegenerateContrast(_) | Error::ZeroDynamicRange => PdnStatus::DegenerateContrast,
        Error::CountExceedsK { .. } => PdnStatus::CountExceedsK,
        Error::ShapeMismatch { .. } | Error::OutOfBounds { .. } => PdnStatus::ShapeMismatch,
        Error::TooLarge { .. } => PdnStatus::TooLarge,
        Error::Diverged { .. } | Error::NotPositiveDefinite | Error::SaddleNoSolution(_) => PdnStatus::Numerical,
        _ => PdnStatus::InvalidInput,
    }
}

/// Runs `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), PdnStatus>) -> PdnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            PdnStatus::Ok
        }
        Ok(Err(status)) => status,
        Err(_) => {
            set_error("internal panic".into());
            PdnStatus::Panic
        }
    }
}

fn fail(e: Error) -> PdnStatus {
    let status = status_of(&e);
    set_error(e.to_string());
    status
}

fn null(what: &str) -> PdnStatus {
    set_error(format!("{what} is NULL"));
    PdnStatus::NullPointer
}

unsafe fn read_buffer<T: Copy>(data: *const T, width: usize, height: usize) -> Result<Vec<T>, PdnStatus> {
    if data.is_null() {
        return Err(null("data"));
    }
    let n = width.checked_mul(height).ok_or_else(|| fail(Error::InvalidInput("image size overflows".into())))?;
    Ok(std::slice::from_raw_parts(data, n).to_vec())
}

unsafe fn store<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

#[no_mangle]
pub extern "C" fn pdn_config_default() -> PdnConfig {
    let d = RestoreConfig::default();
    PdnConfig {
        k: 0,
        h: d.h,
        alpha0: d.alpha0,
        xi0: d.xi0,
        lbp_tol: d.lbp.tol,
        lbp_max_sweeps: d.lbp.max_sweeps,
        damping: d.lbp.damping,
        em_tol: d.em_tol,
        em_max_iters: d.em_max_iter,
        mean_field: false,
    }
}

/// Message for the last failed call on this thread. Valid until the next
/// call into the library on the same thread; never NULL.
#[no_mangle]
pub extern "C" fn pdn_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Copies `width * height` counts (row-major) into a new handle.
#[no_mangle]
pub unsafe extern "C" fn pdn_counts_new(data: *const u32, width: usize, height: usize, out: *mut *mut PdnCounts) -> PdnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let values = read_buffer(data, width, height)?;
        let grid = Grid::new(width, height, values).map_err(fail)?;
        store(out, PdnCounts(grid));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn pdn_counts_free(counts: *mut PdnCounts) {
    if !counts.is_null() {
        drop(Box::from_raw(counts));
    }
}

#[no_mangle]
pub unsafe extern "C" fn pdn_counts_width(counts: *const PdnCounts) -> usize {
    counts.as_ref().map_or(0, |c| c.0.width())
}

#[no_mangle]
pub unsafe extern "C" fn pdn_counts_height(counts: *const PdnCounts) -> usize {
    counts.as_ref().map_or(0, |c| c.0.height())
}

/// Borrowed row-major data, valid while `counts` lives.
#[no_mangle]
pub unsafe extern "C" fn pdn_counts_data(counts: *const PdnCounts) -> *const u32 {
    counts.as_ref().map_or(ptr::null(), |c| c.0.as_slice().as_ptr())
}

/// Copies `width * height` finite values (row-major) into a new handle.
#[no_mangle]
pub unsafe extern "C" fn pdn_field_new(data: *const f64, width: usize, height: usize, out: *mut *mut PdnField) -> PdnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let values = read_buffer(data, width, height)?;
        let grid = Grid::from_values(width, height, values).map_err(fail)?;
        store(out, PdnField(grid));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn pdn_field_free(field: *mut PdnField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

#[no_mangle]
pub unsafe extern "C" fn pdn_field_width(field: *const PdnField) -> usize {
    field.as_ref().map_or(0, |f| f.0.width())
}

#[no_mangle]
pub unsafe extern "C" fn pdn_field_height(field: *const PdnField) -> usize {
    field.as_ref().map_or(0, |f| f.0.height())
}

/// Borrowed row-major data, valid while `field` lives.
#[no_mangle]
pub unsafe extern "C" fn pdn_field_data(field: *const PdnField) -> *const f64 {
    field.as_ref().map_or(ptr::null(), |f| f.0.as_slice().as_ptr())
}

/// Affinely maps `image` onto `[lambda_min, lambda_max]`.
#[no_mangle]
pub unsafe extern "C" fn pdn_scale_to_source(
    image: *const PdnField,
    lambda_min: f64,
    lambda_max: f64,
    out: *mut *mut PdnField,
) -> PdnStatus {
    guard(|| {
        let (Some(img), false) = (image.as_ref(), out.is_null()) else {
            return Err(null("image or out"));
        };
        let src = scale_to_source(&img.0, lambda_min, lambda_max).map_err(fail)?;
        store(out, PdnField(src.into_grid()));
        Ok(())
    })
}

/// Draws Poisson counts for a strictly positive intensity field.
#[no_mangle]
pub unsafe extern "C" fn pdn_poisson_sample(lambda: *const PdnField, seed: u64, out: *mut *mut PdnCounts) -> PdnStatus {
    guard(|| {
        let (Some(field), false) = (lambda.as_ref(), out.is_null()) else {
            return Err(null("lambda or out"));
        };
        let src = SourceField::new(field.0.clone()).map_err(fail)?;
        store(out, PdnCounts(channel::poisson_sample(&src, seed)));
        Ok(())
    })
}

/// Restores intensities from counts. `config` may be NULL for defaults.
#[no_mangle]
pub unsafe extern "C" fn pdn_restore(
    counts: *const PdnCounts,
    method: PdnMethod,
    config: *const PdnConfig,
    out: *mut *mut PdnResult,
) -> PdnStatus {
    guard(|| {
        let (Some(z), false) = (counts.as_ref(), out.is_null()) else {
            return Err(null("counts or out"));
        };
        let cfg = config.as_ref().map_or_else(RestoreConfig::default, RestoreConfig::from);
        cfg.validate().map_err(fail)?;
        let method = match method {
            PdnMethod::Ours => Method::Ours,
            PdnMethod::Exact => Method::Exact,
            PdnMethod::Glbp => Method::Glbp,
            PdnMethod::Median => Method::Median,
        };
        let output = run_method(method, &z.0, &cfg).map_err(fail)?;
        let (alpha, iterations, converged) = output.diagnostics.as_ref().map_or((f64::NAN, 0, true), |d| {
            (d.iterations.last().map_or(f64::NAN, |it| it.alpha), d.iterations.len(), d.em_converged)
        });
        store(out, PdnResult { lambda: PdnField(output.lambda), alpha, iterations, converged });
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn pdn_result_free(result: *mut PdnResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Borrowed restored field, valid while `result` lives.
#[no_mangle]
pub unsafe extern "C" fn pdn_result_lambda(result: *const PdnResult) -> *const PdnField {
    result.as_ref().map_or(ptr::null(), |r| &r.lambda as *const PdnField)
}

/// Final smoothness `α`; NaN for the median filter.
#[no_mangle]
pub unsafe extern "C" fn pdn_result_alpha(result: *const PdnResult) -> f64 {
    result.as_ref().map_or(f64::NAN, |r| r.alpha)
}

#[no_mangle]
pub unsafe extern "C" fn pdn_result_iterations(result: *const PdnResult) -> usize {
    result.as_ref().map_or(0, |r| r.iterations)
}

#[no_mangle]
pub unsafe extern "C" fn pdn_result_converged(result: *const PdnResult) -> bool {
    result.as_ref().is_some_and(|r| r.converged)
}

/// PSNR of `test` against `reference` using the reference's dynamic range.
#[no_mangle]
pub unsafe extern "C" fn pdn_psnr(test: *const PdnField, reference: *const PdnField, out: *mut f64) -> PdnStatus {
    guard(|| {
        let (Some(t), Some(r), false) = (test.as_ref(), reference.as_ref(), out.is_null()) else {
            return Err(null("test, reference or out"));
        };
        *out = metrics::psnr(&t.0, &r.0).map_err(fail)?;
        Ok(())
    })
}
