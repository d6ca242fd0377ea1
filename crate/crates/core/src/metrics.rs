//! MSE / PSNR / ISNR and boxplot-style aggregation.
//!
//! PSNR uses the dynamic range of the reference field, `(max λ* − min λ*)²`,
//! not a fixed 255.

use crate::error::{Error, Result};
use crate::image::Grid;

pub fn mse(a: &Grid<f64>, b: &Grid<f64>) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let sum: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).powi(2))
        .sum();
    Ok(sum / a.len() as f64)
}

/// PSNR in dB; `+inf` when `test` equals `reference`.
pub fn psnr(test: &Grid<f64>, reference: &Grid<f64>) -> Result<f64> {
    let (lo, hi) = reference.min_max();
    if hi <= lo {
        return Err(Error::ZeroDynamicRange);
    }
    let err = mse(test, reference)?;
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * ((hi - lo).powi(2) / err).log10())
}

/// Improvement of `b` over `a`: `10 log10(MSE(a) / MSE(b))`, i.e.
/// `PSNR(b) − PSNR(a)`.
pub fn isnr(a: &Grid<f64>, b: &Grid<f64>, reference: &Grid<f64>) -> Result<f64> {
    let (lo, hi) = reference.min_max();
    if hi <= lo {
        return Err(Error::ZeroDynamicRange);
    }
    let (ma, mb) = (mse(a, reference)?, mse(b, reference)?);
    if mb == 0.0 {
        return Err(Error::invalid("ISNR undefined: second restoration equals the reference"));
    }
    Ok(10.0 * (ma / mb).log10())
}

/// One evaluated restoration.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub image: String,
    pub patch_id: usize,
    pub seed: u64,
    pub lambda_max: f64,
    pub method: String,
    pub psnr_db: f64,
    pub isnr_vs_corrupted_db: f64,
}

/// Five-number summary (linear-interpolated quantiles).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Quantile `p` in `[0, 1]` of sorted data by linear interpolation between
/// order statistics.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(Summary {
        count: v.len(),
        min: v[0],
        q1: quantile_sorted(&v, 0.25),
        median: quantile_sorted(&v, 0.5),
        q3: quantile_sorted(&v, 0.75),
        max: v[v.len() - 1],
    })
}

pub fn median(values: &[f64]) -> Option<f64> {
    summarize(values).map(|s| s.median)
}
