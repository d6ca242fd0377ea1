//! Deterministic synthetic test images with intensities in `[0, 255]`.
//!
//! These stand in for standard test photographs, which are not shipped.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::{Grid, IntensityImage};

pub const NAMES: [&str; 5] = ["gradient", "checkerboard", "blobs", "stripes", "scene"];

/// Looks a fixture up by name at the given size.
pub fn named(name: &str, width: usize, height: usize) -> Option<IntensityImage> {
    let img = match name {
        "gradient" => gradient(width, height),
        "checkerboard" => checkerboard(width, height, 8),
        "blobs" => blobs(width, height, 11),
        "stripes" => stripes(width, height, 9.0),
        "scene" => scene(width, height, 5),
        _ => return None,
    };
    Some(img)
}

/// Diagonal ramp from 0 to 255.
pub fn gradient(width: usize, height: usize) -> IntensityImage {
    let span = (width + height).saturating_sub(2).max(1) as f64;
    Grid::from_fn(width, height, |x, y| 255.0 * (x + y) as f64 / span)
}

/// Two-level checkerboard with square cells of side `cell`.
pub fn checkerboard(width: usize, height: usize, cell: usize) -> IntensityImage {
    let cell = cell.max(1);
    Grid::from_fn(width, height, |x, y| if (x / cell + y / cell) % 2 == 0 { 40.0 } else { 215.0 })
}

/// Sum of random Gaussian bumps over a dark background.
pub fn blobs(width: usize, height: usize, seed: u64) -> IntensityImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (width as f64, height as f64);
    let bumps: Vec<(f64, f64, f64, f64)> = (0..12)
        .map(|_| {
            (
                rng.random::<f64>() * w,
                rng.random::<f64>() * h,
                (0.05 + 0.12 * rng.random::<f64>()) * w.min(h),
                0.4 + 0.6 * rng.random::<f64>(),
            )
        })
        .collect();
    let raw = Grid::from_fn(width, height, |x, y| {
        bumps
            .iter()
            .map(|&(cx, cy, s, a)| {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                a * (-d2 / (2.0 * s * s)).exp()
            })
            .sum::<f64>()
    });
    normalize(&raw)
}

/// Curved, slowly bending ridges, loosely like a fingerprint.
pub fn stripes(width: usize, height: usize, period: f64) -> IntensityImage {
    let (cx, cy) = (0.3 * width as f64, 1.2 * height as f64);
    Grid::from_fn(width, height, |x, y| {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        let r = (dx * dx + dy * dy).sqrt();
        let warp = 2.0 * (dx.atan2(dy) * 3.0).sin();
        127.5 + 110.0 * (2.0 * PI * r / period + warp).sin()
    })
}

/// Dead-leaves scene: occluding disks with power-law radii (density
/// `∝ r⁻³`) and random gray levels, which reproduces the scale-invariant
/// edge statistics of natural photographs. Lightly blurred.
pub fn scene(width: usize, height: usize, seed: u64) -> IntensityImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (width as f64, height as f64);
    let (r_min, r_max) = (1.5f64, 0.25 * w.max(h));
    let mut img = Grid::from_fn(width, height, |_, _| f64::NAN);
    let mut uncovered = img.len();
    for _ in 0..20_000 {
        if uncovered == 0 {
            break;
        }
        // inverse-CDF draw from r^-3 on [r_min, r_max]
        let u: f64 = rng.random();
        let r = (r_min.powi(-2) - u * (r_min.powi(-2) - r_max.powi(-2))).powf(-0.5);
        let (cx, cy) = (rng.random::<f64>() * w, rng.random::<f64>() * h);
        let level = 255.0 * rng.random::<f64>();
        let (x0, x1) = (((cx - r).floor().max(0.0)) as usize, ((cx + r).ceil().min(w - 1.0)) as usize);
        let (y0, y1) = (((cy - r).floor().max(0.0)) as usize, ((cy + r).ceil().min(h - 1.0)) as usize);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let i = img.index(x, y);
                let v = &mut img.as_mut_slice()[i];
                if v.is_nan() && (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r {
                    *v = level;
                    uncovered -= 1;
                }
            }
        }
    }
    let filled = img.map(|&v| if v.is_nan() { 127.5 } else { v });
    let blurred = crate::image::gaussian_blur(&filled, 0.7).expect("valid sigma");
    normalize(&blurred)
}

fn normalize(img: &IntensityImage) -> IntensityImage {
    let (lo, hi) = img.min_max();
    if hi <= lo {
        return img.map(|_| 0.0);
    }
    img.map(|v| 255.0 * (v - lo) / (hi - lo))
}
