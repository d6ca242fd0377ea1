//! Pixel grids, contrast scaling to Poisson intensities, cropping and the
//! half-size resampling used to prepare test images.
//!
//! All grids are stored row-major: pixel `(x, y)` lives at `y * width + x`.

use std::ops::Deref;

use crate::error::{Error, Result};

/// A dense `width x height` grid of values stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

/// Real-valued image (input intensities, restored fields, logit fields).
pub type IntensityImage = Grid<f64>;
/// Per-pixel logit-domain latent field.
pub type LogitField = Grid<f64>;
/// Observed photon counts.
pub type CountImage = Grid<u32>;

impl<T> Grid<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "grid dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::invalid(format!(
                "{width}x{height} grid needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        assert!(width > 0 && height > 0, "grid dimensions must be positive");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Number of pixels `M = width * height`.
    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn ensure_same_shape<U>(&self, other: &Grid<U>) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape(),
                actual: other.shape(),
            });
        }
        Ok(())
    }
}

impl<T: Copy> Grid<T> {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    /// Copies the `width x height` sub-grid whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Self> {
        let fits = width > 0
            && height > 0
            && x0.checked_add(width).is_some_and(|e| e <= self.width)
            && y0.checked_add(height).is_some_and(|e| e <= self.height);
        if !fits {
            return Err(Error::OutOfBounds {
                x0,
                y0,
                width,
                height,
                image_width: self.width,
                image_height: self.height,
            });
        }
        let mut data = Vec::with_capacity(width * height);
        for y in y0..y0 + height {
            let row = y * self.width;
            data.extend_from_slice(&self.data[row + x0..row + x0 + width]);
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }
}

impl Grid<f64> {
    /// Builds a real-valued grid, rejecting non-finite pixels.
    pub fn from_values(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("pixel {i} is not finite")));
        }
        Self::new(width, height, data)
    }

    /// `(min, max)` over all pixels.
    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

impl Grid<u32> {
    pub fn max_count(&self) -> u32 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    pub fn to_real(&self) -> Grid<f64> {
        self.map(|&z| f64::from(z))
    }
}

/// Poisson intensities, strictly positive and finite at every pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceField(Grid<f64>);

impl SourceField {
    pub fn new(grid: Grid<f64>) -> Result<Self> {
        if let Some(i) = grid
            .as_slice()
            .iter()
            .position(|v| !(v.is_finite() && *v > 0.0))
        {
            return Err(Error::invalid(format!(
                "source intensity at pixel {i} must be positive and finite, got {}",
                grid.as_slice()[i]
            )));
        }
        Ok(Self(grid))
    }

    pub fn into_grid(self) -> Grid<f64> {
        self.0
    }
}

impl Deref for SourceField {
    type Target = Grid<f64>;

    fn deref(&self) -> &Grid<f64> {
        &self.0
    }
}

/// Linearly maps the image's intensity range onto `[lambda_min, lambda_max]`.
pub fn scale_to_source(img: &IntensityImage, lambda_min: f64, lambda_max: f64) -> Result<SourceField> {
    if !(lambda_min > 0.0 && lambda_min.is_finite()) {
        return Err(Error::invalid(format!(
            "lambda_min must be positive, got {lambda_min}"
        )));
    }
    if !(lambda_max > lambda_min && lambda_max.is_finite()) {
        return Err(Error::invalid(format!(
            "lambda_max ({lambda_max}) must exceed lambda_min ({lambda_min})"
        )));
    }
    let (lo, hi) = img.min_max();
    if hi <= lo {
        return Err(Error::DegenerateContrast(lo));
    }
    let gain = (lambda_max - lambda_min) / (hi - lo);
    let scaled = img.map(|&v| {
        if v == hi {
            lambda_max
        } else {
            gain * (v - lo) + lambda_min
        }
    });
    SourceField::new(scaled)
}

/// Crops an `width x height` patch at `(x0, y0)`.
pub fn extract_patch(
    img: &IntensityImage,
    x0: usize,
    y0: usize,
    width: usize,
    height: usize,
) -> Result<IntensityImage> {
    img.crop(x0, y0, width, height)
}

/// Normalized Gaussian taps truncated at `3 sigma`; a single unit tap when
/// `sigma == 0`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    taps
}

/// Symmetric reflection (`... c b a | a b c ...`) of an out-of-range index.
#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * n;
    let mut r = i.rem_euclid(period);
    if r >= n {
        r = period - 1 - r;
    }
    r as usize
}

/// Separable Gaussian blur with reflected borders.
pub fn gaussian_blur(img: &IntensityImage, sigma: f64) -> Result<IntensityImage> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("blur sigma must be >= 0, got {sigma}")));
    }
    let taps = gaussian_kernel(sigma);
    if taps.len() == 1 {
        return Ok(img.clone());
    }
    let radius = (taps.len() / 2) as isize;
    let (w, h) = img.shape();

    let horizontal: Grid<f64> = Grid::from_fn(w, h, |x, y| {
        taps.iter()
            .enumerate()
            .map(|(k, t)| t * img.get(reflect(x as isize + k as isize - radius, w), y))
            .sum()
    });
    Ok(Grid::from_fn(w, h, |x, y| {
        taps.iter()
            .enumerate()
            .map(|(k, t)| t * horizontal.get(x, reflect(y as isize + k as isize - radius, h)))
            .sum()
    }))
}

/// Weak Gaussian blur followed by 2x2 block averaging. Odd dimensions are
/// padded by replicating the last row/column. A 1x1 image is returned as is.
pub fn resample_half_with_blur(img: &IntensityImage, blur_sigma: f64) -> Result<IntensityImage> {
    if img.len() == 1 {
        return Ok(img.clone());
    }
    let blurred = gaussian_blur(img, blur_sigma)?;
    let (w, h) = blurred.shape();
    let (out_w, out_h) = (w.div_ceil(2), h.div_ceil(2));
    Ok(Grid::from_fn(out_w, out_h, |x, y| {
        let (x0, y0) = (2 * x, 2 * y);
        let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
        0.25 * (blurred.get(x0, y0) + blurred.get(x1, y0) + blurred.get(x0, y1) + blurred.get(x1, y1))
    }))
}
