//! Poisson observation channel, its binomial form with `K` trials, and the
//! half-logit reparameterization `x = ½ ln(ρ / (1 − ρ))` used for inference.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::image::{CountImage, Grid, SourceField};

/// Smallest `K` used when none is given.
pub const MIN_DEFAULT_K: u32 = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelConfig {
    /// Binomial trial count (upper limit of a pixel's count).
    pub k: u32,
    pub rng_seed: u64,
}

impl ChannelConfig {
    pub fn new(k: u32, rng_seed: u64) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("K must be at least 1"));
        }
        Ok(Self { k, rng_seed })
    }
}

/// `max(256, 2 * max z)`: always covers the observed support.
pub fn default_k(z: &CountImage) -> u32 {
    MIN_DEFAULT_K.max(z.max_count().saturating_mul(2))
}

/// Checks the binomial support `z_i <= K` for every pixel.
pub fn check_counts(z: &CountImage, k: u32) -> Result<()> {
    match z.as_slice().iter().find(|&&c| c > k) {
        Some(&count) => Err(Error::CountExceedsK { count, k }),
        None => Ok(()),
    }
}

/// SplitMix64 finalizer, used to derive independent per-pixel streams.
#[inline]
pub fn splitmix64(mut v: u64) -> u64 {
    v = v.wrapping_add(0x9E37_79B9_7F4A_7C15);
    v = (v ^ (v >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    v = (v ^ (v >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    v ^ (v >> 31)
}

/// Draws `z_i ~ Poisson(λ_i)` independently. Pixel `i` uses a generator
/// seeded with `seed ^ splitmix64(i)`, so results do not depend on
/// evaluation order.
pub fn poisson_sample(src: &SourceField, seed: u64) -> CountImage {
    let data = src
        .as_slice()
        .iter()
        .enumerate()
        .map(|(i, &lambda)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ splitmix64(i as u64));
            let dist = Poisson::new(lambda).expect("SourceField intensities are positive and finite");
            let draw: f64 = dist.sample(&mut rng);
            draw.min(f64::from(u32::MAX)) as u32
        })
        .collect();
    Grid::new(src.width(), src.height(), data).expect("shape preserved")
}

#[inline]
fn ln_factorial(n: u32) -> f64 {
    libm::lgamma(f64::from(n) + 1.0)
}

/// `ln C(k, z)`.
pub fn ln_choose(k: u32, z: u32) -> f64 {
    debug_assert!(z <= k);
    ln_factorial(k) - ln_factorial(z) - ln_factorial(k - z)
}

pub fn poisson_pmf(z: u32, lambda: f64) -> f64 {
    (f64::from(z) * lambda.ln() - lambda - ln_factorial(z)).exp()
}

pub fn binomial_pmf(z: u32, k: u32, rho: f64) -> Result<f64> {
    if z > k {
        return Err(Error::CountExceedsK { count: z, k });
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::invalid(format!("rho must lie in (0, 1), got {rho}")));
    }
    let ln_p = ln_choose(k, z) + f64::from(z) * rho.ln() + f64::from(k - z) * (-rho).ln_1p();
    Ok(ln_p.exp())
}

/// `x = ½ ln(ρ / (1 − ρ))`.
pub fn logit(rho: f64) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::invalid(format!("logit needs rho in (0, 1), got {rho}")));
    }
    Ok(0.5 * (rho.ln() - (-rho).ln_1p()))
}

const ONE_BELOW: f64 = 1.0 - f64::EPSILON / 2.0;

/// `ρ = eˣ / (eˣ + e⁻ˣ)`, i.e. the logistic sigmoid of `2x`, kept strictly
/// inside `(0, 1)`.
pub fn inv_logit(x: f64) -> f64 {
    let rho = if x >= 0.0 {
        1.0 / (1.0 + (-2.0 * x).exp())
    } else {
        let e = (2.0 * x).exp();
        e / (1.0 + e)
    };
    rho.clamp(f64::MIN_POSITIVE, ONE_BELOW)
}

/// `ln 2cosh x`, stable for large `|x|`.
#[inline]
pub fn ln_2cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p()
}

/// Exact binomial log-likelihood in logit coordinates:
/// `ln C(K, z) + (2z − K) x − K ln 2cosh x`.
pub fn count_loglik(z: u32, x: f64, k: u32) -> Result<f64> {
    if z > k {
        return Err(Error::CountExceedsK { count: z, k });
    }
    let kf = f64::from(k);
    Ok(ln_choose(k, z) + (2.0 * f64::from(z) - kf) * x - kf * ln_2cosh(x))
}
