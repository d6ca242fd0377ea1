//! Quadratic upper bound on `ln 2cosh x` and the per-pixel Gaussian
//! pseudo-observation it induces.
//!
//! With latent `ξ_i > 0`, the count likelihood is bounded below by a Gaussian
//! factor `exp(−(β_i/2)(y_i − x_i)²)` (up to `x`-independent terms) with
//! `β_i = K tanh(ξ_i)/ξ_i` and `y_i = (2z_i − K)/β_i`.

use crate::channel::{ln_2cosh, ln_choose};
use crate::error::{Error, Result};
use crate::image::CountImage;

/// Lower clamp applied to every `ξ` update.
pub const XI_FLOOR: f64 = 1e-8;

/// Default initial latent value.
pub const XI_INIT: f64 = 1.0;

/// `tanh(ξ)/(2ξ) (x² − ξ²) + ln 2cosh ξ`, which is `>= ln 2cosh x`.
pub fn log2cosh_bound(x: f64, xi: f64) -> Result<f64> {
    if !(xi > 0.0) {
        return Err(Error::invalid(format!("xi must be positive, got {xi}")));
    }
    Ok(0.5 * tanh_ratio(xi) * (x * x - xi * xi) + ln_2cosh(xi))
}

/// `tanh(ξ)/ξ`, with the series `1 − ξ²/3 + 2ξ⁴/15` near zero.
#[inline]
fn tanh_ratio(xi: f64) -> f64 {
    if xi < 1e-4 {
        let x2 = xi * xi;
        1.0 - x2 / 3.0 + 2.0 * x2 * x2 / 15.0
    } else {
        xi.tanh() / xi
    }
}

/// `β = K tanh(ξ)/ξ`.
#[inline]
pub fn beta(xi: f64, k: u32) -> f64 {
    f64::from(k) * tanh_ratio(xi)
}

/// Bounded log-likelihood of one pixel (the logarithm of the Gaussian lower
/// bound on the binomial likelihood), including `ln C(K, z)`.
pub fn bounded_loglik(z: u32, x: f64, xi: f64, k: u32) -> Result<f64> {
    if z > k {
        return Err(Error::CountExceedsK { count: z, k });
    }
    let kf = f64::from(k);
    Ok(ln_choose(k, z) + (2.0 * f64::from(z) - kf) * x - kf * log2cosh_bound(x, xi)?)
}

/// `√(m² + var)`, floored at [`XI_FLOOR`].
#[inline]
pub fn update_xi(mean: f64, var: f64) -> f64 {
    (mean * mean + var.max(0.0)).sqrt().max(XI_FLOOR)
}

/// Borrowed per-pixel Gaussian evidence: precision `beta` and observation `y`
/// (so the linear term is `beta * y`).
#[derive(Debug, Clone, Copy)]
pub struct Evidence<'a> {
    pub beta: &'a [f64],
    pub y: &'a [f64],
}

impl Evidence<'_> {
    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }
}

/// Latent parameters `ξ_i` and the derived pseudo-observations.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub xi: Vec<f64>,
    pub beta: Vec<f64>,
    pub y: Vec<f64>,
    /// `z'_i = 2z_i − K`.
    pub z_prime: Vec<f64>,
    pub k: u32,
}

impl LatentState {
    pub fn evidence(&self) -> Evidence<'_> {
        Evidence {
            beta: &self.beta,
            y: &self.y,
        }
    }

    /// Replaces `ξ` and recomputes `β, y`.
    pub fn set_xi(&mut self, xi: Vec<f64>) {
        assert_eq!(xi.len(), self.xi.len());
        self.xi = xi;
        for i in 0..self.xi.len() {
            self.beta[i] = beta(self.xi[i], self.k);
            self.y[i] = self.z_prime[i] / self.beta[i];
        }
    }

    pub fn xi_mean(&self) -> f64 {
        self.xi.iter().sum::<f64>() / self.xi.len() as f64
    }
}

/// Builds the pseudo-observation for counts `z` under latent values `xi`.
pub fn pseudo_obs(z: &CountImage, xi: &[f64], k: u32) -> Result<LatentState> {
    if xi.len() != z.len() {
        return Err(Error::ShapeMismatch {
            expected: z.shape(),
            actual: (xi.len(), 1),
        });
    }
    if let Some(&bad) = xi.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::invalid(format!("xi must be positive and finite, got {bad}")));
    }
    crate::channel::check_counts(z, k)?;
    let kf = f64::from(k);
    let z_prime: Vec<f64> = z.as_slice().iter().map(|&c| 2.0 * f64::from(c) - kf).collect();
    let mut state = LatentState {
        xi: xi.to_vec(),
        beta: vec![0.0; xi.len()],
        y: vec![0.0; xi.len()],
        z_prime,
        k,
    };
    state.set_xi(xi.to_vec());
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::count_loglik;
    use crate::image::Grid;
    use proptest::prelude::*;

    #[test]
    fn bound_is_tight_at_abs_x() {
        let tight = log2cosh_bound(1.0, 1.0).unwrap();
        assert!((tight - ln_2cosh(1.0)).abs() < 1e-15);
        assert!((tight - 1.126928).abs() < 1e-6);
        assert!((log2cosh_bound(-2.5, 2.5).unwrap() - ln_2cosh(2.5)).abs() < 1e-14);
    }

    #[test]
    fn bound_at_zero() {
        let v = log2cosh_bound(0.0, 1.0).unwrap();
        let expect = -0.5 * 1f64.tanh() + (2.0 * 1f64.cosh()).ln();
        assert!((v - expect).abs() < 1e-15);
        assert!((v - 0.746131).abs() < 1e-6);
        assert!(v >= 2f64.ln());
    }

    #[test]
    fn bound_dominates_on_grid() {
        for i in 0..=100 {
            let x = -5.0 + 0.1 * f64::from(i);
            for j in 1..=50 {
                let xi = 0.1 * f64::from(j);
                let gap = log2cosh_bound(x, xi).unwrap() - ln_2cosh(x);
                assert!(gap >= -1e-12, "x={x} xi={xi} gap={gap}");
            }
        }
        assert!(log2cosh_bound(0.3, 0.0).is_err());
        assert!(log2cosh_bound(0.3, -1.0).is_err());
    }

    #[test]
    fn beta_values() {
        assert!((beta(1e-9, 100) - 100.0).abs() < 1e-12);
        assert!((beta(1.0, 100) - 76.159_415_595_576_49).abs() < 1e-10);
        // series and direct forms agree across the switch point
        let below = beta(0.999_999e-4, 1);
        let above = beta(1.000_001e-4, 1);
        assert!((below - above).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for i in 1..=200 {
            let b = beta(0.05 * f64::from(i), 256);
            assert!(b < prev && b > 0.0);
            prev = b;
        }
    }

    #[test]
    fn pseudo_obs_values() {
        let z = Grid::new(3, 1, vec![5u32, 10, 0]).unwrap();
        let st = pseudo_obs(&z, &[1.0, 1.0, 1.0], 10).unwrap();
        assert_eq!(st.y[0], 0.0);
        assert!((st.y[1] - 1.0 / 1f64.tanh()).abs() < 1e-12);
        assert!((st.y[1] - 1.313035).abs() < 1e-6);
        assert!(st.y[2] < 0.0);
        assert!(st.beta.iter().all(|&b| b > 0.0 && b <= 10.0));

        let z_bad = Grid::new(1, 1, vec![11u32]).unwrap();
        assert!(matches!(
            pseudo_obs(&z_bad, &[1.0], 10),
            Err(Error::CountExceedsK { .. })
        ));
        assert!(pseudo_obs(&z, &[1.0, 0.0, 1.0], 10).is_err());
        assert!(pseudo_obs(&z, &[1.0], 10).is_err());
    }

    #[test]
    fn gaussian_factor_matches_bounded_loglik_up_to_constant() {
        let (z, k, xi) = (7u32, 10u32, 0.8);
        let st = pseudo_obs(&Grid::new(1, 1, vec![z]).unwrap(), &[xi], k).unwrap();
        let diff = |x: f64| {
            bounded_loglik(z, x, xi, k).unwrap() + 0.5 * st.beta[0] * (st.y[0] - x).powi(2)
        };
        let base = diff(0.0);
        for x in [-1.0, 1.0] {
            assert!((diff(x) - base).abs() < 1e-12);
        }
    }

    #[test]
    fn bounded_loglik_never_exceeds_exact() {
        let k = 10;
        for z in 0..=k {
            for i in -30..=30 {
                let x = 0.2 * f64::from(i);
                for xi in [0.01, 0.1, 0.5, 1.0, 3.0, 6.0] {
                    let gap = count_loglik(z, x, k).unwrap() - bounded_loglik(z, x, xi, k).unwrap();
                    assert!(gap >= -1e-12);
                }
                if x != 0.0 {
                    let gap = count_loglik(z, x, k).unwrap() - bounded_loglik(z, x, x.abs(), k).unwrap();
                    assert!(gap.abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn xi_update_cases() {
        assert_eq!(update_xi(3.0, 16.0), 5.0);
        assert_eq!(update_xi(0.0, 1.0), 1.0);
        assert_eq!(update_xi(-2.0, 0.0), 2.0);
        assert_eq!(update_xi(0.0, 0.0), XI_FLOOR);
    }

    proptest! {
        #[test]
        fn xi_update_even_in_mean(m in -50.0f64..50.0, v in 0.0f64..10.0) {
            prop_assert_eq!(update_xi(m, v), update_xi(-m, v));
        }

        #[test]
        fn y_sign_follows_evidence(z in 0u32..=64, xi in 1e-6f64..8.0) {
            let st = pseudo_obs(&Grid::new(1, 1, vec![z]).unwrap(), &[xi], 64).unwrap();
            let zp = 2.0 * f64::from(z) - 64.0;
            prop_assert_eq!(st.y[0].signum() == zp.signum() || zp == 0.0, true);
            prop_assert!(st.beta[0] > 0.0 && st.beta[0] <= 64.0);
        }
    }
}
