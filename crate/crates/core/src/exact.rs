//! Dense reference solver: the exact Gaussian posterior of the bounded model,
//! the exact Q-function, and the exact EM loop.
//!
//! Everything here is `O(M³)` and capped at [`DENSE_LIMIT`] pixels. It serves
//! as the oracle for the LBP path and as a solver for small images.

use nalgebra::{DMatrix, DVector};

use crate::channel::ln_2cosh;
use crate::error::{Error, Result};
use crate::grid::{laplacian_eigenvalues, GridTopology};
use crate::image::{CountImage, Grid};
use crate::latent::{beta, pseudo_obs, update_xi, LatentState};
use crate::restore::{max_abs_diff, restore_lambda, Diagnostics, EmIteration, Restoration, RestoreConfig, ALPHA_MAX, ALPHA_MIN};

/// Largest image (in pixels) the dense path accepts: 64x64.
pub const DENSE_LIMIT: usize = 4096;

/// Gaussian posterior `N(m, S⁻¹)` with `S = αΛ + hI + Ξ` and `m = S⁻¹z'`.
#[derive(Debug, Clone)]
pub struct DensePosterior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// `S = αΛ + hI + diag(β)`.
pub fn posterior_precision(topo: &GridTopology, beta: &[f64], alpha: f64, h: f64) -> DMatrix<f64> {
    let m = topo.num_pixels();
    let mut s = topo.dense_laplacian() * alpha;
    for i in 0..m {
        s[(i, i)] += h + beta[i];
    }
    s
}

pub fn posterior_dense(topo: &GridTopology, latent: &LatentState, alpha: f64, h: f64) -> Result<DensePosterior> {
    let m = topo.num_pixels();
    if m > DENSE_LIMIT {
        return Err(Error::TooLarge { pixels: m, limit: DENSE_LIMIT });
    }
    if latent.beta.len() != m {
        return Err(Error::ShapeMismatch {
            expected: (topo.width(), topo.height()),
            actual: (latent.beta.len(), 1),
        });
    }
    if !(alpha >= 0.0 && h >= 0.0) {
        return Err(Error::invalid(format!("alpha and h must be >= 0, got {alpha}, {h}")));
    }
    let chol = posterior_precision(topo, &latent.beta, alpha, h)
        .cholesky()
        .ok_or(Error::NotPositiveDefinite)?;
    let rhs = DVector::from_column_slice(&latent.z_prime);
    Ok(DensePosterior {
        mean: chol.solve(&rhs),
        cov: chol.inverse(),
    })
}

/// Posterior moments entering the M-step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaddleRhs {
    /// `mᵀΛm + Tr ΛS⁻¹`.
    pub smooth: f64,
    /// `‖m‖² + Tr S⁻¹`.
    pub ridge: f64,
}

impl SaddleRhs {
    pub fn from_posterior(post: &DensePosterior, topo: &GridTopology) -> Self {
        let lap = topo.dense_laplacian();
        let quad = post.mean.dot(&(&lap * &post.mean));
        let tr_lap = lap.component_mul(&post.cov).sum();
        Self {
            smooth: quad + tr_lap,
            ridge: post.mean.norm_squared() + post.cov.trace(),
        }
    }
}

/// Parameters `θ = {α, h, ξ}` at which the Q-function is evaluated.
#[derive(Debug, Clone, Copy)]
pub struct Theta<'a> {
    pub alpha: f64,
    pub h: f64,
    pub xi: &'a [f64],
}

/// `Q(θ | θ⁽ᵗ⁾)` for the bounded model, up to `θ`-independent constants,
/// given the posterior at `θ⁽ᵗ⁾`:
///
/// ```text
/// z'ᵀm − ½(mᵀSm + Tr S S⁽ᵗ⁾⁻¹) + ½ ln|αΛ + hI| + ½ ξᵀΞξ − K Σ ln 2cosh ξ_i
/// ```
///
/// with `S` and `Ξ` built from `θ`. The log-determinant is summed over the
/// analytic Laplacian eigenvalues.
pub fn qfunction(
    topo: &GridTopology,
    theta: Theta<'_>,
    k: u32,
    z_prime: &[f64],
    prev: &DensePosterior,
) -> Result<f64> {
    let m = topo.num_pixels();
    if theta.xi.len() != m || z_prime.len() != m || prev.mean.len() != m {
        return Err(Error::invalid("Q-function inputs do not match the grid"));
    }
    let eig = laplacian_eigenvalues(topo.width(), topo.height());
    let mut logdet = 0.0;
    for &eta in &eig {
        let v = theta.alpha * eta + theta.h;
        if !(v > 0.0) {
            return Err(Error::invalid(format!(
                "prior precision eigenvalue alpha*eta+h = {v} is not positive"
            )));
        }
        logdet += v.ln();
    }
    let rhs = SaddleRhs::from_posterior(prev, topo);
    let kf = f64::from(k);
    let mut data = 0.0;
    for i in 0..m {
        let xi = theta.xi[i];
        let b = beta(xi, k);
        let second = prev.mean[i] * prev.mean[i] + prev.cov[(i, i)];
        data += z_prime[i] * prev.mean[i] - 0.5 * b * second + 0.5 * b * xi * xi - kf * ln_2cosh(xi);
    }
    Ok(data - 0.5 * (theta.alpha * rhs.smooth + theta.h * rhs.ridge) + 0.5 * logdet)
}

/// `(M − 1) / (mᵀΛm + Tr ΛS⁻¹)` with `h` held fixed, clamped to
/// `[ALPHA_MIN, ALPHA_MAX]`.
pub fn alpha_update_exact(rhs: &SaddleRhs, num_pixels: usize) -> f64 {
    let dof = num_pixels.saturating_sub(1) as f64;
    if rhs.smooth <= dof / ALPHA_MAX {
        return ALPHA_MAX;
    }
    (dof / rhs.smooth).clamp(ALPHA_MIN, ALPHA_MAX)
}

/// Solves both saddle equations jointly for `(α, h)`:
///
/// ```text
/// Σ η_i/(αη_i + h) = mᵀΛm + Tr ΛS⁻¹
/// Σ 1/(αη_i + h)   = ‖m‖² + Tr S⁻¹
/// ```
///
/// by damped Newton in `(ln α, ln h)` on the relative residuals.
pub fn solve_saddle_joint(rhs: &SaddleRhs, eigenvalues: &[f64]) -> Result<(f64, f64)> {
    if !(rhs.ridge > 0.0 && rhs.smooth >= 0.0) {
        return Err(Error::SaddleNoSolution(format!(
            "right-hand sides must be positive, got {} and {}",
            rhs.smooth, rhs.ridge
        )));
    }
    let positive: usize = eigenvalues.iter().filter(|&&e| e > 0.0).count();
    if positive == 0 {
        // Only the ridge equation remains; the smoothness one reads 0 = rhs.
        if rhs.smooth == 0.0 {
            return Ok((0.0, eigenvalues.len() as f64 / rhs.ridge));
        }
        return Err(Error::SaddleNoSolution(
            "no positive eigenvalue: smoothness equation reads 0 = rhs".into(),
        ));
    }
    if rhs.smooth <= 0.0 {
        return Err(Error::SaddleNoSolution("smoothness statistic must be positive".into()));
    }

    let residual = |u: f64, v: f64| -> (f64, f64) {
        let (a, h) = (u.exp(), v.exp());
        let (mut s1, mut s2) = (0.0, 0.0);
        for &e in eigenvalues {
            let d = a * e + h;
            s1 += e / d;
            s2 += 1.0 / d;
        }
        (s1 / rhs.smooth - 1.0, s2 / rhs.ridge - 1.0)
    };
    let jacobian = |u: f64, v: f64| -> [[f64; 2]; 2] {
        let (a, h) = (u.exp(), v.exp());
        let (mut j11, mut j12, mut j22) = (0.0, 0.0, 0.0);
        for &e in eigenvalues {
            let d2 = (a * e + h).powi(2);
            j11 += e * e / d2;
            j12 += e / d2;
            j22 += 1.0 / d2;
        }
        [
            [-a * j11 / rhs.smooth, -h * j12 / rhs.smooth],
            [-a * j12 / rhs.ridge, -h * j22 / rhs.ridge],
        ]
    };

    let mut u = (positive as f64 / rhs.smooth).ln();
    let mut v = (1.0 / rhs.ridge).ln();
    let mut r = residual(u, v);
    for _ in 0..200 {
        let norm = r.0.abs().max(r.1.abs());
        if norm <= 1e-10 {
            return Ok((u.exp(), v.exp()));
        }
        let jac = jacobian(u, v);
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        if det == 0.0 || !det.is_finite() {
            break;
        }
        let du = -(jac[1][1] * r.0 - jac[0][1] * r.1) / det;
        let dv = -(-jac[1][0] * r.0 + jac[0][0] * r.1) / det;
        let mut step = 1.0;
        let mut accepted = false;
        while step > 1e-8 {
            // cap the move in log space to keep exp() sane
            let (nu, nv) = (u + (step * du).clamp(-5.0, 5.0), v + (step * dv).clamp(-5.0, 5.0));
            let nr = residual(nu, nv);
            if nr.0.abs().max(nr.1.abs()) < norm {
                (u, v, r) = (nu, nv, nr);
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted || u.abs() > 700.0 || v.abs() > 700.0 {
            break;
        }
    }
    Err(Error::SaddleNoSolution(format!(
        "Newton iteration stalled at alpha={}, h={} (residuals {:e}, {:e})",
        u.exp(),
        v.exp(),
        r.0,
        r.1
    )))
}

/// Exact EM: dense posterior E-step, closed-form `ξ` and `α` updates with `h`
/// fixed. Convergence and the final map to intensities mirror
/// [`restore`](crate::restore::restore).
pub fn run_exact_em(z: &CountImage, cfg: &RestoreConfig) -> Result<Restoration> {
    cfg.validate()?;
    let k = cfg.resolve_k(z)?;
    let topo = GridTopology::for_grid(z)?;
    let m = topo.num_pixels();
    if m > DENSE_LIMIT {
        return Err(Error::TooLarge { pixels: m, limit: DENSE_LIMIT });
    }
    let mut latent = pseudo_obs(z, &vec![cfg.xi0; m], k)?;
    let mut alpha = cfg.alpha0;
    let mut diag = Diagnostics::new("exact");
    let mut prev_mean: Option<Vec<f64>> = None;
    let mut mean = vec![0.0; m];

    for t in 0..cfg.em_max_iter {
        let post = posterior_dense(&topo, &latent, alpha, cfg.h)?;
        let cur: Vec<f64> = post.mean.iter().copied().collect();
        let delta = prev_mean.as_deref().map_or(f64::INFINITY, |p| max_abs_diff(p, &cur));

        let xi: Vec<f64> = (0..m).map(|i| update_xi(post.mean[i], post.cov[(i, i)])).collect();
        let rhs = SaddleRhs::from_posterior(&post, &topo);
        let new_alpha = if m > 1 { alpha_update_exact(&rhs, m) } else { alpha };
        if m > 1 && (new_alpha == ALPHA_MIN || new_alpha == ALPHA_MAX) {
            diag.clamped_updates += 1;
        }
        let q = qfunction(&topo, Theta { alpha: new_alpha, h: cfg.h, xi: &xi }, k, &latent.z_prime, &post)?;
        latent.set_xi(xi);
        alpha = new_alpha;
        diag.iterations.push(EmIteration {
            em_iter: t,
            alpha,
            xi_mean: Some(latent.xi_mean()),
            lbp_sweeps: None,
            m_delta: delta,
            q_value: Some(q),
            beta_g: None,
        });
        mean = cur;
        if delta < cfg.em_tol {
            diag.em_converged = true;
            break;
        }
        prev_mean = Some(mean.clone());
    }

    let logit = Grid::new(z.width(), z.height(), mean)?;
    Ok(Restoration {
        lambda: restore_lambda(&logit, k),
        logit,
        k,
        alpha,
        xi: latent.xi,
        diagnostics: diag,
    })
}
