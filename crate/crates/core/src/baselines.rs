//! Comparison methods: a 3x3 median filter and Gaussian-channel LBP (GLBP),
//! which treats counts as Gaussian observations of `λ` with one global
//! precision `β_G` under the same GMRF prior.
//!
//! The GLBP hyperparameter schedule is plain Gaussian EM moment matching;
//! it may differ in detail from the original method's schedule.

use crate::error::{Error, Result};
use crate::grid::GridTopology;
use crate::image::{CountImage, Grid, IntensityImage, SourceField};
use crate::latent::Evidence;
use crate::lbp::{init_messages, marginal_stats, run_to_convergence, Correlations, LbpOptions, MarginalStats, MessageSet, LbpReport};
use crate::restore::{alpha_update_lbp, max_abs_diff, Diagnostics, EmIteration, ALPHA_MAX, ALPHA_MIN};

/// 3x3 median with replicated borders.
pub fn median_filter_3x3(z: &CountImage) -> IntensityImage {
    let (w, h) = z.shape();
    Grid::from_fn(w, h, |x, y| {
        let mut window = [0u32; 9];
        let mut n = 0;
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                let sx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                let sy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                window[n] = z.get(sx, sy);
                n += 1;
            }
        }
        let (_, median, _) = window.select_nth_unstable(4);
        f64::from(*median)
    })
}

pub const BETA_G_MIN: f64 = 1e-8;
pub const BETA_G_MAX: f64 = 1e8;

/// GLBP hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlbpHyper {
    pub alpha: f64,
    pub beta: f64,
    pub h: f64,
}

impl GlbpHyper {
    pub fn new(alpha: f64, beta: f64, h: f64) -> Result<Self> {
        for (name, v) in [("alpha_G", alpha), ("beta_G", beta), ("h_G", h)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(Self { alpha, beta, h })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlbpConfig {
    /// Initial `(α_G, β_G)`; `None` starts both at `1 / max(mean z, 1)`.
    pub init: Option<(f64, f64)>,
    pub h: f64,
    pub lbp: LbpOptions,
    pub em_tol: f64,
    pub em_max_iter: usize,
}

impl Default for GlbpConfig {
    fn default() -> Self {
        Self {
            init: None,
            h: 1e-4,
            lbp: LbpOptions::default(),
            em_tol: 1e-5,
            em_max_iter: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GlbpRestoration {
    /// Posterior means clamped to `>= 1e-6` for evaluation.
    pub lambda: SourceField,
    /// Unclamped posterior means (may be negative).
    pub raw: IntensityImage,
    pub hyper: GlbpHyper,
    pub diagnostics: Diagnostics,
}

/// Runs the shared LBP engine with uniform precision `β_G` and observations
/// `y = z`.
pub fn glbp_posterior(
    topo: &GridTopology,
    z: &[f64],
    hyper: GlbpHyper,
    msgs: MessageSet,
    opts: &LbpOptions,
) -> Result<(MessageSet, LbpReport, MarginalStats)> {
    let beta = vec![hyper.beta; z.len()];
    let ev = Evidence { beta: &beta, y: z };
    let (msgs, report) = run_to_convergence(topo, msgs, ev, hyper.alpha, hyper.h, opts, None)?;
    let stats = marginal_stats(topo, &msgs, ev, hyper.alpha, hyper.h, Correlations::Pairwise)?;
    Ok((msgs, report, stats))
}

/// `1/β_G = (1/M) Σ [(z_i − m_i)² + σ_i²]`, clamped to `[BETA_G_MIN, BETA_G_MAX]`.
pub fn beta_update(z: &[f64], stats: &MarginalStats) -> f64 {
    let total: f64 = z
        .iter()
        .zip(stats.mean.iter().zip(&stats.var))
        .map(|(zi, (mi, vi))| (zi - mi).powi(2) + vi)
        .sum();
    let beta = z.len() as f64 / total;
    if beta.is_nan() {
        BETA_G_MAX
    } else {
        beta.clamp(BETA_G_MIN, BETA_G_MAX)
    }
}

/// GLBP restoration with EM over `α_G` and `β_G` (`h_G` fixed).
pub fn glbp_restore(z: &CountImage, cfg: &GlbpConfig) -> Result<GlbpRestoration> {
    cfg.lbp.validate()?;
    if !(cfg.em_tol > 0.0) || cfg.em_max_iter == 0 {
        return Err(Error::invalid("GLBP needs em_tol > 0 and em_max_iter >= 1"));
    }
    let topo = GridTopology::for_grid(z)?;
    let m = topo.num_pixels();
    let obs: Vec<f64> = z.as_slice().iter().map(|&c| f64::from(c)).collect();
    let mut hyper = match cfg.init {
        Some((a, b)) => GlbpHyper::new(a, b, cfg.h)?,
        None => {
            let mean = obs.iter().sum::<f64>() / m as f64;
            let start = 1.0 / mean.max(1.0);
            GlbpHyper::new(start, start, cfg.h)?
        }
    };
    let mut msgs = init_messages(&topo, hyper.alpha);
    let mut diag = Diagnostics::new("glbp");
    let mut prev: Option<Vec<f64>> = None;
    let mut mean = vec![0.0; m];

    for t in 0..cfg.em_max_iter {
        let (next, report, stats) =
            glbp_posterior(&topo, &obs, hyper, msgs, &cfg.lbp).map_err(|e| match e {
                Error::Diverged { sweep, .. } => Error::Diverged { sweep, em_iter: Some(t) },
                other => other,
            })?;
        msgs = next;
        if !report.converged {
            diag.lbp_unconverged += 1;
        }
        let delta = prev.as_deref().map_or(f64::INFINITY, |p| max_abs_diff(p, &stats.mean));
        let beta = beta_update(&obs, &stats);
        if beta == BETA_G_MIN || beta == BETA_G_MAX {
            diag.clamped_updates += 1;
            log::info!("GLBP beta_G clamped to {beta} at iteration {t}");
        }
        let alpha = if m > 1 { alpha_update_lbp(&stats, &topo) } else { hyper.alpha };
        if m > 1 && (alpha == ALPHA_MIN || alpha == ALPHA_MAX) {
            diag.clamped_updates += 1;
        }
        hyper = GlbpHyper { alpha, beta, h: cfg.h };
        diag.iterations.push(EmIteration {
            em_iter: t,
            alpha,
            xi_mean: None,
            lbp_sweeps: Some(report.sweeps),
            m_delta: delta,
            q_value: None,
            beta_g: Some(beta),
        });
        mean = stats.mean;
        if delta < cfg.em_tol {
            diag.em_converged = true;
            break;
        }
        prev = Some(mean.clone());
    }

    let raw = Grid::new(z.width(), z.height(), mean)?;
    let lambda = SourceField::new(raw.map(|&v| v.max(1e-6)))?;
    Ok(GlbpRestoration {
        lambda,
        raw,
        hyper,
        diagnostics: diag,
    })
}
