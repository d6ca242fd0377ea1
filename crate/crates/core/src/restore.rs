//! EM restoration with LBP inner loops: the production path.
//!
//! Each EM iteration turns the current latent values `ξ` into Gaussian
//! pseudo-observations, runs LBP to convergence (warm-started from the
//! previous messages), reads off marginal means, variances and pairwise
//! correlations, then re-estimates `ξ` and `α`. Iteration stops once the
//! marginal means stop moving; intensities are recovered as `K ρ(m)`.

use crate::channel::{check_counts, default_k, inv_logit};
use crate::error::{Error, Result};
use crate::grid::GridTopology;
use crate::image::{CountImage, Grid, LogitField, SourceField};
use crate::latent::{pseudo_obs, update_xi, XI_INIT};
use crate::lbp::{init_messages, marginal_stats, run_to_convergence, Correlations, LbpOptions, MarginalStats, SweepTrace};

pub const ALPHA_MIN: f64 = 1e-6;
pub const ALPHA_MAX: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RestoreConfig {
    /// Binomial trial count; `None` selects `max(256, 2 max z)`.
    pub k: Option<u32>,
    /// Fixed ridge weight of the prior.
    pub h: f64,
    pub alpha0: f64,
    pub xi0: f64,
    pub lbp: LbpOptions,
    /// Convergence threshold on the max-abs change of the posterior means.
    pub em_tol: f64,
    pub em_max_iter: usize,
    pub correlations: Correlations,
}

impl Default for RestoreConfig {
    fn default() -> Self {
        Self {
            k: None,
            h: 1e-4,
            alpha0: 1.0,
            xi0: XI_INIT,
            lbp: LbpOptions::default(),
            em_tol: 1e-5,
            em_max_iter: 100,
            correlations: Correlations::Pairwise,
        }
    }
}

impl RestoreConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive("h", self.h)?;
        positive("alpha0", self.alpha0)?;
        positive("xi0", self.xi0)?;
        positive("em_tol", self.em_tol)?;
        if self.em_max_iter == 0 {
            return Err(Error::invalid("em_max_iter must be >= 1"));
        }
        if self.k == Some(0) {
            return Err(Error::invalid("K must be >= 1"));
        }
        self.lbp.validate()
    }

    /// The trial count to use for `z`, checked against the observed support.
    pub fn resolve_k(&self, z: &CountImage) -> Result<u32> {
        let k = self.k.unwrap_or_else(|| default_k(z));
        check_counts(z, k)?;
        Ok(k)
    }
}

/// One EM iteration's record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmIteration {
    pub em_iter: usize,
    /// Hyperparameter after this iteration's M-step.
    pub alpha: f64,
    pub xi_mean: Option<f64>,
    pub lbp_sweeps: Option<usize>,
    /// Max-abs change of the means against the previous iteration
    /// (infinite on the first).
    pub m_delta: f64,
    pub q_value: Option<f64>,
    pub beta_g: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub method: &'static str,
    pub iterations: Vec<EmIteration>,
    pub em_converged: bool,
    /// EM iterations whose LBP hit the sweep cap.
    pub lbp_unconverged: usize,
    /// Number of hyperparameter updates that were clamped.
    pub clamped_updates: usize,
}

impl Diagnostics {
    pub(crate) fn new(method: &'static str) -> Self {
        Self {
            method,
            iterations: Vec::new(),
            em_converged: false,
            lbp_unconverged: 0,
            clamped_updates: 0,
        }
    }

    /// True when either the EM loop or any inner LBP run failed to converge.
    pub fn has_warning(&self) -> bool {
        !self.em_converged || self.lbp_unconverged > 0
    }

    /// `method,em_iter,alpha,xi_mean,lbp_sweeps,m_delta,beta_g`; columns that
    /// do not apply to a method are left empty.
    pub fn to_csv(&self) -> String {
        fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
            v.map(|v| v.to_string()).unwrap_or_default()
        }
        let mut out = String::from("method,em_iter,alpha,xi_mean,lbp_sweeps,m_delta,beta_g\n");
        for it in &self.iterations {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                self.method,
                it.em_iter,
                it.alpha,
                opt(it.xi_mean),
                opt(it.lbp_sweeps),
                it.m_delta,
                opt(it.beta_g)
            ));
        }
        out
    }

    /// `iter,alpha,delta,q_value`, the exact solver's trace layout.
    pub fn exact_trace_csv(&self) -> String {
        let mut out = String::from("iter,alpha,delta,q_value\n");
        for it in &self.iterations {
            out.push_str(&format!(
                "{},{},{},{}\n",
                it.em_iter,
                it.alpha,
                it.m_delta,
                it.q_value.map(|q| q.to_string()).unwrap_or_default()
            ));
        }
        out
    }
}

/// Output of a logit-domain restoration.
#[derive(Debug, Clone)]
pub struct Restoration {
    pub lambda: SourceField,
    pub logit: LogitField,
    pub k: u32,
    pub alpha: f64,
    pub xi: Vec<f64>,
    pub diagnostics: Diagnostics,
}

pub(crate) fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Sum over edges of `(m_i − m_j)² + σ_i² + σ_j² − 2 s_ij`.
pub fn edge_smoothness_stat(stats: &MarginalStats, topo: &GridTopology) -> f64 {
    topo.edges()
        .iter()
        .zip(&stats.pair)
        .map(|(&(i, j), s)| (stats.mean[i] - stats.mean[j]).powi(2) + stats.var[i] + stats.var[j] - 2.0 * s)
        .sum()
}

/// `α = (M − 1) / Σ_(i,j)[(m_i − m_j)² + σ_i² + σ_j² − 2 s_ij]`, clamped to
/// `[ALPHA_MIN, ALPHA_MAX]`.
pub fn alpha_update_lbp(stats: &MarginalStats, topo: &GridTopology) -> f64 {
    let stat = edge_smoothness_stat(stats, topo);
    let m = topo.num_pixels() as f64;
    if stat <= 0.0 {
        return ALPHA_MAX;
    }
    ((m - 1.0) / stat).clamp(ALPHA_MIN, ALPHA_MAX)
}

/// `λ̂_i = K ρ(x̂_i)`.
pub fn restore_lambda(logit: &LogitField, k: u32) -> SourceField {
    let kf = f64::from(k);
    SourceField::new(logit.map(|&x| kf * inv_logit(x))).expect("K times a value in (0, 1) is positive")
}

/// Restores Poisson intensities from counts with EM and LBP.
pub fn restore(z: &CountImage, cfg: &RestoreConfig) -> Result<Restoration> {
    restore_traced(z, cfg, None)
}

/// [`restore`], additionally recording every LBP sweep into `trace`.
pub fn restore_traced(z: &CountImage, cfg: &RestoreConfig, mut trace: Option<&mut SweepTrace>) -> Result<Restoration> {
    cfg.validate()?;
    let k = cfg.resolve_k(z)?;
    let topo = GridTopology::for_grid(z)?;
    let m = topo.num_pixels();
    let mut latent = pseudo_obs(z, &vec![cfg.xi0; m], k)?;
    let mut alpha = cfg.alpha0;
    let mut msgs = init_messages(&topo, cfg.alpha0);
    let mut diag = Diagnostics::new("ours");
    let mut prev_mean: Option<Vec<f64>> = None;
    let mut mean = vec![0.0; m];

    for t in 0..cfg.em_max_iter {
        let (next, report) = run_to_convergence(
            &topo,
            msgs,
            latent.evidence(),
            alpha,
            cfg.h,
            &cfg.lbp,
            trace.as_deref_mut().map(|tr| (tr, t)),
        )
        .map_err(|e| match e {
            Error::Diverged { sweep, .. } => Error::Diverged { sweep, em_iter: Some(t) },
            other => other,
        })?;
        msgs = next;
        if !report.converged {
            diag.lbp_unconverged += 1;
        }
        let stats = marginal_stats(&topo, &msgs, latent.evidence(), alpha, cfg.h, cfg.correlations)?;
        let delta = prev_mean
            .as_deref()
            .map_or(f64::INFINITY, |p| max_abs_diff(p, &stats.mean));

        let xi: Vec<f64> = stats.mean.iter().zip(&stats.var).map(|(&mi, &vi)| update_xi(mi, vi)).collect();
        // a single pixel has no edges and leaves alpha undetermined
        let new_alpha = if m > 1 { alpha_update_lbp(&stats, &topo) } else { alpha };
        if m > 1 && (new_alpha == ALPHA_MIN || new_alpha == ALPHA_MAX) {
            diag.clamped_updates += 1;
        }
        latent.set_xi(xi);
        alpha = new_alpha;
        diag.iterations.push(EmIteration {
            em_iter: t,
            alpha,
            xi_mean: Some(latent.xi_mean()),
            lbp_sweeps: Some(report.sweeps),
            m_delta: delta,
            q_value: None,
            beta_g: None,
        });
        mean = stats.mean;
        if delta < cfg.em_tol {
            diag.em_converged = true;
            break;
        }
        prev_mean = Some(mean.clone());
    }
    if !diag.em_converged {
        log::warn!("EM did not converge within {} iterations", cfg.em_max_iter);
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_update_single_edge() {
        let topo = GridTopology::new(2, 1).unwrap();
        let stats = MarginalStats { mean: vec![0.0, 1.0], var: vec![0.0, 0.0], pair: vec![0.0] };
        assert_eq!(alpha_update_lbp(&stats, &topo), 1.0);
    }

    #[test]
    fn alpha_update_degenerate_clamps() {
        let topo = GridTopology::new(3, 3).unwrap();
        let v = 0.01;
        let stats = MarginalStats { mean: vec![0.4; 9], var: vec![v; 9], pair: vec![v; 12] };
        assert_eq!(alpha_update_lbp(&stats, &topo), ALPHA_MAX);
    }

    #[test]
    fn lambda_map() {
        let g = Grid::new(3, 1, vec![0.0, 50.0, -50.0]).unwrap();
        let lam = restore_lambda(&g, 100);
        assert_eq!(lam.as_slice()[0], 50.0);
        assert!((lam.as_slice()[1] - 100.0).abs() < 1e-9 && lam.as_slice()[1] < 100.0);
        assert!(lam.as_slice()[2] > 0.0);

        let x = crate::channel::logit(7.0 / 256.0).unwrap();
        let back = restore_lambda(&Grid::new(1, 1, vec![x]).unwrap(), 256);
        assert!((back.as_slice()[0] - 7.0).abs() < 1e-9);
    }

    #[test]
    fn config_validation() {
        assert!(RestoreConfig::default().validate().is_ok());
        assert!(RestoreConfig { h: 0.0, ..Default::default() }.validate().is_err());
        assert!(RestoreConfig { em_tol: 0.0, ..Default::default() }.validate().is_err());
        assert!(RestoreConfig { k: Some(0), ..Default::default() }.validate().is_err());
        let z = Grid::new(2, 1, vec![3u32, 300]).unwrap();
        assert_eq!(RestoreConfig::default().resolve_k(&z).unwrap(), 600);
        assert!(RestoreConfig { k: Some(299), ..Default::default() }.resolve_k(&z).is_err());
    }

    #[test]
    fn all_zero_counts_push_logits_down() {
        let z = Grid::new(6, 6, vec![0u32; 36]).unwrap();
        let out = restore(&z, &RestoreConfig { k: Some(256), ..Default::default() }).unwrap();
        assert!(out.logit.as_slice().iter().all(|&x| x < -1.0));
        let mixed = Grid::from_fn(6, 6, |x, y| ((x + y) % 3) as u32 * 5);
        let mixed_out = restore(&mixed, &RestoreConfig { k: Some(256), ..Default::default() }).unwrap();
        let max_zero = out.lambda.min_max().1;
        assert!(max_zero < mixed_out.lambda.min_max().0);
    }

    #[test]
    fn output_in_open_interval() {
        let z = Grid::from_fn(8, 8, |x, y| (x * 3 + y * 5) as u32 % 40);
        let out = restore(&z, &RestoreConfig::default()).unwrap();
        let kf = f64::from(out.k);
        assert!(out.lambda.as_slice().iter().all(|&l| l > 0.0 && l < kf));
        assert!(out.xi.iter().all(|&x| x >= crate::latent::XI_FLOOR));
        assert!(out.diagnostics.iterations.iter().all(|it| (ALPHA_MIN..=ALPHA_MAX).contains(&it.alpha)));
    }

    #[test]
    fn single_pixel_restores() {
        let z = Grid::new(1, 1, vec![20u32]).unwrap();
        let out = restore(&z, &RestoreConfig::default()).unwrap();
        assert!(out.lambda.as_slice()[0] > 0.0);
        assert!(out.diagnostics.em_converged);
    }

    #[test]
    fn rejects_counts_above_k() {
        let z = Grid::new(2, 1, vec![1u32, 30]).unwrap();
        let err = restore(&z, &RestoreConfig { k: Some(20), ..Default::default() }).unwrap_err();
        assert!(matches!(err, Error::CountExceedsK { .. }));
    }

    #[test]
    fn diagnostics_csv_layout() {
        let z = Grid::from_fn(4, 4, |x, _| 10 + x as u32);
        let out = restore(&z, &RestoreConfig::default()).unwrap();
        let csv = out.diagnostics.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("method,em_iter,alpha,xi_mean,lbp_sweeps,m_delta,beta_g"));
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first[0], "ours");
        assert_eq!(first[1], "0");
        assert_eq!(first[5], "inf");
        assert_eq!(first[6], "");
    }

    #[test]
    fn trace_covers_all_em_iterations() {
        let z = Grid::from_fn(5, 5, |x, y| (x * y) as u32);
        let mut trace = SweepTrace::default();
        let out = restore_traced(&z, &RestoreConfig::default(), Some(&mut trace)).unwrap();
        let total: usize = out.diagnostics.iterations.iter().map(|i| i.lbp_sweeps.unwrap()).sum();
        assert_eq!(trace.rows.len(), total);
    }
}
