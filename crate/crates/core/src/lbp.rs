//! Gaussian loopy belief propagation on the 4-neighbor grid.
//!
//! The target is the Gaussian with precision `αΛ + hI + diag(β)` and linear
//! term `β ∘ y`. Each directed edge `j -> i` carries a Gaussian message with
//! mean `μ_{j→i}` and precision `γ_{j→i}`:
//!
//! ```text
//! μ_{j→i}   = (β_j y_j + Σ_{k∈N(j)\i} γ_{k→j} μ_{k→j}) / (β_j + Σ_{k∈N(j)\i} γ_{k→j} + h)
//! 1/γ_{j→i} = 1/α + 1/(β_j + Σ_{k∈N(j)\i} γ_{k→j} + h)
//! ```
//!
//! Sweeps are synchronous (every new message reads only the previous set),
//! which makes runs bit-reproducible.

use crate::error::{Error, Result};
use crate::grid::GridTopology;
use crate::latent::Evidence;

/// Messages indexed by directed-edge slot (see [`GridTopology::incoming`]).
#[derive(Debug, Clone, PartialEq)]
pub struct MessageSet {
    pub mu: Vec<f64>,
    pub gamma: Vec<f64>,
}

/// `μ = 0`, `γ = α₀/2` on every directed edge.
pub fn init_messages(topo: &GridTopology, alpha0: f64) -> MessageSet {
    let n = topo.num_directed();
    MessageSet {
        mu: vec![0.0; n],
        gamma: vec![0.5 * alpha0; n],
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbpOptions {
    pub tol: f64,
    pub max_sweeps: usize,
    /// Fraction of the previous message kept on each update, in `[0, 1)`.
    pub damping: f64,
}

impl Default for LbpOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_sweeps: 500,
            damping: 0.0,
        }
    }
}

impl LbpOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::invalid(format!("LBP tolerance must be > 0, got {}", self.tol)));
        }
        if self.max_sweeps == 0 {
            return Err(Error::invalid("LBP max sweeps must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::invalid(format!(
                "damping must lie in [0, 1), got {}",
                self.damping
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbpReport {
    pub sweeps: usize,
    pub final_delta: f64,
    pub converged: bool,
}

/// Rows of `(sweep, max_delta)`, tagged with the owning EM iteration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepTrace {
    pub rows: Vec<(usize, usize, f64)>,
}

impl SweepTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("em_iter,sweep,max_delta\n");
        for (t, s, d) in &self.rows {
            out.push_str(&format!("{t},{s},{d}\n"));
        }
        out
    }
}

fn check_inputs(topo: &GridTopology, msgs: &MessageSet, ev: Evidence<'_>, alpha: f64, h: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!("LBP needs alpha > 0, got {alpha}")));
    }
    if !(h >= 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!("LBP needs h >= 0, got {h}")));
    }
    if ev.beta.len() != topo.num_pixels() || ev.y.len() != topo.num_pixels() {
        return Err(Error::ShapeMismatch {
            expected: (topo.width(), topo.height()),
            actual: (ev.beta.len(), 1),
        });
    }
    if msgs.mu.len() != topo.num_directed() || msgs.gamma.len() != topo.num_directed() {
        return Err(Error::invalid("message set does not match topology"));
    }
    Ok(())
}

/// One synchronous sweep from `old` into `new`; returns the largest absolute
/// change over all `μ` and `γ`.
pub fn sweep_into(
    topo: &GridTopology,
    old: &MessageSet,
    new: &mut MessageSet,
    ev: Evidence<'_>,
    alpha: f64,
    h: f64,
    damping: f64,
) -> Result<f64> {
    let inv_alpha = 1.0 / alpha;
    let mut max_delta: f64 = 0.0;
    for i in 0..topo.num_pixels() {
        for s in topo.incoming(i) {
            let j = topo.slot_source(s);
            let skip = topo.slot_reverse(s);
            let mut prec = ev.beta[j] + h;
            let mut lin = ev.beta[j] * ev.y[j];
            for k in topo.incoming(j) {
                if k != skip {
                    prec += old.gamma[k];
                    lin += old.gamma[k] * old.mu[k];
                }
            }
            let mut mu = lin / prec;
            let mut gamma = 1.0 / (inv_alpha + 1.0 / prec);
            if damping > 0.0 {
                mu = damping * old.mu[s] + (1.0 - damping) * mu;
                gamma = damping * old.gamma[s] + (1.0 - damping) * gamma;
            }
            if !(mu.is_finite() && gamma.is_finite()) {
                return Err(Error::Diverged {
                    sweep: 0,
                    em_iter: None,
                });
            }
            max_delta = max_delta
                .max((mu - old.mu[s]).abs())
                .max((gamma - old.gamma[s]).abs());
            new.mu[s] = mu;
            new.gamma[s] = gamma;
        }
    }
    Ok(max_delta)
}

/// One synchronous sweep, returning the new message set and its max change.
pub fn sweep(
    topo: &GridTopology,
    msgs: &MessageSet,
    ev: Evidence<'_>,
    alpha: f64,
    h: f64,
) -> Result<(MessageSet, f64)> {
    check_inputs(topo, msgs, ev, alpha, h)?;
    let mut next = msgs.clone();
    let delta = sweep_into(topo, msgs, &mut next, ev, alpha, h, 0.0).map_err(|_| Error::Diverged {
        sweep: 1,
        em_iter: None,
    })?;
    Ok((next, delta))
}

/// Sweeps until the max change drops below `opts.tol` or `opts.max_sweeps`
/// is reached. Non-convergence is reported in the [`LbpReport`], not as an
/// error.
pub fn run_to_convergence(
    topo: &GridTopology,
    msgs: MessageSet,
    ev: Evidence<'_>,
    alpha: f64,
    h: f64,
    opts: &LbpOptions,
    mut trace: Option<(&mut SweepTrace, usize)>,
) -> Result<(MessageSet, LbpReport)> {
    opts.validate()?;
    check_inputs(topo, &msgs, ev, alpha, h)?;
    let mut cur = msgs;
    let mut next = cur.clone();
    let mut delta = f64::INFINITY;
    for n in 1..=opts.max_sweeps {
        delta = sweep_into(topo, &cur, &mut next, ev, alpha, h, opts.damping)
            .map_err(|_| Error::Diverged { sweep: n, em_iter: None })?;
        std::mem::swap(&mut cur, &mut next);
        if let Some((t, em_iter)) = trace.as_mut() {
            t.rows.push((*em_iter, n, delta));
        }
        if delta < opts.tol {
            return Ok((
                cur,
                LbpReport {
                    sweeps: n,
                    final_delta: delta,
                    converged: true,
                },
            ));
        }
    }
    Ok((
        cur,
        LbpReport {
            sweeps: opts.max_sweeps,
            final_delta: delta,
            converged: false,
        },
    ))
}

/// How pairwise correlations `s_ij` enter the statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Correlations {
    /// `s_ij = (α − γ_{i→j})(α − γ_{j→i}) / α³`.
    #[default]
    Pairwise,
    /// `s_ij = 0` (naive mean field).
    MeanField,
}

/// Marginal means and variances per pixel, and pairwise correlations per
/// undirected edge (aligned with [`GridTopology::edges`]).
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub pair: Vec<f64>,
}

pub fn marginal_stats(
    topo: &GridTopology,
    msgs: &MessageSet,
    ev: Evidence<'_>,
    alpha: f64,
    h: f64,
    correlations: Correlations,
) -> Result<MarginalStats> {
    check_inputs(topo, msgs, ev, alpha, h)?;
    let m = topo.num_pixels();
    let mut mean = Vec::with_capacity(m);
    let mut var = Vec::with_capacity(m);
    for i in 0..m {
        let mut prec = ev.beta[i] + h;
        let mut lin = ev.beta[i] * ev.y[i];
        for s in topo.incoming(i) {
            prec += msgs.gamma[s];
            lin += msgs.gamma[s] * msgs.mu[s];
        }
        mean.push(lin / prec);
        var.push(1.0 / prec);
    }
    let pair = match correlations {
        Correlations::MeanField => vec![0.0; topo.edges().len()],
        Correlations::Pairwise => {
            let a3 = alpha * alpha * alpha;
            topo.edge_slots()
                .iter()
                .map(|&(into_i, into_j)| {
                    // into_i carries j→i, into_j carries i→j
                    (alpha - msgs.gamma[into_j]) * (alpha - msgs.gamma[into_i]) / a3
                })
                .collect()
        }
    };
    Ok(MarginalStats { mean, var, pair })
}
