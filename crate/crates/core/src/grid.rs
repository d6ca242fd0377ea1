//! 4-neighbor grid topology (free boundary) and the GMRF prior built on it.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::image::Grid;

/// Neighbor structure of an `width x height` grid.
///
/// Besides the undirected edge list, the topology indexes one *slot* per
/// directed edge: slots `offsets[i]..offsets[i + 1]` hold the messages
/// arriving at pixel `i`, one per neighbor.
#[derive(Debug, Clone)]
pub struct GridTopology {
    width: usize,
    height: usize,
    edges: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    /// Sending pixel of each slot.
    source: Vec<usize>,
    /// Slot carrying the message in the opposite direction.
    reverse: Vec<usize>,
    /// For edge `(i, j)`: the slot of `j -> i` and the slot of `i -> j`.
    edge_slots: Vec<(usize, usize)>,
}

impl GridTopology {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "grid dimensions must be positive, got {width}x{height}"
            )));
        }
        let m = width * height;
        let mut offsets = Vec::with_capacity(m + 1);
        let mut source = Vec::with_capacity(4 * m);
        offsets.push(0);
        for y in 0..height {
            for x in 0..width {
                if x > 0 {
                    source.push(y * width + x - 1);
                }
                if x + 1 < width {
                    source.push(y * width + x + 1);
                }
                if y > 0 {
                    source.push((y - 1) * width + x);
                }
                if y + 1 < height {
                    source.push((y + 1) * width + x);
                }
                offsets.push(source.len());
            }
        }
        let slot_of = |to: usize, from: usize| -> usize {
            (offsets[to]..offsets[to + 1])
                .find(|&s| source[s] == from)
                .expect("neighbor relation is symmetric")
        };
        let mut reverse = vec![0; source.len()];
        for i in 0..m {
            for s in offsets[i]..offsets[i + 1] {
                reverse[s] = slot_of(source[s], i);
            }
        }
        let mut edges = Vec::with_capacity(width * (height - 1) + height * (width - 1));
        let mut edge_slots = Vec::with_capacity(edges.capacity());
        for i in 0..m {
            for s in offsets[i]..offsets[i + 1] {
                let j = source[s];
                if i < j {
                    edges.push((i, j));
                    edge_slots.push((s, reverse[s]));
                }
            }
        }
        Ok(Self {
            width,
            height,
            edges,
            offsets,
            source,
            reverse,
            edge_slots,
        })
    }

    pub fn for_grid<T>(grid: &Grid<T>) -> Result<Self> {
        Self::new(grid.width(), grid.height())
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    /// Number of pixels `M`.
    #[inline]
    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    /// Undirected neighbor pairs `(i, j)` with `i < j`.
    #[inline]
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    #[inline]
    pub fn num_directed(&self) -> usize {
        self.source.len()
    }

    /// Slots of messages arriving at pixel `i`.
    #[inline]
    pub fn incoming(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    #[inline]
    pub fn slot_source(&self, slot: usize) -> usize {
        self.source[slot]
    }

    #[inline]
    pub fn slot_reverse(&self, slot: usize) -> usize {
        self.reverse[slot]
    }

    /// `(slot of j -> i, slot of i -> j)` for every edge, aligned with
    /// [`edges`](Self::edges).
    #[inline]
    pub fn edge_slots(&self) -> &[(usize, usize)] {
        &self.edge_slots
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.incoming(i).map(move |s| self.source[s])
    }

    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.num_pixels() {
            return Err(Error::ShapeMismatch {
                expected: (self.width, self.height),
                actual: (len, 1),
            });
        }
        Ok(())
    }

    /// `Λx` by edge traversal.
    pub fn laplacian_apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x.len())?;
        let mut out = vec![0.0; x.len()];
        for &(i, j) in &self.edges {
            let d = x[i] - x[j];
            out[i] += d;
            out[j] -= d;
        }
        Ok(out)
    }

    /// Dense graph Laplacian `D − A`. Only meant for small grids.
    pub fn dense_laplacian(&self) -> DMatrix<f64> {
        let m = self.num_pixels();
        let mut lap = DMatrix::zeros(m, m);
        for &(i, j) in &self.edges {
            lap[(i, i)] += 1.0;
            lap[(j, j)] += 1.0;
            lap[(i, j)] -= 1.0;
            lap[(j, i)] -= 1.0;
        }
        lap
    }
}

/// GMRF hyperparameters: smoothness `alpha` and ridge `h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmrfHyper {
    pub alpha: f64,
    pub h: f64,
}

impl GmrfHyper {
    pub fn new(alpha: f64, h: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha must be >= 0, got {alpha}")));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::invalid(format!("h must be > 0, got {h}")));
        }
        Ok(Self { alpha, h })
    }
}

/// `Σ_(i,j) (x_i − x_j)² = xᵀΛx`.
pub fn laplacian_quadform(topo: &GridTopology, x: &[f64]) -> Result<f64> {
    topo.check_len(x.len())?;
    Ok(topo.edges.iter().map(|&(i, j)| (x[i] - x[j]).powi(2)).sum())
}

/// `(α/2) Σ_(i,j) (x_i − x_j)² + (h/2) Σ x_i²`; the prior density is
/// proportional to `exp(−energy)`.
pub fn prior_energy(topo: &GridTopology, x: &[f64], hyper: GmrfHyper) -> Result<f64> {
    let smooth = laplacian_quadform(topo, x)?;
    let ridge: f64 = x.iter().map(|v| v * v).sum();
    Ok(0.5 * hyper.alpha * smooth + 0.5 * hyper.h * ridge)
}

/// Eigenvalues of the free-boundary grid Laplacian, ascending:
/// `2(1 − cos(πp/Lx)) + 2(1 − cos(πq/Ly))`.
pub fn laplacian_eigenvalues(width: usize, height: usize) -> Vec<f64> {
    let path = |n: usize| -> Vec<f64> {
        (0..n)
            .map(|p| 2.0 * (1.0 - (std::f64::consts::PI * p as f64 / n as f64).cos()))
            .collect()
    };
    let (ex, ey) = (path(width), path(height));
    let mut out: Vec<f64> = ey
        .iter()
        .flat_map(|b| ex.iter().map(move |a| a + b))
        .collect();
    out.sort_by(f64::total_cmp);
    out
}
