//! Uniform grids in `x` and `k`, quadrature rules and the finite-difference
//! operator shared by every other module.
//!
//! Two flavours of `x`-grid exist:
//!
//! * [`LeftBoundary::ImplicitZero`] grids (built by [`make_x_grid`]) store the
//!   nodes `lo + h, lo + 2h, …, hi`.  The left endpoint is a boundary node at
//!   which every stored field vanishes by convention; it is never stored.  All
//!   measure tables live on such grids, so the quadratic-over-linear energy
//!   density is never evaluated at `x = 0`.
//! * [`LeftBoundary::Node`] grids (built by [`make_closed_x_grid`]) store both
//!   endpoints.  They carry displacement fields on `[-1, 1]`, where nothing
//!   vanishes at the left end.
//!
//! The finite-difference scheme is fixed once for the whole crate: the value
//! `diff_x(v)[i] = (v[i] - v[i-1]) / h` is the slope on the cell
//! `(x[i-1], x[i]]`, with a ghost zero for `v[-1]` on implicit-zero grids.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// How the left endpoint of an [`XGrid`] is treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LeftBoundary {
    /// The left endpoint is not stored; fields vanish there.
    ImplicitZero,
    /// The left endpoint is the first stored node.
    Node,
}

/// A uniform grid on a closed interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XGrid {
    lo: f64,
    hi: f64,
    h: f64,
    nodes: Vec<f64>,
    left: LeftBoundary,
}

/// Build the grid of `n` interior nodes `lo + i·h`, `i = 1..=n`, `h = (hi-lo)/n`.
pub fn make_x_grid(n: usize, lo: f64, hi: f64) -> Result<XGrid> {
    if n < 2 {
        return Err(Error::Grid(format!("need at least 2 nodes, got {n}")));
    }
    check_interval(lo, hi)?;
    let h = (hi - lo) / n as f64;
    let nodes = (1..=n).map(|i| lo + i as f64 * h).collect();
    Ok(XGrid { lo, hi, h, nodes, left: LeftBoundary::ImplicitZero })
}

/// Build the grid `lo + i·h`, `i = 0..=intervals`, including both endpoints.
pub fn make_closed_x_grid(intervals: usize, lo: f64, hi: f64) -> Result<XGrid> {
    if intervals < 2 {
        return Err(Error::Grid(format!("need at least 2 intervals, got {intervals}")));
    }
    check_interval(lo, hi)?;
    let h = (hi - lo) / intervals as f64;
    let nodes = (0..=intervals).map(|i| lo + i as f64 * h).collect();
    Ok(XGrid { lo, hi, h, nodes, left: LeftBoundary::Node })
}

fn check_interval(lo: f64, hi: f64) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite() && hi > lo) {
        return Err(Error::Grid(format!("degenerate interval [{lo}, {hi}]")));
    }
    Ok(())
}

impl XGrid {
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn left(&self) -> LeftBoundary {
        self.left
    }

    /// The same number of nodes on `[lo·s, hi·s]`; node `i` of the result is
    /// exactly `s` times node `i` of `self` up to one rounding.
    pub fn scaled(&self, s: f64) -> Result<XGrid> {
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::Grid(format!("scale factor must be positive, got {s}")));
        }
        let (lo, hi, h) = (self.lo * s, self.hi * s, self.h * s);
        let offset = match self.left {
            LeftBoundary::ImplicitZero => 1,
            LeftBoundary::Node => 0,
        };
        let nodes = (0..self.len()).map(|i| lo + (i + offset) as f64 * h).collect();
        Ok(XGrid { lo, hi, h, nodes, left: self.left })
    }

    /// Left endpoint of the cell that ends at node `i`.
    pub fn cell_left(&self, i: usize) -> f64 {
        self.nodes[i] - self.h
    }

    /// Trapezoid weights.  On implicit-zero grids the (zero) boundary value
    /// carries no weight, so the weights are `h, …, h, h/2`.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let n = self.len();
        let mut w = vec![self.h; n];
        w[n - 1] = 0.5 * self.h;
        if self.left == LeftBoundary::Node {
            w[0] = 0.5 * self.h;
        }
        w
    }

    /// Composite Simpson weights.  Requires an even number of intervals
    /// (counting the implicit boundary cell on implicit-zero grids).
    pub fn simpson_weights(&self) -> Result<Vec<f64>> {
        let n = self.len();
        let (intervals, offset) = match self.left {
            LeftBoundary::ImplicitZero => (n, 1),
            LeftBoundary::Node => (n - 1, 0),
        };
        if intervals % 2 != 0 {
            return Err(Error::Grid(format!("Simpson rule needs an even number of intervals, got {intervals}")));
        }
        let third = self.h / 3.0;
        let w = (0..n)
            .map(|i| {
                let global = i + offset;
                if global == 0 || global == intervals {
                    third
                } else if global % 2 == 1 {
                    4.0 * third
                } else {
                    2.0 * third
                }
            })
            .collect();
        Ok(w)
    }

    /// Index of the node closest to `x`.
    pub fn nearest_index(&self, x: f64) -> usize {
        let first = self.nodes[0];
        let i = ((x - first) / self.h).round();
        i.clamp(0.0, (self.len() - 1) as f64) as usize
    }
}

/// Trapezoid quadrature of nodal values.
pub fn trapezoid(values: &[f64], grid: &XGrid) -> Result<f64> {
    check_len(values, grid)?;
    Ok(weighted_sum(values, &grid.trapezoid_weights()))
}

/// Composite Simpson quadrature of nodal values.
pub fn simpson(values: &[f64], grid: &XGrid) -> Result<f64> {
    check_len(values, grid)?;
    Ok(weighted_sum(values, &grid.simpson_weights()?))
}

fn weighted_sum(values: &[f64], weights: &[f64]) -> f64 {
    values.iter().zip(weights).map(|(v, w)| v * w).sum()
}

fn check_len(values: &[f64], grid: &XGrid) -> Result<()> {
    if values.len() != grid.len() {
        return Err(Error::Shape(format!("{} values on a grid of {} nodes", values.len(), grid.len())));
    }
    Ok(())
}

/// Cell slopes `(v[i] - v[i-1]) / h`, with a ghost zero in front of an
/// implicit-zero grid and a one-sided forward slope at the first node of a
/// closed grid.
pub fn diff_x(values: &[f64], grid: &XGrid) -> Result<Vec<f64>> {
    check_len(values, grid)?;
    let h = grid.spacing();
    let n = values.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let d = match (i, grid.left()) {
            (0, LeftBoundary::ImplicitZero) => values[0] / h,
            (0, LeftBoundary::Node) => (values[1] - values[0]) / h,
            _ => (values[i] - values[i - 1]) / h,
        };
        out.push(d);
    }
    Ok(out)
}

/// A finite symmetric (or user-selected) set of nonzero multiples of `π/L_eff`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KGrid {
    l_eff: f64,
    k_max: f64,
    indices: Vec<i64>,
}

/// All nonzero multiples `jπ/L_eff` with `|jπ/L_eff| <= k_max`, sorted by `k`.
pub fn make_k_grid(l_eff: f64, k_max: f64) -> Result<KGrid> {
    if !(l_eff.is_finite() && l_eff > 0.0) {
        return Err(Error::Grid(format!("L_eff must be positive, got {l_eff}")));
    }
    let step = PI / l_eff;
    if !(k_max.is_finite() && k_max >= step) {
        return Err(Error::Grid(format!("k_max = {k_max} is below the first frequency {step}; the grid would be empty")));
    }
    let j_max = max_index(step, k_max);
    let indices = (-j_max..=j_max).filter(|&j| j != 0).collect();
    Ok(KGrid { l_eff, k_max, indices })
}

/// Largest `j` with `j·step <= k_max`, tolerant to rounding at the boundary.
fn max_index(step: f64, k_max: f64) -> i64 {
    let ratio = k_max / step;
    let j = ratio.floor();
    if (ratio - (j + 1.0)).abs() <= 1e-12 * ratio.max(1.0) {
        j as i64 + 1
    } else {
        j as i64
    }
}

impl KGrid {
    /// A grid restricted to the given nonzero indices (sorted and deduplicated).
    pub fn from_indices(l_eff: f64, indices: &[i64]) -> Result<KGrid> {
        if !(l_eff.is_finite() && l_eff > 0.0) {
            return Err(Error::Grid(format!("L_eff must be positive, got {l_eff}")));
        }
        if indices.is_empty() {
            return Err(Error::Grid("empty frequency set".into()));
        }
        if indices.contains(&0) {
            return Err(Error::Grid("k = 0 is not a valid frequency".into()));
        }
        let mut idx = indices.to_vec();
        idx.sort_unstable();
        idx.dedup();
        let k_max = idx.iter().map(|j| j.unsigned_abs()).max().unwrap_or(1) as f64 * PI / l_eff;
        Ok(KGrid { l_eff, k_max, indices: idx })
    }

    pub fn l_eff(&self) -> f64 {
        self.l_eff
    }

    pub fn k_max(&self) -> f64 {
        self.k_max
    }

    /// Frequency spacing `π/L_eff`.
    pub fn step(&self) -> f64 {
        PI / self.l_eff
    }

    pub fn indices(&self) -> &[i64] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Frequency of entry `j`.
    pub fn k(&self, j: usize) -> f64 {
        self.indices[j] as f64 * self.step()
    }

    /// All frequencies, in storage order.
    pub fn values(&self) -> Vec<f64> {
        (0..self.len()).map(|j| self.k(j)).collect()
    }

    /// Largest `|index|`.
    pub fn max_abs_index(&self) -> u64 {
        self.indices.iter().map(|j| j.unsigned_abs()).max().unwrap_or(0)
    }

    /// Storage position of a given index, if present.
    pub fn position(&self, index: i64) -> Option<usize> {
        self.indices.binary_search(&index).ok()
    }
}
