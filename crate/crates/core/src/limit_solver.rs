//! Minimization of the discrete limit functional over feasible tables and
//! diagnostics of the minimizer.
//!
//! The feasible set is a product of scaled simplices, one per `x`-row
//! (`b ≥ 0`, `Σ_j b_ij = 2x_i`).  The functional is convex and positively
//! 1-homogeneous, and its curvature grows like `1/b` where columns become
//! small, which defeats first-order methods.  The solver is therefore a
//! primal log-barrier method: for a decreasing sequence of barrier weights `τ`
//! it minimizes `F(b) − τ Σ w_i ln b_ij` by Newton's method on the affine
//! constraint rows.  The column Hessians are tridiagonal in `x`, so each Newton
//! step costs one dense `nx × nx` Schur-complement solve for the row
//! multipliers.  Every iterate satisfies the constraint rows up to rounding
//! and stays strictly positive.
//!
//! Stationarity is measured by the projected-gradient residual
//! `max_ij |P(b − G) − b|_ij` with `G` the gradient divided by the row
//! quadrature weight; it vanishes exactly at the minimizer of the discrete
//! problem.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grids::{make_k_grid, make_x_grid, KGrid, XGrid};
use crate::measure::{eval_f_infty, quotient_density, FInftyReport, MeasureTable};

/// Starting point of the iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Initialization {
    /// Mass `∝ exp(−(|k| − k*(x))²)` around the balance frequency `k*(x) = (2x)^{-1/2}`.
    Balance,
    /// Equal mass on every frequency.
    Uniform,
    /// Seeded random positive weights.
    Random,
}

/// Grids, tolerances and step-rule parameters of the solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Number of `x`-nodes on `(0, 1]`.
    pub nx: usize,
    /// Half period defining the frequency comb `(π/L_eff)ℤ`.
    pub l_eff: f64,
    pub k_max: f64,
    /// Denominator floor during iteration, relative to the row mass `2x`.
    pub b_min_rel: f64,
    pub max_iters: usize,
    pub kkt_tol: f64,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
    /// Backtracking factor.
    pub backtrack: f64,
    /// Largest fraction of an entry a single step may remove.
    pub boundary_fraction: f64,
    /// Initial barrier weight.
    pub barrier_start: f64,
    /// Factor applied to the barrier weight once a stage is centred.
    pub barrier_shrink: f64,
    pub seed: u64,
    pub init: Initialization,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            nx: 200,
            l_eff: 8.0,
            k_max: 12.0,
            b_min_rel: 0.0,
            max_iters: 2_000,
            kkt_tol: 1e-6,
            armijo: 1e-4,
            backtrack: 0.5,
            boundary_fraction: 0.99,
            barrier_start: 1e-2,
            barrier_shrink: 0.1,
            seed: 0,
            init: Initialization::Balance,
        }
    }
}

impl SolverConfig {
    /// Check every field before any computation.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(m));
        if self.nx < 2 {
            return bad(format!("nx must be at least 2, got {}", self.nx));
        }
        if !(self.kkt_tol > 0.0) {
            return bad(format!("kkt_tol must be positive, got {}", self.kkt_tol));
        }
        if !(self.l_eff > 0.0) {
            return bad(format!("L_eff must be positive, got {}", self.l_eff));
        }
        if !(self.k_max >= std::f64::consts::PI / self.l_eff) {
            return bad(format!("k_max = {} is below the first frequency", self.k_max));
        }
        if !(self.b_min_rel >= 0.0) {
            return bad(format!("b_min_rel must be nonnegative, got {}", self.b_min_rel));
        }
        if !(self.armijo > 0.0 && self.armijo < 1.0) || !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return bad("Armijo and backtracking constants must lie in (0, 1)".into());
        }
        if !(self.boundary_fraction > 0.0 && self.boundary_fraction < 1.0) {
            return bad("boundary_fraction must lie in (0, 1)".into());
        }
        if !(self.barrier_start > 0.0) || !(self.barrier_shrink > 0.0 && self.barrier_shrink < 1.0) {
            return bad("barrier_start must be positive and barrier_shrink in (0, 1)".into());
        }
        if self.max_iters == 0 {
            return bad("max_iters must be positive".into());
        }
        Ok(())
    }

    pub fn grids(&self) -> Result<(XGrid, KGrid)> {
        Ok((make_x_grid(self.nx, 0.0, 1.0)?, make_k_grid(self.l_eff, self.k_max)?))
    }
}

/// The discrete objective with its gradient, on fixed grids.
#[derive(Debug, Clone)]
pub struct Objective {
    nx: usize,
    nk: usize,
    h: f64,
    ks: Vec<f64>,
    /// Per-cell denominator floor.
    floors: Vec<f64>,
}

impl Objective {
    /// Objective on the grids of `x`, `k` with floor `b_min_rel · 2x̄` per cell.
    pub fn new(x: &XGrid, k: &KGrid, b_min_rel: f64) -> Objective {
        let h = x.spacing();
        let floors = x.nodes().iter().map(|xi| b_min_rel * 2.0 * (xi - 0.5 * h)).collect();
        Objective { nx: x.len(), nk: k.len(), h, ks: k.values(), floors }
    }

    pub fn len(&self) -> usize {
        self.nx * self.nk
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Objective value.
    pub fn value(&self, b: &[f64]) -> f64 {
        self.eval(b, None)
    }

    /// Objective value, writing the gradient into `grad`.
    pub fn value_grad(&self, b: &[f64], grad: &mut [f64]) -> f64 {
        self.eval(b, Some(grad))
    }

    fn eval(&self, b: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        let (nk, h) = (self.nk, self.h);
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut total = 0.0;
        for i in 0..self.nx {
            let fl = self.floors[i];
            let mut cell = 0.0;
            for j in 0..nk {
                let k2 = self.ks[j] * self.ks[j];
                let cur = b[i * nk + j];
                let prev = if i == 0 { 0.0 } else { b[(i - 1) * nk + j] };
                let m = 0.5 * (prev + cur);
                let d = (cur - prev) / h;
                let floored = m < fl;
                let denom = if floored { fl } else { m };
                let q = quotient_density(d, denom, self.ks[j]);
                cell += k2 * m + q;
                if let Some(g) = grad.as_deref_mut() {
                    if m == 0.0 && !floored {
                        // both endpoints vanish: the quotient is not differentiable here, use the
                        // one-sided derivative of raising a single endpoint, `½k² + 1/(2k²h²)`
                        let one_sided = h * (0.5 * k2 + 0.5 / (k2 * h * h));
                        g[i * nk + j] += one_sided;
                        if i > 0 {
                            g[(i - 1) * nk + j] += one_sided;
                        }
                        continue;
                    }
                    // ∂/∂m and ∂/∂d of k² m + d²/(4k² m)
                    let dm = if floored || d == 0.0 { k2 } else { k2 - d * d / (4.0 * k2 * m * m) };
                    let dd = if d == 0.0 { 0.0 } else { d / (2.0 * k2 * denom) };
                    g[i * nk + j] += h * (0.5 * dm + dd / h);
                    if i > 0 {
                        g[(i - 1) * nk + j] += h * (0.5 * dm - dd / h);
                    }
                }
            }
            total += h * cell;
        }
        total
    }
}

impl Objective {
    /// Edge weights of column `j` in relative coordinates `s = b ⊙ σ`: the
    /// Hessian of the functional becomes the path-graph Laplacian with weight
    /// `c_i = 4 a² b² / (k² h (a + b)³)` on the cell between nodes `i − 1`
    /// (value `a`) and `i` (value `b`).  `c_0 = 0` (the cell at the origin
    /// has no second node).
    fn column_edges(&self, b: &[f64], j: usize) -> Vec<f64> {
        let (nk, h) = (self.nk, self.h);
        let k2 = self.ks[j] * self.ks[j];
        let mut c = vec![0.0; self.nx];
        for i in 1..self.nx {
            let (prev, cur) = (b[(i - 1) * nk + j], b[i * nk + j]);
            let sum = prev + cur;
            if sum > 0.0 && 0.5 * sum >= self.floors[i] {
                c[i] = 4.0 * prev * prev * cur * cur / (k2 * h * sum * sum * sum);
            }
        }
        c
    }
}

/// `LDLᵀ` factorization of a grounded path-graph Laplacian `L + diag(ground)`
/// with edge weights `edge[i]` between nodes `i − 1` and `i`.  The pivots are
/// formed from sums and series combinations of nonnegative conductances only,
/// so they carry full relative accuracy however weak the grounding.
struct GroundedPath {
    edge: Vec<f64>,
    ground: Vec<f64>,
    pivot: Vec<f64>,
}

impl GroundedPath {
    fn new(edge: Vec<f64>, ground: Vec<f64>) -> Result<GroundedPath> {
        let n = ground.len();
        let mut pivot = vec![0.0; n];
        let mut eff = ground[0];
        for i in 0..n {
            if i > 0 {
                let c = edge[i];
                eff = ground[i] + if c > 0.0 { eff * c / (eff + c) } else { 0.0 };
            }
            pivot[i] = eff + if i + 1 < n { edge[i + 1] } else { 0.0 };
            if !(pivot[i] > 0.0) || !pivot[i].is_finite() {
                return Err(Error::Numerical(format!("pivot {} in the Newton system", pivot[i])));
            }
        }
        Ok(GroundedPath { edge, ground, pivot })
    }

    /// Solve `(L + diag(ground)) x = r` in place.
    fn solve(&self, r: &mut [f64]) {
        let n = r.len();
        for i in 1..n {
            r[i] += self.edge[i] / self.pivot[i - 1] * r[i - 1];
        }
        for i in 0..n {
            r[i] /= self.pivot[i];
        }
        for i in (0..n.saturating_sub(1)).rev() {
            r[i] += self.edge[i + 1] / self.pivot[i] * r[i + 1];
        }
    }

    /// `(L + diag(ground)) x`, with the Laplacian applied through edge differences.
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        let mut y: Vec<f64> = (0..n).map(|i| self.ground[i] * x[i]).collect();
        for i in 1..n {
            let flow = self.edge[i] * (x[i] - x[i - 1]);
            y[i] += flow;
            y[i - 1] -= flow;
        }
        y
    }
}

/// Newton system of a barrier stage in relative coordinates `s = b ⊙ σ`:
///
/// `(L_j + τW) σ_j + b_j ⊙ ν = f_j` for every column, `Σ_j b_j ⊙ σ_j = c`.
///
/// Each column is flat along its own scaling (`L_j 1 = 0`), so `σ_j` is split
/// into `α_j 1` plus a weighted-mean-free part `M_j(·)`; the flat directions
/// then enter only through an `(nx + nk)`-dimensional augmented system that
/// stays well conditioned as `τ → 0`.
struct NewtonSystem {
    nx: usize,
    nk: usize,
    b: Vec<f64>,
    w: Vec<f64>,
    w_total: f64,
    tau: f64,
    columns: Vec<GroundedPath>,
    augmented: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl NewtonSystem {
    fn new(obj: &Objective, b: &[f64], weights: &[f64], tau: f64) -> Result<NewtonSystem> {
        let (nx, nk) = (obj.nx, obj.nk);
        let w = weights.to_vec();
        let w_total: f64 = w.iter().sum();
        let ground: Vec<f64> = w.iter().map(|wi| tau * wi).collect();
        let columns: Vec<GroundedPath> = (0..nk)
            .into_par_iter()
            .map(|j| GroundedPath::new(obj.column_edges(b, j), ground.clone()))
            .collect::<Result<_>>()?;
        let mut sys = NewtonSystem {
            nx,
            nk,
            b: b.to_vec(),
            w,
            w_total,
            tau,
            columns,
            augmented: DMatrix::<f64>::zeros(1, 1).lu(),
        };
        // S₀ = Σ_j D_j M_j D_j, summed in column order for a schedule-independent result
        let parts: Vec<Vec<f64>> = (0..nk)
            .into_par_iter()
            .map(|j| {
                let mut sc = vec![0.0; nx * nx];
                for i in 0..nx {
                    let bij = sys.b[i * nk + j];
                    if bij == 0.0 {
                        continue;
                    }
                    let mut e = vec![0.0; nx];
                    e[i] = bij;
                    let m = sys.mean_free_solve(j, e);
                    for i2 in 0..nx {
                        sc[i2 * nx + i] = sys.b[i2 * nk + j] * m[i2];
                    }
                }
                sc
            })
            .collect();
        let dim = nx + nk;
        let mut aug = DMatrix::<f64>::zeros(dim, dim);
        for sc in &parts {
            for i in 0..nx {
                for i2 in 0..nx {
                    aug[(i, i2)] -= sc[i * nx + i2];
                }
            }
        }
        drop(parts);
        for j in 0..nk {
            for i in 0..nx {
                let bij = sys.b[i * nk + j];
                aug[(i, nx + j)] = bij;
                aug[(nx + j, i)] = bij;
            }
            aug[(nx + j, nx + j)] = tau * w_total;
        }
        sys.augmented = aug.lu();
        Ok(sys)
    }

    /// `M_j r`: the solution of `(L_j + τW) x = r − (Σr/Σw) w`, with its
    /// weighted mean removed.
    fn mean_free_solve(&self, j: usize, mut r: Vec<f64>) -> Vec<f64> {
        let shift = r.iter().sum::<f64>() / self.w_total;
        r.iter_mut().zip(&self.w).for_each(|(v, wi)| *v -= shift * wi);
        self.columns[j].solve(&mut r);
        let mean = r.iter().zip(&self.w).map(|(v, wi)| v * wi).sum::<f64>() / self.w_total;
        r.iter_mut().for_each(|v| *v -= mean);
        r
    }

    fn column(&self, f: &[f64], j: usize) -> Vec<f64> {
        (0..self.nx).map(|i| f[i * self.nk + j]).collect()
    }

    /// One direct solve; returns `(σ, ν)`.
    fn solve_once(&self, f: &[f64], c: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let (nx, nk) = (self.nx, self.nk);
        let mf: Vec<Vec<f64>> = (0..nk).into_par_iter().map(|j| self.mean_free_solve(j, self.column(f, j))).collect();
        let mut rhs = DVector::<f64>::zeros(nx + nk);
        for i in 0..nx {
            rhs[i] = c[i] - (0..nk).map(|j| self.b[i * nk + j] * mf[j][i]).sum::<f64>();
        }
        for j in 0..nk {
            rhs[nx + j] = self.column(f, j).iter().sum();
        }
        let sol = self
            .augmented
            .solve(&rhs)
            .ok_or_else(|| Error::Numerical("singular augmented Newton system".into()))?;
        let nu: Vec<f64> = (0..nx).map(|i| sol[i]).collect();
        let cols: Vec<Vec<f64>> = (0..nk)
            .into_par_iter()
            .map(|j| {
                let r: Vec<f64> = (0..nx).map(|i| f[i * nk + j] - self.b[i * nk + j] * nu[i]).collect();
                let alpha = r.iter().sum::<f64>() / (self.tau * self.w_total);
                self.mean_free_solve(j, r).into_iter().map(|v| v + alpha).collect()
            })
            .collect();
        let mut sigma = vec![0.0; nx * nk];
        for (j, col) in cols.iter().enumerate() {
            for i in 0..nx {
                sigma[i * nk + j] = col[i];
            }
        }
        Ok((sigma, nu))
    }

    /// Residuals `(f − (L + τW)σ − b ⊙ ν, c − Σ_j b_j ⊙ σ_j)`.
    fn residual(&self, f: &[f64], c: &[f64], sigma: &[f64], nu: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (nx, nk) = (self.nx, self.nk);
        let mut rf = vec![0.0; nx * nk];
        for j in 0..nk {
            let ks = self.columns[j].apply(&self.column(sigma, j));
            for i in 0..nx {
                let p = i * nk + j;
                rf[p] = f[p] - ks[i] - self.b[p] * nu[i];
            }
        }
        let rc =
            (0..nx).map(|i| c[i] - (0..nk).map(|j| self.b[i * nk + j] * sigma[i * nk + j]).sum::<f64>()).collect();
        (rf, rc)
    }

    /// Solve with two rounds of iterative refinement; returns `σ`.
    fn solve(&self, f: &[f64], c: &[f64]) -> Result<Vec<f64>> {
        let (mut sigma, mut nu) = self.solve_once(f, c)?;
        for _ in 0..2 {
            let (rf, rc) = self.residual(f, c, &sigma, &nu);
            let (ds, dnu) = self.solve_once(&rf, &rc)?;
            sigma.iter_mut().zip(&ds).for_each(|(a, v)| *a += v);
            nu.iter_mut().zip(&dnu).for_each(|(a, v)| *a += v);
        }
        Ok(sigma)
    }
}

/// Relative Newton direction `σ` of a barrier stage (the step is `b ⊙ σ`)
/// for the barrier gradient `g_τ`.
fn newton_direction(obj: &Objective, b: &[f64], g_tau: &[f64], weights: &[f64], tau: f64) -> Result<Vec<f64>> {
    let sys = NewtonSystem::new(obj, b, weights, tau)?;
    let f: Vec<f64> = g_tau.iter().zip(b).map(|(gv, bv)| -gv * bv).collect();
    sys.solve(&f, &vec![0.0; obj.nx])
}

/// Euclidean projection of `v` onto `{z ≥ 0, Σ z = r}` (sort-based).
pub fn project_simplex(v: &mut [f64], r: f64) {
    let n = v.len();
    let mut u: Vec<f64> = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, ui) in u.iter().enumerate() {
        cum += ui;
        let t = (cum - r) / (i + 1) as f64;
        if i + 1 == n || u[i + 1] <= t {
            theta = t;
            break;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}

/// Rescale every row of the nonnegative `b` to its mass.
fn renormalize_rows(b: &mut [f64], nk: usize, mass: &[f64]) {
    for (row, m) in b.chunks_mut(nk).zip(mass) {
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v *= m / s);
    }
}

/// Project every row of `b` onto its scaled simplex.
fn project_rows(b: &mut [f64], nk: usize, mass: &[f64]) {
    for (row, m) in b.chunks_mut(nk).zip(mass) {
        project_simplex(row, *m);
    }
}

/// Columns lighter than this fraction of the total mass count as empty in the
/// equipartition diagnostics. The barrier iteration leaves columns it has
/// abandoned at `O(τ)` rather than exactly zero, and their ratio `r_k` carries
/// no information.
pub const ACTIVE_MASS_FRACTION: f64 = 1e-6;

/// Per-frequency equipartition diagnostic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyResidual {
    pub k: f64,
    /// `λ_k = ∫ b(·, k) dx`.
    pub lambda_k: f64,
    /// `∫ k² b(·, k)`.
    pub k2_part: f64,
    /// `∫ b_x²/(4k²b)`.
    pub quotient_part: f64,
    /// `|k2 − quotient| / (k2 + quotient)`.
    pub r_k: f64,
}

/// Equipartition diagnostics of a table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquipartitionReport {
    /// Frequencies carrying at least [`ACTIVE_MASS_FRACTION`] of the total mass.
    pub active: Vec<FrequencyResidual>,
    /// `|∫k² dμ − ∫ quotient dμ|`.
    pub global_abs: f64,
    /// `global_abs / F_∞`.
    pub global_rel: f64,
    pub max_active: f64,
}

/// Compare the two halves of the functional, per frequency and in total.
pub fn equipartition_residual(t: &MeasureTable) -> Result<EquipartitionReport> {
    let rep = eval_f_infty(t)?;
    let w = t.xgrid().trapezoid_weights();
    let total = t.total_mass();
    let mut active = Vec::new();
    for j in 0..t.nk() {
        let lambda_k: f64 = (0..t.nx()).map(|i| w[i] * t.get(i, j)).sum();
        if lambda_k < ACTIVE_MASS_FRACTION * total {
            continue;
        }
        let (a, q) = (rep.per_k_k2[j], rep.per_k_quotient[j]);
        active.push(FrequencyResidual { k: t.kgrid().k(j), lambda_k, k2_part: a, quotient_part: q, r_k: (a - q).abs() / (a + q) });
    }
    let global_abs = (rep.k2_part - rep.quotient_part).abs();
    let max_active = active.iter().map(|r| r.r_k).fold(0.0, f64::max);
    Ok(EquipartitionReport { active, global_abs, global_rel: global_abs / rep.value, max_active })
}

/// Smallest `|k|` carrying more than `mass_tol` of the total mass.
pub fn support_lower_bound(t: &MeasureTable, mass_tol: f64) -> Result<f64> {
    let w = t.xgrid().trapezoid_weights();
    let total = t.total_mass();
    (0..t.nk())
        .filter(|&j| (0..t.nx()).map(|i| w[i] * t.get(i, j)).sum::<f64>() > mass_tol * total)
        .map(|j| t.kgrid().k(j).abs())
        .min_by(|a, b| a.total_cmp(b))
        .ok_or_else(|| Error::Numerical(format!("no frequency carries more than {mass_tol} of the mass")))
}

/// Fraction of the total mass on frequencies with `|k| < k_cut`.
pub fn mass_fraction_below(t: &MeasureTable, k_cut: f64) -> f64 {
    let w = t.xgrid().trapezoid_weights();
    let below: f64 = (0..t.nk())
        .filter(|&j| t.kgrid().k(j).abs() < k_cut)
        .map(|j| (0..t.nx()).map(|i| w[i] * t.get(i, j)).sum::<f64>())
        .sum();
    below / t.total_mass()
}

/// `|k|` of the largest entry of each row (first maximal entry wins).
pub fn dominant_frequency(t: &MeasureTable) -> Vec<f64> {
    (0..t.nx())
        .map(|i| {
            let row = t.row(i);
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            t.kgrid().k(best).abs()
        })
        .collect()
}

/// Least-squares slope of `ln y` against `ln x` over the nodes with `x ∈ [lo, hi]`.
pub fn loglog_slope(xs: &[f64], ys: &[f64], lo: f64, hi: f64) -> Result<f64> {
    let pts: Vec<(f64, f64)> =
        xs.iter().zip(ys).filter(|(x, _)| **x >= lo && **x <= hi).map(|(x, y)| (x.ln(), y.ln())).collect();
    if pts.len() < 2 {
        return Err(Error::Parameter(format!("fewer than two nodes in [{lo}, {hi}]")));
    }
    let n = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

/// Discrete Benamou–Brenier functional `Σ_cells h · ½ E² / ρ̄` with `ρ̄` the
/// cell mean of `rho` and `E` given per cell (the layout of the derivative
/// table), under the perspective convention at `ρ̄ = 0`.
pub fn benamou_brenier(rho: &MeasureTable, e: &[f64]) -> Result<f64> {
    if e.len() != rho.values().len() {
        return Err(Error::Shape(format!("{} flux values for {} cells", e.len(), rho.values().len())));
    }
    if rho.values().iter().any(|v| *v < 0.0) {
        return Err(Error::Infeasible("negative density in Benamou–Brenier functional".into()));
    }
    let h = rho.xgrid().spacing();
    let nk = rho.nk();
    let mut total = 0.0;
    for i in 0..rho.nx() {
        for j in 0..nk {
            let ev = e[i * nk + j];
            if ev == 0.0 {
                continue;
            }
            let m = rho.cell_mean(i, j);
            total += if m > 0.0 { h * 0.5 * ev * ev / m } else { f64::INFINITY };
        }
    }
    Ok(total)
}

/// Outcome of [`minimize_f_infty`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimizerReport {
    pub table: MeasureTable,
    /// Exact discrete functional of the final table (no floor).
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub equipartition: EquipartitionReport,
    /// Smallest `|k|` with more than `1e-6` of the mass.
    pub support_k_min: f64,
    pub breakdown: FInftyReport,
    /// One record per accepted step.
    pub history: Vec<IterationRecord>,
}

/// State after an accepted Newton step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    /// Barrier weight of the stage.
    pub barrier_weight: f64,
    /// Objective plus barrier term, nonincreasing within a stage.
    pub merit: f64,
    pub kkt_residual: f64,
}

/// Row masses `2x_i`.
fn row_masses(x: &XGrid) -> Vec<f64> {
    x.nodes().iter().map(|xi| 2.0 * xi).collect()
}

/// Feasible starting table for the given rule.
pub fn initial_table(cfg: &SolverConfig) -> Result<MeasureTable> {
    let (x, k) = cfg.grids()?;
    let ks = k.values();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut b = Vec::with_capacity(x.len() * k.len());
    for &xi in x.nodes() {
        let kstar = (2.0 * xi).powf(-0.5);
        let w: Vec<f64> = match cfg.init {
            Initialization::Balance => ks.iter().map(|kj| (-(kj.abs() - kstar).powi(2)).exp()).collect(),
            Initialization::Uniform => vec![1.0; ks.len()],
            Initialization::Random => ks.iter().map(|_| rng.gen_range(0.1..1.0)).collect(),
        };
        let mut s: f64 = w.iter().sum();
        let w = if s > 0.0 && s.is_finite() {
            w
        } else {
            // far from every frequency the Gaussian underflows: fall back to the nearest one
            let near = (0..ks.len()).min_by(|&a, &c| (ks[a].abs() - kstar).abs().total_cmp(&(ks[c].abs() - kstar).abs()));
            let mut w = vec![0.0; ks.len()];
            w[near.unwrap_or(0)] = 1.0;
            s = 1.0;
            w
        };
        b.extend(w.iter().map(|v| 2.0 * xi * v / s));
    }
    let mut b_proj = b;
    project_rows(&mut b_proj, k.len(), &row_masses(&x));
    MeasureTable::new(x, k, b_proj)
}

/// First-order stationarity residual of one constraint row: with `G_j` the
/// gradient per unit `x`-weight and `p` the row multiplier chosen to minimize
/// the complementarity term, returns
/// `max( max_j b_j |G_j − p|, max_j (p − G_j)⁺ )`.
/// Both terms vanish exactly at a minimizer: occupied frequencies share the
/// multiplier and empty ones cannot lower the functional.
pub fn row_stationarity(b: &[f64], grad_density: &[f64]) -> f64 {
    let occupied = || b.iter().zip(grad_density).filter(|(bv, _)| **bv > 0.0);
    let above = |p: f64| occupied().map(|(bv, gv)| bv * (gv - p)).fold(f64::NEG_INFINITY, f64::max);
    let below = |p: f64| occupied().map(|(bv, gv)| bv * (p - gv)).fold(f64::NEG_INFINITY, f64::max);
    let (mut lo, mut hi) = occupied().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), (_, g)| (l.min(*g), h.max(*g)));
    if !lo.is_finite() {
        return f64::INFINITY;
    }
    // `above` decreases and `below` increases in p; bisect for the crossing
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if above(mid) > below(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let p = if above(lo).max(below(lo)) <= above(hi).max(below(hi)) { lo } else { hi };
    let comp = above(p).max(below(p)).max(0.0);
    let dual = grad_density.iter().map(|gv| (p - gv).max(0.0)).fold(0.0, f64::max);
    comp.max(dual)
}

/// Largest [`row_stationarity`] over the rows of `b` with gradient `grad`.
pub fn kkt_residual(obj: &Objective, b: &[f64], grad: &[f64], weights: &[f64]) -> f64 {
    let nk = obj.nk;
    (0..obj.nx)
        .map(|i| {
            let dens: Vec<f64> = grad[i * nk..(i + 1) * nk].iter().map(|gv| gv / weights[i]).collect();
            row_stationarity(&b[i * nk..(i + 1) * nk], &dens)
        })
        .fold(0.0, f64::max)
}

/// Minimize the discrete limit functional.
///
/// Returns the final iterate with `converged = false` when `max_iters` is
/// exhausted or the line search stalls before reaching `kkt_tol`.
pub fn minimize_f_infty(cfg: &SolverConfig, init: Option<&MeasureTable>) -> Result<MinimizerReport> {
    cfg.validate()?;
    let (x, k) = cfg.grids()?;
    let start = match init {
        Some(t) => {
            if t.xgrid() != &x || t.kgrid().indices() != k.indices() {
                return Err(Error::Shape("initial table does not live on the configured grids".into()));
            }
            let r = crate::measure::check_feasible(t, 1e-10);
            if !r.feasible {
                return Err(Error::Infeasible(format!("initial table: residual {:.3e}", r.max_constraint_residual)));
            }
            t.clone()
        }
        None => initial_table(cfg)?,
    };
    let obj = Objective::new(&x, &k, cfg.b_min_rel);
    let weights = x.trapezoid_weights();
    let mass = row_masses(&x);
    let (nk, n) = (k.len(), obj.len());

    // the barrier needs strictly positive entries: blend zeros with the uniform table
    let mut b = start.values().to_vec();
    if b.iter().any(|v| !(*v > 0.0)) {
        for (i, row) in b.chunks_mut(nk).enumerate() {
            row.iter_mut().for_each(|v| *v = 0.999 * v.max(0.0) + 1e-3 * mass[i] / nk as f64);
        }
    }
    renormalize_rows(&mut b, nk, &mass);
    let mut g = vec![0.0; n];
    obj.value_grad(&b, &mut g);
    let mut iterations = 0;
    let mut residual = kkt_residual(&obj, &b, &g, &weights);
    let mut converged = residual <= cfg.kkt_tol;
    let wts: Vec<f64> = (0..n).map(|p| weights[p / nk]).collect();
    let barrier = |b: &[f64], tau: f64| -> f64 {
        obj.value(b) - tau * b.iter().zip(&wts).map(|(v, w)| w * v.ln()).sum::<f64>()
    };
    // start the barrier no larger than the current residual warrants
    let mut tau = cfg.barrier_start.min(residual.max(cfg.kkt_tol));
    let mut phi = barrier(&b, tau);
    let mut trial = vec![0.0; n];
    let mut gt = vec![0.0; n];
    // the last stage is reached once the barrier itself is below the residual target
    let tau_floor = 1e-3 * cfg.kkt_tol * cfg.kkt_tol * weights.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut history = Vec::new();
    while !converged && iterations < cfg.max_iters {
        iterations += 1;
        for p in 0..n {
            gt[p] = g[p] - tau * wts[p] / b[p];
        }
        let sigma = newton_direction(&obj, &b, &gt, &weights, tau)?;
        let dir: Vec<f64> = sigma.iter().zip(&b).map(|(sv, bv)| sv * bv).collect();
        let decrement: f64 = -dir.iter().zip(&gt).map(|(d, gv)| d * gv).sum::<f64>();
        if decrement <= 1e-3 * tau * nk as f64 || !(decrement > 0.0) {
            // centred: tighten the barrier
            if tau <= tau_floor {
                break;
            }
            tau = (tau * cfg.barrier_shrink).max(tau_floor);
            phi = barrier(&b, tau);
            continue;
        }
        let mut t = sigma.iter().filter(|sv| **sv < 0.0).map(|sv| cfg.boundary_fraction / -sv).fold(1.0, f64::min);
        let mut accepted = false;
        while t >= 1e-14 {
            for p in 0..n {
                trial[p] = b[p] + t * dir[p];
            }
            let phi_new = barrier(&trial, tau);
            if phi_new <= phi - cfg.armijo * t * decrement {
                accepted = true;
                break;
            }
            t *= cfg.backtrack;
        }
        if !accepted {
            // rounding floor of this stage
            if tau <= tau_floor {
                break;
            }
            tau = (tau * cfg.barrier_shrink).max(tau_floor);
            phi = barrier(&b, tau);
            continue;
        }
        std::mem::swap(&mut b, &mut trial);
        renormalize_rows(&mut b, nk, &mass);
        phi = barrier(&b, tau);
        let objective = obj.value_grad(&b, &mut g);
        residual = kkt_residual(&obj, &b, &g, &weights);
        converged = residual <= cfg.kkt_tol;
        history.push(IterationRecord { iteration: iterations, objective, barrier_weight: tau, merit: phi, kkt_residual: residual });
    }
    let table = MeasureTable::new(x, k, b)?;
    let breakdown = eval_f_infty(&table)?;
    let equipartition = equipartition_residual(&table)?;
    let support_k_min = support_lower_bound(&table, 1e-6)?;
    Ok(MinimizerReport {
        objective: breakdown.value,
        kkt_residual: residual,
        iterations,
        converged,
        equipartition,
        support_k_min,
        breakdown,
        history,
        table,
    })
}

/// Relative error `‖g − g_fd‖ / ‖g‖` between the analytic gradient and
/// central differences with step `step · max(|b_p|, 1e-3)` in every coordinate.
pub fn gradient_check(obj: &Objective, b: &[f64], step: f64) -> f64 {
    let mut g = vec![0.0; b.len()];
    obj.value_grad(b, &mut g);
    let mut probe = b.to_vec();
    let mut num = 0.0;
    let mut den = 0.0;
    for p in 0..b.len() {
        let e = step * b[p].abs().max(1e-3);
        probe[p] = b[p] + e;
        let fp = obj.value(&probe);
        probe[p] = b[p] - e;
        let fm = obj.value(&probe);
        probe[p] = b[p];
        let fd = (fp - fm) / (2.0 * e);
        num += (g[p] - fd).powi(2);
        den += g[p] * g[p];
    }
    (num / den).sqrt()
}

/// JSON summary of a minimizer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MinimizerSummary {
    pub objective: f64,
    pub kkt_residual: f64,
    pub k_min: f64,
    pub iterations: usize,
    pub converged: bool,
    pub global_equipartition: f64,
    pub residuals: Vec<SummaryResidual>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryResidual {
    pub k: f64,
    pub r_k: f64,
    pub lambda_k: f64,
}

impl MinimizerReport {
    pub fn summary(&self) -> MinimizerSummary {
        MinimizerSummary {
            objective: self.objective,
            kkt_residual: self.kkt_residual,
            k_min: self.support_k_min,
            iterations: self.iterations,
            converged: self.converged,
            global_equipartition: self.equipartition.global_rel,
            residuals: self
                .equipartition
                .active
                .iter()
                .map(|r| SummaryResidual { k: r.k, r_k: r.r_k, lambda_k: r.lambda_k })
                .collect(),
        }
    }

    /// Write the summary JSON.
    pub fn write_summary(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.summary())?)?;
        Ok(())
    }
}
