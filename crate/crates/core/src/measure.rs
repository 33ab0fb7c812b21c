//! Discrete measures `μ = Σ_k b(x,k) dx ⊗ δ_k` on a frequency comb, the
//! limit functional
//!
//! ```text
//! F_∞(μ) = ∫ Σ_k [ k² b + b_x² / (4 k² b) ] dx,
//! ```
//!
//! its total-variation form, disintegrations, dilation and frequency binning.
//!
//! # Discretization
//!
//! A table stores nodal values `b(x_i, k_j) ≥ 0` on an implicit-zero grid, so
//! `b(0, k) = 0`.  The derivative table holds the cell slopes
//! `b_x(x_i, k) = (b(x_i) - b(x_{i-1}))/h` of [`crate::grids::diff_x`].  On
//! each cell `(x_{i-1}, x_i]` the density is paired with the cell mean
//! `m = (b(x_{i-1}) + b(x_i))/2`, and the functional is
//!
//! ```text
//! F_h = Σ_i h Σ_j [ k_j² m_ij + b_x(x_i,k_j)² / (4 k_j² m_ij) ],
//! ```
//!
//! a sum of perspective functions of linear maps of the table, hence exactly
//! convex and 1-homogeneous.  The quotient is `0` when `b_x = 0` and `+∞`
//! when `m = 0 < |b_x|`; with this pairing `m = 0` forces `b_x = 0`, so a
//! column may switch on and off without infinite cost.  The `k²` part is the
//! trapezoid rule with the boundary value `b(0) = 0`.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grids::{diff_x, make_k_grid, make_x_grid, KGrid, LeftBoundary, XGrid};

/// Name of the difference scheme recorded in serialized tables.
pub const SCHEME: &str = "cell-slope with ghost zero, paired with cell mean";

/// Regularization of the denominator of the quotient term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Floor {
    /// Exact perspective convention.
    None,
    /// Replace the cell mean `m` by `max(m, v)`.
    Absolute(f64),
    /// Replace `m` by `max(m, r · 2x̄)` with `x̄` the cell midpoint.
    RelativeToMass(f64),
}

/// Nonnegative coefficient table of a measure on `(0, λ) × KGrid`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureTable {
    x: XGrid,
    k: KGrid,
    b: Vec<f64>,
    bx: Vec<f64>,
    /// Optional floor used by [`eval_f_infty`] when positive.
    pub b_min: f64,
    /// Set when the table was produced by interpolation rather than exact remapping.
    pub interpolated: bool,
}

impl MeasureTable {
    /// Build a table from row-major values (`x.len() × k.len()`).
    pub fn new(x: XGrid, k: KGrid, b: Vec<f64>) -> Result<MeasureTable> {
        if x.left() != LeftBoundary::ImplicitZero {
            return Err(Error::Grid("measure tables need a grid with an implicit zero at the left end".into()));
        }
        if b.len() != x.len() * k.len() {
            return Err(Error::Shape(format!("{} values for a {}×{} table", b.len(), x.len(), k.len())));
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite table entry".into()));
        }
        let bx = derivative_table(&x, k.len(), &b)?;
        Ok(MeasureTable { x, k, b, bx, b_min: 0.0, interpolated: false })
    }

    /// Build a table whose column `j` is `f(x_i, k_j)`.
    pub fn from_fn(x: XGrid, k: KGrid, f: impl Fn(f64, f64) -> f64) -> Result<MeasureTable> {
        let ks = k.values();
        let b = x.nodes().iter().flat_map(|&xi| ks.iter().map(move |&kj| (xi, kj))).map(|(xi, kj)| f(xi, kj)).collect();
        MeasureTable::new(x, k, b)
    }

    /// The same grids with new values; the derivative table is regenerated.
    pub fn with_values(&self, b: Vec<f64>) -> Result<MeasureTable> {
        let mut t = MeasureTable::new(self.x.clone(), self.k.clone(), b)?;
        t.b_min = self.b_min;
        Ok(t)
    }

    /// `α · table`.
    pub fn scaled(&self, alpha: f64) -> Result<MeasureTable> {
        self.with_values(self.b.iter().map(|v| alpha * v).collect())
    }

    pub fn xgrid(&self) -> &XGrid {
        &self.x
    }

    pub fn kgrid(&self) -> &KGrid {
        &self.k
    }

    pub fn nx(&self) -> usize {
        self.x.len()
    }

    pub fn nk(&self) -> usize {
        self.k.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.b
    }

    pub fn derivatives(&self) -> &[f64] {
        &self.bx
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.b[i * self.nk() + j]
    }

    pub fn get_x(&self, i: usize, j: usize) -> f64 {
        self.bx[i * self.nk() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let nk = self.nk();
        &self.b[i * nk..(i + 1) * nk]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.nx()).map(|i| self.get(i, j)).collect()
    }

    /// Right end of the `x`-domain (the dilation factor for dilated tables).
    pub fn lambda(&self) -> f64 {
        self.x.hi()
    }

    /// Cell mean of column `j` on the cell ending at node `i`.
    pub fn cell_mean(&self, i: usize, j: usize) -> f64 {
        let prev = if i == 0 { 0.0 } else { self.get(i - 1, j) };
        0.5 * (prev + self.get(i, j))
    }

    /// Point masses `(x_i, k_j, w_i b_ij)` with trapezoid weights.
    pub fn atoms(&self) -> Vec<(f64, f64, f64)> {
        let w = self.x.trapezoid_weights();
        let ks = self.k.values();
        let mut out = Vec::with_capacity(self.b.len());
        for (i, xi) in self.x.nodes().iter().enumerate() {
            for (j, kj) in ks.iter().enumerate() {
                let v = self.get(i, j);
                if v != 0.0 {
                    out.push((*xi, *kj, w[i] * v));
                }
            }
        }
        out
    }

    /// `∫ Σ_k b dx` by the trapezoid rule.
    pub fn total_mass(&self) -> f64 {
        let w = self.x.trapezoid_weights();
        (0..self.nx()).map(|i| w[i] * self.row(i).iter().sum::<f64>()).sum()
    }
}

fn derivative_table(x: &XGrid, nk: usize, b: &[f64]) -> Result<Vec<f64>> {
    let nx = x.len();
    let mut bx = vec![0.0; nx * nk];
    for j in 0..nk {
        let col: Vec<f64> = (0..nx).map(|i| b[i * nk + j]).collect();
        for (i, d) in diff_x(&col, x)?.into_iter().enumerate() {
            bx[i * nk + j] = d;
        }
    }
    Ok(bx)
}

/// Outcome of [`check_feasible`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    /// `max_i |Σ_j b(x_i, k_j) − 2x_i|`.
    pub max_constraint_residual: f64,
    /// Smallest entry of the table.
    pub min_value: f64,
    /// Number of cells whose mean vanishes while the slope does not.
    pub derivative_violations: usize,
    pub feasible: bool,
}

/// Check the mass constraint, nonnegativity and absolute continuity of the
/// derivative.
pub fn check_feasible(t: &MeasureTable, tol: f64) -> FeasibilityReport {
    let mut max_res: f64 = 0.0;
    for (i, xi) in t.x.nodes().iter().enumerate() {
        max_res = max_res.max((t.row(i).iter().sum::<f64>() - 2.0 * xi).abs());
    }
    let min_value = t.b.iter().copied().fold(f64::INFINITY, f64::min);
    let mut violations = 0;
    for i in 0..t.nx() {
        for j in 0..t.nk() {
            if t.cell_mean(i, j) == 0.0 && t.get_x(i, j) != 0.0 {
                violations += 1;
            }
        }
    }
    let feasible = max_res <= tol && min_value >= -tol && violations == 0;
    FeasibilityReport { max_constraint_residual: max_res, min_value, derivative_violations: violations, feasible }
}

fn require_nonnegative(t: &MeasureTable) -> Result<()> {
    if let Some(p) = t.b.iter().position(|v| *v < 0.0) {
        let (i, j) = (p / t.nk(), p % t.nk());
        return Err(Error::Infeasible(format!(
            "negative density {} at x = {}, k = {}",
            t.b[p],
            t.x.nodes()[i],
            t.k.k(j)
        )));
    }
    Ok(())
}

fn require_feasible(t: &MeasureTable) -> Result<()> {
    let scale = 2.0 * t.x.hi();
    let r = check_feasible(t, 1e-10 * scale);
    if !r.feasible {
        return Err(Error::Infeasible(format!(
            "constraint residual {:.3e}, min entry {:.3e}, {} derivative violations",
            r.max_constraint_residual, r.min_value, r.derivative_violations
        )));
    }
    Ok(())
}

/// Evaluation options for [`eval_f_infty_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FInftyOptions {
    pub floor: Floor,
    /// Cells excluded from `value_skipped`, counted from the left boundary.
    pub n_skip: usize,
}

impl Default for FInftyOptions {
    fn default() -> Self {
        FInftyOptions { floor: Floor::None, n_skip: 0 }
    }
}

/// Value of the discrete limit functional with its decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FInftyReport {
    /// Full value (`+∞` if some cell has zero mass but nonzero slope).
    pub value: f64,
    /// Value over the cells with index `≥ n_skip`.
    pub value_skipped: f64,
    pub n_skip: usize,
    /// `∫ Σ k² b`.
    pub k2_part: f64,
    /// `∫ Σ b_x²/(4k²b)`.
    pub quotient_part: f64,
    /// Per-frequency `k²` parts.
    pub per_k_k2: Vec<f64>,
    /// Per-frequency quotient parts.
    pub per_k_quotient: Vec<f64>,
    /// Whether any denominator was raised by the floor.
    pub floored: bool,
}

fn floor_value(floor: Floor, xbar: f64) -> f64 {
    match floor {
        Floor::None => 0.0,
        Floor::Absolute(v) => v,
        Floor::RelativeToMass(r) => r * 2.0 * xbar,
    }
}

/// Quotient density `d² / (4 k² m)` under the perspective convention.
pub fn quotient_density(d: f64, m: f64, k: f64) -> f64 {
    if d == 0.0 {
        0.0
    } else if m <= 0.0 {
        f64::INFINITY
    } else {
        d * d / (4.0 * k * k * m)
    }
}

/// [`eval_f_infty_with`] using the table's own floor (if positive) and no skipped cells.
pub fn eval_f_infty(t: &MeasureTable) -> Result<FInftyReport> {
    let floor = if t.b_min > 0.0 { Floor::Absolute(t.b_min) } else { Floor::None };
    eval_f_infty_with(t, FInftyOptions { floor, n_skip: 0 })
}

/// Evaluate the discrete limit functional.
pub fn eval_f_infty_with(t: &MeasureTable, opts: FInftyOptions) -> Result<FInftyReport> {
    require_nonnegative(t)?;
    let h = t.x.spacing();
    let ks = t.k.values();
    let nk = t.nk();
    let mut per_k_k2 = vec![0.0; nk];
    let mut per_k_q = vec![0.0; nk];
    let mut skipped = 0.0;
    let mut floored = false;
    for i in 0..t.nx() {
        let xbar = t.x.nodes()[i] - 0.5 * h;
        let fl = floor_value(opts.floor, xbar);
        let mut cell = 0.0;
        for j in 0..nk {
            let k = ks[j];
            let m = t.cell_mean(i, j);
            let d = t.get_x(i, j);
            let denom = if m < fl && d != 0.0 {
                floored = true;
                fl
            } else {
                m
            };
            let a = h * k * k * m;
            let q = h * quotient_density(d, denom, k);
            per_k_k2[j] += a;
            per_k_q[j] += q;
            cell += a + q;
        }
        if i >= opts.n_skip {
            skipped += cell;
        }
    }
    let k2_part: f64 = per_k_k2.iter().sum();
    let quotient_part: f64 = per_k_q.iter().sum();
    Ok(FInftyReport {
        value: k2_part + quotient_part,
        value_skipped: skipped,
        n_skip: opts.n_skip,
        k2_part,
        quotient_part,
        per_k_k2,
        per_k_quotient: per_k_q,
        floored,
    })
}

/// The limit functional written against the total variation `|μ̃|` of the
/// pair `(μ, μ_x)`:
/// `∫ [k² dμ/d|μ̃| + (dμ_x/d|μ̃|)² / (4k² dμ/d|μ̃|)] d|μ̃|`.
pub fn eval_f_infty_tv(t: &MeasureTable) -> Result<f64> {
    require_nonnegative(t)?;
    let h = t.x.spacing();
    let ks = t.k.values();
    let mut total = 0.0;
    for i in 0..t.nx() {
        for (j, &k) in ks.iter().enumerate() {
            let m = t.cell_mean(i, j);
            let d = t.get_x(i, j);
            let norm = m.hypot(d);
            if norm == 0.0 {
                continue;
            }
            let (theta_b, theta_d) = (m / norm, d / norm);
            let density = k * k * theta_b + quotient_density(theta_d, theta_b, k);
            total += h * norm * density;
        }
    }
    Ok(total)
}

/// Conditional distributions `ν_x` over frequencies against the density `2x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XDisintegration {
    pub x: XGrid,
    pub k: KGrid,
    /// Row-major probability weights.
    pub nu: Vec<f64>,
    /// The `x`-marginal density `2x_i`.
    pub density: Vec<f64>,
}

impl XDisintegration {
    pub fn weights(&self, i: usize) -> &[f64] {
        let nk = self.k.len();
        &self.nu[i * nk..(i + 1) * nk]
    }
}

/// `ν_x(k_j) = b(x_i, k_j) / (2x_i)`.
pub fn disintegrate_x(t: &MeasureTable) -> Result<XDisintegration> {
    require_feasible(t)?;
    let density: Vec<f64> = t.x.nodes().iter().map(|x| 2.0 * x).collect();
    let nu = (0..t.nx()).flat_map(|i| t.row(i).iter().map(|v| v / density[i]).collect::<Vec<_>>()).collect();
    Ok(XDisintegration { x: t.x.clone(), k: t.k.clone(), nu, density })
}

/// Frequency marginal `λ_j` and unit-mass profiles `g_{k_j}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KDisintegration {
    pub x: XGrid,
    pub k: KGrid,
    /// `λ_j = ∫ b(·, k_j) dx`.
    pub lambda: Vec<f64>,
    /// `g_{k_j} = b(·, k_j)/λ_j`, absent where `λ_j = 0`.
    pub profiles: Vec<Option<Vec<f64>>>,
}

/// Disintegrate a feasible table in the frequency variable.
pub fn disintegrate_k(t: &MeasureTable) -> Result<KDisintegration> {
    require_feasible(t)?;
    let w = t.x.trapezoid_weights();
    let mut lambda = Vec::with_capacity(t.nk());
    let mut profiles = Vec::with_capacity(t.nk());
    for j in 0..t.nk() {
        let col = t.column(j);
        let l: f64 = col.iter().zip(&w).map(|(v, w)| v * w).sum();
        lambda.push(l);
        profiles.push(if l > 0.0 { Some(col.iter().map(|v| v / l).collect()) } else { None });
    }
    Ok(KDisintegration { x: t.x.clone(), k: t.k.clone(), lambda, profiles })
}

/// `b_λ(x, k) = λ b(x/λ, k)` on `[0, λ]`, by exact index remapping onto the
/// grid scaled by `λ`.
pub fn dilate(t: &MeasureTable, lambda: f64) -> Result<MeasureTable> {
    check_dilation(lambda)?;
    let x = t.x.scaled(lambda)?;
    let mut out = MeasureTable::new(x, t.k.clone(), t.b.iter().map(|v| lambda * v).collect())?;
    out.b_min = t.b_min;
    Ok(out)
}

/// `b_λ(x, k) = λ b(x/λ, k)` sampled on an arbitrary implicit-zero grid of
/// `[0, λ]` by linear interpolation; the result is flagged as interpolated.
pub fn dilate_onto(t: &MeasureTable, lambda: f64, grid: &XGrid) -> Result<MeasureTable> {
    check_dilation(lambda)?;
    let h = t.x.spacing();
    let nk = t.nk();
    let mut b = Vec::with_capacity(grid.len() * nk);
    for &x in grid.nodes() {
        let s = (x / lambda) / h; // position in units of source cells, node i sits at i+1
        let lo = s.floor();
        let theta = s - lo;
        let lo = lo as isize - 1;
        for j in 0..nk {
            let value_at = |i: isize| -> f64 {
                if i < 0 {
                    0.0
                } else {
                    t.get((i as usize).min(t.nx() - 1), j)
                }
            };
            b.push(lambda * ((1.0 - theta) * value_at(lo) + theta * value_at(lo + 1)));
        }
    }
    let mut out = MeasureTable::new(grid.clone(), t.k.clone(), b)?;
    out.b_min = t.b_min;
    out.interpolated = true;
    Ok(out)
}

fn check_dilation(lambda: f64) -> Result<()> {
    if !(lambda > 1.0 && lambda < 2.0) {
        return Err(Error::Parameter(format!("dilation factor must lie in (1, 2), got {lambda}")));
    }
    Ok(())
}

/// Index of the bin of the comb `(π/L₀)ℤ` receiving frequency `k`: bins are
/// `(k - π/L₀, k]` for `k > 0` and `[k, k + π/L₀)` for `k < 0`.
pub fn bin_index(k: f64, l0: f64) -> i64 {
    let r = k * l0 / PI;
    let near = r.round();
    if (r - near).abs() <= 1e-9 * r.abs().max(1.0) {
        return near as i64;
    }
    if k > 0.0 {
        r.ceil() as i64
    } else {
        r.floor() as i64
    }
}

/// Move every frequency to the endpoint of its bin on the comb `(π/L₀)ℤ`.
///
/// With `k_max = None` the output comb is just wide enough for every source
/// column; otherwise a source column with mass outside `|k| ≤ k_max` is an error.
pub fn bin_frequencies(t: &MeasureTable, l0: f64, k_max: Option<f64>) -> Result<MeasureTable> {
    if !(l0.is_finite() && l0 > 0.0) {
        return Err(Error::Parameter(format!("L0 must be positive, got {l0}")));
    }
    let targets: Vec<i64> = t.k.values().iter().map(|&k| bin_index(k, l0)).collect();
    let step = PI / l0;
    let kgrid = match k_max {
        Some(km) => make_k_grid(l0, km)?,
        None => {
            let jm = targets.iter().map(|j| j.unsigned_abs()).max().unwrap_or(1);
            make_k_grid(l0, jm as f64 * step)?
        }
    };
    let nk_out = kgrid.len();
    let mut slot = Vec::with_capacity(targets.len());
    for (j, target) in targets.iter().enumerate() {
        let pos = kgrid.position(*target);
        if pos.is_none() && t.column(j).iter().any(|v| *v != 0.0) {
            return Err(Error::Parameter(format!(
                "frequency {} falls in bin {} outside the output comb (k_max = {})",
                t.k.k(j),
                *target as f64 * step,
                kgrid.k_max()
            )));
        }
        slot.push(pos);
    }
    let mut b = vec![0.0; t.nx() * nk_out];
    for i in 0..t.nx() {
        for (j, v) in t.row(i).iter().enumerate() {
            if let Some(p) = slot[j] {
                b[i * nk_out + p] += v;
            }
        }
    }
    let mut out = MeasureTable::new(t.x.clone(), kgrid, b)?;
    out.b_min = t.b_min;
    Ok(out)
}

/// Metadata written next to a table's CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSidecar {
    pub lambda: f64,
    #[serde(rename = "L_eff")]
    pub l_eff: f64,
    pub k_max: f64,
    pub b_min: f64,
    pub scheme: String,
    pub nx: usize,
    pub k_indices: Vec<i64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TableRow {
    x: f64,
    k: f64,
    b: f64,
    b_x: f64,
}

/// Path of the JSON sidecar belonging to a table CSV.
pub fn sidecar_path(csv: &Path) -> std::path::PathBuf {
    csv.with_extension("json")
}

/// Write `x,k,b,b_x` rows (row-major by `x`) and the JSON sidecar.
pub fn write_table(t: &MeasureTable, csv_path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(csv_path)?;
    let ks = t.k.values();
    for (i, x) in t.x.nodes().iter().enumerate() {
        for (j, k) in ks.iter().enumerate() {
            w.serialize(TableRow { x: *x, k: *k, b: t.get(i, j), b_x: t.get_x(i, j) })?;
        }
    }
    w.flush()?;
    let side = TableSidecar {
        lambda: t.lambda(),
        l_eff: t.k.l_eff(),
        k_max: t.k.k_max(),
        b_min: t.b_min,
        scheme: SCHEME.to_string(),
        nx: t.nx(),
        k_indices: t.k.indices().to_vec(),
    };
    std::fs::write(sidecar_path(csv_path), serde_json::to_string_pretty(&side)?)?;
    Ok(())
}

/// Read a table written by [`write_table`]; the derivative column is regenerated.
pub fn read_table(csv_path: &Path) -> Result<MeasureTable> {
    let side: TableSidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path(csv_path))?)?;
    let kgrid = KGrid::from_indices(side.l_eff, &side.k_indices)?;
    let xgrid = make_x_grid(side.nx, 0.0, side.lambda)?;
    let mut r = csv::Reader::from_path(csv_path)?;
    let mut b = Vec::with_capacity(side.nx * kgrid.len());
    for row in r.deserialize() {
        let row: TableRow = row?;
        b.push(row.b);
    }
    let mut t = MeasureTable::new(xgrid, kgrid, b)?;
    t.b_min = side.b_min;
    Ok(t)
}

/// A lower bound for the bounded-Lipschitz distance
/// `sup { ∫ φ d(μ − ν) : |φ| ≤ 1, Lip(φ) ≤ 1 }` between two discrete measures
/// given as point masses `(x, k, w)`.
///
/// The supremum is taken over a fixed family of admissible test functions:
/// the constant `1`, and products `T(x)·S(k)` of tents of half-width `1/4` in
/// `x` (centres every `1/8` on `[0, 1.25]`, or the constant `1/4`) and tents of
/// half-width `1` in `k` (centres every `1/2` on `[-k_c, k_c]`, or the
/// constant `1`), each rescaled to have Lipschitz constant at most one.
pub fn bounded_lipschitz_lower_bound(mu: &[(f64, f64, f64)], nu: &[(f64, f64, f64)], k_cover: f64) -> f64 {
    let rx = 0.25;
    let mut xs: Vec<Option<f64>> = (0..=10).map(|i| Some(i as f64 * 0.125)).collect();
    xs.push(None);
    let nkc = (k_cover / 0.5).ceil() as i64;
    let mut kcs: Vec<Option<f64>> = (-nkc..=nkc).map(|i| Some(i as f64 * 0.5)).collect();
    kcs.push(None);
    let tent = |c: Option<f64>, r: f64, v: f64, flat: f64| match c {
        Some(c) => (r - (v - c).abs()).max(0.0),
        None => flat,
    };
    let integrate = |atoms: &[(f64, f64, f64)], cx: Option<f64>, ck: Option<f64>| -> f64 {
        atoms.iter().map(|(x, k, w)| w * tent(cx, rx, *x, rx) * tent(ck, 1.0, *k, 1.0)).sum()
    };
    let mass = |atoms: &[(f64, f64, f64)]| atoms.iter().map(|a| a.2).sum::<f64>();
    let mut best = (mass(mu) - mass(nu)).abs();
    // |∇(T S)| ≤ sqrt(|T'|² S² + T² |S'|²) ≤ sqrt(1 + rx²) for the tents above
    let lip = (1.0 + rx * rx).sqrt();
    for cx in &xs {
        for ck in &kcs {
            if cx.is_none() && ck.is_none() {
                continue;
            }
            let d = (integrate(mu, *cx, *ck) - integrate(nu, *cx, *ck)).abs() / lip;
            best = best.max(d);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grids::make_k_grid;

    fn unit_grid(n: usize) -> XGrid {
        make_x_grid(n, 0.0, 1.0).unwrap()
    }

    fn single_k(k0: f64) -> KGrid {
        KGrid::from_indices(PI / k0, &[1]).unwrap()
    }

    fn linear_column(n: usize, k0: f64) -> MeasureTable {
        MeasureTable::from_fn(unit_grid(n), single_k(k0), |x, _| 2.0 * x).unwrap()
    }

    #[test]
    fn single_column_is_feasible() {
        let r = check_feasible(&linear_column(50, 1.0), 1e-14);
        assert!(r.feasible);
        assert_eq!(r.max_constraint_residual, 0.0);
    }

    #[test]
    fn zero_table_is_infeasible() {
        let t = MeasureTable::from_fn(unit_grid(50), single_k(1.0), |_, _| 0.0).unwrap();
        let r = check_feasible(&t, 1e-12);
        assert!(!r.feasible);
        assert!((r.max_constraint_residual - 2.0).abs() < 1e-15);
    }

    #[test]
    fn split_columns_are_feasible() {
        let k = KGrid::from_indices(1.0, &[1, 2]).unwrap();
        let t = MeasureTable::from_fn(unit_grid(100), k, |x, k| if k < 4.0 { 2.0 * x * (1.0 - x) } else { 2.0 * x * x })
            .unwrap();
        let r = check_feasible(&t, 1e-15);
        assert!(r.feasible, "{r:?}");
    }

    #[test]
    fn derivative_violation_is_reported() {
        let t = linear_column(10, 1.0);
        let mut bad = t.clone();
        // a slope on a cell whose mean is zero cannot come from nodal values,
        // so forge it directly
        bad.bx[0] = 1.0;
        bad.b[0] = 0.0;
        assert_eq!(check_feasible(&bad, 1.0).derivative_violations, 1);
    }

    #[test]
    fn linear_column_away_from_origin() {
        let n = 1000;
        let t = linear_column(n, 1.0);
        let r = eval_f_infty_with(&t, FInftyOptions { floor: Floor::None, n_skip: n / 10 }).unwrap();
        let exact = 0.99 + 0.5 * 10f64.ln();
        // midpoint rule for 1/(2x) on [0.1, 1] plus exact trapezoid for 2x
        let bound: f64 = (n / 10..n).map(|i| 1.0 / (24.0 * (i as f64).powi(3))).sum::<f64>() + 1e-12;
        assert!((r.value_skipped - exact).abs() <= bound, "{} vs {exact}", r.value_skipped);
    }

    #[test]
    fn constant_column_keeps_only_the_k2_term_away_from_the_boundary() {
        let n = 100;
        let c = 0.7;
        let t = MeasureTable::from_fn(unit_grid(n), single_k(2.0), |_, _| c).unwrap();
        let r = eval_f_infty_with(&t, FInftyOptions { floor: Floor::None, n_skip: 1 }).unwrap();
        let h = 1.0 / n as f64;
        assert!((r.value_skipped - 4.0 * c * (1.0 - h)).abs() < 1e-13);
        // the whole quotient part sits in the boundary cell (jump from the ghost zero)
        assert!((r.quotient_part - h * (c / h).powi(2) / (16.0 * 0.5 * c)).abs() < 1e-12);
    }

    #[test]
    fn doubling_doubles() {
        let t = linear_column(40, 1.3);
        let a = eval_f_infty(&t).unwrap().value;
        let b = eval_f_infty(&t.scaled(2.0).unwrap()).unwrap().value;
        assert_eq!(b, 2.0 * a);
    }

    #[test]
    fn perspective_convention_at_zero_mass() {
        assert_eq!(quotient_density(0.0, 0.0, 1.0), 0.0);
        assert_eq!(quotient_density(1.0, 0.0, 1.0), f64::INFINITY);
    }

    #[test]
    fn negative_entries_are_rejected() {
        let t = MeasureTable::from_fn(unit_grid(10), single_k(1.0), |x, _| x - 0.5).unwrap();
        assert!(eval_f_infty(&t).is_err());
    }

    #[test]
    fn tv_form_agrees() {
        let t = linear_column(200, 1.0);
        let a = eval_f_infty(&t).unwrap().value;
        let b = eval_f_infty_tv(&t).unwrap();
        assert!((a - b).abs() <= 1e-12 * a);
        let flat = MeasureTable::from_fn(unit_grid(20), single_k(1.0), |_, _| 0.0).unwrap();
        assert_eq!(eval_f_infty_tv(&flat).unwrap(), eval_f_infty(&flat).unwrap().value);
    }

    #[test]
    fn floor_is_reported() {
        let k = KGrid::from_indices(1.0, &[1, 2]).unwrap();
        let t = MeasureTable::from_fn(unit_grid(10), k, |x, k| if k < 4.0 { 2.0 * x } else { 0.0 }).unwrap();
        let r = eval_f_infty_with(&t, FInftyOptions { floor: Floor::RelativeToMass(1e-12), n_skip: 0 }).unwrap();
        assert!(!r.floored);
        let mut u = t.clone();
        u.b_min = 10.0;
        assert!(eval_f_infty(&u).unwrap().floored);
    }

    #[test]
    fn x_disintegration_of_single_and_split_columns() {
        let d = disintegrate_x(&linear_column(10, 1.0)).unwrap();
        assert!(d.nu.iter().all(|v| (v - 1.0).abs() < 1e-15));
        let k = KGrid::from_indices(1.0, &[1, 2]).unwrap();
        let t = MeasureTable::from_fn(unit_grid(10), k, |x, _| x).unwrap();
        let d = disintegrate_x(&t).unwrap();
        assert!(d.nu.iter().all(|v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn k_disintegration_of_single_and_split_columns() {
        let n = 64;
        let d = disintegrate_k(&linear_column(n, 1.0)).unwrap();
        assert!((d.lambda[0] - 1.0).abs() < 1e-15);
        let g = d.profiles[0].as_ref().unwrap();
        assert!(g.iter().zip(unit_grid(n).nodes()).all(|(g, x)| (g - 2.0 * x).abs() < 1e-14));
        let k = KGrid::from_indices(1.0, &[1, 2]).unwrap();
        let t = MeasureTable::from_fn(unit_grid(n), k, |x, _| x).unwrap();
        let d = disintegrate_k(&t).unwrap();
        assert!(d.lambda.iter().all(|l| (l - 0.5).abs() < 1e-15));
    }

    #[test]
    fn disintegration_requires_feasibility() {
        let t = MeasureTable::from_fn(unit_grid(10), single_k(1.0), |x, _| x).unwrap();
        assert!(disintegrate_x(&t).is_err());
        assert!(disintegrate_k(&t).is_err());
    }

    #[test]
    fn dilation_of_linear_column() {
        let t = linear_column(100, 1.0);
        let d = dilate(&t, 1.5).unwrap();
        assert!((d.lambda() - 1.5).abs() < 1e-15);
        for (i, x) in d.xgrid().nodes().iter().enumerate() {
            assert!((d.get(i, 0) - 2.0 * x).abs() < 1e-13);
        }
        // mass of the dilated measure is λ² times the original
        assert!((d.total_mass() - 2.25 * t.total_mass()).abs() < 1e-12);
        assert!(dilate(&t, 2.0).is_err());
        assert!(dilate(&t, 1.0).is_err());
    }

    #[test]
    fn dilation_close_to_identity() {
        let t = linear_column(50, 1.0);
        let d = dilate(&t, 1.0 + 1e-12).unwrap();
        for (a, b) in t.values().iter().zip(d.values()) {
            assert!((a - b).abs() < 1e-11);
        }
    }

    #[test]
    fn dilation_scales_the_two_parts() {
        let k = make_k_grid(3.0, 5.0).unwrap();
        let t = MeasureTable::from_fn(unit_grid(80), k, |x, k| {
            let w = (-(k.abs() - 2.0).powi(2)).exp() * (1.0 + 0.3 * (5.0 * x).sin());
            w * x
        })
        .unwrap();
        let lam = 1.37;
        let a = eval_f_infty(&t).unwrap();
        let b = eval_f_infty(&dilate(&t, lam).unwrap()).unwrap();
        assert!((b.k2_part - lam * lam * a.k2_part).abs() <= 1e-10 * b.k2_part);
        assert!((b.quotient_part - a.quotient_part).abs() <= 1e-10 * a.quotient_part);
    }

    #[test]
    fn interpolated_dilation_matches_exact_on_linear_data() {
        let t = linear_column(40, 1.0);
        let g = make_x_grid(57, 0.0, 1.3).unwrap();
        let d = dilate_onto(&t, 1.3, &g).unwrap();
        assert!(d.interpolated);
        for (i, x) in g.nodes().iter().enumerate() {
            assert!((d.get(i, 0) - 2.0 * x).abs() < 1e-12);
        }
    }

    #[test]
    fn binning_keeps_on_grid_frequencies() {
        let k = KGrid::from_indices(4.0, &[-4, 2, 4]).unwrap();
        let t = MeasureTable::from_fn(unit_grid(10), k, |x, k| if k > 3.0 { 2.0 * x } else { 0.0 }).unwrap();
        let out = bin_frequencies(&t, 2.0, None).unwrap();
        let p = out.kgrid().position(2).unwrap();
        for i in 0..out.nx() {
            assert_eq!(out.get(i, p), t.get(i, 2));
        }
    }

    #[test]
    fn off_grid_frequency_moves_to_the_right_endpoint() {
        // k = 3π/8 lies strictly inside (π/4, π/2] for L0 = 4 and goes to π/2
        let k = KGrid::from_indices(8.0, &[-3, 3]).unwrap();
        let t = MeasureTable::from_fn(unit_grid(10), k, |x, _| x).unwrap();
        let out = bin_frequencies(&t, 4.0, None).unwrap();
        assert_eq!(out.kgrid().indices(), &[-2, -1, 1, 2]);
        let pos = out.kgrid().position(2).unwrap();
        let neg = out.kgrid().position(-2).unwrap();
        for (i, x) in out.xgrid().nodes().iter().enumerate() {
            assert!((out.get(i, pos) - x).abs() < 1e-15);
            assert!((out.get(i, neg) - x).abs() < 1e-15);
        }
        assert_eq!(bin_index(-3.0 * PI / 8.0, 4.0), -2);
        assert_eq!(bin_index(PI / 4.0, 4.0), 1);
    }

    #[test]
    fn binning_rejects_a_too_small_cutoff() {
        let t = linear_column(10, 5.0);
        assert!(bin_frequencies(&t, 1.0, Some(4.0)).is_err());
    }

    #[test]
    fn table_round_trips_through_csv() {
        let dir = std::env::temp_dir().join(format!("wrinkle-measure-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let k = make_k_grid(2.0, 4.0).unwrap();
        let t = MeasureTable::from_fn(unit_grid(12), k, |x, k| x * (1.0 + k.abs())).unwrap();
        let p = dir.join("t.csv");
        write_table(&t, &p).unwrap();
        let back = read_table(&p).unwrap();
        assert_eq!(back.values(), t.values());
        assert_eq!(back.kgrid().indices(), t.kgrid().indices());
        assert_eq!(back.kgrid().l_eff(), t.kgrid().l_eff());
        let header = std::fs::read_to_string(&p).unwrap();
        assert!(header.starts_with("x,k,b,b_x\n"));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn bounded_lipschitz_bound_is_a_pseudometric() {
        let a = linear_column(50, 1.0).atoms();
        let b = linear_column(50, 2.0).atoms();
        assert_eq!(bounded_lipschitz_lower_bound(&a, &a, 5.0), 0.0);
        let d = bounded_lipschitz_lower_bound(&a, &b, 5.0);
        assert!(d > 0.0 && d <= 1.0 + 1e-12);
        assert_eq!(d, bounded_lipschitz_lower_bound(&b, &a, 5.0));
    }
}
