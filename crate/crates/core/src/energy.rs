//! The excess energy `F_L = L²(E_L − E₀)` of displacement fields and the
//! Γ-gap between it and `F_∞` along a sequence of thickness parameters.
//!
//! In the variables `(w₁, w₂, u)` on `[-1, 1] × [-L₀, L₀)`,
//!
//! ```text
//! F_L = L² ⨍∫ (w₁,ₓ + u,ₓ²/(2L²) − 1)²            (t1)
//!     − L²/3                                         (offset)
//!     + L² ⨍∫ (w₂,y + u,y²/2 − x)²                   (t2)
//!     + ⨍∫ (L² w₁,y + w₂,ₓ + u,ₓ u,y)²               (t3)
//!     + ⨍∫ (u,ₓ² + u,yy²)                            (t4)
//!     + L⁻² ⨍∫ (2 u,ₓy² + L⁻² u,ₓₓ²)                 (t5)
//! ```
//!
//! where `⨍` averages over one period in `y` and `∫` integrates over `x`.
//!
//! [`eval_f_l`] takes the `y`-averages in closed form on the fields'
//! [`YProfile`]s (the quadratic bending terms reduce to Plancherel sums) and
//! integrates in `x` by the composite Simpson rule.  [`eval_f_l_sampled`]
//! evaluates every term from point samples in `y` instead and serves as an
//! independent cross-check.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grids::simpson;
use crate::measure::{bounded_lipschitz_lower_bound, eval_f_infty, MeasureTable};
use crate::profile::YProfile;
use crate::recovery::{build_recovery, field_measure, u_profiles, DisplacementField, RecoveryConfig, RecoveryParams};

/// The terms of `F_L` and their sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    #[serde(rename = "L")]
    pub l: f64,
    pub t1: f64,
    pub offset: f64,
    pub t2: f64,
    pub t3: f64,
    pub t4: f64,
    pub t5: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    fn assemble(l: f64, t: [f64; 5]) -> EnergyBreakdown {
        let offset = -l * l / 3.0;
        let [t1, t2, t3, t4, t5] = t;
        EnergyBreakdown { l, t1, offset, t2, t3, t4, t5, total: t1 + offset + t2 + t3 + t4 + t5 }
    }
}

fn check_l(l: f64) -> Result<()> {
    if !(l.is_finite() && l > 0.0) {
        return Err(Error::Parameter(format!("L must be positive, got {l}")));
    }
    Ok(())
}

/// Per-node integrand profiles of the three membrane terms.
struct Membrane {
    stretch_x: YProfile,
    stretch_y: YProfile,
    shear: YProfile,
}

fn membrane_profiles(field: &DisplacementField, l: f64, i: usize) -> Membrane {
    let l2 = l * l;
    let x = field.xgrid().nodes()[i];
    let l0 = field.half_period();
    let ip = &field.in_plane;
    let (uu, ux, _) = u_profiles(&field.u, i);
    let uy = uu.dy();
    Membrane {
        stretch_x: ip.w1_x[i].add(&ux.mul(&ux).scale(0.5 / l2)).sub(&YProfile::constant(l0, 1.0)),
        stretch_y: ip.w2_y[i].add(&uy.mul(&uy).scale(0.5)).sub(&YProfile::constant(l0, x)),
        shear: ip.w1_y[i].scale(l2).add(&ip.w2_x[i]).add(&ux.mul(&uy)),
    }
}

fn check_field(field: &DisplacementField) -> Result<()> {
    let n = field.xgrid().len();
    let ip = &field.in_plane;
    for (name, v) in [("w1", &ip.w1), ("w2", &ip.w2), ("w1_x", &ip.w1_x), ("w1_y", &ip.w1_y), ("w2_x", &ip.w2_x), ("w2_y", &ip.w2_y)] {
        if v.len() != n {
            return Err(Error::Shape(format!("{name} has {} profiles for {n} nodes", v.len())));
        }
    }
    let l0 = field.half_period();
    if ip.w1_x.iter().chain(&ip.w2_y).chain(&ip.w1_y).chain(&ip.w2_x).any(|p| (p.half_period() - l0).abs() > 1e-12 * l0) {
        return Err(Error::Parameter("in-plane profiles and u have different periods".into()));
    }
    Ok(())
}

/// `F_L` with closed-form `y`-averages and Simpson's rule in `x`.
pub fn eval_f_l(field: &DisplacementField, l: f64) -> Result<EnergyBreakdown> {
    check_l(l)?;
    check_field(field)?;
    let x = field.xgrid();
    let (mut e1, mut e2, mut e3) = (vec![0.0; x.len()], vec![0.0; x.len()], vec![0.0; x.len()]);
    let per_node: Vec<(f64, f64, f64)> = (0..x.len())
        .into_par_iter()
        .map(|i| {
            let m = membrane_profiles(field, l, i);
            (m.stretch_x.mean_square(), m.stretch_y.mean_square(), m.shear.mean_square())
        })
        .collect();
    for (i, (a, b, c)) in per_node.into_iter().enumerate() {
        e1[i] = a;
        e2[i] = b;
        e3[i] = c;
    }
    let u = &field.u;
    let (ux2, uyy2) = (u.plancherel_norm(1, 0)?, u.plancherel_norm(0, 2)?);
    let (uxy2, uxx2) = (u.plancherel_norm(1, 1)?, u.plancherel_norm(2, 0)?);
    let il2 = 1.0 / (l * l);
    let e4: Vec<f64> = ux2.iter().zip(&uyy2).map(|(a, b)| a + b).collect();
    let e5: Vec<f64> = uxy2.iter().zip(&uxx2).map(|(a, b)| il2 * (2.0 * a + il2 * b)).collect();
    let l2 = l * l;
    Ok(EnergyBreakdown::assemble(
        l,
        [l2 * simpson(&e1, x)?, l2 * simpson(&e2, x)?, simpson(&e3, x)?, simpson(&e4, x)?, simpson(&e5, x)?],
    ))
}

/// `F_L` from `m` point samples per period in `y` (rectangle rule), with the
/// same Simpson rule in `x`.  `m` must exceed four times the largest frequency
/// index so that products of two fields are averaged without aliasing.
pub fn eval_f_l_sampled(field: &DisplacementField, l: f64, m: usize) -> Result<EnergyBreakdown> {
    check_l(l)?;
    check_field(field)?;
    let jmax = field.u.value.k.max_abs_index() as usize;
    if m <= 4 * jmax {
        return Err(Error::Aliasing(format!("{m} samples cannot average products of frequency index {jmax}")));
    }
    let x = field.xgrid();
    let l2 = l * l;
    let il2 = 1.0 / l2;
    let ms = |v: Vec<f64>| v.iter().map(|s| s * s).sum::<f64>() / v.len() as f64;
    let per_node: Vec<[f64; 5]> = (0..x.len())
        .into_par_iter()
        .map(|i| {
            let xi = x.nodes()[i];
            let ip = &field.in_plane;
            let (uu, ux, uxx) = u_profiles(&field.u, i);
            let (uy, uyy, uxy) = (uu.dy(), uu.dy().dy(), ux.dy());
            let s = |p: &YProfile| p.sample(m);
            let (ux_s, uy_s, uyy_s, uxy_s, uxx_s) = (s(&ux), s(&uy), s(&uyy), s(&uxy), s(&uxx));
            let (w1x, w1y, w2x, w2y) = (s(&ip.w1_x[i]), s(&ip.w1_y[i]), s(&ip.w2_x[i]), s(&ip.w2_y[i]));
            let e1 = ms((0..m).map(|q| w1x[q] + 0.5 * il2 * ux_s[q] * ux_s[q] - 1.0).collect());
            let e2 = ms((0..m).map(|q| w2y[q] + 0.5 * uy_s[q] * uy_s[q] - xi).collect());
            let e3 = ms((0..m).map(|q| l2 * w1y[q] + w2x[q] + ux_s[q] * uy_s[q]).collect());
            let e4 = ms(ux_s) + ms(uyy_s);
            let e5 = il2 * (2.0 * ms(uxy_s) + il2 * ms(uxx_s));
            [e1, e2, e3, e4, e5]
        })
        .collect();
    let column = |c: usize| per_node.iter().map(|r| r[c]).collect::<Vec<f64>>();
    Ok(EnergyBreakdown::assemble(
        l,
        [
            l2 * simpson(&column(0), x)?,
            l2 * simpson(&column(1), x)?,
            simpson(&column(2), x)?,
            simpson(&column(3), x)?,
            simpson(&column(4), x)?,
        ],
    ))
}

/// Bound `8L²δ³/3` on `t2 − L²/3` for a field built with cutoff `ψ_δ`: there
/// `w₂,y + u,y²/2 − x = (ψ_δ² − 1)x`, so `t2 − L²/3 = L² ∫₀^{2δ} (1 − ψ_δ²)² x² dx`,
/// which is at most `L² ∫₀^{2δ} x² dx`.
pub fn membrane_y_excess_bound(l: f64, delta: f64) -> f64 {
    8.0 * l * l * delta.powi(3) / 3.0
}

/// One row of the Γ-gap table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub params: RecoveryParams,
    pub energy: EnergyBreakdown,
    /// `F_∞` of the source measure.
    pub f_inf: f64,
    /// `F_L − F_∞`.
    pub gap: f64,
    /// `F_∞` of the dilated and binned measure on `[0, λ]`.
    pub f_binned: f64,
    /// `(1 + prefactor)` multiplying the bending bound.
    pub bending_factor: f64,
    /// `t2 + offset`.
    pub membrane_y_excess: f64,
    /// Periodicity defects of w₁ and w₂ (relative).
    pub periodicity: (f64, f64),
    /// Discrete `F_∞` of `μ^L(u^L) = Σ k² a_k² dx ⊗ δ_k` on `(0, 1]`.
    pub f_field_measure: f64,
    /// Bounded-Lipschitz lower bound on the distance between `μ^L(u^L)` and the source.
    pub bl_distance: f64,
}

impl GapRow {
    /// `(1 + prefactor) · F_∞(μ^{L₀})`, the bound on `t4` for the binned measure.
    pub fn bending_bound(&self) -> f64 {
        self.bending_factor * self.f_binned
    }

    /// `F_L ≥ t4 ≥ F_∞(μ^L(u^L)) − 1e-8`.
    pub fn liminf_chain_holds(&self) -> bool {
        self.energy.total >= self.energy.t4 && self.energy.t4 >= self.f_field_measure - 1e-8
    }
}

/// The Γ-gap table and its trend verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaReport {
    pub f_inf: f64,
    pub rows: Vec<GapRow>,
    /// Every gap is positive.
    pub positive: bool,
    /// The gaps decrease strictly from the first `L ≥ 16` onward.
    pub decreasing_from_16: bool,
}

impl GammaReport {
    pub fn verdict(&self) -> &'static str {
        match (self.positive, self.decreasing_from_16) {
            (true, true) => "positive and decreasing from L = 16",
            (true, false) => "positive but not decreasing from L = 16",
            (false, _) => "gap changes sign",
        }
    }
}

/// Build the recovery at every `L`, evaluate `F_L` and compare with `F_∞(t)`.
pub fn gamma_gap(t: &MeasureTable, ls: &[f64], cfg: &RecoveryConfig) -> Result<GammaReport> {
    if ls.is_empty() {
        return Err(Error::Parameter("no values of L given".into()));
    }
    let f_inf = eval_f_infty(t)?.value;
    let atoms = t.atoms();
    let mut rows = Vec::with_capacity(ls.len());
    for &l in ls {
        let r = build_recovery(t, l, cfg)?;
        let energy = eval_f_l(&r.field, l)?;
        let p = r.params().clone();
        let mu_l = field_measure(&r.field.u.value)?;
        let k_cover = t.kgrid().k_max().max(mu_l.kgrid().k_max()) + 1.0;
        rows.push(GapRow {
            energy,
            f_inf,
            gap: energy.total - f_inf,
            f_binned: r.binned_value()?,
            bending_factor: 1.0 + p.bending_prefactor(),
            membrane_y_excess: energy.t2 + energy.offset,
            periodicity: r.field.periodicity_defects(4 * (r.field.u.value.k.max_abs_index() as usize + 1))?,
            f_field_measure: eval_f_infty(&mu_l)?.value,
            bl_distance: bounded_lipschitz_lower_bound(&mu_l.atoms(), &atoms, k_cover),
            params: p,
        });
    }
    let positive = rows.iter().all(|r| r.gap > 0.0);
    let tail: Vec<f64> = rows.iter().filter(|r| r.params.l >= 16.0).map(|r| r.gap).collect();
    let decreasing_from_16 = tail.windows(2).all(|w| w[1] < w[0]);
    Ok(GammaReport { f_inf, rows, positive, decreasing_from_16 })
}

/// Write the gap table as CSV with header `L,t1,offset,t2,t3,t4,t5,total,F_inf,gap`.
pub fn write_gap_csv(report: &GammaReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["L", "t1", "offset", "t2", "t3", "t4", "t5", "total", "F_inf", "gap"])?;
    for r in &report.rows {
        let e = &r.energy;
        w.write_record(
            [e.l, e.t1, e.offset, e.t2, e.t3, e.t4, e.t5, e.total, r.f_inf, r.gap].iter().map(|v| v.to_string()),
        )?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grids::{make_closed_x_grid, make_k_grid, make_x_grid, KGrid};
    use crate::recovery::{build_in_plane, Cutoff, InPlane};
    use crate::spectral::{CoefficientJet, CoefficientSet};
    use std::f64::consts::PI;

    fn two_columns(n: usize) -> MeasureTable {
        let k = make_k_grid(4.0, 3.0).unwrap();
        let (p, q) = (k.position(2).unwrap(), k.position(-3).unwrap());
        MeasureTable::from_fn(make_x_grid(n, 0.0, 1.0).unwrap(), k.clone(), |x, kk| {
            if (kk - k.k(p)).abs() < 1e-12 {
                2.0 * x * (1.0 - x)
            } else if (kk - k.k(q)).abs() < 1e-12 {
                2.0 * x * x
            } else {
                0.0
            }
        })
        .unwrap()
    }

    #[test]
    fn flat_states() {
        for l in [8.0, 32.0, 100.0] {
            let relaxed = DisplacementField::flat(1.3, 800, true).unwrap();
            let e = eval_f_l(&relaxed, l).unwrap();
            assert!(e.t1.abs() < 1e-12 && e.t3 == 0.0 && e.t4 == 0.0 && e.t5 == 0.0);
            assert!((e.t2 - 2.0 * l * l / 3.0).abs() <= 1e-12 * l * l);
            assert!((e.total - l * l / 3.0).abs() <= 1e-9 * l * l);
            let rest = DisplacementField::flat(1.3, 800, false).unwrap();
            let e = eval_f_l(&rest, l).unwrap();
            assert!((e.t1 - 2.0 * l * l).abs() <= 1e-12 * l * l);
            assert!((e.total - (2.0 * l * l + l * l / 3.0)).abs() <= 1e-9 * l * l);
        }
    }

    /// A single sine mode `u = c(x) √2 sin(ky)` with `c = x²` has
    /// `⨍u,ₓ² = 4x²`, `⨍u,yy² = k⁴x⁴`, `⨍u,ₓy² = 4k²x²`, `⨍u,ₓₓ² = 4`.
    #[test]
    fn bending_terms_of_a_single_mode() {
        let x = make_closed_x_grid(200, -1.0, 1.0).unwrap();
        let k = KGrid::from_indices(1.0, &[2]).unwrap();
        let kv = 2.0 * PI;
        let mut u = CoefficientJet::zeros(x.clone(), k.clone());
        for (i, xi) in x.nodes().iter().enumerate() {
            u.value.a[i] = xi * xi;
            u.dx.a[i] = 2.0 * xi;
            u.dxx.a[i] = 2.0;
        }
        let zero = vec![YProfile::zero(1.0); x.len()];
        let field = DisplacementField {
            params: None,
            u,
            in_plane: InPlane {
                w1: zero.clone(),
                w2: zero.clone(),
                w1_x: zero.clone(),
                w1_y: zero.clone(),
                w2_x: zero.clone(),
                w2_y: zero,
            },
        };
        let l = 3.0;
        let e = eval_f_l(&field, l).unwrap();
        // Simpson integrates x² exactly and x⁴ with the defect 2·24h⁴/180
        let h: f64 = 0.01;
        let t4 = 8.0 / 3.0 + kv.powi(4) * (2.0 / 5.0 + 48.0 * h.powi(4) / 180.0);
        let t5 = (2.0 * 4.0 * kv * kv * 2.0 / 3.0 + 8.0 / (l * l)) / (l * l);
        assert!((e.t4 - t4).abs() < 1e-10 * t4, "{} vs {t4}", e.t4);
        assert!((e.t5 - t5).abs() < 1e-10 * t5);
        let s = eval_f_l_sampled(&field, l, 16).unwrap();
        assert!((s.t4 - e.t4).abs() < 1e-9 && (s.t5 - e.t5).abs() < 1e-9);
        assert!(eval_f_l_sampled(&field, l, 8).is_err());
    }

    fn recovered(l: f64) -> (DisplacementField, RecoveryParams) {
        let r = build_recovery(&two_columns(200), l, &RecoveryConfig::default()).unwrap();
        let p = r.params().clone();
        (r.field, p)
    }

    #[test]
    fn recovery_energy_identities() {
        let l = 32.0;
        let (field, p) = recovered(l);
        let e = eval_f_l(&field, l).unwrap();
        assert!(e.t3 <= 1e-10, "t3 = {}", e.t3);
        assert!(e.t1 >= 0.0 && e.t2 >= 0.0 && e.t4 >= 0.0 && e.t5 >= 0.0);
        assert!(e.t2 + e.offset <= membrane_y_excess_bound(l, p.delta) + 1e-9 * l * l);
        let sum = e.t1 + e.offset + e.t2 + e.t3 + e.t4 + e.t5;
        assert_eq!(sum, e.total);
    }

    #[test]
    fn membrane_y_term_is_the_cutoff_defect() {
        // w₂,y + u,y²/2 − x = (ψ² − 1)x exactly, so t2 = L² ∫₀¹ (1 − ψ²)² x² dx + L²/3
        let l = 16.0;
        let (field, p) = recovered(l);
        let e = eval_f_l(&field, l).unwrap();
        let c = Cutoff { delta: p.delta };
        let n = 200_000;
        let h = 2.0 * p.delta / n as f64;
        let defect: f64 = (0..n)
            .map(|i| {
                let x = (i as f64 + 0.5) * h;
                let (psi, _, _) = c.eval(x);
                (1.0 - psi * psi).powi(2) * x * x * h
            })
            .sum();
        // Simpson on the 800-cell grid resolves the cutoff only to O(h⁴ψ⁗)
        assert!((e.t2 + e.offset - l * l * defect).abs() < 1e-6 * l * l, "{} vs {}", e.t2 + e.offset, l * l * defect);
    }

    #[test]
    fn sampled_path_agrees() {
        let l = 16.0;
        let (field, _) = recovered(l);
        let e = eval_f_l(&field, l).unwrap();
        let m = 8 * (field.u.value.k.max_abs_index() as usize + 1);
        let s = eval_f_l_sampled(&field, l, m).unwrap();
        assert!((s.t4 - e.t4).abs() < 1e-9, "{} {}", s.t4, e.t4);
        assert!((s.t5 - e.t5).abs() < 1e-9);
        assert!((s.t2 - e.t2).abs() < 1e-9 * l * l);
        assert!((s.t1 - e.t1).abs() < 1e-6 * (1.0 + e.t1));
    }

    #[test]
    fn energy_is_translation_invariant() {
        let l = 16.0;
        let (field, _) = recovered(l);
        let e = eval_f_l(&field, l).unwrap();
        for s in [0.3, -1.1, 2.0 * field.half_period() + 0.05] {
            let moved = field.translated(s).unwrap();
            let f = eval_f_l(&moved, l).unwrap();
            assert!((f.total - e.total).abs() < 1e-9 * e.total.abs().max(1.0), "shift {s}");
            assert!((f.t4 - e.t4).abs() < 1e-10 * e.t4);
        }
    }

    #[test]
    fn shear_vanishes_for_any_out_of_plane_field() {
        let x = make_closed_x_grid(100, -1.0, 1.0).unwrap();
        let k = make_k_grid(1.5, 6.0).unwrap();
        let nk = k.len();
        let mut a = vec![0.0; x.len() * nk];
        let mut ax = a.clone();
        let mut axx = a.clone();
        for (i, xi) in x.nodes().iter().enumerate() {
            for j in 0..nk {
                let w = 0.1 * (j as f64 + 1.0);
                a[i * nk + j] = (w * xi).sin() * xi.max(0.0).powi(3);
                let s = xi.max(0.0);
                ax[i * nk + j] = if *xi > 0.0 { w * (w * xi).cos() * s.powi(3) + 3.0 * (w * xi).sin() * s * s } else { 0.0 };
                axx[i * nk + j] = if *xi > 0.0 {
                    -w * w * (w * xi).sin() * s.powi(3) + 6.0 * w * (w * xi).cos() * s * s + 6.0 * (w * xi).sin() * s
                } else {
                    0.0
                };
            }
        }
        let u = CoefficientJet {
            value: CoefficientSet::new(x.clone(), k.clone(), a, None).unwrap(),
            dx: CoefficientSet::new(x.clone(), k.clone(), ax, None).unwrap(),
            dxx: CoefficientSet::new(x, k, axx, None).unwrap(),
        };
        let l = 10.0;
        let in_plane = build_in_plane(&u, l, Cutoff { delta: 0.05 }).unwrap();
        let field = DisplacementField { params: None, u, in_plane };
        let e = eval_f_l(&field, l).unwrap();
        assert!(e.t3 < 1e-20, "{}", e.t3);
    }

    #[test]
    fn gap_report_and_csv() {
        let t = two_columns(100);
        let rep = gamma_gap(&t, &[8.0, 16.0], &RecoveryConfig { x_intervals: 400, allow_fallback: true }).unwrap();
        assert_eq!(rep.rows.len(), 2);
        for r in &rep.rows {
            assert_eq!(r.gap, r.energy.total - rep.f_inf);
            assert!(r.bl_distance >= 0.0);
            assert!(r.liminf_chain_holds());
            assert!(r.energy.t4 <= r.bending_bound());
        }
        let dir = std::env::temp_dir().join(format!("wrinkle-gap-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("gap.csv");
        write_gap_csv(&rep, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("L,t1,offset,t2,t3,t4,t5,total,F_inf,gap\n"));
        assert_eq!(text.lines().count(), 3);
        std::fs::remove_dir_all(&dir).unwrap();
        assert!(gamma_gap(&t, &[], &RecoveryConfig::default()).is_err());
    }
}
