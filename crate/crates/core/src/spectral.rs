//! Real Fourier synthesis and analysis in `y` and Plancherel norms.
//!
//! A `2L₀`-periodic function is written in the real basis
//!
//! ```text
//! u(y) = a₀ + Σ_{k>0} a_k √2 sin(k y) + Σ_{k<0} a_k √2 cos(k y),   k ∈ (π/L₀)ℤ \ {0},
//! ```
//!
//! so that `a_k = √2 ⨍ u sin(k y)` for `k > 0`, `a_k = √2 ⨍ u cos(k y)` for
//! `k < 0` and `⨍ u² = a₀² + Σ a_k²`.  Samples live on the uniform grid
//! `y_s = -L₀ + 2 L₀ s / m`, `s = 0..m`, on which the rectangle rule
//! integrates trigonometric polynomials of degree below `m` exactly.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::SQRT_2;

use crate::error::{Error, Result};
use crate::grids::{diff_x, KGrid, XGrid};

/// Uniform sample grid on one period `[-L₀, L₀)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YGrid {
    half_period: f64,
    m: usize,
}

impl YGrid {
    /// `m` samples on `[-half_period, half_period)`; `m` must be even and positive.
    pub fn new(half_period: f64, m: usize) -> Result<YGrid> {
        if !(half_period.is_finite() && half_period > 0.0) {
            return Err(Error::Grid(format!("half period must be positive, got {half_period}")));
        }
        if m == 0 || m % 2 != 0 {
            return Err(Error::Grid(format!("sample count must be even and positive, got {m}")));
        }
        Ok(YGrid { half_period, m })
    }

    /// Default resolution for a frequency set: `4·(j_max + 1)` samples, which
    /// keeps every product of two band-limited fields alias-free.
    pub fn for_kgrid(kgrid: &KGrid) -> Result<YGrid> {
        YGrid::new(kgrid.l_eff(), 4 * (kgrid.max_abs_index() as usize + 1))
    }

    pub fn half_period(&self) -> f64 {
        self.half_period
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_period / self.m as f64
    }

    pub fn node(&self, s: usize) -> f64 {
        -self.half_period + s as f64 * self.spacing()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.m).map(|s| self.node(s)).collect()
    }
}

/// Fourier coefficients `a_k(x_i)` (and optionally the mean `a₀(x_i)`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSet {
    pub x: XGrid,
    pub k: KGrid,
    /// Row-major `x.len() × k.len()` table.
    pub a: Vec<f64>,
    pub a0: Option<Vec<f64>>,
}

impl CoefficientSet {
    pub fn new(x: XGrid, k: KGrid, a: Vec<f64>, a0: Option<Vec<f64>>) -> Result<CoefficientSet> {
        if a.len() != x.len() * k.len() {
            return Err(Error::Shape(format!("{} coefficients for a {}×{} table", a.len(), x.len(), k.len())));
        }
        if let Some(m) = &a0 {
            if m.len() != x.len() {
                return Err(Error::Shape(format!("mean has {} entries for {} nodes", m.len(), x.len())));
            }
        }
        if a.iter().chain(a0.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite Fourier coefficient".into()));
        }
        Ok(CoefficientSet { x, k, a, a0 })
    }

    pub fn zeros(x: XGrid, k: KGrid) -> CoefficientSet {
        let a = vec![0.0; x.len() * k.len()];
        CoefficientSet { x, k, a, a0: None }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.k.len() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let nk = self.k.len();
        &self.a[i * nk..(i + 1) * nk]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.x.len()).map(|i| self.get(i, j)).collect()
    }

    /// Coefficients of `y ↦ u(y + s)`; every frequency must come with its
    /// negative so that the pair `(sin, cos)` rotates within the grid.
    pub fn translated(&self, s: f64) -> Result<CoefficientSet> {
        let nk = self.k.len();
        let idx = self.k.indices();
        let mut a = self.a.clone();
        for (jp, &n) in idx.iter().enumerate().filter(|(_, n)| **n > 0) {
            let jm = self
                .k
                .position(-n)
                .ok_or_else(|| Error::Shape(format!("frequency index {n} has no partner {}", -n)))?;
            let (sn, cs) = (self.k.k(jp) * s).sin_cos();
            for i in 0..self.x.len() {
                let (p, m) = (self.a[i * nk + jp], self.a[i * nk + jm]);
                a[i * nk + jp] = p * cs - m * sn;
                a[i * nk + jm] = p * sn + m * cs;
            }
        }
        if idx.iter().any(|n| *n < 0 && self.k.position(-n).is_none()) {
            return Err(Error::Shape("negative frequency without a positive partner".into()));
        }
        Ok(CoefficientSet { x: self.x.clone(), k: self.k.clone(), a, a0: self.a0.clone() })
    }

    fn mean(&self, i: usize) -> f64 {
        self.a0.as_ref().map_or(0.0, |m| m[i])
    }
}

/// Sampled values on `XGrid × YGrid`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSamples {
    pub x: XGrid,
    pub y: YGrid,
    /// Row-major `x.len() × y.len()` table.
    pub values: Vec<f64>,
}

impl FieldSamples {
    pub fn row(&self, i: usize) -> &[f64] {
        let m = self.y.len();
        &self.values[i * m..(i + 1) * m]
    }
}

fn check_period(k: &KGrid, y: &YGrid) -> Result<()> {
    let (a, b) = (k.l_eff(), y.half_period());
    if (a - b).abs() > 1e-12 * a.max(b) {
        return Err(Error::Parameter(format!("frequency grid has half period {a}, sample grid {b}")));
    }
    Ok(())
}

fn check_alias(k: &KGrid, y: &YGrid) -> Result<()> {
    let j_max = k.max_abs_index() as usize;
    if y.len() <= 2 * j_max {
        return Err(Error::Aliasing(format!("{} samples cannot resolve frequency index {j_max}", y.len())));
    }
    Ok(())
}

/// Sign `(-1)^j` arising from the grid starting at `y = -L₀`.
fn parity(j: u64) -> f64 {
    if j % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Evaluate the Fourier series on the sample grid.
pub fn synthesize(coeffs: &CoefficientSet, y: &YGrid) -> Result<FieldSamples> {
    check_period(&coeffs.k, y)?;
    check_alias(&coeffs.k, y)?;
    let m = y.len();
    let fft = FftPlanner::new().plan_fft_inverse(m);
    let mut values = Vec::with_capacity(coeffs.x.len() * m);
    let mut buf = vec![Complex64::new(0.0, 0.0); m];
    for i in 0..coeffs.x.len() {
        buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        buf[0].re = coeffs.mean(i);
        for (j, &idx) in coeffs.k.indices().iter().enumerate() {
            let n = idx.unsigned_abs();
            let c = SQRT_2 * parity(n) * coeffs.get(i, j);
            // cos component enters the real part, sin the negative imaginary part
            if idx > 0 {
                buf[n as usize].im -= c;
            } else {
                buf[n as usize].re += c;
            }
        }
        fft.process(&mut buf);
        values.extend(buf.iter().map(|c| c.re));
    }
    Ok(FieldSamples { x: coeffs.x.clone(), y: *y, values })
}

/// Project samples onto the real basis by the rectangle rule.
pub fn analyze(samples: &FieldSamples, k: &KGrid) -> Result<CoefficientSet> {
    check_period(k, &samples.y)?;
    check_alias(k, &samples.y)?;
    let m = samples.y.len();
    let fft = FftPlanner::new().plan_fft_forward(m);
    let nx = samples.x.len();
    let mut a = Vec::with_capacity(nx * k.len());
    let mut a0 = Vec::with_capacity(nx);
    let mut buf = vec![Complex64::new(0.0, 0.0); m];
    for i in 0..nx {
        for (b, v) in buf.iter_mut().zip(samples.row(i)) {
            *b = Complex64::new(*v, 0.0);
        }
        fft.process(&mut buf);
        a0.push(buf[0].re / m as f64);
        for &idx in k.indices() {
            let n = idx.unsigned_abs();
            let z = buf[n as usize] * (parity(n) / m as f64);
            a.push(if idx > 0 { -SQRT_2 * z.im } else { SQRT_2 * z.re });
        }
    }
    CoefficientSet::new(samples.x.clone(), k.clone(), a, Some(a0))
}

fn check_order(alpha1: usize) -> Result<()> {
    if alpha1 > 2 {
        return Err(Error::Parameter(format!("x-derivative order {alpha1} is not supported (max 2)")));
    }
    Ok(())
}

/// `⨍ (∂_x^{α₁} ∂_y^{α₂} u)² dy` at every node, with `x`-derivatives taken by
/// the crate-wide difference scheme.
pub fn plancherel_norm(coeffs: &CoefficientSet, alpha1: usize, alpha2: u32) -> Result<Vec<f64>> {
    check_order(alpha1)?;
    let nx = coeffs.x.len();
    let nk = coeffs.k.len();
    let mut columns: Vec<Vec<f64>> = (0..nk).map(|j| coeffs.column(j)).collect();
    let mut mean: Vec<f64> = (0..nx).map(|i| coeffs.mean(i)).collect();
    for _ in 0..alpha1 {
        for c in columns.iter_mut() {
            *c = diff_x(c, &coeffs.x)?;
        }
        mean = diff_x(&mean, &coeffs.x)?;
    }
    let kp: Vec<f64> = coeffs.k.values().iter().map(|k| k.powi(alpha2 as i32)).collect();
    Ok((0..nx)
        .map(|i| {
            let m = if alpha2 == 0 { mean[i] * mean[i] } else { 0.0 };
            m + (0..nk).map(|j| (columns[j][i] * kp[j]).powi(2)).sum::<f64>()
        })
        .collect())
}

/// Coefficients of a field together with their exact first and second
/// `x`-derivatives, all on the same grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientJet {
    pub value: CoefficientSet,
    pub dx: CoefficientSet,
    pub dxx: CoefficientSet,
}

impl CoefficientJet {
    pub fn zeros(x: XGrid, k: KGrid) -> CoefficientJet {
        let z = CoefficientSet::zeros(x, k);
        CoefficientJet { value: z.clone(), dx: z.clone(), dxx: z }
    }

    /// `⨍ (∂_x^{α₁} ∂_y^{α₂} u)² dy` per node using the stored exact derivatives.
    pub fn plancherel_norm(&self, alpha1: usize, alpha2: u32) -> Result<Vec<f64>> {
        check_order(alpha1)?;
        let set = match alpha1 {
            0 => &self.value,
            1 => &self.dx,
            _ => &self.dxx,
        };
        let nk = set.k.len();
        let kp: Vec<f64> = set.k.values().iter().map(|k| k.powi(alpha2 as i32)).collect();
        Ok((0..set.x.len())
            .map(|i| {
                let m = if alpha2 == 0 { set.mean(i).powi(2) } else { 0.0 };
                m + (0..nk).map(|j| (set.get(i, j) * kp[j]).powi(2)).sum::<f64>()
            })
            .collect())
    }
}
