//! Exact algebra on `y`-profiles of the form
//!
//! ```text
//! p(y) = Σ_n q_n yⁿ + Σ_{j≥1} [α_j cos(ω_j y) + β_j sin(ω_j y)],   ω_j = jπ/L₀.
//! ```
//!
//! The in-plane displacements are built by multiplying out-of-plane
//! derivatives and integrating in `y`; with this representation products use
//! product-to-sum formulas, antiderivatives are taken mode by mode and
//! `y`-averages over `[-L₀, L₀)` are evaluated in closed form, so none of
//! these steps incurs quadrature or aliasing error.  The polynomial part holds
//! the secular terms (`y`, `y²`) that the construction must cancel.

use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, SQRT_2};

use crate::grids::KGrid;

/// A polynomial-plus-trigonometric function of `y` with half period `L₀`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YProfile {
    half_period: f64,
    /// `poly[n]` multiplies `yⁿ`.
    pub poly: Vec<f64>,
    /// `cos[j-1]` multiplies `cos(jπy/L₀)`.
    pub cos: Vec<f64>,
    /// `sin[j-1]` multiplies `sin(jπy/L₀)`.
    pub sin: Vec<f64>,
}

impl YProfile {
    pub fn zero(half_period: f64) -> YProfile {
        YProfile { half_period, poly: Vec::new(), cos: Vec::new(), sin: Vec::new() }
    }

    pub fn constant(half_period: f64, c: f64) -> YProfile {
        YProfile { half_period, poly: vec![c], cos: Vec::new(), sin: Vec::new() }
    }

    /// `c0 + c1·y`.
    pub fn linear(half_period: f64, c0: f64, c1: f64) -> YProfile {
        YProfile { half_period, poly: vec![c0, c1], cos: Vec::new(), sin: Vec::new() }
    }

    /// The profile `Σ_k c_k φ_k(y)` of a coefficient row in the real basis
    /// (`φ_k = √2 sin(ky)` for `k > 0`, `√2 cos(ky)` for `k < 0`).
    pub fn from_coefficients(kgrid: &KGrid, row: &[f64]) -> YProfile {
        let jmax = kgrid.max_abs_index() as usize;
        let mut p = YProfile::zero(kgrid.l_eff());
        p.cos = vec![0.0; jmax];
        p.sin = vec![0.0; jmax];
        for (idx, c) in kgrid.indices().iter().zip(row) {
            let n = idx.unsigned_abs() as usize;
            if *idx > 0 {
                p.sin[n - 1] += SQRT_2 * c;
            } else {
                p.cos[n - 1] += SQRT_2 * c;
            }
        }
        p
    }

    pub fn half_period(&self) -> f64 {
        self.half_period
    }

    fn omega(&self, j: usize) -> f64 {
        j as f64 * PI / self.half_period
    }

    /// Number of trigonometric modes carried.
    pub fn modes(&self) -> usize {
        self.cos.len().max(self.sin.len())
    }

    fn coef(v: &[f64], j: usize) -> f64 {
        if j >= 1 && j <= v.len() {
            v[j - 1]
        } else {
            0.0
        }
    }

    fn poly_coef(&self, n: usize) -> f64 {
        self.poly.get(n).copied().unwrap_or(0.0)
    }

    /// Value at `y`.
    pub fn eval(&self, y: f64) -> f64 {
        let mut v = 0.0;
        for c in self.poly.iter().rev() {
            v = v * y + c;
        }
        for j in 1..=self.modes() {
            let (s, c) = (self.omega(j) * y).sin_cos();
            v += Self::coef(&self.cos, j) * c + Self::coef(&self.sin, j) * s;
        }
        v
    }

    fn zip_with(&self, other: &YProfile, f: impl Fn(f64, f64) -> f64) -> YProfile {
        let np = self.poly.len().max(other.poly.len());
        let nj = self.modes().max(other.modes());
        YProfile {
            half_period: self.half_period,
            poly: (0..np).map(|n| f(self.poly_coef(n), other.poly_coef(n))).collect(),
            cos: (1..=nj).map(|j| f(Self::coef(&self.cos, j), Self::coef(&other.cos, j))).collect(),
            sin: (1..=nj).map(|j| f(Self::coef(&self.sin, j), Self::coef(&other.sin, j))).collect(),
        }
    }

    pub fn add(&self, other: &YProfile) -> YProfile {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &YProfile) -> YProfile {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> YProfile {
        YProfile {
            half_period: self.half_period,
            poly: self.poly.iter().map(|v| v * s).collect(),
            cos: self.cos.iter().map(|v| v * s).collect(),
            sin: self.sin.iter().map(|v| v * s).collect(),
        }
    }

    /// Add `c·yⁿ`.
    pub fn add_monomial(&self, n: usize, c: f64) -> YProfile {
        let mut p = self.clone();
        if p.poly.len() <= n {
            p.poly.resize(n + 1, 0.0);
        }
        p.poly[n] += c;
        p
    }

    /// Whether the polynomial part is at most a constant.
    pub fn is_periodic(&self) -> bool {
        self.poly.iter().skip(1).all(|c| *c == 0.0)
    }

    /// Product of two profiles whose polynomial parts are constants.
    ///
    /// # Panics
    /// If either factor carries a non-constant polynomial part; such products
    /// never arise in the construction.
    pub fn mul(&self, other: &YProfile) -> YProfile {
        assert!(self.is_periodic() && other.is_periodic(), "product of non-periodic profiles");
        let (c1, c2) = (self.poly_coef(0), other.poly_coef(0));
        let (n1, n2) = (self.modes(), other.modes());
        let nj = n1 + n2;
        let mut cos = vec![0.0; nj];
        let mut sin = vec![0.0; nj];
        let mut c0 = c1 * c2;
        for j in 1..=n2 {
            cos[j - 1] += c1 * Self::coef(&other.cos, j);
            sin[j - 1] += c1 * Self::coef(&other.sin, j);
        }
        for i in 1..=n1 {
            cos[i - 1] += c2 * Self::coef(&self.cos, i);
            sin[i - 1] += c2 * Self::coef(&self.sin, i);
        }
        for i in 1..=n1 {
            let (ac, as_) = (Self::coef(&self.cos, i), Self::coef(&self.sin, i));
            if ac == 0.0 && as_ == 0.0 {
                continue;
            }
            for j in 1..=n2 {
                let (bc, bs) = (Self::coef(&other.cos, j), Self::coef(&other.sin, j));
                // cos·cos = [cos(i-j) + cos(i+j)]/2, sin·sin = [cos(i-j) - cos(i+j)]/2
                // sin_i·cos_j = [sin(i+j) + sin(i-j)]/2, cos_i·sin_j = [sin(i+j) - sin(i-j)]/2
                let diff_cos = 0.5 * (ac * bc + as_ * bs);
                let sum_cos = 0.5 * (ac * bc - as_ * bs);
                let sum_sin = 0.5 * (as_ * bc + ac * bs);
                let diff_sin = 0.5 * (as_ * bc - ac * bs);
                cos[i + j - 1] += sum_cos;
                sin[i + j - 1] += sum_sin;
                match i.cmp(&j) {
                    std::cmp::Ordering::Equal => c0 += diff_cos,
                    std::cmp::Ordering::Greater => {
                        cos[i - j - 1] += diff_cos;
                        sin[i - j - 1] += diff_sin;
                    }
                    std::cmp::Ordering::Less => {
                        cos[j - i - 1] += diff_cos;
                        sin[j - i - 1] -= diff_sin;
                    }
                }
            }
        }
        YProfile { half_period: self.half_period, poly: vec![c0], cos, sin }
    }

    /// `∂_y`.
    pub fn dy(&self) -> YProfile {
        let nj = self.modes();
        YProfile {
            half_period: self.half_period,
            poly: (1..self.poly.len()).map(|n| n as f64 * self.poly[n]).collect(),
            cos: (1..=nj).map(|j| self.omega(j) * Self::coef(&self.sin, j)).collect(),
            sin: (1..=nj).map(|j| -self.omega(j) * Self::coef(&self.cos, j)).collect(),
        }
    }

    /// The antiderivative `∫₀^y p(s) ds`.
    pub fn integral_from_zero(&self) -> YProfile {
        let nj = self.modes();
        let mut poly = vec![0.0; self.poly.len() + 1];
        for (n, c) in self.poly.iter().enumerate() {
            poly[n + 1] = c / (n + 1) as f64;
        }
        // ∫₀^y sin(ωs) ds = (1 - cos ωy)/ω ; ∫₀^y cos(ωs) ds = sin(ωy)/ω
        let mut offset = 0.0;
        let mut cos = vec![0.0; nj];
        let mut sin = vec![0.0; nj];
        for j in 1..=nj {
            let w = self.omega(j);
            let (a, b) = (Self::coef(&self.cos, j), Self::coef(&self.sin, j));
            sin[j - 1] = a / w;
            cos[j - 1] = -b / w;
            offset += b / w;
        }
        if poly.is_empty() {
            poly.push(0.0);
        }
        poly[0] += offset;
        YProfile { half_period: self.half_period, poly, cos, sin }
    }

    /// `⨍ yⁿ cos(ω_j y)` and `⨍ yⁿ sin(ω_j y)` over `[-L₀, L₀]` for `n ≤ 2`.
    fn moment_trig(&self, n: usize, j: usize) -> (f64, f64) {
        let w = self.omega(j);
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        match n {
            0 => (0.0, 0.0),
            1 => (0.0, -sign / w),
            2 => (2.0 * sign / (w * w), 0.0),
            _ => panic!("moments of y^{n} against trigonometric modes are not supported"),
        }
    }

    /// `⨍ yⁿ` over `[-L₀, L₀]`.
    fn moment_poly(&self, n: usize) -> f64 {
        if n % 2 == 1 {
            0.0
        } else {
            self.half_period.powi(n as i32) / (n + 1) as f64
        }
    }

    /// `⨍_{-L₀}^{L₀} p(y) dy`.
    pub fn mean(&self) -> f64 {
        // trigonometric modes have zero mean over a full period
        self.poly.iter().enumerate().map(|(n, c)| c * self.moment_poly(n)).sum()
    }

    /// `⨍_{-L₀}^{L₀} p(y)² dy`, in closed form.
    ///
    /// # Panics
    /// If a polynomial coefficient of degree above two multiplies a nonzero
    /// trigonometric part.
    pub fn mean_square(&self) -> f64 {
        let np = self.poly.len();
        let mut pp = 0.0;
        for a in 0..np {
            for b in 0..np {
                pp += self.poly[a] * self.poly[b] * self.moment_poly(a + b);
            }
        }
        let tt: f64 = (1..=self.modes())
            .map(|j| 0.5 * (Self::coef(&self.cos, j).powi(2) + Self::coef(&self.sin, j).powi(2)))
            .sum();
        let mut pt = 0.0;
        for (n, q) in self.poly.iter().enumerate().skip(1) {
            if *q == 0.0 {
                continue;
            }
            for j in 1..=self.modes() {
                let (mc, ms) = self.moment_trig(n, j);
                pt += q * (Self::coef(&self.cos, j) * mc + Self::coef(&self.sin, j) * ms);
            }
        }
        pp + 2.0 * pt + tt
    }

    /// The profile `y ↦ p(y + s)`.
    pub fn translate(&self, s: f64) -> YProfile {
        let np = self.poly.len();
        let mut poly = vec![0.0; np];
        // expand Σ q_n (y + s)^n with binomial coefficients
        for (n, q) in self.poly.iter().enumerate() {
            let mut binom = 1.0;
            for m in 0..=n {
                poly[m] += q * binom * s.powi((n - m) as i32);
                binom = binom * (n - m) as f64 / (m + 1) as f64;
            }
        }
        let nj = self.modes();
        let mut cos = vec![0.0; nj];
        let mut sin = vec![0.0; nj];
        for j in 1..=nj {
            let (sn, cs) = (self.omega(j) * s).sin_cos();
            let (a, b) = (Self::coef(&self.cos, j), Self::coef(&self.sin, j));
            // a cos(w(y+s)) + b sin(w(y+s))
            cos[j - 1] = a * cs + b * sn;
            sin[j - 1] = b * cs - a * sn;
        }
        YProfile { half_period: self.half_period, poly, cos, sin }
    }

    /// Values on the sample grid `y_s = -L₀ + 2L₀ s/m`.
    pub fn sample(&self, m: usize) -> Vec<f64> {
        let dy = 2.0 * self.half_period / m as f64;
        (0..m).map(|s| self.eval(-self.half_period + s as f64 * dy)).collect()
    }
}
