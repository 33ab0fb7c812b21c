//! The property suite behind `wrinkle check`.
//!
//! Every property is evaluated on the configured measure (solved or loaded)
//! and reported with its measured value and threshold.  Equipartition is
//! marked as a known discretization limit: its residual does not reach the
//! threshold on any frequency comb within desk-scale reach, so a failure there
//! is reported but does not fail the run on its own.

use serde::Serialize;
use wrinkle_core::limit_solver::equipartition_residual;
use wrinkle_core::measure::{bin_frequencies, check_feasible, eval_f_infty, MeasureTable};
use wrinkle_core::recovery::{build_recovery, mollified_mass, Recovery, RecoveryConfig};
use wrinkle_core::spectral::{plancherel_norm, synthesize, CoefficientSet, YGrid};

/// Relative amount by which `--break-constraint` inflates one row of the table.
pub const BREAK_FACTOR: f64 = 1.05;

#[derive(Debug, Clone, Serialize)]
pub struct PropertyResult {
    pub name: &'static str,
    pub pass: bool,
    /// A failure here is expected at desk scale and does not fail the run.
    pub known_limit: bool,
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub source: String,
    #[serde(rename = "L")]
    pub l_values: Vec<f64>,
    pub properties: Vec<PropertyResult>,
    pub failures: Vec<String>,
    pub unexpected_failures: Vec<String>,
    pub passed: bool,
}

fn result(name: &'static str, value: f64, threshold: f64, detail: String) -> PropertyResult {
    PropertyResult { name, pass: value <= threshold, known_limit: false, value, threshold, detail }
}

fn errored(name: &'static str, threshold: f64, e: impl std::fmt::Display) -> PropertyResult {
    PropertyResult { name, pass: false, known_limit: false, value: f64::NAN, threshold, detail: format!("error: {e}") }
}

/// Multiply the middle row of the table by [`BREAK_FACTOR`], violating `Σ_k b = 2x`.
pub fn break_constraint(t: &MeasureTable) -> MeasureTable {
    let mut b = t.values().to_vec();
    let nk = t.nk();
    let i = t.nx() / 2;
    for v in &mut b[i * nk..(i + 1) * nk] {
        *v *= BREAK_FACTOR;
    }
    t.with_values(b).expect("same shape")
}

/// Sampled mean square of `u = Σ √b_k e_k` against the Plancherel sum.
fn plancherel(t: &MeasureTable) -> PropertyResult {
    const TOL: f64 = 1e-10;
    let run = || -> wrinkle_core::Result<f64> {
        let a = t.values().iter().map(|v| v.max(0.0).sqrt()).collect();
        let c = CoefficientSet::new(t.xgrid().clone(), t.kgrid().clone(), a, None)?;
        let y = YGrid::for_kgrid(t.kgrid())?;
        let s = synthesize(&c, &y)?;
        let norms = plancherel_norm(&c, 0, 0)?;
        let mut worst = 0.0f64;
        for (i, n) in norms.iter().enumerate() {
            let ms = s.row(i).iter().map(|v| v * v).sum::<f64>() / y.len() as f64;
            worst = worst.max((ms - n).abs() / n.max(1.0));
        }
        Ok(worst)
    };
    match run() {
        Ok(v) => result("plancherel", v, TOL, format!("max relative |mean u² − Σ a²| over {} rows", t.nx())),
        Err(e) => errored("plancherel", TOL, e),
    }
}

fn constraint(t: &MeasureTable, l0: f64) -> PropertyResult {
    const TOL: f64 = 1e-10;
    let own = check_feasible(t, TOL);
    let binned = match bin_frequencies(t, l0, None) {
        Ok(b) => check_feasible(&b, TOL).max_constraint_residual,
        Err(e) => return errored("constraint", TOL, e),
    };
    let mut r = result(
        "constraint",
        own.max_constraint_residual.max(binned),
        TOL,
        format!(
            "max |Σ_k b − 2x|: table {:.1e}, binned with L0 = {l0} {binned:.1e}; min entry {:.1e}",
            own.max_constraint_residual, own.min_value
        ),
    );
    r.pass &= own.feasible;
    r
}

fn homogeneity(t: &MeasureTable) -> PropertyResult {
    const TOL: f64 = 1e-12;
    let run = || -> wrinkle_core::Result<f64> {
        let f = eval_f_infty(t)?.value;
        let mut worst = 0.0f64;
        for alpha in [0.5, 2.0, 10.0] {
            let fa = eval_f_infty(&t.scaled(alpha)?)?.value;
            worst = worst.max((fa - alpha * f).abs() / (alpha * f).abs().max(f64::MIN_POSITIVE));
        }
        Ok(worst)
    };
    match run() {
        Ok(v) => result("homogeneity", v, TOL, "max relative |F(αμ) − αF(μ)| for α ∈ {0.5, 2, 10}".into()),
        Err(e) => errored("homogeneity", TOL, e),
    }
}

/// Convexity along the segment from the table to the uniform table on its grid.
fn convexity(t: &MeasureTable) -> PropertyResult {
    const TOL: f64 = 1e-12;
    let run = || -> wrinkle_core::Result<f64> {
        let nk = t.nk() as f64;
        let u = MeasureTable::from_fn(t.xgrid().clone(), t.kgrid().clone(), |x, _| 2.0 * x / nk)?;
        let (fa, fb) = (eval_f_infty(t)?.value, eval_f_infty(&u)?.value);
        let mut worst = f64::NEG_INFINITY;
        for s in [0.1, 0.25, 0.5, 0.75, 0.9] {
            let mix = t.values().iter().zip(u.values()).map(|(p, q)| (1.0 - s) * p + s * q).collect();
            let fm = eval_f_infty(&t.with_values(mix)?)?.value;
            let chord = (1.0 - s) * fa + s * fb;
            worst = worst.max((fm - chord) / chord);
        }
        Ok(worst)
    };
    match run() {
        Ok(v) => result("convexity", v, TOL, "max relative excess of F over the chord towards the uniform table".into()),
        Err(e) => errored("convexity", TOL, e),
    }
}

fn amplitude_identity(recoveries: &[(f64, Result<Recovery, String>)]) -> PropertyResult {
    const TOL: f64 = 1e-12;
    let mut worst = 0.0f64;
    for (l, r) in recoveries {
        match r {
            Ok(r) => {
                let m = &r.mollified;
                for (x, s) in m.x.nodes().iter().zip(m.sums()) {
                    worst = worst.max((s - mollified_mass(*x, m.epsilon, r.stage.truncated.lambda_bar)).abs());
                }
            }
            Err(e) => return errored("mollified_mass", TOL, format!("L = {l}: {e}")),
        }
    }
    result("mollified_mass", worst, TOL, "max |Σ_k a − (2x·1{x≥0} + ε(e^(−|x|/ε) − e^((x−λ̄)/ε)))| over every L".into())
}

fn periodicity(recoveries: &[(f64, Result<Recovery, String>)]) -> PropertyResult {
    const TOL: f64 = 1e-8;
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for (l, r) in recoveries {
        let r = match r {
            Ok(r) => r,
            Err(e) => return errored("periodicity", TOL, format!("L = {l}: {e}")),
        };
        let m = 4 * (r.field.u.value.k.max_abs_index() as usize + 1);
        match r.field.periodicity_defects(m) {
            Ok((d1, d2)) => {
                worst = worst.max(d1.max(d2));
                parts.push(format!("L = {l}: {:.1e}", d1.max(d2)));
            }
            Err(e) => return errored("periodicity", TOL, format!("L = {l}: {e}")),
        }
    }
    result("periodicity", worst, TOL, format!("relative defect of w1, w2 over one period ({})", parts.join(", ")))
}

fn equipartition(t: &MeasureTable) -> PropertyResult {
    const GLOBAL: f64 = 1e-2;
    const PER_K: f64 = 3e-2;
    let mut r = match equipartition_residual(t) {
        Ok(e) => PropertyResult {
            name: "equipartition",
            pass: e.global_rel <= GLOBAL && e.max_active <= PER_K,
            known_limit: false,
            value: e.global_rel,
            threshold: GLOBAL,
            detail: format!("global residual {:.3e} F (≤ {GLOBAL}), max active per-k {:.3e} (≤ {PER_K})", e.global_rel, e.max_active),
        },
        Err(e) => errored("equipartition", GLOBAL, e),
    };
    r.known_limit = true;
    r
}

/// Run every property on `t`, building the recovery at each `L`.
pub fn run_suite(t: &MeasureTable, source: String, ls: &[f64], cfg: &RecoveryConfig) -> CheckReport {
    let recoveries: Vec<(f64, Result<Recovery, String>)> =
        ls.iter().map(|&l| (l, build_recovery(t, l, cfg).map_err(|e| e.to_string()))).collect();
    let l0 = recoveries.iter().find_map(|(_, r)| r.as_ref().ok().map(|r| r.params().l0)).unwrap_or(2.0);
    let properties = vec![
        plancherel(t),
        constraint(t, l0),
        homogeneity(t),
        convexity(t),
        amplitude_identity(&recoveries),
        equipartition(t),
        periodicity(&recoveries),
    ];
    let failures: Vec<String> = properties.iter().filter(|p| !p.pass).map(|p| p.name.to_string()).collect();
    let unexpected_failures: Vec<String> =
        properties.iter().filter(|p| !p.pass && !p.known_limit).map(|p| p.name.to_string()).collect();
    CheckReport {
        source,
        l_values: ls.to_vec(),
        passed: unexpected_failures.is_empty(),
        properties,
        failures,
        unexpected_failures,
    }
}
