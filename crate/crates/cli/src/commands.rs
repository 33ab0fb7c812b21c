//! The five subcommands.  Each writes its artifacts into the output directory
//! and prints a one-line summary on stdout.

use std::path::Path;

use anyhow::{anyhow, Context};
use serde::Serialize;
use wrinkle_core::energy::{eval_f_l, gamma_gap, write_gap_csv, EnergyBreakdown, GammaReport};
use wrinkle_core::limit_solver::{dominant_frequency, minimize_f_infty, MinimizerReport};
use wrinkle_core::measure::{disintegrate_k, eval_f_infty, read_table, write_table, MeasureTable};
use wrinkle_core::recovery::{build_recovery, RecoveryParams};

use crate::check::{break_constraint, run_suite};
use crate::config::RunConfig;
use crate::failure::Failure;
use crate::svg::{render, Panel, Scale, Series};

fn prepare_out(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))
        .map_err(Failure::usage)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(Failure::numerical)?;
    std::fs::write(path, text + "\n")
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(Failure::usage)
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display())).map_err(Failure::usage)
}

fn solve(cfg: &RunConfig) -> Result<MinimizerReport, Failure> {
    minimize_f_infty(&cfg.solver, None).map_err(|e| Failure::from(e).context("minimizing F_∞"))
}

fn not_converged(rep: &MinimizerReport) -> Failure {
    Failure::numerical(anyhow!(
        "solver did not converge within {} iterations (KKT residual {:.3e})",
        rep.iterations,
        rep.kkt_residual
    ))
}

/// The measure named in the configuration, or a fresh minimizer.
fn source_measure(cfg: &RunConfig) -> Result<(MeasureTable, String), Failure> {
    match &cfg.measure {
        Some(p) => {
            let t = read_table(p).map_err(|e| Failure::from(e).context(format!("reading measure {}", p.display())))?;
            Ok((t, p.display().to_string()))
        }
        None => {
            let rep = solve(cfg)?;
            if !rep.converged {
                return Err(not_converged(&rep));
            }
            Ok((rep.table, "minimizer".to_string()))
        }
    }
}

fn solve_svg(rep: &MinimizerReport) -> Result<String, Failure> {
    let t = &rep.table;
    let kd = disintegrate_k(t)?;
    let spectrum: Vec<(f64, f64)> = t.kgrid().values().into_iter().zip(kd.lambda).collect();
    let x = t.xgrid().nodes();
    let dominant: Vec<(f64, f64)> = x.iter().copied().zip(dominant_frequency(t)).collect();
    let balance: Vec<(f64, f64)> = x.iter().map(|&x| (x, (2.0 * x).powf(-0.5))).collect();
    Ok(render(&[
        Panel {
            title: "frequency marginal".into(),
            x_label: "k".into(),
            y_label: "λ_k".into(),
            x_scale: Scale::Linear,
            y_scale: Scale::Linear,
            series: vec![Series { label: "λ_k".into(), points: spectrum, line: true }],
        },
        Panel {
            title: "dominant frequency".into(),
            x_label: "x".into(),
            y_label: "|k|".into(),
            x_scale: Scale::Log,
            y_scale: Scale::Log,
            series: vec![
                Series { label: "k*(x)".into(), points: dominant, line: true },
                Series { label: "(2x)^(-1/2)".into(), points: balance, line: true },
            ],
        },
    ]))
}

/// `solve`: minimizer table, summary and plots.  Artifacts are written even
/// when the solver stops early; the summary then carries `converged: false`.
pub fn cmd_solve(cfg: &RunConfig) -> Result<(), Failure> {
    prepare_out(&cfg.out)?;
    let rep = solve(cfg)?;
    write_table(&rep.table, &cfg.out.join("minimizer.csv"))?;
    write_json(&cfg.out.join("summary.json"), &rep.summary())?;
    write_text(&cfg.out.join("solve.svg"), &solve_svg(&rep)?)?;
    println!(
        "F_inf = {:.6}, KKT residual {:.2e}, {} iterations, converged: {}, equipartition {:.3e}",
        rep.objective, rep.kkt_residual, rep.iterations, rep.converged, rep.equipartition.global_rel
    );
    if !rep.converged {
        return Err(not_converged(&rep).context(format!("partial artifacts in {}", cfg.out.display())));
    }
    Ok(())
}

/// `recover`: the displacement field at a single `L`.
pub fn cmd_recover(cfg: &RunConfig) -> Result<(), Failure> {
    let l = cfg.single_l()?;
    let (t, _) = source_measure(cfg)?;
    prepare_out(&cfg.out)?;
    let r = build_recovery(&t, l, &cfg.recovery).map_err(|e| Failure::from(e).context(format!("recovery at L = {l}")))?;
    let m = cfg.y_samples.unwrap_or(4 * (r.field.u.value.k.max_abs_index() as usize + 1));
    r.field.write(&cfg.out, m)?;
    let p = r.params();
    println!(
        "L = {l}: M = {}, ε = {:.4}, δ = {:.4}, λ = {:.4}, λ̄ = {:.4}, L0 = {:.4}, n = {}",
        p.m, p.epsilon, p.delta, p.lambda, p.lambda_bar, p.l0, p.n
    );
    Ok(())
}

#[derive(Serialize)]
struct EnergyRow {
    params: RecoveryParams,
    energy: EnergyBreakdown,
}

#[derive(Serialize)]
struct EnergyReport {
    source: String,
    #[serde(rename = "F_inf")]
    f_inf: f64,
    rows: Vec<EnergyRow>,
}

/// `energy`: the five terms of `F_L` for the recovery at every `L`.
pub fn cmd_energy(cfg: &RunConfig) -> Result<(), Failure> {
    let (t, source) = source_measure(cfg)?;
    prepare_out(&cfg.out)?;
    let f_inf = eval_f_infty(&t)?.value;
    let mut rows = Vec::with_capacity(cfg.l_values.len());
    for &l in &cfg.l_values {
        let r = build_recovery(&t, l, &cfg.recovery).map_err(|e| Failure::from(e).context(format!("recovery at L = {l}")))?;
        let energy = eval_f_l(&r.field, l)?;
        println!(
            "L = {l}: F_L = {:.6} (t1 {:.4}, t2 + offset {:.4}, t3 {:.1e}, t4 {:.4}, t5 {:.4})",
            energy.total,
            energy.t1,
            energy.t2 + energy.offset,
            energy.t3,
            energy.t4,
            energy.t5
        );
        rows.push(EnergyRow { params: r.params().clone(), energy });
    }
    write_json(&cfg.out.join("energy.json"), &EnergyReport { source, f_inf, rows })
}

#[derive(Serialize)]
struct GammaJson<'a> {
    source: String,
    verdict: &'static str,
    #[serde(flatten)]
    report: &'a GammaReport,
}

/// `gamma`: gap table `F_L − F_∞` over the `L` list with a log-log plot.
pub fn cmd_gamma(cfg: &RunConfig) -> Result<(), Failure> {
    let (t, source) = source_measure(cfg)?;
    prepare_out(&cfg.out)?;
    let report = gamma_gap(&t, &cfg.l_values, &cfg.recovery)?;
    write_gap_csv(&report, &cfg.out.join("gap.csv"))?;
    write_json(&cfg.out.join("gamma.json"), &GammaJson { source, verdict: report.verdict(), report: &report })?;
    let points: Vec<(f64, f64)> = report.rows.iter().map(|r| (r.params.l, r.gap)).collect();
    let svg = render(&[Panel {
        title: "recovery gap".into(),
        x_label: "L".into(),
        y_label: "F_L − F_∞".into(),
        x_scale: Scale::Log,
        y_scale: Scale::Log,
        series: vec![Series { label: "gap".into(), points, line: true }],
    }]);
    write_text(&cfg.out.join("gap.svg"), &svg)?;
    for r in &report.rows {
        println!("L = {}: F_L = {:.6}, gap = {:.6}", r.params.l, r.energy.total, r.gap);
    }
    println!("F_inf = {:.6}; {}", report.f_inf, report.verdict());
    Ok(())
}

/// `check`: the property suite; fails on any property that is not a known limit.
pub fn cmd_check(cfg: &RunConfig, break_it: bool) -> Result<(), Failure> {
    let (mut t, mut source) = source_measure(cfg)?;
    if break_it {
        t = break_constraint(&t);
        source.push_str(" (constraint broken)");
    }
    prepare_out(&cfg.out)?;
    let report = run_suite(&t, source, &cfg.l_values, &cfg.recovery);
    write_json(&cfg.out.join("check.json"), &report)?;
    for p in &report.properties {
        let status = match (p.pass, p.known_limit) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known limit)",
            (false, false) => "FAIL",
        };
        println!("{:<14} {status}  {:.2e} (≤ {:.0e})  {}", p.name, p.value, p.threshold, p.detail);
    }
    if !report.passed {
        return Err(Failure::numerical(anyhow!("failed properties: {}", report.unexpected_failures.join(", "))));
    }
    Ok(())
}
