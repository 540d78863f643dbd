//! One function per subcommand.

use std::fmt::Write as _;

use mdtail_core::bounds::{BoundConstants, ConstantMode, CurveKind, TailCurve, q_bound_fenchel};
use mdtail_core::entropy::{
    check_entropy_condition, entropy_integral, field_constant, holder_closed_form, uniform_tail_bound,
    FieldModel, MetricEntropyModel,
};
use mdtail_core::gls::{FenchelCurve, GeneratingFunction};
use mdtail_core::mc::{
    certify, confidence_radius, coverage_experiment, field_paths_csv, geometric_grid, net_bound_curve, simulate,
    simulate_field, tail_slope, EmpiricalTailReport, SimulationPlan, SLOPE_MIN_COUNT, U_GRID_TAIL,
};
use mdtail_core::moments::{near_beta_grid, verify_equivalence, MomentCurve, Regime, ThetaRegime};
use mdtail_core::MdtParams;
use serde::Serialize;
use serde_json::json;

use crate::config::{ModeConfig, RunConfig};
use crate::error::{CliError, Context};
use crate::output::Writer;

fn u_grid(cfg: &RunConfig, params: &MdtParams) -> Result<Vec<f64>, CliError> {
    let lo = cfg.plan.u_min.unwrap_or(params.u_star());
    if lo < params.u_star() {
        return Err(CliError::Config(format!(
            "plan.u_min: must be at least the activation point u* = {}",
            params.u_star()
        )));
    }
    let hi = match cfg.plan.u_max {
        Some(h) => h,
        None => params.quantile(U_GRID_TAIL).ctx("level grid")?,
    };
    if !(hi > lo) {
        return Err(CliError::Config(format!("plan.u_max: must exceed the lower level {lo}")));
    }
    Ok(geometric_grid(lo, hi, cfg.plan.u_points))
}

fn plan(cfg: &RunConfig, params: &MdtParams, seed: u64) -> Result<SimulationPlan, CliError> {
    Ok(SimulationPlan {
        n_grid: cfg.plan.n_grid.clone().unwrap_or_else(mdtail_core::mc::default_n_grid),
        reps: cfg.plan.reps,
        u_grid: u_grid(cfg, params)?,
        seed,
        delta: cfg.plan.delta,
        budget: cfg.plan.budget,
    })
}

#[derive(Serialize)]
struct Calibration {
    seed: u64,
    reps: usize,
    dkw: f64,
}

/// Constants per the configured mode, with explicit overrides applied last.
fn constants(cfg: &RunConfig, params: &MdtParams) -> Result<(BoundConstants, Option<Calibration>), CliError> {
    let c0 = cfg.bounds.rosenthal_c0;
    let (mut c, cal) = match cfg.bounds.mode {
        ModeConfig::Pessimistic => (BoundConstants::pessimistic(params, c0).ctx("pessimistic constants")?, None),
        ModeConfig::Calibrated => {
            let seed = cfg.calibration_seed();
            let reference = simulate(params, &plan(cfg, params, seed)?).ctx("calibration run")?;
            let c = BoundConstants::calibrated(params, c0, &reference.u, &reference.upper_targets())
                .ctx("calibration")?;
            (c, Some(Calibration { seed, reps: reference.reps, dkw: reference.dkw }))
        }
    };
    if let Some(v) = cfg.bounds.moment_c1 {
        c.moment_c1 = v;
    }
    if let Some(v) = cfg.bounds.closed_c {
        c.closed = Some(v);
    }
    debug_assert_eq!(ConstantMode::from(cfg.bounds.mode), c.mode);
    Ok((c, cal))
}

fn regime_name(params: &MdtParams) -> &'static str {
    match Regime::of(params.gamma()) {
        Regime::A => "A",
        Regime::B => "B",
        Regime::C => "C",
    }
}

pub fn bound(cfg: &RunConfig, out: &mut Writer) -> Result<(), CliError> {
    let params = cfg.params()?;
    let us = u_grid(cfg, &params)?;
    let (consts, calibration) = constants(cfg, &params)?;
    let closed_kind = CurveKind::closed_for(&params);
    let closed = match consts.closed {
        Some(_) => Some(TailCurve::closed(&params, &consts, &us).ctx("closed-form bound")?),
        None => None,
    };
    let fenchel = TailCurve::fenchel(&params, &consts, &us).ctx("Fenchel bound")?;
    let witness = TailCurve::lower_witness(&params, &us).ctx("lower witness")?;
    if let Some(c) = &closed {
        out.csv("bound_closed.csv", &c.to_csv())?;
    }
    out.csv("bound_fenchel.csv", &fenchel.to_csv())?;
    out.csv("bound_witness.csv", &witness.to_csv())?;
    let details: Vec<_> = us
        .iter()
        .map(|&u| q_bound_fenchel(&params, &consts, u).map(|f| json!({"u": u, "c_shift": f.c_shift, "p_star": f.p_star})))
        .collect::<Result<_, _>>()
        .ctx("Fenchel bound")?;
    out.json(
        "bound.json",
        &json!({
            "regime": regime_name(&params),
            "closed_form": closed.as_ref().map(|_| closed_kind.name()),
            "closed_form_note": if closed.is_none() { Some("closed form needs V vanishing at infinity when gamma < -1") } else { None },
            "u_star": params.u_star(),
            "constants": consts,
            "calibration": calibration,
            "fenchel_level_shift": "bound = C1 * exp(-tau*(ln u)) = exp(-(p* ln(u / C_shift) - tau(p*))), C_shift = C1^(1/p*)",
            "fenchel_points": details,
        }),
    )
}

fn field_model(cfg: &RunConfig, params: &MdtParams) -> Result<FieldModel, CliError> {
    FieldModel::new(params, cfg.entropy.weights.clone(), cfg.entropy.m, cfg.entropy.random_phases)
        .map_err(|e| CliError::Config(format!("entropy: {e}")))
}

fn entropy_model(cfg: &RunConfig) -> Result<MetricEntropyModel, CliError> {
    let e = &cfg.entropy;
    MetricEntropyModel::holder(e.d, e.alpha, e.c5, e.c9, e.c10).map_err(|err| CliError::Config(format!("entropy: {err}")))
}

fn report_summary(report: &EmpiricalTailReport) -> serde_json::Value {
    let slope = tail_slope(report, SLOPE_MIN_COUNT).ok();
    json!({
        "statistic": report.statistic,
        "seed": report.seed,
        "reps": report.reps,
        "delta": report.delta,
        "n_grid": report.n_grid,
        "dkw": report.dkw,
        "qhat": report.qhat,
        "slope": slope,
        "n_grid_note": "the supremum over n is truncated to n_grid; per-n tails are in the CSV",
    })
}

pub fn simulate_cmd(cfg: &RunConfig, out: &mut Writer, field: bool, dump_paths: Option<usize>) -> Result<(), CliError> {
    let params = cfg.params()?;
    let plan = plan(cfg, &params, cfg.plan.seed)?;
    let report = if field {
        let model = field_model(cfg, &params)?;
        if let Some(paths) = dump_paths {
            let last = plan.n_grid.len() - 1;
            let body = field_paths_csv(&model, &plan, last, paths).ctx("field paths")?;
            out.csv("field_paths.csv", &format!("# n: {}\n{body}", plan.n_grid[last]))?;
        }
        simulate_field(&model, &plan).ctx("field simulation")?
    } else {
        if dump_paths.is_some() {
            return Err(CliError::Config("--dump-paths needs --field".into()));
        }
        simulate(&params, &plan).ctx("simulation")?
    };
    let stem = if field { "simulate_field" } else { "simulate" };
    out.csv(&format!("{stem}.csv"), &report.to_csv(None))?;
    out.json(&format!("{stem}.json"), &json!({ "plan": plan, "report": report_summary(&report) }))
}

pub fn certify_cmd(cfg: &RunConfig, out: &mut Writer, field: bool) -> Result<(), CliError> {
    let params = cfg.params()?;
    let plan = plan(cfg, &params, cfg.plan.seed)?;
    let (consts, calibration) = constants(cfg, &params)?;
    let (report, curves) = if field {
        let model = field_model(cfg, &params)?;
        let report = simulate_field(&model, &plan).ctx("field simulation")?;
        let mut curves = vec![net_bound_curve(&model, &consts, &report.u).ctx("net bound")?];
        let entropy = entropy_model(cfg)?;
        if Regime::of(params.gamma()) == Regime::A && consts.closed.is_some() {
            if let Ok(c6) = field_constant(&entropy, &params, &consts) {
                let values = report
                    .u
                    .iter()
                    .map(|&u| uniform_tail_bound(&params, c6, u.max(std::f64::consts::E)))
                    .collect::<Result<Vec<_>, _>>()
                    .ctx("uniform field bound")?;
                let mut constants = consts.to_map();
                constants.insert("C6".into(), c6);
                curves.push(TailCurve { kind: CurveKind::FieldUniform, u: report.u.clone(), values, constants });
            }
        }
        (report, curves)
    } else {
        let report = simulate(&params, &plan).ctx("simulation")?;
        let mut curves = Vec::new();
        if consts.closed.is_some() {
            curves.push(TailCurve::closed(&params, &consts, &report.u).ctx("closed-form bound")?);
        }
        curves.push(TailCurve::fenchel(&params, &consts, &report.u).ctx("Fenchel bound")?);
        curves.push(TailCurve::lower_witness(&params, &report.u).ctx("lower witness")?);
        (report, curves)
    };
    let cert = certify(&report, &curves, cfg.bounds.upper_slack).ctx("certification")?;
    let stem = if field { "certify_field" } else { "certify" };
    let mut body = String::new();
    for c in &curves {
        let _ = writeln!(body, "# curve {}: constants={}", c.kind.name(), serde_json::to_string(&c.constants).expect("constants serialize"));
    }
    body.push_str(&report.to_csv(Some(&cert)));
    out.csv(&format!("{stem}.csv"), &body)?;
    let bound_values: Vec<_> = curves.iter().map(|c| json!({"curve": c.kind.name(), "values": c.values})).collect();
    out.json(
        &format!("{stem}.json"),
        &json!({
            "pass": cert.pass,
            "certification": cert,
            "constants": consts,
            "calibration": calibration,
            "plan": plan,
            "report": report_summary(&report),
            "curves": bound_values,
        }),
    )?;
    if cert.pass {
        Ok(())
    } else {
        let failed: Vec<_> = cert.verdicts.iter().filter(|v| !v.pass).map(|v| format!("{} at {} levels", v.name, v.violations.len())).collect();
        Err(CliError::Failed(failed.join(", ")))
    }
}

fn read_sample(path: &std::path::Path) -> Result<Vec<f64>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("confidence.sample: cannot read {}: {e}", path.display())))?;
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') || t == "value" {
            continue;
        }
        let v: f64 = t
            .parse()
            .map_err(|_| CliError::Config(format!("confidence.sample: line {}: not a number: `{t}`", i + 1)))?;
        values.push(v);
    }
    if values.is_empty() {
        return Err(CliError::Config("confidence.sample: no values".into()));
    }
    Ok(values)
}

pub fn confidence(cfg: &RunConfig, out: &mut Writer) -> Result<(), CliError> {
    let params = cfg.params()?;
    let (consts, calibration) = constants(cfg, &params)?;
    let sample = match &cfg.confidence.sample {
        Some(p) => Some(read_sample(p)?),
        None => None,
    };
    let n = sample.as_ref().map_or(cfg.confidence.n, |s| s.len() as u64);
    let radius = confidence_radius(&params, &consts, n, cfg.confidence.delta).ctx("confidence radius")?;
    let estimate = sample.as_ref().map(|s| s.iter().sum::<f64>() / s.len() as f64);
    let coverage = if cfg.confidence.trials > 0 {
        Some(coverage_experiment(&params, &radius, cfg.confidence.trials, cfg.plan.seed).ctx("coverage experiment")?)
    } else {
        None
    };
    let mut csv = String::from("n,delta,radius,certificate,estimate,lower,upper\n");
    let fmt_opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let _ = writeln!(
        csv,
        "{},{},{},{},{},{},{}",
        radius.n,
        radius.delta,
        radius.radius,
        radius.certificate,
        fmt_opt(estimate),
        fmt_opt(estimate.map(|e| e - radius.radius)),
        fmt_opt(estimate.map(|e| e + radius.radius)),
    );
    out.csv("confidence.csv", &csv)?;
    out.json(
        "confidence.json",
        &json!({
            "radius": radius,
            "estimate": estimate,
            "interval": estimate.map(|e| [e - radius.radius, e + radius.radius]),
            "constants": consts,
            "calibration": calibration,
            "coverage": coverage,
        }),
    )?;
    match coverage {
        Some(c) if !c.pass => Err(CliError::Failed(format!(
            "miss rate {} exceeds {} over {} trials",
            c.miss_rate, c.allowed, c.trials
        ))),
        _ => Ok(()),
    }
}

pub fn entropy(cfg: &RunConfig, out: &mut Writer) -> Result<(), CliError> {
    let params = cfg.params()?;
    let e = &cfg.entropy;
    let condition = check_entropy_condition(e.d, e.alpha, params.beta(), params.gamma()).ctx("entropy condition")?;
    let model = entropy_model(cfg)?;
    let integral = entropy_integral(&model, params.beta(), params.gamma()).ctx("entropy integral")?;
    let closed = holder_closed_form(&model, params.beta(), params.gamma()).ctx("entropy integral")?;
    let exponent = (params.gamma() + 1.0) * e.d as f64 / (params.beta() * e.alpha);
    let mut c6 = None;
    if integral.is_finite() {
        let (consts, _) = constants(cfg, &params)?;
        let c = field_constant(&model, &params, &consts).ctx("field constant")?;
        let us = u_grid(cfg, &params)?;
        let values = us
            .iter()
            .map(|&u| uniform_tail_bound(&params, c, u.max(std::f64::consts::E)))
            .collect::<Result<Vec<_>, _>>()
            .ctx("uniform field bound")?;
        let mut constants = consts.to_map();
        constants.insert("C6".into(), c);
        let curve = TailCurve { kind: CurveKind::FieldUniform, u: us, values, constants };
        out.csv("entropy_bound.csv", &curve.to_csv())?;
        c6 = Some(c);
    }
    let mut csv = String::from("key,value\n");
    let _ = writeln!(csv, "condition,{condition}");
    let _ = writeln!(csv, "exponent,{exponent}");
    let _ = writeln!(csv, "integral,{}", integral.value());
    let _ = writeln!(csv, "closed_form,{}", closed.value());
    if let Some(c) = c6 {
        let _ = writeln!(csv, "c6,{c}");
    }
    out.csv("entropy.csv", &csv)?;
    out.json(
        "entropy.json",
        &json!({
            "condition": condition,
            "exponent": exponent,
            "integral": integral,
            "closed_form": closed,
            "c6": c6,
        }),
    )
}

pub fn moments(cfg: &RunConfig, out: &mut Writer) -> Result<(), CliError> {
    let params = cfg.params()?;
    let regime = ThetaRegime::new(&params);
    let curve = MomentCurve::compute(&params, &MomentCurve::uniform_grid(&params, cfg.moments.points)).ctx("moments")?;
    out.csv("moments.csv", &curve.to_csv(&regime).ctx("moments")?)?;
    let ps = near_beta_grid(&params, cfg.moments.equivalence_points);
    let eq = verify_equivalence(&params, &ps, cfg.moments.threshold).ctx("equivalence")?;
    out.csv("equivalence.csv", &eq.to_csv())?;
    out.json(
        "moments.json",
        &json!({
            "regime": regime_name(&params),
            "log_convex": curve.is_log_convex(1e-9),
            "norms_nondecreasing": curve.norms_nondecreasing(),
            "equivalence": {
                "pass": eq.pass,
                "min_ratio": eq.min_ratio,
                "max_ratio": eq.max_ratio,
                "spread": eq.spread,
                "threshold": eq.threshold,
                "gamma_constant": eq.gamma_constant,
                "limiting_ratio": eq.limiting_ratio,
            },
        }),
    )
}

pub fn fenchel(cfg: &RunConfig, out: &mut Writer) -> Result<(), CliError> {
    let params = cfg.params()?;
    let psi = GeneratingFunction::from_theta(&params).ctx("generating function")?;
    let f = &cfg.fenchel;
    let ys: Vec<f64> = (0..f.points)
        .map(|i| f.y_min + (f.y_max - f.y_min) * i as f64 / (f.points - 1) as f64)
        .collect();
    let curve = FenchelCurve::compute(&psi, &ys).ctx("Fenchel transform")?;
    out.csv("fenchel.csv", &curve.to_csv())?;
    out.json(
        "fenchel.json",
        &json!({
            "regime": regime_name(&params),
            "convex": curve.is_convex(1e-8),
            "nondecreasing": curve.is_nondecreasing(1e-12),
            "argmax_nondecreasing": curve.argmax_nondecreasing(1e-8),
            "working_max": psi.working_max(),
        }),
    )
}
