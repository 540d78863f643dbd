//! Acceptance suite: one line per criterion, nonzero exit on any failure.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use mdtail_core::bounds::{q_bound_closed, q_bound_fenchel, BoundConstants, TailCurve, DEFAULT_ROSENTHAL_C0};
use mdtail_core::entropy::{check_entropy_condition, entropy_integral, holder_closed_form, FieldModel, MetricEntropyModel};
use mdtail_core::gls::{tail_from_gls, GeneratingFunction};
use mdtail_core::mc::{
    certify, confidence_radius, coverage_experiment, net_bound_curve, simulate, simulate_field, tail_slope,
    EmpiricalTailReport, SimulationPlan, UpperSlack, SLOPE_MIN_COUNT,
};
use mdtail_core::moments::{near_beta_grid, verify_equivalence, EQUIVALENCE_THRESHOLD, THETA_FLOOR};
use mdtail_core::{MdtParams, SlowlyVarying};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

const SEED_A: u64 = 1;
const SEED_B: u64 = 2;
const COVERAGE_SEED: u64 = 3;

struct Outcome {
    pass: bool,
    detail: String,
}

fn law(beta: f64, gamma: f64, v: &str) -> MdtParams {
    MdtParams::new(beta, gamma, v.parse::<SlowlyVarying>().unwrap()).unwrap()
}

fn canonical() -> MdtParams {
    law(4.0, 0.0, "c(1)")
}

fn within(elapsed: Duration, limit: Option<Duration>) -> bool {
    limit.is_none_or(|l| elapsed <= l)
}

fn equivalences() -> Outcome {
    let mut pass = true;
    let mut detail = Vec::new();
    for (beta, gamma, v) in [(4.0, 0.0, "c(1)"), (3.0, -1.0, "c(1)"), (3.0, -2.0, "lp(-1)")] {
        let p = law(beta, gamma, v);
        let r = verify_equivalence(&p, &near_beta_grid(&p, 40), EQUIVALENCE_THRESHOLD).unwrap();
        pass &= r.pass;
        detail.push(format!("({beta},{gamma},{v}) ratio in [{:.4}, {:.4}]", r.min_ratio, r.max_ratio));
    }
    Outcome { pass, detail: detail.join("; ") }
}

/// Minimizes a unimodal function on `[a, b]` by golden-section search.
fn golden_min(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-12 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// `ln inf_p (kψ(p)/z)^p` by a dense grid followed by local golden refinement.
/// `zero_order` marks an order where θ vanishes and ψ sits on its floor; the
/// infimum near it is attained at the right end of the floored interval.
fn ln_chebyshev_oracle(psi: &GeneratingFunction, k: f64, z: f64, zero_order: Option<f64>) -> f64 {
    let lo = 2.0;
    let hi = psi.working_max();
    let obj = |p: f64| p * ((k / z).ln() + psi.ln_psi(p).unwrap());
    let points = 4000;
    let grid: Vec<f64> = (0..=points).map(|i| lo + (hi - lo) * i as f64 / points as f64).collect();
    let (best, _) = grid
        .iter()
        .enumerate()
        .map(|(i, &p)| (i, obj(p)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let a = grid[best.saturating_sub(1)];
    let b = grid[(best + 1).min(points)];
    let (_, mut v) = golden_min(&obj, a, b);
    v = v.min(obj(grid[best]));
    if let Some(q) = zero_order.filter(|&q| q > lo && q < hi) {
        let floored = |p: f64| p * psi.ln_psi(p).unwrap() <= THETA_FLOOR.ln() * (1.0 - 1e-12);
        let (mut l, mut r) = (q, hi);
        for _ in 0..200 {
            let m = 0.5 * (l + r);
            if floored(m) {
                l = m;
            } else {
                r = m;
            }
        }
        v = v.min(obj(l));
    }
    v.min(0.0)
}

fn chebyshev_identity() -> Outcome {
    let mut rng = StdRng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    let mut cases = 0;
    while cases < 1000 {
        let (psi, zero_order) = match cases % 4 {
            0 | 1 => {
                let beta = rng.random_range(2.2..8.0);
                let gamma = match cases % 3 {
                    0 => rng.random_range(-0.9..3.0),
                    1 => -1.0,
                    _ => rng.random_range(-3.0..-1.1),
                };
                let v = if gamma < -1.0 { "lp(-1)" } else { "c(1)" };
                let zero = (gamma == -1.0).then_some(beta - 1.0);
                (GeneratingFunction::from_theta(&law(beta, gamma, v)).unwrap(), zero)
            }
            2 => (GeneratingFunction::constant(rng.random_range(2.5..10.0), rng.random_range(1.0..5.0)).unwrap(), None),
            _ => {
                let b = rng.random_range(2.5..10.0);
                let a = rng.random_range(0.01..2.0);
                (GeneratingFunction::custom(b, move |p| a / (b - p)).unwrap(), None)
            }
        };
        let k = rng.random_range(0.1..10.0);
        let z = k * std::f64::consts::E * rng.random_range(1.0f64..1e6).powf(rng.random_range(0.0..1.0));
        let got = tail_from_gls(&psi, k, z).unwrap();
        let want = ln_chebyshev_oracle(&psi, k, z, zero_order);
        let err = if got == 0.0 {
            if want < -745.0 { 0.0 } else { f64::INFINITY }
        } else {
            (got.ln() - want).abs()
        };
        worst = worst.max(err);
        cases += 1;
    }
    Outcome { pass: worst <= 1e-9, detail: format!("{cases} cases, worst |ln ratio| = {worst:.3e}") }
}

struct Sandwich {
    outcome: Outcome,
    calibrated: BoundConstants,
    report_b: EmpiricalTailReport,
}

fn sandwich() -> Sandwich {
    let p = canonical();
    let report_a = simulate(&p, &SimulationPlan::new(&p, SEED_A).unwrap()).unwrap();
    let calibrated =
        BoundConstants::calibrated(&p, DEFAULT_ROSENTHAL_C0, &report_a.u, &report_a.upper_targets()).unwrap();
    let report_b = simulate(&p, &SimulationPlan::new(&p, SEED_B).unwrap()).unwrap();
    let curves = [
        TailCurve::closed(&p, &calibrated, &report_b.u).unwrap(),
        TailCurve::fenchel(&p, &calibrated, &report_b.u).unwrap(),
        TailCurve::lower_witness(&p, &report_b.u).unwrap(),
    ];
    let cert = certify(&report_b, &curves, UpperSlack::Zero).unwrap();
    let detail = format!(
        "reps {}, n up to {}, C1 {:.1}, C_closed {:.1}, verdicts {}",
        report_b.reps,
        report_b.n_grid.last().unwrap(),
        calibrated.moment_c1,
        calibrated.closed.unwrap(),
        cert.verdicts.iter().map(|v| format!("{}={}", v.name, if v.pass { "ok" } else { "violated" })).collect::<Vec<_>>().join(",")
    );
    Sandwich { outcome: Outcome { pass: cert.pass, detail }, calibrated, report_b }
}

fn tail_exponent(report: &EmpiricalTailReport) -> Outcome {
    match tail_slope(report, SLOPE_MIN_COUNT) {
        Ok(fit) => Outcome {
            pass: (-4.4..=-3.6).contains(&fit.slope),
            detail: format!("slope {:.4} over {} levels in [{:.3}, {:.3}]", fit.slope, fit.points, fit.u_min, fit.u_max),
        },
        Err(e) => Outcome { pass: false, detail: e.to_string() },
    }
}

fn fenchel_closed_agreement() -> Outcome {
    let p = canonical();
    let c = BoundConstants::pessimistic(&p, DEFAULT_ROSENTHAL_C0).unwrap();
    let u = 30f64.exp();
    let f = q_bound_fenchel(&p, &c, u).unwrap().value.ln();
    let q = q_bound_closed(&p, &c, u).unwrap().ln();
    let r = f / q;
    Outcome { pass: (0.95..=1.05).contains(&r), detail: format!("ln ratio {r:.5} at u = e^30") }
}

fn entropy_criterion() -> Outcome {
    let mut rng = StdRng::seed_from_u64(7);
    let mut tuples: Vec<(u32, f64, f64, f64)> = (0..200)
        .map(|_| {
            (
                rng.random_range(1..=6),
                rng.random_range(0.05..=1.0),
                rng.random_range(2.05..12.0),
                rng.random_range(-0.95..4.0),
            )
        })
        .collect();
    tuples.extend([(1, 1.0, 3.0, 2.0), (3, 1.0, 3.0, 0.0), (2, 0.5, 4.0, 0.0)]);
    let mut disagreements = 0;
    let mut finite = 0;
    for &(d, alpha, beta, gamma) in &tuples {
        let c5: f64 = rng.random_range(0.5..1.5);
        let c10 = c5.powf(d as f64 / alpha) * rng.random_range(1.0..4.0);
        let model = MetricEntropyModel::holder(d, alpha, c5, 1.0, c10).unwrap();
        let cond = check_entropy_condition(d, alpha, beta, gamma).unwrap();
        let fin = entropy_integral(&model, beta, gamma).unwrap().is_finite();
        finite += fin as usize;
        disagreements += (cond != fin) as usize;
    }
    let model = MetricEntropyModel::holder(1, 1.0, 1.0, 1.0, 1.0).unwrap();
    let quad = entropy_integral(&model, 4.0, 0.0).unwrap().value();
    let closed = holder_closed_form(&model, 4.0, 0.0).unwrap().value();
    let rel = (quad - 4.0 / 3.0).abs() / (4.0 / 3.0);
    let rel_closed = (closed - 4.0 / 3.0).abs() / (4.0 / 3.0);
    Outcome {
        pass: disagreements == 0 && rel <= 1e-8 && rel_closed <= 1e-12,
        detail: format!(
            "{} tuples ({finite} finite), {disagreements} disagreements; quadrature I = {quad:.12} (rel err {rel:.1e})",
            tuples.len()
        ),
    }
}

fn field_certification(calibrated: &BoundConstants) -> Outcome {
    let p = canonical();
    let model = FieldModel::new(&p, vec![1.0, 0.5, 0.25], 64, true).unwrap();
    let mut plan = SimulationPlan::new(&p, SEED_A).unwrap();
    plan.reps = 10_000;
    let report = simulate_field(&model, &plan).unwrap();
    let pessimistic = BoundConstants::pessimistic(&p, DEFAULT_ROSENTHAL_C0).unwrap();
    let curve = net_bound_curve(&model, &pessimistic, &report.u).unwrap();
    let cert = certify(&report, std::slice::from_ref(&curve), UpperSlack::Dkw).unwrap();
    let below_one = curve.values.iter().filter(|&&v| v < 1.0).count();
    let diag = net_bound_curve(&model, calibrated, &report.u)
        .and_then(|c| {
            let below = c.values.iter().filter(|&&v| v < 1.0).count();
            certify(&report, &[c], UpperSlack::Dkw).map(|cert| (cert.pass, below))
        })
        .map(|(ok, below)| format!("{} (below 1 at {below} levels)", if ok { "PASS" } else { "FAIL" }))
        .unwrap_or_else(|e| e.to_string());
    Outcome {
        pass: cert.pass,
        detail: format!(
            "J=3, M=64, reps {}; pessimistic net bound below 1 at {below_one}/{} levels; calibrated-constant diagnostic {diag}",
            report.reps,
            report.u.len()
        ),
    }
}

fn coverage(calibrated: &BoundConstants) -> Outcome {
    let p = canonical();
    let pessimistic = BoundConstants::pessimistic(&p, DEFAULT_ROSENTHAL_C0).unwrap();
    let mut pass = true;
    let mut detail = Vec::new();
    for (name, c) in [("calibrated", calibrated), ("pessimistic", &pessimistic)] {
        let r = confidence_radius(&p, c, 10_000, 1e-3).unwrap();
        let cov = coverage_experiment(&p, &r, 10_000, COVERAGE_SEED).unwrap();
        pass &= cov.pass;
        detail.push(format!(
            "{name}: radius {:.4}, misses {}/{} (allowed rate {:.5})",
            r.radius, cov.misses, cov.trials, cov.allowed
        ));
    }
    Outcome { pass, detail: detail.join("; ") }
}

fn run_cli(dir: &Path, config: &Path, threads: usize, args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_mdtail"))
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(dir)
        .arg("--threads")
        .arg(threads.to_string())
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("run.toml");
    std::fs::write(
        &config,
        "[law]\nbeta = 4.0\ngamma = 0.0\nv = \"c(1)\"\n[plan]\nreps = 2000\nseed = 11\n[confidence]\ntrials = 200\n[entropy]\nm = 16\n",
    )
    .unwrap();
    let commands: [&[&str]; 8] = [
        &["bound"],
        &["simulate"],
        &["simulate", "--field", "--dump-paths", "4"],
        &["certify"],
        &["confidence"],
        &["entropy"],
        &["moments"],
        &["fenchel"],
    ];
    let runs = [("first", 1), ("second", 1), ("eight-threads", 8)];
    let mut outputs = Vec::new();
    for (name, threads) in runs {
        let dir = tmp.path().join(name);
        for args in commands {
            if !run_cli(&dir, &config, threads, args) {
                return Outcome { pass: false, detail: format!("`mdtail {}` failed", args.join(" ")) };
            }
        }
        outputs.push(dir_bytes(&dir));
    }
    let same_runs = outputs[0] == outputs[1];
    let same_threads = outputs[0] == outputs[2];
    Outcome {
        pass: same_runs && same_threads && !outputs[0].is_empty(),
        detail: format!(
            "{} files; repeat identical: {same_runs}; threads 1 vs 8 identical: {same_threads}",
            outputs[0].len()
        ),
    }
}

fn report(n: usize, outcome: &Outcome, elapsed: Duration, limit: Option<Duration>) -> bool {
    let timely = within(elapsed, limit);
    let pass = outcome.pass && timely;
    let limit_note = limit.map(|l| format!(", limit {:.0?}", l)).unwrap_or_default();
    println!("criterion {n}: {}", if pass { "PASS" } else { "FAIL" });
    println!("    {} [{:.2?}{limit_note}]", outcome.detail, elapsed);
    pass
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed())
}

fn main() -> ExitCode {
    let mut all = true;

    let (o, t) = timed(equivalences);
    all &= report(1, &o, t, Some(Duration::from_secs(60)));

    let (o, t) = timed(chebyshev_identity);
    all &= report(2, &o, t, Some(Duration::from_secs(10)));

    let (s, t) = timed(sandwich);
    all &= report(3, &s.outcome, t, None);

    let (o, t) = timed(|| tail_exponent(&s.report_b));
    all &= report(4, &o, t, None);

    let (o, t) = timed(fenchel_closed_agreement);
    all &= report(5, &o, t, Some(Duration::from_secs(1)));

    let (o, t) = timed(entropy_criterion);
    all &= report(6, &o, t, None);

    let (o, t) = timed(|| field_certification(&s.calibrated));
    all &= report(7, &o, t, None);

    let (o, t) = timed(|| coverage(&s.calibrated));
    all &= report(8, &o, t, None);

    let (o, t) = timed(determinism);
    all &= report(9, &o, t, None);

    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
