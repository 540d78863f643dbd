//! Monte Carlo estimation of `Q(u) = sup_n P(|S_n| > u)` and certification of
//! bounds against it.
//!
//! Replication `r` of sum length index `i` reads its own counter-based stream,
//! so reports do not depend on the number of worker threads.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{q_bound_closed_scaled, BoundConstants, TailCurve, closed_domain_start};
use crate::entropy::FieldModel;
use crate::error::{domain, Error, Result};
use crate::mdt::MdtParams;
use crate::rng::{next_unit, stream_id, StreamFactory, StreamTag};

pub const DEFAULT_REPS: usize = 100_000;
pub const MIN_REPS: usize = 1000;
pub const DEFAULT_U_POINTS: usize = 64;
pub const DEFAULT_DELTA: f64 = 1e-3;
pub const DEFAULT_BUDGET: u64 = 1_000_000_000;
/// Survival level that fixes the default upper end of the level grid.
pub const U_GRID_TAIL: f64 = 1e-4;
/// Minimum exceedance count for a level to enter the slope fit.
pub const SLOPE_MIN_COUNT: u64 = 100;

/// `{1, 2, 4, …, 1024}`.
pub fn default_n_grid() -> Vec<usize> {
    (0..=10).map(|k| 1usize << k).collect()
}

/// `points` levels spaced geometrically on `[lo, hi]`.
pub fn geometric_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points < 2 {
        return vec![lo];
    }
    (0..points)
        .map(|i| lo * (hi / lo).powf(i as f64 / (points - 1) as f64))
        .collect()
}

/// Default level grid: `[u*, quantile(1e-4)]`.
pub fn default_u_grid(params: &MdtParams, points: usize) -> Result<Vec<f64>> {
    Ok(geometric_grid(params.u_star(), params.quantile(U_GRID_TAIL)?, points))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SimulationPlan {
    pub n_grid: Vec<usize>,
    pub reps: usize,
    pub u_grid: Vec<f64>,
    pub seed: u64,
    pub delta: f64,
    pub budget: u64,
}

impl SimulationPlan {
    pub fn new(params: &MdtParams, seed: u64) -> Result<Self> {
        Ok(Self {
            n_grid: default_n_grid(),
            reps: DEFAULT_REPS,
            u_grid: default_u_grid(params, DEFAULT_U_POINTS)?,
            seed,
            delta: DEFAULT_DELTA,
            budget: DEFAULT_BUDGET,
        })
    }

    /// Variables drawn per replication sweep, times `components`.
    pub fn total_draws(&self, components: usize) -> u128 {
        let per_rep: u128 = self.n_grid.iter().map(|&n| n as u128).sum();
        per_rep * self.reps as u128 * components as u128
    }

    pub fn validate(&self, components: usize) -> Result<()> {
        if self.n_grid.is_empty() || self.n_grid[0] == 0 || self.n_grid.windows(2).any(|w| w[1] <= w[0]) {
            return domain("n grid must be nonempty, positive and strictly increasing");
        }
        if self.n_grid.len() >= 1 << 16 {
            return domain("n grid is too long");
        }
        if self.reps < MIN_REPS {
            return domain(format!("reps must be at least {MIN_REPS}, got {}", self.reps));
        }
        if self.u_grid.is_empty()
            || self.u_grid[0] <= 0.0
            || self.u_grid.iter().any(|u| !u.is_finite())
            || self.u_grid.windows(2).any(|w| w[1] <= w[0])
        {
            return domain("level grid must be positive, finite and strictly increasing");
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return domain(format!("confidence level delta must lie in (0, 1), got {}", self.delta));
        }
        let total = self.total_draws(components);
        if total > self.budget as u128 {
            let per_rep = total / self.reps as u128;
            let fit = (self.budget as u128 / per_rep.max(1)) as usize;
            return Err(Error::Budget(format!(
                "plan needs {total} draws, budget is {}; reduce reps to at most {fit} or raise the budget",
                self.budget
            )));
        }
        Ok(())
    }
}

/// `sqrt(ln(2/δ) / (2 reps))`.
pub fn dkw_half_width(delta: f64, reps: usize) -> f64 {
    ((2.0 / delta).ln() / (2.0 * reps as f64)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Statistic {
    AbsSum,
    GridSup { components: usize, grid: usize },
}

#[derive(Debug, Clone, Serialize)]
pub struct EmpiricalTailReport {
    pub statistic: Statistic,
    pub seed: u64,
    pub reps: usize,
    pub delta: f64,
    pub n_grid: Vec<usize>,
    pub u: Vec<f64>,
    /// `exceed[i][k]`: replications of length `n_grid[i]` exceeding `u[k]`.
    pub exceed: Vec<Vec<u64>>,
    pub qhat: Vec<f64>,
    pub dkw: f64,
}

impl EmpiricalTailReport {
    fn from_samples(plan: &SimulationPlan, statistic: Statistic, mut rows: Vec<Vec<f64>>) -> Self {
        let exceed: Vec<Vec<u64>> = rows
            .iter_mut()
            .map(|row| {
                row.sort_unstable_by(f64::total_cmp);
                plan.u_grid
                    .iter()
                    .map(|&u| (row.len() - row.partition_point(|&x| x <= u)) as u64)
                    .collect()
            })
            .collect();
        let reps = plan.reps as f64;
        let qhat = (0..plan.u_grid.len())
            .map(|k| exceed.iter().map(|r| r[k]).max().unwrap_or(0) as f64 / reps)
            .collect();
        Self {
            statistic,
            seed: plan.seed,
            reps: plan.reps,
            delta: plan.delta,
            n_grid: plan.n_grid.clone(),
            u: plan.u_grid.clone(),
            exceed,
            qhat,
            dkw: dkw_half_width(plan.delta, plan.reps),
        }
    }

    pub fn tail(&self, n_index: usize, k: usize) -> f64 {
        self.exceed[n_index][k] as f64 / self.reps as f64
    }

    /// `Q̂ + dkw`, the level a calibrated upper bound must reach.
    pub fn upper_targets(&self) -> Vec<f64> {
        self.qhat.iter().map(|q| (q + self.dkw).min(1.0)).collect()
    }

    pub fn to_csv(&self, cert: Option<&Certification>) -> String {
        let mut out = String::from("u");
        for n in &self.n_grid {
            let _ = write!(out, ",tail_n{n}");
        }
        out.push_str(",qhat,dkw");
        if let Some(c) = cert {
            for v in &c.verdicts {
                let _ = write!(out, ",{}", v.name);
            }
        }
        out.push('\n');
        for (k, u) in self.u.iter().enumerate() {
            let _ = write!(out, "{u}");
            for i in 0..self.n_grid.len() {
                let _ = write!(out, ",{}", self.tail(i, k));
            }
            let _ = write!(out, ",{},{}", self.qhat[k], self.dkw);
            if let Some(c) = cert {
                for v in &c.verdicts {
                    let _ = write!(out, ",{}", if v.violations.contains(u) { "FAIL" } else { "PASS" });
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Per replication: `|n^{-1/2} Σ ξ_i|` for every `n` in the plan.
pub fn simulate(params: &MdtParams, plan: &SimulationPlan) -> Result<EmpiricalTailReport> {
    plan.validate(1)?;
    let factory = StreamFactory::new(plan.seed);
    let sampler = params.sampler();
    let rows = plan
        .n_grid
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let norm = (n as f64).sqrt();
            (0..plan.reps as u64)
                .into_par_iter()
                .map(|r| {
                    let mut rng = factory.stream(stream_id(StreamTag::SumReplication, i as u64, r));
                    let mut s = 0.0;
                    for _ in 0..n {
                        s += sampler.draw(&mut rng)?;
                    }
                    Ok((s / norm).abs())
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EmpiricalTailReport::from_samples(plan, Statistic::AbsSum, rows))
}

struct FieldTables {
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl FieldTables {
    fn new(model: &FieldModel) -> Self {
        let j_count = model.components();
        let mut cos = Vec::with_capacity(model.grid * j_count);
        let mut sin = Vec::with_capacity(model.grid * j_count);
        for z in model.grid_points() {
            for j in 0..j_count {
                let angle = 2.0 * PI * (j + 1) as f64 * z;
                cos.push(angle.cos());
                sin.push(angle.sin());
            }
        }
        Self { cos, sin }
    }
}

/// `(A_j, B_j)` for one replication: `Y_n(z) = Σ_j a_j (cos(2πjz) A_j − sin(2πjz) B_j)`.
fn field_coefficients(
    model: &FieldModel,
    factory: &StreamFactory,
    n_index: usize,
    rep: u64,
    n: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let j_count = model.components();
    let sampler = model.marginal.sampler();
    let mut xi_rng = factory.stream(stream_id(StreamTag::SumReplication, n_index as u64, rep));
    let mut phase_rng = factory.stream(stream_id(StreamTag::FieldPhase, n_index as u64, rep));
    let mut a = vec![0.0; j_count];
    let mut b = vec![0.0; j_count];
    for _ in 0..n {
        for j in 0..j_count {
            let x = sampler.draw(&mut xi_rng)?;
            if model.random_phases {
                let (s, c) = (2.0 * PI * next_unit(&mut phase_rng)).sin_cos();
                a[j] += x * c;
                b[j] += x * s;
            } else {
                a[j] += x;
            }
        }
    }
    let norm = (n as f64).sqrt();
    for j in 0..j_count {
        a[j] /= norm;
        b[j] /= norm;
    }
    Ok((a, b))
}

fn field_path(model: &FieldModel, tables: &FieldTables, a: &[f64], b: &[f64]) -> Vec<f64> {
    let j_count = model.components();
    (0..model.grid)
        .map(|k| {
            let mut y = 0.0;
            for j in 0..j_count {
                let idx = k * j_count + j;
                y += model.weights[j] * (tables.cos[idx] * a[j] - tables.sin[idx] * b[j]);
            }
            y
        })
        .collect()
}

/// Per replication: `max_k |Y_n(z_k)|` over the model's grid.
pub fn simulate_field(model: &FieldModel, plan: &SimulationPlan) -> Result<EmpiricalTailReport> {
    plan.validate(model.components())?;
    let factory = StreamFactory::new(plan.seed);
    let tables = FieldTables::new(model);
    let rows = plan
        .n_grid
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            (0..plan.reps as u64)
                .into_par_iter()
                .map(|r| {
                    let (a, b) = field_coefficients(model, &factory, i, r, n)?;
                    Ok(field_path(model, &tables, &a, &b).iter().fold(0.0, |m: f64, y| m.max(y.abs())))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let stat = Statistic::GridSup { components: model.components(), grid: model.grid };
    Ok(EmpiricalTailReport::from_samples(plan, stat, rows))
}

/// First `paths` replications of `Y_n` on the grid as CSV (`z, path0, path1, …`).
pub fn field_paths_csv(model: &FieldModel, plan: &SimulationPlan, n_index: usize, paths: usize) -> Result<String> {
    let Some(&n) = plan.n_grid.get(n_index) else {
        return domain(format!("n index {n_index} outside the plan"));
    };
    let factory = StreamFactory::new(plan.seed);
    let tables = FieldTables::new(model);
    let cols: Vec<Vec<f64>> = (0..paths as u64)
        .into_par_iter()
        .map(|r| {
            let (a, b) = field_coefficients(model, &factory, n_index, r, n)?;
            Ok(field_path(model, &tables, &a, &b))
        })
        .collect::<Result<_>>()?;
    let mut out = String::from("z");
    for r in 0..paths {
        let _ = write!(out, ",path{r}");
    }
    out.push('\n');
    for (k, z) in model.grid_points().iter().enumerate() {
        let _ = write!(out, "{z}");
        for c in &cols {
            let _ = write!(out, ",{}", c[k]);
        }
        out.push('\n');
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum UpperSlack {
    /// Upper bounds must exceed `Q̂ − dkw`.
    #[default]
    Dkw,
    /// Upper bounds must exceed `Q̂` itself.
    Zero,
}

#[derive(Debug, Clone, Serialize)]
pub struct CurveVerdict {
    pub name: String,
    pub lower: bool,
    pub pass: bool,
    pub violations: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Certification {
    pub dkw: f64,
    pub upper_slack: UpperSlack,
    pub verdicts: Vec<CurveVerdict>,
    pub pass: bool,
}

/// Checks each curve against `Q̂` with the confidence half-width as slack.
pub fn certify(report: &EmpiricalTailReport, curves: &[TailCurve], slack: UpperSlack) -> Result<Certification> {
    let mut verdicts = Vec::with_capacity(curves.len());
    for c in curves {
        if c.u != report.u {
            return domain(format!("curve {} is tabulated on a different level grid", c.kind.name()));
        }
        let lower = c.kind.is_lower();
        let violations: Vec<f64> = report
            .u
            .iter()
            .enumerate()
            .filter(|&(k, _)| {
                let q = report.qhat[k];
                if lower {
                    q + report.dkw < c.values[k]
                } else {
                    let s = match slack {
                        UpperSlack::Dkw => report.dkw,
                        UpperSlack::Zero => 0.0,
                    };
                    q - s > c.values[k]
                }
            })
            .map(|(_, &u)| u)
            .collect();
        verdicts.push(CurveVerdict { name: c.kind.name().into(), lower, pass: violations.is_empty(), violations });
    }
    let pass = verdicts.iter().all(|v| v.pass);
    Ok(Certification { dkw: report.dkw, upper_slack: slack, verdicts, pass })
}

/// Net-bound curve for a field model on the report's levels.
pub fn net_bound_curve(model: &FieldModel, consts: &BoundConstants, us: &[f64]) -> Result<TailCurve> {
    let values = us
        .iter()
        .map(|&u| crate::entropy::finite_net_union_bound(model, consts, u).map(|b| b.value))
        .collect::<Result<_>>()?;
    let mut constants = consts.to_map();
    constants.insert("M".into(), model.grid as f64);
    Ok(TailCurve { kind: crate::bounds::CurveKind::NetUnion, u: us.to_vec(), values, constants })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConfidenceRadius {
    pub n: u64,
    pub delta: f64,
    pub radius: f64,
    /// Bound on `P(|a_n − a| > radius)`, at most `delta`.
    pub certificate: f64,
}

/// Smallest `u` with `q_closed(√n · u) ≤ δ`, found by expansion and bisection.
pub fn confidence_radius(params: &MdtParams, consts: &BoundConstants, n: u64, delta: f64) -> Result<ConfidenceRadius> {
    if n == 0 {
        return domain("sample size must be at least 1");
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return domain(format!("delta must lie in (0, 1], got {delta}"));
    }
    let q = |v: f64| q_bound_closed_scaled(params, consts, 1.0, v);
    let root_n = (n as f64).sqrt();
    let lo0 = closed_domain_start(params);
    if q(lo0)? <= delta {
        return Ok(ConfidenceRadius { n, delta, radius: lo0 / root_n, certificate: q(lo0)? });
    }
    let (mut lo, mut hi) = (lo0, lo0 * 2.0);
    const CEILING: f64 = 1e300;
    while q(hi)? > delta {
        lo = hi;
        hi *= 2.0;
        if hi > CEILING {
            return Err(Error::Numeric {
                message: format!("bound never drops below delta = {delta} on [{lo0}, {CEILING}]"),
                achieved: q(CEILING)?,
            });
        }
    }
    while hi - lo > 1e-12 * hi {
        let mid = 0.5 * (lo + hi);
        if q(mid)? <= delta {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(ConfidenceRadius { n, delta, radius: hi / root_n, certificate: q(hi)? })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoverageReport {
    pub trials: u64,
    pub misses: u64,
    pub miss_rate: f64,
    /// `δ + 3 sqrt(δ / trials)`.
    pub allowed: f64,
    pub pass: bool,
}

/// Frequency of `|a_n| > radius` over fresh samples of size `n` with `a = 0`.
pub fn coverage_experiment(params: &MdtParams, radius: &ConfidenceRadius, trials: u64, seed: u64) -> Result<CoverageReport> {
    if trials == 0 {
        return domain("at least one trial is needed");
    }
    let factory = StreamFactory::new(seed);
    let sampler = params.sampler();
    let n = radius.n;
    let misses: Vec<bool> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = factory.stream(stream_id(StreamTag::Coverage, 0, t));
            let mut s = 0.0;
            for _ in 0..n {
                s += sampler.draw(&mut rng)?;
            }
            Ok((s / n as f64).abs() > radius.radius)
        })
        .collect::<Result<_>>()?;
    let misses = misses.iter().filter(|&&m| m).count() as u64;
    let miss_rate = misses as f64 / trials as f64;
    let allowed = radius.delta + 3.0 * (radius.delta / trials as f64).sqrt();
    Ok(CoverageReport { trials, misses, miss_rate, allowed, pass: miss_rate <= allowed })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub points: usize,
    pub u_min: f64,
    pub u_max: f64,
}

/// Least-squares slope of `ln Q̂` against `ln u` over levels with at least
/// `min_count` exceedances.
pub fn tail_slope(report: &EmpiricalTailReport, min_count: u64) -> Result<SlopeFit> {
    let pts: Vec<(f64, f64)> = report
        .u
        .iter()
        .zip(&report.qhat)
        .filter(|&(_, &q)| (q * report.reps as f64).round() as u64 >= min_count && q > 0.0)
        .map(|(&u, &q)| (u.ln(), q.ln()))
        .collect();
    if pts.len() < 2 {
        return domain(format!("fewer than two levels with at least {min_count} exceedances"));
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    Ok(SlopeFit {
        slope,
        intercept: my - slope * mx,
        points: pts.len(),
        u_min: pts[0].0.exp(),
        u_max: pts[pts.len() - 1].0.exp(),
    })
}
