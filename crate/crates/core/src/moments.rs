//! Absolute moments of the completed law and the three-regime envelope θ.
//!
//! Moments come from the tail by `E|ξ|^p = p ∫ x^{p-1} P(|ξ| > x) dx`. With
//! no mass below `u*` this is `u*^p + p ∫_{ln u*}^∞ e^{pt} S(e^t) dt`, and the
//! integrand decays like `e^{-(β-p)t} t^γ V(t)`, so the semi-infinite map
//! uses the decay length `1/(β - p)`.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{domain, Result};
use crate::mdt::MdtParams;
use crate::quad::{integrate_to_infinity, Tolerance};

/// Smallest allowed gap between a moment order and `β`.
pub const MIN_GAP: f64 = 1e-3;
/// Lower floor applied to θ before roots and logarithms.
pub const THETA_FLOOR: f64 = 1e-8;

const MOMENT_REL_TOL: f64 = 1e-11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Regime {
    /// γ > −1
    A,
    /// γ = −1
    B,
    /// γ < −1
    C,
}

impl Regime {
    pub fn of(gamma: f64) -> Self {
        if gamma > -1.0 {
            Regime::A
        } else if gamma == -1.0 {
            Regime::B
        } else {
            Regime::C
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ThetaRegime {
    regime: Regime,
    params: MdtParams,
}

impl ThetaRegime {
    pub fn new(params: &MdtParams) -> Self {
        Self { regime: Regime::of(params.gamma()), params: params.clone() }
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    pub fn params(&self) -> &MdtParams {
        &self.params
    }

    /// `ln θ(p)` after the floor.
    pub fn ln_theta(&self, p: f64) -> Result<f64> {
        let beta = self.params.beta();
        if !(p.is_finite() && p >= 2.0 && p < beta) {
            return domain(format!("theta needs p in [2, {beta}), got {p}"));
        }
        Ok(self.ln_theta_unchecked(p))
    }

    pub(crate) fn ln_theta_unchecked(&self, p: f64) -> f64 {
        let gap = self.params.beta() - p;
        let ln_v = self.params.v().ln_at(1.0 / gap);
        let raw = match self.regime {
            Regime::A => -(self.params.gamma() + 1.0) * gap.ln() + ln_v,
            Regime::B => gap.ln().abs().ln() + ln_v,
            Regime::C => ln_v,
        };
        raw.max(THETA_FLOOR.ln())
    }

    pub fn theta(&self, p: f64) -> Result<f64> {
        self.ln_theta(p).map(f64::exp)
    }

    /// `ψ(p) = θ(p)^{1/p}`.
    pub fn natural_psi(&self, p: f64) -> Result<f64> {
        Ok((self.ln_theta(p)? / p).exp())
    }

    /// `Γ(γ + 1)`, the limiting constant of the regime-A asymptotics.
    pub fn gamma_constant(&self) -> Option<f64> {
        match self.regime {
            Regime::A => Some(statrs::function::gamma::gamma(self.params.gamma() + 1.0)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentEstimate {
    pub value: f64,
    pub error: f64,
}

/// `E|ξ|^p` for `p ∈ [2, β − MIN_GAP]`.
pub fn moment_from_tail(params: &MdtParams, p: f64) -> Result<MomentEstimate> {
    if !(p >= 2.0) {
        return domain(format!("moment order must be >= 2, got {p}"));
    }
    raw_moment(params, p)
}

/// `E|ξ|^p` for any `p ∈ [0, β − MIN_GAP]`; orders below 2 are diagnostics.
pub fn raw_moment(params: &MdtParams, p: f64) -> Result<MomentEstimate> {
    let beta = params.beta();
    if !(p.is_finite() && p >= 0.0) {
        return domain(format!("moment order must be finite and >= 0, got {p}"));
    }
    if beta - p < MIN_GAP * (1.0 - 1e-9) {
        return domain(format!(
            "moment order {p} is closer than {MIN_GAP} to beta = {beta}"
        ));
    }
    moment_of_completed_tail(params.u_star(), beta, |t| params.log_survival_at(t), p)
}

/// Moment of a law with no mass below `u_star` and survival
/// `exp(log_survival(ln x))` beyond it; `decay` is the polynomial tail index.
pub fn moment_of_completed_tail<F>(
    u_star: f64,
    decay: f64,
    log_survival: F,
    p: f64,
) -> Result<MomentEstimate>
where
    F: Fn(f64) -> f64,
{
    if !(u_star > 0.0) || !(decay > p) {
        return domain(format!("need u_star > 0 and decay > p (u_star={u_star}, decay={decay}, p={p})"));
    }
    let head = u_star.powf(p);
    if p == 0.0 {
        return Ok(MomentEstimate { value: head, error: 0.0 });
    }
    let t_star = u_star.ln();
    let tail = integrate_to_infinity(
        |t| (p * t + log_survival(t)).exp(),
        t_star,
        1.0 / (decay - p),
        Tolerance { abs: 0.0, rel: MOMENT_REL_TOL, ..Tolerance::default() },
    )?;
    Ok(MomentEstimate { value: head + p * tail.value, error: p * tail.error })
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentCurve {
    pub ps: Vec<f64>,
    pub values: Vec<f64>,
    pub errors: Vec<f64>,
}

impl MomentCurve {
    pub fn compute(params: &MdtParams, ps: &[f64]) -> Result<Self> {
        let est: Vec<MomentEstimate> = ps
            .par_iter()
            .map(|&p| moment_from_tail(params, p))
            .collect::<Result<_>>()?;
        Ok(Self {
            ps: ps.to_vec(),
            values: est.iter().map(|e| e.value).collect(),
            errors: est.iter().map(|e| e.error).collect(),
        })
    }

    /// `points` orders spread uniformly over `[2, β − MIN_GAP]`.
    pub fn uniform_grid(params: &MdtParams, points: usize) -> Vec<f64> {
        let hi = params.beta() - MIN_GAP;
        if points < 2 {
            return vec![2.0];
        }
        (0..points)
            .map(|i| 2.0 + (hi - 2.0) * i as f64 / (points - 1) as f64)
            .collect()
    }

    /// `p ↦ ln E|ξ|^p` convex on the grid (secant slopes nondecreasing).
    pub fn is_log_convex(&self, tol: f64) -> bool {
        let logs: Vec<f64> = self.values.iter().map(|v| v.ln()).collect();
        let slopes: Vec<f64> = (1..logs.len())
            .map(|i| (logs[i] - logs[i - 1]) / (self.ps[i] - self.ps[i - 1]))
            .collect();
        slopes.windows(2).enumerate().all(|(i, w)| {
            // Secant slopes compared on a common scale of one grid step.
            let h = self.ps[i + 2] - self.ps[i];
            (w[1] - w[0]) * h >= -tol
        })
    }

    /// `p ↦ (E|ξ|^p)^{1/p}` nondecreasing on the grid.
    pub fn norms_nondecreasing(&self) -> bool {
        let norms: Vec<f64> = self.ps.iter().zip(&self.values).map(|(p, m)| m.powf(1.0 / p)).collect();
        norms.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-12))
    }

    pub fn to_csv(&self, regime: &ThetaRegime) -> Result<String> {
        let mut out = String::from("p,moment,theta,ratio,quad_error\n");
        for ((&p, &m), &e) in self.ps.iter().zip(&self.values).zip(&self.errors) {
            let th = regime.theta(p)?;
            let _ = writeln!(out, "{p},{m},{th},{},{e}", m / th);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceRow {
    pub p: f64,
    pub moment: f64,
    pub theta: f64,
    pub ratio: f64,
    pub quad_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceReport {
    pub regime: Regime,
    pub rows: Vec<EquivalenceRow>,
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub spread: f64,
    pub threshold: f64,
    pub pass: bool,
    /// `Γ(γ+1)` in regime A; reported, not asserted.
    pub gamma_constant: Option<f64>,
    /// Ratio at the grid point closest to `β`.
    pub limiting_ratio: f64,
}

impl EquivalenceReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("p,moment,theta,ratio,quad_error\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{}", r.p, r.moment, r.theta, r.ratio, r.quad_error);
        }
        out
    }
}

/// Default equivalence threshold on `max r / min r`.
pub const EQUIVALENCE_THRESHOLD: f64 = 50.0;

/// Orders `β − g` with gaps `g` geometric from 0.5 down to `MIN_GAP`.
pub fn near_beta_grid(params: &MdtParams, points: usize) -> Vec<f64> {
    let beta = params.beta();
    let lo_gap: f64 = 0.5f64.min(beta - 2.0);
    (0..points.max(2))
        .map(|i| {
            let s = i as f64 / (points.max(2) - 1) as f64;
            beta - lo_gap * (MIN_GAP / lo_gap).powf(s)
        })
        .collect()
}

/// Tabulates `E|ξ|^p / θ(p)` near `β` and checks the ratio stays in a band.
pub fn verify_equivalence(
    params: &MdtParams,
    ps: &[f64],
    threshold: f64,
) -> Result<EquivalenceReport> {
    let beta = params.beta();
    if ps.is_empty() {
        return domain("equivalence grid is empty");
    }
    let lo = (beta - 0.5).max(2.0);
    if let Some(&bad) = ps.iter().find(|&&p| p < lo - 1e-12 || p > beta - MIN_GAP + 1e-12) {
        return domain(format!("order {bad} outside [{lo}, {}]", beta - MIN_GAP));
    }
    let regime = ThetaRegime::new(params);
    let curve = MomentCurve::compute(params, ps)?;
    let mut rows = Vec::with_capacity(ps.len());
    for (i, &p) in ps.iter().enumerate() {
        let theta = regime.theta(p)?;
        rows.push(EquivalenceRow {
            p,
            moment: curve.values[i],
            theta,
            ratio: curve.values[i] / theta,
            quad_error: curve.errors[i],
        });
    }
    let min_ratio = rows.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
    let max_ratio = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    let spread = max_ratio / min_ratio;
    let limiting_ratio = rows
        .iter()
        .max_by(|a, b| a.p.total_cmp(&b.p))
        .map(|r| r.ratio)
        .unwrap_or(f64::NAN);
    Ok(EquivalenceReport {
        regime: regime.regime(),
        rows,
        min_ratio,
        max_ratio,
        spread,
        threshold,
        pass: spread.is_finite() && spread <= threshold,
        gamma_constant: regime.gamma_constant(),
        limiting_ratio,
    })
}
