//! Moment bounds for normalized sums and the resulting tail bounds on
//! `Q(u) = sup_n P(|S_n| > u)`.
//!
//! Every constant is explicit. Pessimistic constants follow from the
//! Rosenthal envelope; calibrated constants are the smallest ones that
//! dominate a reference simulation.

use std::collections::BTreeMap;
use std::f64::consts::E;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, precondition, Result};
use crate::gls::{fenchel, GeneratingFunction};
use crate::mdt::MdtParams;
use crate::moments::{moment_from_tail, Regime, ThetaRegime, MIN_GAP};

/// Default Rosenthal base constant `c0`.
pub const DEFAULT_ROSENTHAL_C0: f64 = 2.0;
/// Safety factor on grid-computed suprema.
pub const PESSIMISTIC_MARGIN: f64 = 1.05;
/// Upper end of the log-scale sweep used for the closed-form constant.
const CLOSED_SWEEP_MAX_T: f64 = 700.0;
const SWEEP_POINTS: usize = 200;

/// `K_R(p) = (c0 · p / ln max(p, 2))^p`.
pub fn rosenthal_constant(p: f64, c0: f64) -> f64 {
    (c0 * p / p.max(2.0).ln()).powf(p)
}

/// Bound on `sup_n E|S_n|^p` from `E ξ²` and `E|ξ|^p`.
pub fn rosenthal_sum_moment(params: &MdtParams, p: f64, m2: f64, mp: f64, c0: f64) -> Result<f64> {
    let hi = params.beta() - MIN_GAP;
    if !(p >= 2.0 && p <= hi * (1.0 + 1e-12)) {
        return domain(format!("sum moment order must lie in [2, {hi}], got {p}"));
    }
    if !(m2 > 0.0 && mp > 0.0) {
        return domain("moments must be positive");
    }
    Ok(rosenthal_constant(p, c0) * m2.powf(p / 2.0).max(mp))
}

/// `p ↦` Rosenthal bound on `sup_n E|S_n|^p` for a fixed law.
#[derive(Debug, Clone)]
pub struct SumMomentEnvelope {
    params: MdtParams,
    c0: f64,
    m2: f64,
}

impl SumMomentEnvelope {
    pub fn new(params: &MdtParams, c0: f64) -> Result<Self> {
        if !(c0.is_finite() && c0 > 0.0) {
            return domain(format!("Rosenthal constant must be positive, got {c0}"));
        }
        let m2 = moment_from_tail(params, 2.0)?.value;
        Ok(Self { params: params.clone(), c0, m2 })
    }

    pub fn second_moment(&self) -> f64 {
        self.m2
    }

    pub fn eval(&self, p: f64) -> Result<f64> {
        let mp = moment_from_tail(&self.params, p)?.value;
        rosenthal_sum_moment(&self.params, p, self.m2, mp, self.c0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstantMode {
    PessimisticAnalytic,
    Calibrated,
}

/// The constants of both bound forms.
///
/// `moment_c1` is the `C1` in `sup_n E|S_n|^p ≤ C1 θ(p)`; `closed` multiplies
/// the closed-form shape. `closed` is absent when the closed form does not
/// apply to the law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub mode: ConstantMode,
    pub rosenthal_c0: f64,
    pub moment_c1: f64,
    pub closed: Option<f64>,
}

impl BoundConstants {
    /// Constants derived from the Rosenthal envelope.
    pub fn pessimistic(params: &MdtParams, c0: f64) -> Result<Self> {
        let env = SumMomentEnvelope::new(params, c0)?;
        let theta = ThetaRegime::new(params);
        let beta = params.beta();
        let hi = beta - MIN_GAP;
        let mut ps: Vec<f64> =
            (0..SWEEP_POINTS).map(|i| 2.0 + (hi - 2.0) * i as f64 / (SWEEP_POINTS - 1) as f64).collect();
        ps.extend(crate::moments::near_beta_grid(params, 40));
        if theta.regime() == Regime::B && beta - 1.0 >= 2.0 {
            ps.push(beta - 1.0);
        }
        let ln_ratios: Vec<f64> = ps
            .par_iter()
            .map(|&p| Ok(env.eval(p)?.ln() - theta.ln_theta(p)?))
            .collect::<Result<_>>()?;
        let ln_c1 = ln_ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let moment_c1 = PESSIMISTIC_MARGIN * ln_c1.exp();
        let mut consts = Self { mode: ConstantMode::PessimisticAnalytic, rosenthal_c0: c0, moment_c1, closed: None };
        consts.closed = pessimistic_closed(params, &consts)?;
        Ok(consts)
    }

    /// Smallest constants whose bounds dominate `targets` on `us`.
    ///
    /// `targets[i]` is the value the bounds must reach at `us[i]`, typically
    /// the empirical `Q̂` plus its confidence half-width.
    pub fn calibrated(params: &MdtParams, c0: f64, us: &[f64], targets: &[f64]) -> Result<Self> {
        if us.len() != targets.len() || us.is_empty() {
            return domain("calibration needs matching nonempty level and target lists");
        }
        let psi = GeneratingFunction::from_theta(params)?;
        let start = closed_domain_start(params);
        let mut ln_c1 = f64::NEG_INFINITY;
        let mut ln_closed = f64::NEG_INFINITY;
        for (&u, &q) in us.iter().zip(targets) {
            if !(u >= E) || q <= 0.0 {
                continue;
            }
            let q = q.min(1.0);
            let tau_star = fenchel(&psi, u.ln())?.value;
            ln_c1 = ln_c1.max(q.ln() + tau_star);
            if u >= start {
                if let Some(ls) = ln_closed_shape(params, u) {
                    ln_closed = ln_closed.max(q.ln() - ls);
                }
            }
        }
        if ln_c1 == f64::NEG_INFINITY {
            return domain("no calibration level at or above e with a positive target");
        }
        let closed = if closed_applies(params) && ln_closed > f64::NEG_INFINITY {
            Some(ln_closed.exp())
        } else {
            None
        };
        Ok(Self { mode: ConstantMode::Calibrated, rosenthal_c0: c0, moment_c1: ln_c1.exp().max(f64::MIN_POSITIVE), closed })
    }

    pub fn to_map(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        m.insert("rosenthal_c0".into(), self.rosenthal_c0);
        m.insert("C1".into(), self.moment_c1);
        if let Some(c) = self.closed {
            m.insert("C_closed".into(), c);
        }
        m
    }
}

fn closed_applies(params: &MdtParams) -> bool {
    Regime::of(params.gamma()) != Regime::C || params.v().limit_at_infinity_is_zero()
}

/// First level at which the closed form is defined.
pub fn closed_domain_start(params: &MdtParams) -> f64 {
    match Regime::of(params.gamma()) {
        Regime::B => E.powf(E),
        _ => E,
    }
}

/// `ln` of the closed-form shape without its constant.
fn ln_closed_shape(params: &MdtParams, u: f64) -> Option<f64> {
    let lu = u.ln();
    let ln_v = params.v().ln_at(lu);
    let base = -params.beta() * lu + ln_v;
    match Regime::of(params.gamma()) {
        Regime::A => Some(base + (params.gamma() + 1.0) * lu.ln()),
        Regime::B => Some(base + lu.ln().ln()),
        Regime::C => closed_applies(params).then_some(base),
    }
}

/// `ln min_p C1 θ(p) u^{-p} = ln C1 − τ*(ln u)`.
fn ln_fenchel_bound(psi: &GeneratingFunction, c1: f64, u: f64) -> Result<FenchelBound> {
    let f = fenchel(psi, u.ln())?;
    let ln_c1 = c1.ln();
    Ok(FenchelBound { value: ln_c1 - f.value, c_shift: (ln_c1 / f.argmax).exp(), p_star: f.argmax })
}

fn pessimistic_closed(params: &MdtParams, consts: &BoundConstants) -> Result<Option<f64>> {
    if !closed_applies(params) {
        return Ok(None);
    }
    let psi = GeneratingFunction::from_theta(params)?;
    let t0 = closed_domain_start(params).ln();
    let ts: Vec<f64> = (0..SWEEP_POINTS)
        .map(|i| t0 * (CLOSED_SWEEP_MAX_T / t0).powf(i as f64 / (SWEEP_POINTS - 1) as f64))
        .collect();
    let gaps: Vec<f64> = ts
        .par_iter()
        .map(|&t| {
            let u = t.exp();
            let f = ln_fenchel_bound(&psi, consts.moment_c1, u)?;
            Ok(f.value - ln_closed_shape(params, u).expect("closed form applies"))
        })
        .collect::<Result<_>>()?;
    let ln_c = gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(Some(PESSIMISTIC_MARGIN * ln_c.exp()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FenchelBound {
    /// The bound (log scale inside this module, probability outside).
    pub value: f64,
    /// `C1^{1/p*}`, the factor folded into the level.
    pub c_shift: f64,
    pub p_star: f64,
}

/// `C1 · exp(−τ*(ln u))`, clamped to `[0, 1]`.
///
/// This is the Markov bound `C1 θ(p) u^{-p}` at the optimal order `p*`, and
/// equals `exp(−(p* ln(u / C_shift) − τ(p*)))` with `C_shift = C1^{1/p*}`.
pub fn q_bound_fenchel(params: &MdtParams, consts: &BoundConstants, u: f64) -> Result<FenchelBound> {
    if !(u.is_finite() && u >= E) {
        return domain(format!("Fenchel bound needs u >= e, got {u}"));
    }
    let psi = GeneratingFunction::from_theta(params)?;
    let mut fb = ln_fenchel_bound(&psi, consts.moment_c1, u)?;
    fb.value = fb.value.exp().clamp(0.0, 1.0);
    Ok(fb)
}

/// Closed-form bound `C · u^{-β} · L(u) · V(ln u)` with `L` chosen by regime.
pub fn q_bound_closed(params: &MdtParams, consts: &BoundConstants, u: f64) -> Result<f64> {
    let start = closed_domain_start(params);
    if !(u.is_finite() && u >= start) {
        return domain(format!("closed-form bound needs u >= {start}, got {u}"));
    }
    let Some(ls) = ln_closed_shape(params, u) else {
        return precondition("closed form for gamma < -1 needs V vanishing at infinity");
    };
    let Some(c) = consts.closed else {
        return precondition("no closed-form constant for this law");
    };
    Ok((c.ln() + ls).exp().clamp(0.0, 1.0))
}

/// Closed-form bound for `scale · S_n`; equals 1 below the closed-form domain.
pub fn q_bound_closed_scaled(params: &MdtParams, consts: &BoundConstants, scale: f64, u: f64) -> Result<f64> {
    if !(scale > 0.0 && scale.is_finite()) {
        return domain(format!("scale must be positive, got {scale}"));
    }
    let v = u / scale;
    if v < closed_domain_start(params) {
        return Ok(1.0);
    }
    q_bound_closed(params, consts, v)
}

/// `P(|ξ| > u)`, the `n = 1` term of `Q(u)`.
pub fn lower_witness(params: &MdtParams, u: f64) -> Result<f64> {
    if !(u >= params.u_star()) {
        return domain(format!("lower witness needs u >= u* = {}, got {u}", params.u_star()));
    }
    params.survival(u)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurveKind {
    #[serde(rename = "fenchel-thm21")]
    FenchelTransform,
    #[serde(rename = "closed-form-ex1")]
    ClosedLogPower,
    #[serde(rename = "closed-form-ex2")]
    ClosedLogLog,
    #[serde(rename = "closed-form-ex3")]
    ClosedSlowFactor,
    Empirical,
    LowerWitness,
    NetUnion,
    FieldUniform,
}

impl CurveKind {
    pub fn name(self) -> &'static str {
        match self {
            CurveKind::FenchelTransform => "fenchel-thm21",
            CurveKind::ClosedLogPower => "closed-form-ex1",
            CurveKind::ClosedLogLog => "closed-form-ex2",
            CurveKind::ClosedSlowFactor => "closed-form-ex3",
            CurveKind::Empirical => "empirical",
            CurveKind::LowerWitness => "lower-witness",
            CurveKind::NetUnion => "net-union",
            CurveKind::FieldUniform => "field-uniform",
        }
    }

    pub fn is_lower(self) -> bool {
        self == CurveKind::LowerWitness
    }

    pub fn closed_for(params: &MdtParams) -> Self {
        match Regime::of(params.gamma()) {
            Regime::A => CurveKind::ClosedLogPower,
            Regime::B => CurveKind::ClosedLogLog,
            Regime::C => CurveKind::ClosedSlowFactor,
        }
    }
}

/// A bound or estimate tabulated on a level grid.
#[derive(Debug, Clone, Serialize)]
pub struct TailCurve {
    pub kind: CurveKind,
    pub u: Vec<f64>,
    pub values: Vec<f64>,
    pub constants: BTreeMap<String, f64>,
}

impl TailCurve {
    pub fn fenchel(params: &MdtParams, consts: &BoundConstants, us: &[f64]) -> Result<Self> {
        let pts: Vec<FenchelBound> =
            us.par_iter().map(|&u| q_bound_fenchel(params, consts, u)).collect::<Result<_>>()?;
        Ok(Self {
            kind: CurveKind::FenchelTransform,
            u: us.to_vec(),
            values: pts.iter().map(|f| f.value).collect(),
            constants: consts.to_map(),
        })
    }

    /// Closed-form curve; levels below its domain get the trivial bound 1.
    pub fn closed(params: &MdtParams, consts: &BoundConstants, us: &[f64]) -> Result<Self> {
        let values = us
            .iter()
            .map(|&u| q_bound_closed_scaled(params, consts, 1.0, u))
            .collect::<Result<_>>()?;
        Ok(Self { kind: CurveKind::closed_for(params), u: us.to_vec(), values, constants: consts.to_map() })
    }

    pub fn lower_witness(params: &MdtParams, us: &[f64]) -> Result<Self> {
        let values = us.iter().map(|&u| lower_witness(params, u)).collect::<Result<_>>()?;
        Ok(Self { kind: CurveKind::LowerWitness, u: us.to_vec(), values, constants: BTreeMap::new() })
    }

    /// Nonincreasing on the grid up to a relative `slack`.
    pub fn is_nonincreasing(&self, slack: f64) -> bool {
        self.values.windows(2).all(|w| w[1] <= w[0] * (1.0 + slack))
    }

    pub fn to_csv(&self) -> String {
        let blob = serde_json::to_string(&self.constants).expect("constants serialize");
        let mut out = format!("# constants={blob}\nu,bound,provenance\n");
        for (u, v) in self.u.iter().zip(&self.values) {
            let _ = writeln!(out, "{u},{v},{}", self.kind.name());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::SlowlyVarying;

    fn law(beta: f64, gamma: f64) -> MdtParams {
        MdtParams::new(beta, gamma, SlowlyVarying::one()).unwrap()
    }

    fn fixed(c: f64) -> BoundConstants {
        BoundConstants { mode: ConstantMode::PessimisticAnalytic, rosenthal_c0: 2.0, moment_c1: c, closed: Some(c) }
    }

    #[test]
    fn closed_plug_ins() {
        let p = law(3.0, 0.0);
        let c = fixed(1.0);
        assert!((q_bound_closed(&p, &c, E).unwrap() - (-3f64).exp()).abs() < 1e-15);
        assert!((q_bound_closed(&p, &c, E * E).unwrap() - 2.0 * (-6f64).exp()).abs() < 1e-15);
        let b = law(3.0, -1.0);
        let u = E.powf(E);
        assert!((q_bound_closed(&b, &c, u).unwrap() - (-3.0 * E).exp()).abs() < 1e-15);
        assert!(q_bound_closed(&b, &c, 10.0).is_err());
    }

    #[test]
    fn case_c_needs_vanishing_v() {
        let c = fixed(1.0);
        assert!(matches!(
            q_bound_closed(&law(3.0, -2.0), &c, 10.0),
            Err(crate::Error::Precondition(_))
        ));
        let v = MdtParams::new(3.0, -2.0, SlowlyVarying::log_power(-1.0).unwrap()).unwrap();
        let u: f64 = 10.0;
        let expect = u.powf(-3.0) / (1.0 + (1.0 + u.ln()).ln());
        assert!((q_bound_closed(&v, &c, u).unwrap() / expect - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rosenthal_plug_ins() {
        let p = law(4.0, 0.0);
        assert!(rosenthal_constant(2.0, 2.0) >= 1.0);
        let b = rosenthal_sum_moment(&p, 3.0, 1.0, 5.0, 2.0).unwrap();
        let scaled = rosenthal_sum_moment(&p, 3.0, 4.0, 40.0, 2.0).unwrap();
        assert!((scaled / b - 8.0).abs() < 1e-12);
        let env = SumMomentEnvelope::new(&p, 2.0).unwrap();
        assert!(env.eval(2.0).unwrap() >= env.second_moment());
        assert!(rosenthal_sum_moment(&p, 3.9995, 1.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn envelope_dominates_single_term() {
        let p = law(3.5, 0.5);
        let env = SumMomentEnvelope::new(&p, 2.0).unwrap();
        for i in 0..20 {
            let q = 2.0 + 1.499 * i as f64 / 19.0;
            assert!(env.eval(q).unwrap() >= moment_from_tail(&p, q).unwrap().value);
        }
    }

    #[test]
    fn fenchel_asymptotics() {
        // −ln bound − ln C1-free part ≈ 3y − 1 − ln y for (3, 0, 1).
        let p = law(3.0, 0.0);
        let c = fixed(1.0);
        for y in [10.0, 20.0, 40.0] {
            let b = q_bound_fenchel(&p, &c, f64::exp(y)).unwrap();
            let exact = 3.0 * y - 1.0 - f64::ln(y);
            assert!((-b.value.ln() - exact).abs() < 1e-6, "y={y}");
            assert_eq!(b.c_shift, 1.0);
        }
    }

    #[test]
    fn fenchel_shift_is_a_markov_bound() {
        let p = law(4.0, 0.0);
        let c = fixed(50.0);
        let theta = ThetaRegime::new(&p);
        for u in [5.0, 30.0, 1e3] {
            let b = q_bound_fenchel(&p, &c, u).unwrap();
            let markov = 50.0 * theta.theta(b.p_star).unwrap() * u.powf(-b.p_star);
            assert!((b.value - markov.min(1.0)).abs() <= 1e-12 * markov);
            assert!((b.c_shift.ln() * b.p_star - 50f64.ln()).abs() < 1e-9);
            // No other order on a fine grid does better.
            for i in 0..400 {
                let q = 2.0 + 1.998 * i as f64 / 399.0;
                let m = 50.0 * theta.theta(q).unwrap() * u.powf(-q);
                assert!(b.value <= m * (1.0 + 1e-9));
            }
        }
    }

    #[test]
    fn bounds_clamp_and_decrease() {
        let p = law(3.0, 0.0);
        let c = BoundConstants::pessimistic(&p, 2.0).unwrap();
        assert_eq!(q_bound_fenchel(&p, &c, E).unwrap().value, 1.0);
        let us: Vec<f64> = (0..100).map(|i| E * 1.2f64.powi(i)).collect();
        let f = TailCurve::fenchel(&p, &c, &us).unwrap();
        let cl = TailCurve::closed(&p, &c, &us).unwrap();
        assert!(f.is_nonincreasing(1e-12));
        assert!(cl.is_nonincreasing(1e-12));
        assert!(f.values.iter().chain(&cl.values).all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn pessimistic_closed_dominates_fenchel() {
        for p in [law(4.0, 0.0), law(3.0, -1.0), law(3.5, 1.0)] {
            let c = BoundConstants::pessimistic(&p, 2.0).unwrap();
            let start = closed_domain_start(&p);
            for i in 0..60 {
                let u = start * 1.5f64.powi(i);
                let f = q_bound_fenchel(&p, &c, u).unwrap().value;
                let cl = q_bound_closed(&p, &c, u).unwrap();
                assert!(cl >= f * (1.0 - 1e-9), "u={u}: closed {cl} < fenchel {f}");
            }
        }
    }

    #[test]
    fn witness_and_ratio_growth() {
        let p = law(3.0, 0.0);
        assert_eq!(lower_witness(&p, p.u_star()).unwrap(), 1.0);
        assert!(lower_witness(&p, 1.0).is_err());
        let c = fixed(1.0);
        // closed / witness grows like ln u: slope 1 in (ln ln u, ln ratio).
        let pts: Vec<(f64, f64)> = [1e3, 1e6, 1e9, 1e12]
            .iter()
            .map(|&u: &f64| {
                let r = q_bound_closed(&p, &c, u).unwrap() / lower_witness(&p, u).unwrap();
                (u.ln().ln(), r.ln())
            })
            .collect();
        for w in pts.windows(2) {
            let slope = (w[1].1 - w[0].1) / (w[1].0 - w[0].0);
            assert!((slope - 1.0).abs() < 1e-9, "slope {slope}");
        }
    }

    #[test]
    fn scale_covariance() {
        let p = law(4.0, 0.0);
        let c = fixed(3.0);
        for u in [10.0, 100.0, 1e4] {
            let direct = q_bound_closed(&p, &c, u).unwrap();
            let scaled = q_bound_closed_scaled(&p, &c, 2.0, 2.0 * u).unwrap();
            assert_eq!(direct, scaled);
        }
        assert_eq!(q_bound_closed_scaled(&p, &c, 2.0, 3.0).unwrap(), 1.0);
    }

    #[test]
    fn calibration_is_tight_at_some_level() {
        let p = law(4.0, 0.0);
        let us: Vec<f64> = (0..20).map(|i| 3.0 * 1.3f64.powi(i)).collect();
        let targets: Vec<f64> = us.iter().map(|&u| 0.5 * p.survival(u).unwrap() + 1e-3).collect();
        let c = BoundConstants::calibrated(&p, 2.0, &us, &targets).unwrap();
        let mut tight = false;
        for (&u, &t) in us.iter().zip(&targets) {
            let cl = q_bound_closed(&p, &c, u).unwrap();
            assert!(cl >= t * (1.0 - 1e-12));
            tight |= (cl / t - 1.0).abs() < 1e-9;
            assert!(q_bound_fenchel(&p, &c, u).unwrap().value >= t * (1.0 - 1e-9));
        }
        assert!(tight);
    }

    #[test]
    fn tail_curve_csv() {
        let p = law(4.0, 0.0);
        let c = fixed(1.0);
        let curve = TailCurve::closed(&p, &c, &[3.0, 4.0]).unwrap();
        let csv = curve.to_csv();
        assert!(csv.starts_with("# constants={"));
        assert!(csv.contains("u,bound,provenance\n3,"));
        assert!(csv.contains("closed-form-ex1"));
    }
}
