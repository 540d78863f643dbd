//! Grand Lebesgue norms, the regional Young–Fenchel transform and the
//! moment-optimized tail bound.
//!
//! A generating function ψ lives on `[2, b)`; every supremum over `p` is taken
//! on the closed working interval `[2, b − MIN_GAP]`.

use std::fmt;
use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{domain, precondition, Result};
use crate::mdt::{MdtParams, SampleBatch};
use crate::moments::{MomentCurve, Regime, ThetaRegime, MIN_GAP, THETA_FLOOR};

/// Coarse grid size of the transform.
pub const FENCHEL_GRID: usize = 256;
/// Golden-section stopping width in `p`.
pub const FENCHEL_P_TOL: f64 = 1e-10;
/// Lower floor on ψ.
pub const PSI_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    AnalyticTheta,
    Empirical,
    CustomGrid,
    Custom,
}

type LnPsiFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Kind {
    Theta(ThetaRegime),
    /// `ln ψ` tabulated on increasing orders; linear in between, flat outside.
    Grid { ps: Vec<f64>, ln_psi: Vec<f64> },
    Func(LnPsiFn),
}

#[derive(Clone)]
pub struct GeneratingFunction {
    b: f64,
    provenance: Provenance,
    kind: Kind,
}

impl fmt::Debug for GeneratingFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GeneratingFunction")
            .field("b", &self.b)
            .field("provenance", &self.provenance)
            .finish()
    }
}

fn check_endpoint(b: f64) -> Result<()> {
    if !(b.is_finite() && b > 2.0 + MIN_GAP) {
        return domain(format!("generating function endpoint must exceed 2 + {MIN_GAP}, got {b}"));
    }
    Ok(())
}

impl GeneratingFunction {
    /// `ψ(p) = θ(p)^{1/p}` on `[2, β)`.
    pub fn from_theta(params: &MdtParams) -> Result<Self> {
        check_endpoint(params.beta())?;
        Ok(Self {
            b: params.beta(),
            provenance: Provenance::AnalyticTheta,
            kind: Kind::Theta(ThetaRegime::new(params)),
        })
    }

    /// Tabulated ψ on increasing orders in `[2, b)`.
    pub fn from_grid(b: f64, ps: Vec<f64>, psi: Vec<f64>) -> Result<Self> {
        check_endpoint(b)?;
        if ps.is_empty() || ps.len() != psi.len() {
            return domain("grid generating function needs matching nonempty order and value lists");
        }
        if ps.windows(2).any(|w| !(w[1] > w[0])) || ps[0] < 2.0 || *ps.last().unwrap() >= b {
            return domain("grid orders must increase strictly within [2, b)");
        }
        if psi.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return domain("grid generating function values must be positive and finite");
        }
        let ln_psi = psi.iter().map(|v| v.ln()).collect();
        Ok(Self { b, provenance: Provenance::CustomGrid, kind: Kind::Grid { ps, ln_psi } })
    }

    /// Arbitrary ψ given through `ln ψ`.
    pub fn custom<F>(b: f64, ln_psi: F) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        check_endpoint(b)?;
        Ok(Self { b, provenance: Provenance::Custom, kind: Kind::Func(Arc::new(ln_psi)) })
    }

    /// The constant function `ψ ≡ c`.
    pub fn constant(b: f64, c: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return domain(format!("constant generating function needs c > 0, got {c}"));
        }
        let ln_c = c.ln();
        Self::custom(b, move |_| ln_c)
    }

    /// Natural function `p ↦ ‖ξ‖_p` from a computed moment curve.
    pub fn natural(curve: &MomentCurve) -> Result<Self> {
        let Some(&last) = curve.ps.last() else {
            return domain("moment curve is empty");
        };
        let psi = curve.ps.iter().zip(&curve.values).map(|(p, m)| m.powf(1.0 / p)).collect();
        Self::from_grid(last + MIN_GAP, curve.ps.clone(), psi)
    }

    /// Plug-in natural function `p ↦ (mean |x|^p)^{1/p}` on the given orders.
    pub fn empirical(batch: &SampleBatch, ps: &[f64]) -> Result<Self> {
        let Some(&last) = ps.last() else {
            return domain("order grid is empty");
        };
        let psi = ps.iter().map(|&p| empirical_moment(&batch.values, p).powf(1.0 / p)).collect();
        let mut g = Self::from_grid(last + MIN_GAP, ps.to_vec(), psi)?;
        g.provenance = Provenance::Empirical;
        Ok(g)
    }

    pub fn endpoint(&self) -> f64 {
        self.b
    }

    /// Right end of the working interval, `b − MIN_GAP`.
    pub fn working_max(&self) -> f64 {
        self.b - MIN_GAP
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// `ln ψ(p)`, floored, for `p` in `[2, b)`.
    pub fn ln_psi(&self, p: f64) -> Result<f64> {
        if !(p.is_finite() && p >= 2.0 && p < self.b) {
            return domain(format!("order {p} outside [2, {})", self.b));
        }
        Ok(self.ln_psi_unchecked(p))
    }

    pub fn psi(&self, p: f64) -> Result<f64> {
        self.ln_psi(p).map(f64::exp)
    }

    /// `ν(p) = p ln ψ(p)`.
    pub fn nu(&self, p: f64) -> Result<f64> {
        Ok(p * self.ln_psi(p)?)
    }

    pub(crate) fn ln_psi_unchecked(&self, p: f64) -> f64 {
        let raw = match &self.kind {
            Kind::Theta(t) => t.ln_theta_unchecked(p) / p,
            Kind::Grid { ps, ln_psi } => interpolate(ps, ln_psi, p),
            Kind::Func(f) => f(p),
        };
        raw.max(PSI_FLOOR.ln())
    }

    /// Right ends of the intervals where a vanishing θ factor sits on the
    /// floor; `p y − ν(p)` peaks there for every `y > 0`.
    pub(crate) fn floor_peaks(&self) -> Vec<f64> {
        let Kind::Theta(t) = &self.kind else {
            return Vec::new();
        };
        let q = t.params().beta() - 1.0;
        if t.regime() != Regime::B || !(q > 2.0 && q < self.working_max()) {
            return Vec::new();
        }
        let floor = THETA_FLOOR.ln();
        let on_floor = |p: f64| t.ln_theta_unchecked(p) <= floor;
        let (mut lo, mut hi) = (q, self.working_max());
        if on_floor(hi) {
            return vec![hi];
        }
        loop {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                return vec![lo];
            }
            if on_floor(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
}

fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let i = xs.partition_point(|&v| v <= x);
    if i == 0 {
        return ys[0];
    }
    if i == xs.len() {
        return ys[xs.len() - 1];
    }
    let (x0, x1) = (xs[i - 1], xs[i]);
    let w = (x - x0) / (x1 - x0);
    ys[i - 1] + w * (ys[i] - ys[i - 1])
}

fn empirical_moment(values: &[f64], p: f64) -> f64 {
    values.iter().map(|x| x.abs().powf(p)).sum::<f64>() / values.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FenchelPoint {
    pub value: f64,
    pub argmax: f64,
}

/// Orders on `[2, b − MIN_GAP]` whose gaps to `b` shrink geometrically.
pub fn fenchel_grid(psi: &GeneratingFunction) -> Vec<f64> {
    let b = psi.endpoint();
    let wide = b - 2.0;
    (0..FENCHEL_GRID)
        .map(|i| {
            let s = i as f64 / (FENCHEL_GRID - 1) as f64;
            if i == 0 {
                2.0
            } else if i == FENCHEL_GRID - 1 {
                b - MIN_GAP
            } else {
                b - wide * (MIN_GAP / wide).powf(s)
            }
        })
        .collect()
}

/// `ν*(y) = sup_{p ∈ [2, b − MIN_GAP]} (p y − p ln ψ(p))`.
pub fn fenchel(psi: &GeneratingFunction, y: f64) -> Result<FenchelPoint> {
    if !y.is_finite() {
        return domain(format!("transform argument must be finite, got {y}"));
    }
    let objective = |p: f64| p * (y - psi.ln_psi_unchecked(p));
    let grid = fenchel_grid(psi);
    let vals: Vec<f64> = grid.iter().map(|&p| objective(p)).collect();
    let (best, &best_val) = vals
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("grid is nonempty");
    let lo = grid[best.saturating_sub(1)];
    let hi = grid[(best + 1).min(grid.len() - 1)];
    let (p_gold, v_gold) = golden_max(objective, lo, hi, FENCHEL_P_TOL);
    let mut out = if v_gold > best_val {
        FenchelPoint { value: v_gold, argmax: p_gold }
    } else {
        FenchelPoint { value: best_val, argmax: grid[best] }
    };
    for p in psi.floor_peaks() {
        let v = objective(p);
        if v > out.value {
            out = FenchelPoint { value: v, argmax: p };
        }
    }
    Ok(out)
}

/// Golden-section search for a maximum of `f` on `[a, b]`.
pub(crate) fn golden_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FenchelCurve {
    pub ys: Vec<f64>,
    pub values: Vec<f64>,
    pub argmax: Vec<f64>,
}

impl FenchelCurve {
    pub fn compute(psi: &GeneratingFunction, ys: &[f64]) -> Result<Self> {
        let pts: Vec<FenchelPoint> =
            ys.par_iter().map(|&y| fenchel(psi, y)).collect::<Result<_>>()?;
        Ok(Self {
            ys: ys.to_vec(),
            values: pts.iter().map(|p| p.value).collect(),
            argmax: pts.iter().map(|p| p.argmax).collect(),
        })
    }

    /// Secant slopes nondecreasing up to `slack`.
    pub fn is_convex(&self, slack: f64) -> bool {
        let slopes: Vec<f64> = (1..self.ys.len())
            .map(|i| (self.values[i] - self.values[i - 1]) / (self.ys[i] - self.ys[i - 1]))
            .collect();
        slopes.windows(2).all(|w| w[1] >= w[0] - slack)
    }

    pub fn is_nondecreasing(&self, slack: f64) -> bool {
        self.values.windows(2).all(|w| w[1] >= w[0] - slack)
    }

    pub fn argmax_nondecreasing(&self, slack: f64) -> bool {
        self.argmax.windows(2).all(|w| w[1] >= w[0] - slack)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("y,nu_star,p_star\n");
        for i in 0..self.ys.len() {
            let _ = writeln!(out, "{},{},{}", self.ys[i], self.values[i], self.argmax[i]);
        }
        out
    }
}

/// `P(|ξ| > z) ≤ exp(−ν*(ln(z/k)))` for `‖ξ‖_{Gψ} = k`, clamped to `[0, 1]`.
pub fn tail_from_gls(psi: &GeneratingFunction, k: f64, z: f64) -> Result<f64> {
    if !(k.is_finite() && k > 0.0) {
        return domain(format!("norm value must be positive, got {k}"));
    }
    if !(z.is_finite() && z / k >= std::f64::consts::E) {
        return domain(format!("tail level needs z/k >= e, got z={z}, k={k}"));
    }
    let nu_star = fenchel(psi, (z / k).ln())?.value;
    Ok((-nu_star).exp().clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GlsNorm {
    pub value: f64,
    pub argsup: f64,
}

fn sup_ratio(ps: &[f64], norms: impl Iterator<Item = f64>, psi: &GeneratingFunction) -> Result<GlsNorm> {
    let mut best = GlsNorm { value: f64::NEG_INFINITY, argsup: f64::NAN };
    for (&p, norm) in ps.iter().zip(norms) {
        let r = norm / psi.psi(p)?;
        if r > best.value {
            best = GlsNorm { value: r, argsup: p };
        }
    }
    Ok(best)
}

/// `sup_p ‖ξ‖_p / ψ(p)` over the curve's orders.
pub fn gls_norm_from_moments(curve: &MomentCurve, psi: &GeneratingFunction) -> Result<GlsNorm> {
    if curve.ps.is_empty() {
        return domain("moment curve is empty");
    }
    let norms = curve.ps.iter().zip(&curve.values).map(|(p, m)| m.powf(1.0 / p));
    sup_ratio(&curve.ps, norms, psi)
}

/// Minimum batch size accepted by the empirical norm.
pub const MIN_EMPIRICAL_BATCH: usize = 1000;

/// Plug-in norm over the orders not exceeding `cap`.
///
/// The default cap is `min(b − MIN_GAP, β − 0.5)`.
pub fn gls_norm_empirical(
    batch: &SampleBatch,
    psi: &GeneratingFunction,
    ps: &[f64],
    cap: Option<f64>,
) -> Result<GlsNorm> {
    if batch.len() < MIN_EMPIRICAL_BATCH {
        return precondition(format!(
            "empirical norm needs at least {MIN_EMPIRICAL_BATCH} samples, got {}",
            batch.len()
        ));
    }
    let cap = cap.unwrap_or_else(|| psi.working_max().min(batch.law.beta() - 0.5));
    let kept: Vec<f64> = ps.iter().copied().filter(|&p| p <= cap).collect();
    if kept.is_empty() {
        return domain(format!("no order at or below the cap {cap}"));
    }
    let norms: Vec<f64> =
        kept.par_iter().map(|&p| empirical_moment(&batch.values, p).powf(1.0 / p)).collect();
    sup_ratio(&kept, norms.into_iter(), psi)
}
