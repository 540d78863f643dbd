//! Covering-number models, the entropic integral and tail bounds for the
//! supremum of a random field.
//!
//! The reference field on `[0, 1]` is the Fourier mix
//! `η(z) = Σ_j a_j ξ_j cos(2πjz + U_j)`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::bounds::{q_bound_closed, q_bound_closed_scaled, BoundConstants};
use crate::error::{domain, precondition, Error, Result};
use crate::gls::{gls_norm_from_moments, GeneratingFunction};
use crate::mdt::MdtParams;
use crate::moments::{MomentCurve, Regime};
use crate::quad::{integrate, Tolerance};

type CoveringFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum Covering {
    /// `N(ε) = C10 · ε^{-d/α}` for a `C9 |z1 − z2|^α` distance on a `d`-cube.
    Holder { d: u32, alpha: f64, c9: f64, c10: f64 },
    /// `N ≡ n`.
    Constant(f64),
    Custom(CoveringFn),
}

impl fmt::Debug for Covering {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Covering::Holder { d, alpha, c9, c10 } => f
                .debug_struct("Holder")
                .field("d", d)
                .field("alpha", alpha)
                .field("c9", c9)
                .field("c10", c10)
                .finish(),
            Covering::Constant(n) => f.debug_tuple("Constant").field(n).finish(),
            Covering::Custom(_) => f.write_str("Custom"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MetricEntropyModel {
    c5: f64,
    covering: Covering,
}

impl MetricEntropyModel {
    pub fn holder(d: u32, alpha: f64, c5: f64, c9: f64, c10: f64) -> Result<Self> {
        if d == 0 {
            return domain("dimension must be at least 1");
        }
        if !(alpha > 0.0 && alpha <= 1.0) {
            return domain(format!("Hölder exponent must lie in (0, 1], got {alpha}"));
        }
        if !(c9 > 0.0 && c9.is_finite() && c10 > 0.0 && c10.is_finite()) {
            return domain("Hölder constants must be positive and finite");
        }
        Self::new(c5, Covering::Holder { d, alpha, c9, c10 })
    }

    pub fn constant(c5: f64, n: f64) -> Result<Self> {
        Self::new(c5, Covering::Constant(n))
    }

    pub fn custom<F>(c5: f64, n: F) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self::new(c5, Covering::Custom(Arc::new(n)))
    }

    fn new(c5: f64, covering: Covering) -> Result<Self> {
        if !(c5 > 0.0 && c5.is_finite()) {
            return domain(format!("diameter bound must be positive, got {c5}"));
        }
        let m = Self { c5, covering };
        let top = m.covering_number(c5);
        if !(top >= 1.0) {
            return domain(format!("covering number at the diameter must be >= 1, got {top}"));
        }
        Ok(m)
    }

    pub fn c5(&self) -> f64 {
        self.c5
    }

    pub fn covering(&self) -> &Covering {
        &self.covering
    }

    /// `N(ε)` for `ε ∈ (0, C5]`.
    pub fn covering_number(&self, eps: f64) -> f64 {
        match &self.covering {
            Covering::Holder { d, alpha, c10, .. } => c10 * eps.powf(-(*d as f64) / alpha),
            Covering::Constant(n) => *n,
            Covering::Custom(f) => f(eps),
        }
    }

    /// `ln N(ε)` from `ln ε`, finite where `ε` itself would underflow.
    fn ln_covering_number(&self, ln_eps: f64) -> f64 {
        match &self.covering {
            Covering::Holder { d, alpha, c10, .. } => c10.ln() - (*d as f64) / alpha * ln_eps,
            Covering::Constant(n) => n.ln(),
            Covering::Custom(f) => f(ln_eps.exp()).ln(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EntropyIntegral {
    Finite { value: f64, error: f64 },
    Divergent,
}

impl EntropyIntegral {
    pub fn is_finite(&self) -> bool {
        matches!(self, EntropyIntegral::Finite { .. })
    }

    pub fn value(&self) -> f64 {
        match self {
            EntropyIntegral::Finite { value, .. } => *value,
            EntropyIntegral::Divergent => f64::INFINITY,
        }
    }
}

fn require_gamma(gamma: f64) -> Result<()> {
    if !(gamma > -1.0) {
        return precondition(format!("entropy condition needs gamma > -1, got {gamma}"));
    }
    Ok(())
}

/// `β / (γ + 1) > d / α`, compared as `β α > (γ + 1) d`.
pub fn check_entropy_condition(d: u32, alpha: f64, beta: f64, gamma: f64) -> Result<bool> {
    require_gamma(gamma)?;
    if d == 0 {
        return precondition("dimension must be at least 1");
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return precondition(format!("Hölder exponent must lie in (0, 1], got {alpha}"));
    }
    if !(beta > 2.0 && beta.is_finite()) {
        return precondition(format!("beta must exceed 2, got {beta}"));
    }
    Ok(holder_integrable(d, alpha, beta, gamma))
}

fn holder_integrable(d: u32, alpha: f64, beta: f64, gamma: f64) -> bool {
    beta * alpha > (gamma + 1.0) * d as f64
}

/// `C10^{(γ+1)/β} · C5^{1−e0} / (1 − e0)` with `e0 = (γ+1) d / (β α) < 1`.
pub fn holder_closed_form(model: &MetricEntropyModel, beta: f64, gamma: f64) -> Result<EntropyIntegral> {
    require_gamma(gamma)?;
    let Covering::Holder { d, alpha, c10, .. } = model.covering else {
        return domain("closed form needs a Hölder model");
    };
    if !holder_integrable(d, alpha, beta, gamma) {
        return Ok(EntropyIntegral::Divergent);
    }
    let k = (gamma + 1.0) / beta;
    let e0 = k * d as f64 / alpha;
    Ok(EntropyIntegral::Finite {
        value: c10.powf(k) * model.c5.powf(1.0 - e0) / (1.0 - e0),
        error: 0.0,
    })
}

const ENTROPY_TOL: Tolerance = Tolerance { abs: 0.0, rel: 1e-12, max_panels: crate::quad::MAX_PANELS };

/// `I(N) = ∫_0^{C5} N(ε)^{(γ+1)/β} dε`.
pub fn entropy_integral(model: &MetricEntropyModel, beta: f64, gamma: f64) -> Result<EntropyIntegral> {
    require_gamma(gamma)?;
    if !(beta > 2.0 && beta.is_finite()) {
        return domain(format!("beta must exceed 2, got {beta}"));
    }
    let k = (gamma + 1.0) / beta;
    let e0 = match model.covering {
        Covering::Holder { d, alpha, .. } => {
            if !holder_integrable(d, alpha, beta, gamma) {
                return Ok(EntropyIntegral::Divergent);
            }
            k * d as f64 / alpha
        }
        Covering::Constant(_) => 0.0,
        Covering::Custom(_) => match growth_exponent(model, k) {
            Some(e) if e < 1.0 => e.max(0.0),
            _ => return Ok(EntropyIntegral::Divergent),
        },
    };
    // ε = C5 s^{1/(1−e0)} flattens an ε^{−e0} endpoint singularity.
    let c5 = model.c5;
    let r = 1.0 / (1.0 - e0);
    let integrand = |s: f64| {
        if s <= 0.0 {
            return 0.0;
        }
        let ln_eps = c5.ln() + r * s.ln();
        let ln_jac = (c5 * r).ln() + (r - 1.0) * s.ln();
        let ln_value = k * model.ln_covering_number(ln_eps) + ln_jac;
        if ln_value == f64::NEG_INFINITY { 0.0 } else { ln_value.exp() }
    };
    let res = integrate(integrand, 0.0, 1.0, ENTROPY_TOL)?;
    if !res.value.is_finite() {
        return Err(Error::Numeric { message: "entropy integral overflowed".into(), achieved: res.error });
    }
    Ok(EntropyIntegral::Finite { value: res.value, error: res.error })
}

/// Local exponent `−d ln N^k / d ln ε` near zero, or `None` if `N` blows up.
fn growth_exponent(model: &MetricEntropyModel, k: f64) -> Option<f64> {
    let (e1, e2) = (model.c5 * 1e-12, model.c5 * 1e-10);
    let (n1, n2) = (model.covering_number(e1), model.covering_number(e2));
    if !(n1.is_finite() && n2.is_finite() && n1 > 0.0 && n2 > 0.0) {
        return None;
    }
    Some(k * (n1.ln() - n2.ln()) / (e2.ln() - e1.ln()))
}

/// Finite Fourier mix with MDT amplitudes on `[0, 1]`, sampled on `z_k = k / M`.
#[derive(Debug, Clone, Serialize)]
pub struct FieldModel {
    pub marginal: MdtParams,
    pub weights: Vec<f64>,
    pub grid: usize,
    pub random_phases: bool,
    /// `‖ξ‖` in the space generated by `θ^{1/p}`.
    pub marginal_gls_norm: f64,
}

const NORM_GRID_POINTS: usize = 100;

impl FieldModel {
    pub fn new(marginal: &MdtParams, weights: Vec<f64>, grid: usize, random_phases: bool) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| !w.is_finite()) {
            return domain("field weights must be a nonempty list of finite numbers");
        }
        if grid == 0 {
            return domain("grid resolution must be at least 1");
        }
        let curve = MomentCurve::compute(marginal, &MomentCurve::uniform_grid(marginal, NORM_GRID_POINTS))?;
        let psi = GeneratingFunction::from_theta(marginal)?;
        let norm = gls_norm_from_moments(&curve, &psi)?.value;
        Ok(Self { marginal: marginal.clone(), weights, grid, random_phases, marginal_gls_norm: norm })
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    /// `Σ |a_j|`, the amplitude scale at a single point.
    pub fn amplitude(&self) -> f64 {
        self.weights.iter().map(|a| a.abs()).sum()
    }

    /// `Σ 2πj |a_j|`, the pathwise Lipschitz factor per unit amplitude.
    pub fn lipschitz_weight(&self) -> f64 {
        self.weights.iter().enumerate().map(|(j, a)| 2.0 * PI * (j + 1) as f64 * a.abs()).sum()
    }

    /// Covering radius of the grid on the circle `[0, 1)`.
    pub fn mesh(&self) -> f64 {
        0.5 / self.grid as f64
    }

    pub fn grid_points(&self) -> Vec<f64> {
        (0..self.grid).map(|k| k as f64 / self.grid as f64).collect()
    }
}

/// `‖ξ‖ · Σ_j |a_j| · min(2, 2πj |z1 − z2|)`.
pub fn natural_distance_bound(model: &FieldModel, z1: f64, z2: f64) -> Result<f64> {
    for z in [z1, z2] {
        if !(0.0..=1.0).contains(&z) {
            return domain(format!("field points must lie in [0, 1], got {z}"));
        }
    }
    let dz = (z1 - z2).abs();
    let s: f64 = model
        .weights
        .iter()
        .enumerate()
        .map(|(j, a)| a.abs() * (2.0f64).min(2.0 * PI * (j + 1) as f64 * dz))
        .sum();
    Ok(model.marginal_gls_norm * s)
}

/// `C6 = C_closed · (1 + I / C5)^β`.
pub fn field_constant(entropy: &MetricEntropyModel, params: &MdtParams, consts: &BoundConstants) -> Result<f64> {
    let i = match entropy_integral(entropy, params.beta(), params.gamma())? {
        EntropyIntegral::Finite { value, .. } => value,
        EntropyIntegral::Divergent => return precondition("entropy condition violated: integral diverges"),
    };
    let Some(c) = consts.closed else {
        return precondition("no closed-form constant for this law");
    };
    Ok(c * (1.0 + i / entropy.c5()).powf(params.beta()))
}

/// `C6 · u^{-β} (ln u)^{γ+1} V(ln u)`, clamped to `[0, 1]`.
pub fn uniform_tail_bound(params: &MdtParams, c6: f64, u: f64) -> Result<f64> {
    if Regime::of(params.gamma()) != Regime::A {
        return precondition(format!("uniform bound needs gamma > -1, got {}", params.gamma()));
    }
    if !(c6 > 0.0 && c6.is_finite()) {
        return domain(format!("field constant must be positive, got {c6}"));
    }
    let unit = BoundConstants {
        mode: crate::bounds::ConstantMode::Calibrated,
        rosenthal_c0: 0.0,
        moment_c1: 1.0,
        closed: Some(1.0),
    };
    let shape = q_bound_closed(params, &unit, u)?;
    if shape == 1.0 {
        return Ok(1.0);
    }
    Ok((c6 * shape).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NetBound {
    pub value: f64,
    pub grid_term: f64,
    pub lipschitz_term: f64,
}

/// `M · Q_A(u/2) + Q_{2Λ}(u / (2 · mesh))` for the supremum over `[0, 1]`.
///
/// `Q_s` is the closed-form bound for `s · S_n`; `A = Σ|a_j|` dominates every
/// point value and `2Λ`, `Λ = Σ 2πj|a_j|`, dominates the path derivative.
pub fn finite_net_union_bound(model: &FieldModel, consts: &BoundConstants, u: f64) -> Result<NetBound> {
    if !(u > 0.0 && u.is_finite()) {
        return domain(format!("level must be positive, got {u}"));
    }
    let params = &model.marginal;
    let grid_term = model.grid as f64 * q_bound_closed_scaled(params, consts, model.amplitude(), u / 2.0)?;
    let lip = 2.0 * model.lipschitz_weight();
    let lipschitz_term = q_bound_closed_scaled(params, consts, lip, u / (2.0 * model.mesh()))?;
    Ok(NetBound { value: (grid_term + lipschitz_term).min(1.0), grid_term, lipschitz_term })
}
