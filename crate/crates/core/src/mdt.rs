//! Laws with a moderate decreasing tail.
//!
//! The tail class `T(u) ≤ u^{-β} (ln u)^γ V(ln u)` for `u ≥ e` is completed
//! into a concrete symmetric law: `|ξ|` puts no mass below an activation
//! point `u*` and has survival `tail(u)/tail(u*)` beyond it, and the sign is
//! an independent fair coin. The tail is therefore exactly proportional to
//! the formula for every `u ≥ u*`.

use std::f64::consts::E;
use std::fmt::Write as _;

use rand_chacha::rand_core::RngCore;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::rng::{unit_open_closed, StreamFactory, StreamTag};
use crate::slowly_varying::SlowlyVarying;

const MAX_ROOT_ITERS: usize = 200;
const SCAN_POINTS: usize = 4096;
const SAMPLE_CHUNK: usize = 1 << 14;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MdtParams {
    beta: f64,
    gamma: f64,
    v: SlowlyVarying,
    u_star: f64,
    #[serde(skip)]
    log_tail_star: f64,
}

impl MdtParams {
    /// Law with the default activation point: the smallest `u ≥ e` after
    /// which the tail formula is nonincreasing and at most one.
    pub fn new(beta: f64, gamma: f64, v: SlowlyVarying) -> Result<Self> {
        Self::check_shape(beta, gamma)?;
        let mut p = Self { beta, gamma, v, u_star: E, log_tail_star: 0.0 };
        let t_star = p.default_activation_log()?;
        p.u_star = t_star.exp();
        p.log_tail_star = p.log_tail(t_star);
        Ok(p)
    }

    /// Law with an explicit activation point `u_star ≥ e`.
    pub fn with_activation(beta: f64, gamma: f64, v: SlowlyVarying, u_star: f64) -> Result<Self> {
        Self::check_shape(beta, gamma)?;
        if !(u_star.is_finite() && u_star >= E) {
            return domain(format!("activation point must be finite and >= e, got {u_star}"));
        }
        let mut p = Self { beta, gamma, v, u_star, log_tail_star: 0.0 };
        let t0 = u_star.ln();
        let t_hi = p.monotone_horizon().max(t0);
        if t_hi > t0 {
            let ratio = t_hi / t0;
            for i in 0..=SCAN_POINTS {
                let t = t0 * ratio.powf(i as f64 / SCAN_POINTS as f64);
                if p.d_log_tail(t) > 0.0 {
                    return domain(format!(
                        "survival would increase past the activation point (at u = {:e})",
                        t.exp()
                    ));
                }
            }
        }
        p.log_tail_star = p.log_tail(t0);
        Ok(p)
    }

    fn check_shape(beta: f64, gamma: f64) -> Result<()> {
        if !(beta.is_finite() && beta > 2.0) {
            return domain(format!("beta must be finite and > 2, got {beta}"));
        }
        if !gamma.is_finite() {
            return domain(format!("gamma must be finite, got {gamma}"));
        }
        Ok(())
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn v(&self) -> &SlowlyVarying {
        &self.v
    }

    pub fn u_star(&self) -> f64 {
        self.u_star
    }

    /// `ln tail(u*)`, the normalization of the completed survival function.
    pub fn log_tail_at_activation(&self) -> f64 {
        self.log_tail_star
    }

    /// `γ = 0` and `V` constant: the completed law is an exact Pareto law.
    pub fn is_pure_power(&self) -> bool {
        self.gamma == 0.0 && self.v.is_constant()
    }

    /// `ln tail(e^t) = -βt + γ ln t + ln V(t)`; meaningful for `t ≥ 1`.
    pub(crate) fn log_tail(&self, t: f64) -> f64 {
        let log_part = if self.gamma == 0.0 { 0.0 } else { self.gamma * t.ln() };
        -self.beta * t + log_part + self.v.ln_at(t)
    }

    pub(crate) fn d_log_tail(&self, t: f64) -> f64 {
        -self.beta + self.gamma / t + self.v.d_ln_at(t)
    }

    /// Beyond this log-argument the tail formula is strictly decreasing.
    fn monotone_horizon(&self) -> f64 {
        let slack = self.gamma.max(0.0) + self.v.abs_exponent_mass();
        (2.0 * slack / self.beta).max(1.0)
    }

    fn default_activation_log(&self) -> Result<f64> {
        let t_hi = self.monotone_horizon();
        let mut t_mono = 1.0;
        if t_hi > 1.0 {
            let grid: Vec<f64> = (0..=SCAN_POINTS)
                .map(|i| t_hi.powf(i as f64 / SCAN_POINTS as f64))
                .collect();
            if let Some(i) = grid.iter().rposition(|&t| self.d_log_tail(t) > 0.0) {
                if i + 1 < grid.len() {
                    let (mut lo, mut hi) = (grid[i], grid[i + 1]);
                    for _ in 0..MAX_ROOT_ITERS {
                        let mid = 0.5 * (lo + hi);
                        if mid <= lo || mid >= hi {
                            break;
                        }
                        if self.d_log_tail(mid) > 0.0 {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    t_mono = hi;
                } else {
                    t_mono = t_hi;
                }
            }
        }
        if self.log_tail(t_mono) <= 0.0 {
            return Ok(t_mono);
        }
        // The formula still exceeds one; it is decreasing from here on.
        let mut lo = t_mono;
        let mut step = 1.0;
        let mut hi = t_mono + step;
        while self.log_tail(hi) > 0.0 {
            lo = hi;
            step *= 2.0;
            hi = t_mono + step;
            if !hi.is_finite() || step > 1e12 {
                return Err(Error::Numeric {
                    message: "could not bracket the point where the tail formula drops below one"
                        .into(),
                    achieved: hi,
                });
            }
        }
        for _ in 0..MAX_ROOT_ITERS {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.log_tail(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(hi)
    }

    /// `u^{-β} (ln u)^γ V(ln u)` for `u ≥ e`, un-clamped.
    pub fn tail_formula(&self, u: f64) -> Result<f64> {
        if !(u.is_finite() && u >= E) {
            return domain(format!("tail formula needs u >= e, got {u}"));
        }
        Ok(self.log_tail(u.ln()).exp())
    }

    /// `ln P(|ξ| > e^t)`.
    pub(crate) fn log_survival_at(&self, t: f64) -> f64 {
        if t <= self.u_star.ln() {
            0.0
        } else {
            (self.log_tail(t) - self.log_tail_star).min(0.0)
        }
    }

    /// `P(|ξ| > u)` for the completed law.
    pub fn survival(&self, u: f64) -> Result<f64> {
        if u.is_nan() || u < 0.0 {
            return domain(format!("survival needs u >= 0, got {u}"));
        }
        if u == f64::INFINITY {
            return Ok(0.0);
        }
        if u <= self.u_star {
            return Ok(1.0);
        }
        Ok(self.log_survival_at(u.ln()).exp())
    }

    /// The `u` with `survival(u) = q`, `q ∈ (0, 1]`.
    pub fn quantile(&self, q: f64) -> Result<f64> {
        if !(q > 0.0 && q <= 1.0) {
            return domain(format!("quantile level must lie in (0, 1], got {q}"));
        }
        if q == 1.0 {
            return Ok(self.u_star);
        }
        self.log_quantile(q.ln()).map(f64::exp)
    }

    /// Solves `ln survival(e^t) = log_q` for `t`.
    fn log_quantile(&self, log_q: f64) -> Result<f64> {
        let t_star = self.u_star.ln();
        if self.is_pure_power() {
            return Ok(t_star - log_q / self.beta);
        }
        let f = |t: f64| self.log_tail(t) - self.log_tail_star - log_q;
        let mut lo = t_star;
        let mut width = (-log_q / self.beta).max(1.0);
        let mut hi = t_star + width;
        while f(hi) > 0.0 {
            lo = hi;
            width *= 2.0;
            hi = t_star + width;
            if !hi.is_finite() || width > 1e15 {
                return Err(Error::Numeric {
                    message: format!("quantile bracket growth failed for ln q = {log_q}"),
                    achieved: f(hi).abs(),
                });
            }
        }
        let mut x = (t_star - log_q / self.beta).clamp(lo, hi);
        let mut fx = f(x);
        for _ in 0..MAX_ROOT_ITERS {
            if fx.abs() <= 1e-14 * (1.0 + log_q.abs()) {
                return Ok(x);
            }
            if fx > 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            if hi - lo <= 4.0 * f64::EPSILON * hi.abs() {
                return Ok(0.5 * (lo + hi));
            }
            let slope = self.d_log_tail(x);
            let newton = x - fx / slope;
            x = if slope < 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            fx = f(x);
        }
        Err(Error::Numeric {
            message: format!(
                "quantile root-finder did not converge (ln q = {log_q}, bracket [{lo}, {hi}])"
            ),
            achieved: fx.abs(),
        })
    }

    pub fn sampler(&self) -> Sampler<'_> {
        Sampler { law: self }
    }
}

/// Draws `R·|ξ|` with `|ξ| = quantile(U)` and an independent sign `R`.
///
/// One 64-bit word per draw: the top 53 bits give `U ∈ (0, 1]`, the lowest
/// bit gives the sign.
#[derive(Clone, Copy)]
pub struct Sampler<'a> {
    law: &'a MdtParams,
}

impl Sampler<'_> {
    #[inline]
    pub fn draw<R: RngCore>(&self, rng: &mut R) -> Result<f64> {
        let bits = rng.next_u64();
        let q = unit_open_closed(bits);
        let magnitude = if q == 1.0 {
            self.law.u_star
        } else {
            self.law.log_quantile(q.ln())?.exp()
        };
        Ok(if bits & 1 == 1 { -magnitude } else { magnitude })
    }
}

/// `n` reproducible i.i.d. draws.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleBatch {
    pub seed: u64,
    pub values: Vec<f64>,
    pub law: MdtParams,
}

impl SampleBatch {
    /// A batch from externally supplied values.
    pub fn from_values(law: MdtParams, seed: u64, values: Vec<f64>) -> Self {
        Self { seed, values, law }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.values.len() * 24 + 128);
        let _ = writeln!(
            out,
            "# beta={} gamma={} v={} u_star={} seed={}",
            self.law.beta, self.law.gamma, self.law.v, self.law.u_star, self.seed
        );
        out.push_str("value\n");
        for v in &self.values {
            let _ = writeln!(out, "{v}");
        }
        out
    }
}

/// Draw `i` comes from word `i` of a single counter-based stream, so any
/// chunking of the index range reproduces the sequential batch.
pub fn sample(params: &MdtParams, seed: u64, n: usize) -> Result<SampleBatch> {
    if n == 0 {
        return domain("sample size must be at least 1");
    }
    let factory = StreamFactory::new(seed);
    let id = crate::rng::stream_id(StreamTag::Batch, 0, 0);
    let sampler = params.sampler();
    let chunks: Vec<Vec<f64>> = (0..n.div_ceil(SAMPLE_CHUNK))
        .into_par_iter()
        .map(|c| {
            let start = c * SAMPLE_CHUNK;
            let end = (start + SAMPLE_CHUNK).min(n);
            let mut rng = factory.stream_at(id, start as u64);
            (start..end).map(|_| sampler.draw(&mut rng)).collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Ok(SampleBatch { seed, values: chunks.concat(), law: params.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pareto(beta: f64) -> MdtParams {
        MdtParams::new(beta, 0.0, SlowlyVarying::one()).unwrap()
    }

    #[test]
    fn tail_formula_plug_ins() {
        let p = pareto(3.0);
        assert!((p.tail_formula(E).unwrap() - (-3.0f64).exp()).abs() < 1e-15);
        let p = MdtParams::new(3.0, 2.0, SlowlyVarying::one()).unwrap();
        let want = (-6.0f64).exp() * 4.0;
        assert!((p.tail_formula(E * E).unwrap() - want).abs() < 1e-15);
        let p = MdtParams::new(4.0, -1.0, SlowlyVarying::one()).unwrap();
        let want = (-8.0f64).exp() / 2.0;
        assert!((p.tail_formula(E * E).unwrap() - want).abs() < 1e-16);
        assert!(p.tail_formula(2.0).is_err());
    }

    #[test]
    fn survival_plug_ins() {
        let p = pareto(3.0);
        assert_eq!(p.u_star(), E);
        assert_eq!(p.survival(0.0).unwrap(), 1.0);
        assert_eq!(p.survival(E).unwrap(), 1.0);
        let s = p.survival(E * E).unwrap();
        assert!((s - (-3.0f64).exp()).abs() < 1e-15);
        assert!(p.survival(-1.0).is_err());
        assert!(p.survival(f64::NAN).is_err());
    }

    #[test]
    fn quantile_plug_ins() {
        let p = pareto(3.0);
        assert_eq!(p.quantile(1.0).unwrap(), E);
        let u = p.quantile((-3.0f64).exp()).unwrap();
        assert!((u - E * E).abs() < 1e-12);
        assert!(p.quantile(0.0).is_err());
        assert!(p.quantile(1.5).is_err());
    }

    #[test]
    fn quantile_round_trip_log_factor() {
        let p = MdtParams::new(4.0, 1.0, SlowlyVarying::LogPower(1.0)).unwrap();
        let q = 1e-6;
        let u = p.quantile(q).unwrap();
        assert!((p.survival(u).unwrap() - q).abs() < 1e-10);
    }

    #[test]
    fn positive_gamma_activates_after_peak() {
        // ln tail = -3t + 5 ln t peaks at t = 5/3 and is still > 0 there.
        let p = MdtParams::new(3.0, 5.0, SlowlyVarying::one()).unwrap();
        let t = p.u_star().ln();
        assert!(t >= 5.0 / 3.0);
        assert!(p.tail_formula(p.u_star()).unwrap() <= 1.0 + 1e-12);
        assert!(p.d_log_tail(t) <= 0.0);
    }

    #[test]
    fn activation_override() {
        let p = MdtParams::with_activation(3.0, 0.0, SlowlyVarying::one(), 5.0).unwrap();
        assert_eq!(p.u_star(), 5.0);
        assert!(MdtParams::with_activation(3.0, 0.0, SlowlyVarying::one(), 2.0).is_err());
        // Too early for a rising formula.
        assert!(MdtParams::with_activation(3.0, 5.0, SlowlyVarying::one(), E).is_err());
        assert!(MdtParams::new(2.0, 0.0, SlowlyVarying::one()).is_err());
    }

    #[test]
    fn proportional_beyond_activation() {
        let p = MdtParams::new(3.5, 1.5, "lp(-1)*ilp(2)".parse().unwrap()).unwrap();
        let base = p.survival(p.u_star() * 2.0).unwrap() / p.tail_formula(p.u_star() * 2.0).unwrap();
        for k in [3.0, 10.0, 1e3, 1e8] {
            let u = p.u_star() * k;
            let r = p.survival(u).unwrap() / p.tail_formula(u).unwrap();
            assert!(((r - base) / base).abs() < 1e-12);
        }
    }

    #[test]
    fn sampling_is_deterministic_and_chunk_free() {
        let p = MdtParams::new(4.0, 1.0, SlowlyVarying::LogPower(1.0)).unwrap();
        let a = sample(&p, 11, 40_000).unwrap();
        let b = sample(&p, 11, 40_000).unwrap();
        assert_eq!(a, b);
        let short = sample(&p, 11, 20_001).unwrap();
        assert_eq!(&a.values[..20_001], &short.values[..]);
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let c = single.install(|| sample(&p, 11, 40_000).unwrap());
        assert_eq!(a, c);
        assert_ne!(a.values, sample(&p, 12, 40_000).unwrap().values);
    }

    #[test]
    fn sample_mean_is_centered() {
        let p = pareto(4.0);
        let batch = sample(&p, 2024, 100_000).unwrap();
        let n = batch.len() as f64;
        let mean = batch.values.iter().sum::<f64>() / n;
        let var = batch.values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() <= 3.0 * (var / n).sqrt(), "mean {mean}");
    }

    #[test]
    fn sample_tail_within_dkw() {
        let p = pareto(4.0);
        let batch = sample(&p, 99, 100_000).unwrap();
        let u = 2.0 * p.u_star();
        let n = batch.len() as f64;
        let emp = batch.values.iter().filter(|x| x.abs() > u).count() as f64 / n;
        let band = ((2.0f64 / 1e-3).ln() / (2.0 * n)).sqrt();
        assert!((emp - p.survival(u).unwrap()).abs() <= band);
    }

    #[test]
    fn symmetric_million() {
        let p = pareto(4.0);
        let batch = sample(&p, 5, 1_000_000).unwrap();
        let n = batch.len() as f64;
        let mean = batch.values.iter().sum::<f64>() / n;
        let var = batch.values.iter().map(|x| x * x).sum::<f64>() / n - mean * mean;
        assert!(mean.abs() <= 4.0 * (var / n).sqrt());
    }

    #[test]
    fn csv_has_header_and_rows() {
        let p = pareto(3.0);
        let batch = sample(&p, 1, 3).unwrap();
        let csv = batch.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert!(lines[0].starts_with("# beta=3 gamma=0 v=c(1)"));
        assert!(lines[0].ends_with("seed=1"));
        assert_eq!(lines[1], "value");
        assert_eq!(lines.len(), 5);
    }

    fn law() -> impl Strategy<Value = MdtParams> {
        let v = prop_oneof![
            Just(SlowlyVarying::one()),
            (-2.0f64..2.0).prop_map(SlowlyVarying::LogPower),
            (-2.0f64..2.0, -2.0f64..2.0)
                .prop_map(|(a, b)| SlowlyVarying::LogPower(a).times(SlowlyVarying::IterLogPower(b))),
        ];
        (2.05f64..8.0, -3.0f64..3.0, v)
            .prop_map(|(b, g, v)| MdtParams::new(b, g, v).unwrap())
    }

    proptest! {
        #[test]
        fn survival_is_a_survival_function(p in law()) {
            prop_assert_eq!(p.survival(0.0).unwrap(), 1.0);
            let mut prev = 1.0;
            for i in 0..400 {
                let u = p.u_star() * 0.5 * 1.1f64.powi(i);
                let s = p.survival(u).unwrap();
                prop_assert!(s <= prev + 1e-15, "increase at u={}", u);
                prop_assert!((0.0..=1.0).contains(&s));
                prev = s;
            }
            prop_assert!(p.survival(1e300).unwrap() < 1e-100);
        }

        #[test]
        fn quantile_round_trip(p in law(), lq in -12.0f64..0.0) {
            let q = 10f64.powf(lq);
            let u = p.quantile(q).unwrap();
            prop_assert!((p.survival(u).unwrap() - q).abs() < 1e-10);
        }
    }
}
