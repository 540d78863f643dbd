use mdtail_core::bounds::{q_bound_closed, q_bound_fenchel, BoundConstants, DEFAULT_ROSENTHAL_C0};
use mdtail_core::gls::{fenchel, FenchelCurve, GeneratingFunction};
use mdtail_core::{MdtParams, SlowlyVarying};

fn law(beta: f64, gamma: f64) -> MdtParams {
    MdtParams::new(beta, gamma, SlowlyVarying::one()).unwrap()
}

#[test]
fn transform_approaches_the_logarithmic_asymptote() {
    // γ = 0, V ≡ 1: ν*(y) = sup_p (p y + ln(β − p)) = β y − 1 − ln y for y ≥ 1/(β − 2).
    for beta in [3.0, 4.0, 6.0] {
        let psi = GeneratingFunction::from_theta(&law(beta, 0.0)).unwrap();
        for y in [5.0, 10.0, 20.0, 40.0] {
            let f = fenchel(&psi, y).unwrap();
            let exact = beta * y - 1.0 - y.ln();
            assert!((f.value - exact).abs() < 1e-8, "beta={beta} y={y}: {} vs {exact}", f.value);
            assert!((f.argmax - (beta - 1.0 / y)).abs() < 1e-4);
        }
    }
}

#[test]
fn transform_curve_is_convex_and_monotone() {
    for (beta, gamma) in [(4.0, 0.0), (3.0, -1.0), (5.0, 2.0), (3.5, -2.0)] {
        let psi = GeneratingFunction::from_theta(&law(beta, gamma)).unwrap();
        let ys: Vec<f64> = (0..200).map(|i| 1.0 + 0.25 * i as f64).collect();
        let c = FenchelCurve::compute(&psi, &ys).unwrap();
        assert!(c.is_convex(1e-8), "({beta},{gamma})");
        assert!(c.is_nondecreasing(1e-12));
        assert!(c.argmax_nondecreasing(1e-8));
    }
}

#[test]
fn bound_logs_agree_far_in_the_tail() {
    for (beta, gamma) in [(4.0, 0.0), (3.0, 1.0), (5.0, -0.5)] {
        let p = law(beta, gamma);
        let c = BoundConstants::pessimistic(&p, DEFAULT_ROSENTHAL_C0).unwrap();
        let u = 30f64.exp();
        let r = q_bound_fenchel(&p, &c, u).unwrap().value.ln() / q_bound_closed(&p, &c, u).unwrap().ln();
        assert!((0.95..=1.05).contains(&r), "({beta},{gamma}): {r}");
    }
}
