use gk_core::constants::interval_extrema;
use gk_core::framework::{certify_framework_a, FrameworkParams};
use gk_core::particle::{Coupling, OscillatorEnsemble};
use gk_core::response::HalfWidth;
use gk_core::FrequencyResponse;
use proptest::prelude::*;

fn responses() -> Vec<FrequencyResponse> {
    vec![
        FrequencyResponse::linear(),
        FrequencyResponse::relativistic(1.0).unwrap(),
        FrequencyResponse::relativistic(3.0).unwrap(),
        FrequencyResponse::catalog("cubic").unwrap(),
        FrequencyResponse::catalog("tanh2").unwrap(),
        FrequencyResponse::catalog("arctan").unwrap(),
    ]
}

/// Maps s ∈ [−1, 1] into the checked part of the domain.
fn domain_point(r: &FrequencyResponse, s: f64) -> f64 {
    match r.half_width() {
        HalfWidth::Finite(l) => s * l * (1.0 - 1e-3),
        HalfWidth::Unbounded => 5.0 * s,
    }
}

proptest! {
    #[test]
    fn round_trip(which in 0usize..6, s in -1.0f64..1.0) {
        let r = &responses()[which];
        let x = domain_point(r, s);
        let back = r.invert(r.f(x)).unwrap();
        prop_assert!((back - x).abs() <= 1e-10, "{}: x = {x}, G(F(x)) = {back}", r.kind());
    }

    #[test]
    fn quotients_are_symmetric(which in 0usize..6, s in -1.0f64..1.0, t in -1.0f64..1.0) {
        let r = &responses()[which];
        let (x, y) = (domain_point(r, s), domain_point(r, t));
        prop_assert_eq!(r.quotient_inverse_f(x, y).unwrap(), r.quotient_inverse_f(y, x).unwrap());
        let (u, v) = (r.f(x) * 0.9, r.f(y) * 0.9);
        prop_assert_eq!(r.quotient_g_prime(u, v).unwrap(), r.quotient_g_prime(v, u).unwrap());
    }

    #[test]
    fn quotient_is_continuous_across_the_diagonal(which in 0usize..6, s in -0.9f64..0.9) {
        let r = &responses()[which];
        let x = domain_point(r, s);
        let eps = 1e-8 * x.abs().max(1.0);
        let q = r.quotient_inverse_f(x, x + 2.0 * eps).unwrap();
        let exact = 1.0 / r.f_prime(x);
        // Where F is nearly flat, F(x + 2ε) − F(x) loses most of its digits.
        prop_assume!(exact <= 100.0);
        prop_assert!((q - exact).abs() <= 1e-6 * exact.max(1.0), "{}: {q} vs {exact}", r.kind());
    }
}

#[test]
fn interval_constants_envelope_samples() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let cases = [
        (FrequencyResponse::catalog("cubic").unwrap(), -0.7, 1.2),
        (FrequencyResponse::relativistic(2.0).unwrap(), -1.5, 0.8),
        (FrequencyResponse::catalog("arctan").unwrap(), -1.0, 1.3),
        (FrequencyResponse::catalog("tanh2").unwrap(), -2.0, 0.5),
    ];
    for (r, a, b) in cases {
        let c = interval_extrema(&r, a, b, 1e-9).unwrap();
        assert!(c.is_consistent(), "{c:?}");
        let slack = 1e-9;
        let (fa, fb) = (r.f(a), r.f(b));
        for _ in 0..1000 {
            let x = rng.random_range(a..=b);
            let y = rng.random_range(a..=b);
            let fp = r.f_prime(x);
            assert!(c.m_fprime - slack <= fp && fp <= c.max_fprime + slack, "{}: F'({x}) = {fp}", r.kind());
            let q = r.quotient_inverse_f(x, y).unwrap();
            assert!(c.m_qinv - slack <= q && q <= c.max_qinv + slack, "{}: Q({x}, {y}) = {q}", r.kind());
            let u = rng.random_range(fa..=fb);
            let v = rng.random_range(fa..=fb);
            let gp = r.g_prime(u).unwrap();
            assert!(c.m_gprime - slack <= gp && gp <= c.max_gprime + slack, "{}: G'({u}) = {gp}", r.kind());
            let qg = r.quotient_g_prime(u, v).unwrap().abs();
            let tol = 1e-6 * c.max_qgp.max(1.0);
            assert!(c.m_qgp - tol <= qg && qg <= c.max_qgp + tol, "{}: |Q[G']({u}, {v})| = {qg}", r.kind());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn shrinking_kappa_flips_only_the_kappa_condition(
        n in 2usize..6,
        seed in 0u64..1000,
        spread in 0.05f64..0.5,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let r = FrequencyResponse::linear();
        let theta: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..0.5)).collect();
        let nu: Vec<f64> = (0..n).map(|_| rng.random_range(-spread..spread)).collect();
        let params = FrameworkParams::new(0.7, -100.0, 100.0).unwrap();
        let build = |k: f64| OscillatorEnsemble::new(&r, theta.clone(), nu.clone(), Coupling::Uniform(1.0), k).unwrap();
        let probe = build(1.0);
        let required = certify_framework_a(&r, &probe, &probe, &params).unwrap().kappa_required;
        let strong = build(1.5 * required);
        let c = certify_framework_a(&r, &strong, &strong, &params).unwrap();
        prop_assert!(c.overall, "{:?}", c.failing());
        let weak = build(0.9 * required);
        let c = certify_framework_a(&r, &weak, &weak, &params).unwrap();
        prop_assert!(!c.overall);
        let failing: Vec<&str> = c.conditions.iter().filter(|c| !c.holds).map(|c| c.name).collect();
        prop_assert_eq!(failing, vec!["kappa"]);
    }
}
