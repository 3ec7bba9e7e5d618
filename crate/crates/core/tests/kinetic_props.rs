use gk_core::kinetic::{self, EmpiricalMeasure, KineticParams, Marginal, Rho0Spec};
use gk_core::{FrequencyResponse, Scheme, TimeGrid};
use proptest::prelude::*;

fn points(n: usize) -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((0.0f64..1.0, -1.0f64..1.0), n)
}

fn weighted() -> impl Strategy<Value = EmpiricalMeasure> {
    (1usize..6).prop_flat_map(|n| (points(n), prop::collection::vec(1u64..6, n))).prop_map(|(p, w)| {
        let den = w.iter().sum();
        EmpiricalMeasure::new(p, w, den).unwrap()
    })
}

fn exponent() -> impl Strategy<Value = f64> {
    prop::sample::select(vec![1.0, 1.5, 2.0, 3.0])
}

proptest! {
    #[test]
    fn transport_matches_permutation_brute_force((a, b) in (1usize..7).prop_flat_map(|n| (points(n), points(n))), q in exponent()) {
        let (w, plan) = kinetic::wasserstein(
            &EmpiricalMeasure::uniform(a.clone()).unwrap(),
            &EmpiricalMeasure::uniform(b.clone()).unwrap(),
            q,
        ).unwrap();
        let brute = kinetic::wasserstein_brute_force(&a, &b, q).unwrap();
        prop_assert!((w - brute).abs() <= 1e-12, "{w} vs {brute}");
        let (rows, cols) = plan.marginals(a.len(), b.len());
        prop_assert!(rows.iter().chain(&cols).all(|&m| m == 1));
    }

    #[test]
    fn replication_matches_direct_transport(a in weighted(), b in weighted(), q in exponent()) {
        let (w, plan) = kinetic::wasserstein(&a, &b, q).unwrap();
        let rep = kinetic::wasserstein_by_replication(&a, &b, q).unwrap();
        prop_assert!((w - rep).abs() <= 1e-12, "{w} vs {rep}");
        let (rows, cols) = plan.marginals(a.len(), b.len());
        let scale_a = plan.denominator / a.denominator();
        let scale_b = plan.denominator / b.denominator();
        prop_assert!(rows.iter().zip(a.numerators()).all(|(r, w)| *r == w * scale_a));
        prop_assert!(cols.iter().zip(b.numerators()).all(|(c, w)| *c == w * scale_b));
    }

    #[test]
    fn metric_axioms(a in weighted(), b in weighted(), c in weighted(), q in exponent()) {
        let w = |x: &EmpiricalMeasure, y: &EmpiricalMeasure| kinetic::wasserstein(x, y, q).unwrap().0;
        prop_assert!(w(&a, &a) <= 1e-10);
        prop_assert!((w(&a, &b) - w(&b, &a)).abs() <= 1e-10);
        prop_assert!(w(&a, &c) <= w(&a, &b) + w(&b, &c) + 1e-10);
    }

    #[test]
    fn merging_atoms_keeps_the_distance(a in weighted(), b in weighted()) {
        let doubled = EmpiricalMeasure::new(
            a.points().iter().chain(a.points()).copied().collect(),
            a.numerators().iter().chain(a.numerators()).copied().collect(),
            2 * a.denominator(),
        ).unwrap();
        let w1 = kinetic::wasserstein(&a, &b, 2.0).unwrap().0;
        let w2 = kinetic::wasserstein(&doubled.merged(), &b, 2.0).unwrap().0;
        prop_assert!((w1 - w2).abs() <= 1e-12);
    }
}

fn params() -> KineticParams {
    KineticParams { theta_star: std::f64::consts::FRAC_PI_4, nu_l: -0.2, nu_r: 0.3, kappa: 3.0 }
}

fn spec() -> Rho0Spec {
    Rho0Spec::new(
        Marginal::Uniform { lo: 0.1, hi: 0.6 },
        Marginal::TruncatedNormal { mean: 0.05, sd: 0.05, lo: -0.05, hi: 0.15 },
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn samples_are_nested_recentered_and_supported(seed in any::<u64>(), n in 1usize..200) {
        let s = spec();
        let big = kinetic::sample_initial(&s, &params(), 2 * n, seed).unwrap();
        let small = kinetic::sample_initial(&s, &params(), n, seed).unwrap();
        for i in 0..n {
            prop_assert_eq!(small.points()[i].0, big.points()[i].0);
        }
        prop_assert!((small.mean_frequency() - s.mean_frequency()).abs() <= 1e-15);
        for p in big.points() {
            prop_assert!(0.0 < p.0 && p.0 < params().theta_star);
            prop_assert!(params().nu_l < p.1 && p.1 < params().nu_r);
        }
    }
}

#[test]
fn sample_mean_of_phases_converges() {
    let m = kinetic::sample_initial(&spec(), &params(), 20_000, 3).unwrap();
    let mean_theta = m.points().iter().map(|p| p.0).sum::<f64>() / m.len() as f64;
    // Standard error of the uniform mean is 0.5/√(12·20000) ≈ 1e-3.
    assert!((mean_theta - 0.35).abs() < 5e-3, "{mean_theta}");
}

#[test]
fn evolution_freezes_weights_and_frequencies_and_traps_phases() {
    let r = FrequencyResponse::relativistic(20.0).unwrap();
    let rho0 = EmpiricalMeasure::new(
        vec![(0.1, 0.1), (0.5, -0.1), (0.3, 0.0), (0.6, 0.05)],
        vec![1, 2, 3, 4],
        10,
    )
    .unwrap();
    let strong = KineticParams { kappa: 4.0, ..params() };
    let traj = kinetic::evolve_empirical(&r, &rho0, &strong, TimeGrid::new(20.0, 1e-2, 20).unwrap(), Scheme::Rk4).unwrap();
    for m in &traj.measures {
        assert_eq!(m.numerators(), rho0.numerators());
        assert_eq!(m.denominator(), rho0.denominator());
        for (p, p0) in m.points().iter().zip(rho0.points()) {
            assert_eq!(p.1.to_bits(), p0.1.to_bits());
        }
        let lo = m.points().iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let hi = m.points().iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        assert!(hi - lo <= params().theta_star + 1e-9);
    }
}

#[test]
fn replicated_atoms_move_together() {
    let r = FrequencyResponse::linear();
    let single = EmpiricalMeasure::new(vec![(0.1, 0.1), (0.4, -0.1)], vec![1, 2], 3).unwrap();
    let split = EmpiricalMeasure::uniform(vec![(0.1, 0.1), (0.4, -0.1), (0.4, -0.1)]).unwrap();
    let grid = TimeGrid::new(5.0, 1e-2, 50).unwrap();
    let a = kinetic::evolve_empirical(&r, &single, &params(), grid, Scheme::Rk4).unwrap();
    let b = kinetic::evolve_empirical(&r, &split, &params(), grid, Scheme::Rk4).unwrap();
    for (x, y) in a.measures.iter().zip(&b.measures) {
        assert!(kinetic::wasserstein(x, &y.merged(), 2.0).unwrap().0 <= 1e-12);
    }
}

#[test]
fn framework_rejects_weak_coupling_and_wide_support() {
    let r = FrequencyResponse::linear();
    let weak = KineticParams { kappa: 0.5, ..params() };
    let c = kinetic::certify_kinetic(&r, &weak, &[&spec()]).unwrap();
    assert_eq!(c.condition("kappa_cos"), Some(false));
    let wide = Rho0Spec::new(Marginal::Uniform { lo: 0.1, hi: 1.0 }, Marginal::Point(0.0)).unwrap();
    let c = kinetic::certify_kinetic(&r, &params(), &[&wide]).unwrap();
    assert_eq!(c.condition("support"), Some(false));
    let bounded = FrequencyResponse::catalog("tanh2").unwrap();
    let c = kinetic::certify_kinetic(&bounded, &params(), &[]).unwrap();
    assert_eq!(c.condition("full_range"), Some(false));
}
