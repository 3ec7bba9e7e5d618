use gk_core::particle::{self, Coupling, OscillatorEnsemble};
use gk_core::{FrequencyResponse, Scheme, TimeGrid};
use proptest::prelude::*;

fn response(which: usize) -> FrequencyResponse {
    match which {
        0 => FrequencyResponse::linear(),
        1 => FrequencyResponse::catalog("cubic").unwrap(),
        _ => FrequencyResponse::relativistic(2.0).unwrap(),
    }
}

fn symmetric(n: usize, upper: &[f64]) -> Vec<Vec<f64>> {
    let mut rows = vec![vec![0.0; n]; n];
    let mut k = 0;
    for a in 0..n {
        for b in a..n {
            rows[a][b] = upper[k % upper.len()];
            rows[b][a] = rows[a][b];
            k += 1;
        }
    }
    rows
}

fn ensemble_strategy() -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>, Vec<f64>, f64)> {
    (1usize..9).prop_flat_map(|n| {
        (
            Just(n),
            prop::collection::vec(0.0f64..1.5, n),
            prop::collection::vec(-1.0f64..1.0, n),
            prop::collection::vec(0.2f64..1.5, n * (n + 1) / 2),
            0.1f64..3.0,
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]
    #[test]
    fn mean_response_is_conserved(which in 0usize..3, (n, theta, nu, upper, kappa) in ensemble_strategy()) {
        let r = response(which);
        let phi = Coupling::dense(&symmetric(n, &upper)).unwrap();
        let ens = OscillatorEnsemble::new(&r, theta, nu, phi, kappa).unwrap();
        let traj = particle::integrate(&r, &ens, TimeGrid::new(2.0, 1e-2, 10).unwrap(), Scheme::Rk4).unwrap();
        prop_assert!(traj.max_conservation_error() <= 1e-10);
    }

    #[test]
    fn relabeling_permutes_the_trajectory(
        which in 0usize..3,
        (n, theta, nu, upper, kappa) in ensemble_strategy(),
        shuffle in any::<u64>(),
    ) {
        let r = response(which);
        let phi = Coupling::dense(&symmetric(n, &upper)).unwrap();
        let ens = OscillatorEnsemble::new(&r, theta, nu, phi, kappa).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut s = shuffle;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let relabeled = ens.permuted(&perm).unwrap();
        let grid = TimeGrid::new(3.0, 1e-2, 50).unwrap();
        let a = particle::integrate(&r, &ens, grid, Scheme::Rk4).unwrap();
        let b = particle::integrate(&r, &relabeled, grid, Scheme::Rk4).unwrap();
        for (x, y) in a.states.iter().zip(&b.states) {
            for (i, &p) in perm.iter().enumerate() {
                prop_assert!((y[i] - x[p]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn first_and_second_order_agree(which in 0usize..3, (n, theta, nu, upper, kappa) in ensemble_strategy()) {
        let r = response(which);
        let phi = Coupling::dense(&symmetric(n, &upper)).unwrap();
        let ens = OscillatorEnsemble::new(&r, theta, nu, phi, kappa).unwrap();
        let grid = TimeGrid::new(1.0, 1e-3, 100).unwrap();
        let a = particle::integrate(&r, &ens, grid, Scheme::Rk4).unwrap();
        let b = particle::integrate_second_order(&r, &ens, grid, Scheme::Rk4).unwrap();
        for (x, y) in a.states.iter().zip(&b.states) {
            for (p, q) in x.iter().zip(y) {
                prop_assert!((p - q).abs() <= 1e-8);
            }
        }
    }
}

#[test]
fn rk4_is_fourth_order() {
    let r = FrequencyResponse::catalog("cubic").unwrap();
    let ens = OscillatorEnsemble::new(
        &r,
        vec![0.0, 0.4, 0.9],
        vec![0.3, -0.1, -0.2],
        Coupling::dense(&[vec![1.0, 0.5, 0.8], vec![0.5, 1.0, 0.6], vec![0.8, 0.6, 1.0]]).unwrap(),
        1.5,
    )
    .unwrap();
    let end = |dt: f64| {
        let t = particle::integrate(&r, &ens, TimeGrid::new(2.0, dt, 1_000_000).unwrap(), Scheme::Rk4).unwrap();
        t.states.last().unwrap().clone()
    };
    let (a, b, c) = (end(0.1), end(0.05), end(0.025));
    let diff = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    let ratio = diff(&a, &b) / diff(&b, &c);
    assert!((8.0..=32.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn adaptive_scheme_matches_fixed_step() {
    let r = FrequencyResponse::relativistic(2.0).unwrap();
    let ens = OscillatorEnsemble::new(&r, vec![0.0, 0.3, 0.5], vec![0.2, 0.0, -0.2], Coupling::Uniform(1.0), 2.0).unwrap();
    let grid = TimeGrid::new(5.0, 1e-3, 500).unwrap();
    let a = particle::integrate(&r, &ens, grid, Scheme::Rk4).unwrap();
    let b = particle::integrate(&r, &ens, grid, Scheme::RKF45_DEFAULT).unwrap();
    assert_eq!(a.times, b.times);
    for (x, y) in a.states.iter().zip(&b.states) {
        for (p, q) in x.iter().zip(y) {
            assert!((p - q).abs() < 1e-8);
        }
    }
}

#[test]
fn leaving_a_bounded_range_stops_with_the_last_valid_time() {
    let r = FrequencyResponse::catalog("tanh2").unwrap();
    let theta = vec![0.0, 0.0];
    let nu = vec![1.7, -1.7];
    assert!(OscillatorEnsemble::new(&r, theta.clone(), nu.clone(), Coupling::Uniform(1.0), 1.0).is_err());
    let ens = OscillatorEnsemble::unchecked(theta, nu, Coupling::Uniform(1.0), 1.0).unwrap();
    match particle::integrate(&r, &ens, TimeGrid::new(20.0, 1e-3, 10).unwrap(), Scheme::Rk4) {
        Err(gk_core::GkError::Admissibility { last_valid_time, .. }) => {
            assert!(last_valid_time > 0.0 && last_valid_time < 20.0, "{last_valid_time}")
        }
        other => panic!("expected an admissibility error, got {other:?}"),
    }
}
