use gk_core::continuum::{self, dyadic_partition, project_data, ContinuumData, KernelField, PiecewiseField, ScalarField};
use gk_core::framework::{certify_framework_b, FrameworkParams};
use gk_core::{FrequencyResponse, Scheme, TimeGrid};
use proptest::prelude::*;
use std::f64::consts::FRAC_PI_4;

proptest! {
    #[test]
    fn refine_then_coarsen_is_identity(values in prop::collection::vec(-1.0f64..1.0, 8), extra in 1usize..4) {
        let f = PiecewiseField { d: 1, level: 3, values: values.clone(), time: 0.0 };
        let fine = PiecewiseField { d: 1, level: 3 + extra, values: f.refine(3 + extra), time: 0.0 };
        let back = fine.coarsen(3);
        for (a, b) in back.iter().zip(&values) {
            prop_assert!((a - b).abs() <= 1e-15);
        }
        prop_assert!(fine.sup_distance(&f) == 0.0);
    }

    #[test]
    fn cellwise_data_projects_exactly(values in prop::collection::vec(-1.0f64..1.0, 4), level in 2usize..6) {
        let field = ScalarField::Cellwise { level: 2, values: values.clone() };
        let p = dyadic_partition(1, level).unwrap();
        for (k, cell) in p.cells.iter().enumerate() {
            let parent = k >> (level - 2);
            prop_assert_eq!(field.cell_average(cell).unwrap(), values[parent]);
        }
    }

    #[test]
    fn cell_lookup_agrees_with_cell_bounds(x in 0.0f64..1.0, y in 0.0f64..1.0, level in 0usize..8) {
        let k = continuum::cell_index(&[x, y], level);
        let cell = continuum::Cell::new(2, level, k);
        for (i, &c) in [x, y].iter().enumerate() {
            prop_assert!(cell.lo[i] <= c && c <= cell.hi[i]);
        }
    }
}

fn data() -> ContinuumData {
    ContinuumData::new(
        1,
        ScalarField::Affine { offset: 0.0, slope: vec![0.3] },
        ScalarField::centered_sine(0.1, 1.0, 0),
        KernelField::Constant(1.0),
        3.0,
    )
    .unwrap()
}

#[test]
fn certificate_examples() {
    let r = FrequencyResponse::linear();
    let params = FrameworkParams::new(FRAC_PI_4, -10.0, 10.0).unwrap();
    let still = ContinuumData::new(
        1,
        ScalarField::Affine { offset: 0.0, slope: vec![0.3] },
        ScalarField::Constant(0.0),
        KernelField::Constant(1.0),
        3.0,
    )
    .unwrap();
    let c = certify_framework_b(&r, &still, &params).unwrap();
    assert!(c.certificate.overall);
    assert!((c.certificate.kappa_required - 2.0 / FRAC_PI_4.cos()).abs() < 1e-12);
    let steep = still.with_theta0(ScalarField::Affine { offset: 0.0, slope: vec![2.0] }).unwrap();
    assert_eq!(certify_framework_b(&r, &steep, &params).unwrap().certificate.condition("diameter"), Some(false));
}

#[test]
fn continuum_solution_stays_trapped_and_converges() {
    let r = FrequencyResponse::linear();
    let params = FrameworkParams::new(FRAC_PI_4, -10.0, 10.0).unwrap();
    let grid = TimeGrid::new(5.0, 1e-2, 10).unwrap();
    let sol = continuum::solve_continuum(&r, &data(), &params, 8, grid, Scheme::Rk4).unwrap();
    assert!(continuum::continuum_diameter_check(&sol, FRAC_PI_4).pass);
    let rows = continuum::continuum_limit_experiment(&r, &data(), &params, &[3, 4, 5], 8, grid, Scheme::Rk4).unwrap();
    assert!(rows[1].sup_error < rows[0].sup_error && rows[2].sup_error < rows[1].sup_error);
}

#[test]
fn lattice_at_level_zero_is_a_single_oscillator() {
    let r = FrequencyResponse::linear();
    let lat = project_data(&data(), 0).unwrap();
    assert_eq!(lat.theta0, vec![0.15]);
    assert!(lat.nu[0].abs() < 1e-8, "{}", lat.nu[0]);
    let ens = lat.ensemble(&r).unwrap();
    assert_eq!(ens.n(), 1);
}
