mod common;

use approx::assert_abs_diff_eq;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

use common::{random_pmf, rng, v};
use safe_field_core::measurement::{
    assemble_probability_constraints, blur_pmf, blurred_delta_marginals, build_expectation_kernel,
    check_pmf_feasible, make_delta_pmf, GridSpec, MeasurementError, PmfGrid, UncertaintyBounds,
};

#[test]
fn two_by_two_kernel() {
    let spec = GridSpec::square(2, 2.0);
    let k = build_expectation_kernel(&spec);
    // Row-major: axis 0 varies slowest.
    let expected = DMatrix::from_row_slice(2, 4, &[-0.5, -0.5, 0.5, 0.5, -0.5, 0.5, -0.5, 0.5]);
    assert_abs_diff_eq!(k.u, expected, epsilon = 1e-15);
}

#[test]
fn kernel_columns_follow_flat_order() {
    let spec = GridSpec::new(vec![3, 4], vec![6.0, 2.0]).unwrap();
    let k = build_expectation_kernel(&spec);
    for flat in 0..spec.num_points() {
        let (i, j) = (flat / 4, flat % 4);
        assert_eq!(spec.unravel(flat), vec![i, j]);
        assert_eq!(spec.flat_index(&[i, j]), flat);
        assert_abs_diff_eq!(k.u[(0, flat)], -3.0 + 2.0 * (i as f64 + 0.5), epsilon = 1e-14);
        assert_abs_diff_eq!(k.u[(1, flat)], -1.0 + 0.5 * (j as f64 + 0.5), epsilon = 1e-14);
    }
}

#[test]
fn centered_delta_and_uniform_have_zero_mean() {
    let spec = GridSpec::square(5, 10.0);
    let k = build_expectation_kernel(&spec);
    let delta = make_delta_pmf(&spec, &[0.0, 0.0]).unwrap();
    assert_abs_diff_eq!(&k.u * delta.vector(), DVector::zeros(2), epsilon = 1e-15);
    let uniform = PmfGrid::uniform(spec);
    assert_abs_diff_eq!(&k.u * uniform.vector(), DVector::zeros(2), epsilon = 1e-14);
}

#[test]
fn delta_snaps_to_nearest_point() {
    let spec = GridSpec::square(3, 3.0);
    let p = make_delta_pmf(&spec, &[0.4, 0.0]).unwrap();
    assert_eq!(p.mass[spec.flat_index(&[1, 1])], 1.0);
    let p = make_delta_pmf(&spec, &[1.2, -0.9]).unwrap();
    assert_eq!(p.mass[spec.flat_index(&[2, 0])], 1.0);
    assert!(matches!(
        make_delta_pmf(&spec, &[1.6, 0.0]),
        Err(MeasurementError::LandmarkOutOfView { .. })
    ));
}

#[test]
fn delta_mean_is_within_half_a_pitch() {
    let spec = GridSpec::square(30, 30.0);
    let k = build_expectation_kernel(&spec);
    let mut r = rng(21);
    for _ in 0..200 {
        let y = [r.gen_range(-15.0..15.0), r.gen_range(-15.0..15.0)];
        let p = make_delta_pmf(&spec, &y).unwrap();
        let rep = check_pmf_feasible(&p, &k, &UncertaintyBounds { epsilon: 0.5, sigma_m: 0.5 }, &y);
        assert!(rep.feasible, "{y:?}: {rep:?}");
        // A delta has MAD equal to its mean error.
        for q in 0..2 {
            assert_abs_diff_eq!(rep.mad[q], rep.mean_error[q].abs(), epsilon = 1e-12);
        }
    }
}

#[test]
fn zero_blur_is_identity() {
    let spec = GridSpec::square(8, 8.0);
    let mut r = rng(3);
    let p = PmfGrid::new(spec, random_pmf(&mut r, 64, 10)).unwrap();
    let b = blur_pmf(&p, &[0.0, 0.0], 0.0);
    for (x, y) in p.mass.iter().zip(&b.mass) {
        assert_abs_diff_eq!(x, y, epsilon = 1e-15);
    }
}

#[test]
fn drifted_blur_moves_the_mean() {
    let spec = GridSpec::square(30, 30.0);
    let p = make_delta_pmf(&spec, &[0.0, 0.0]).unwrap();
    let b = blur_pmf(&p, &[3.0, 0.0], 12.0);
    assert_abs_diff_eq!(b.mass.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    assert!(b.mass.iter().all(|&m| m >= 0.0));
    let mean = b.mean();
    let base = p.mean();
    assert!((mean[0] - base[0] - 3.0).abs() <= spec.pitch(0));
    assert!((mean[1] - base[1]).abs() <= spec.pitch(1));
    // The spread matches the variance away from the edges.
    let var0: f64 = b
        .marginals()
        .axes[0]
        .iter()
        .enumerate()
        .map(|(j, m)| m * (spec.coord(0, j) - mean[0]).powi(2))
        .sum();
    assert!((var0 - 12.0).abs() < 0.5, "{var0}");
}

#[test]
fn marginal_shortcut_matches_full_blur() {
    let spec = GridSpec::square(12, 30.0);
    let mut r = rng(8);
    for _ in 0..20 {
        let y = [r.gen_range(-15.0..15.0), r.gen_range(-15.0..15.0)];
        let drift = [r.gen_range(-4.0..4.0), r.gen_range(-4.0..4.0)];
        let var = r.gen_range(0.0..20.0);
        let full = blur_pmf(&make_delta_pmf(&spec, &y).unwrap(), &drift, var).marginals();
        let fast = blurred_delta_marginals(&spec, &y, &drift, var).unwrap();
        for q in 0..2 {
            for (a, b) in full.axes[q].iter().zip(&fast.axes[q]) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
        }
    }
}

#[test]
fn two_point_mad() {
    // Half the mass at -a and half at +a around a truth of 0 has mean 0 and MAD a.
    let spec = GridSpec::new(vec![4, 2], vec![8.0, 2.0]).unwrap();
    let k = build_expectation_kernel(&spec);
    let mut mass = vec![0.0; 8];
    mass[spec.flat_index(&[0, 0])] = 0.25;
    mass[spec.flat_index(&[0, 1])] = 0.25;
    mass[spec.flat_index(&[3, 0])] = 0.25;
    mass[spec.flat_index(&[3, 1])] = 0.25;
    let p = PmfGrid::new(spec, mass).unwrap();
    let rep = check_pmf_feasible(&p, &k, &UncertaintyBounds { epsilon: 0.0, sigma_m: 3.0 }, &[0.0, 0.0]);
    assert_abs_diff_eq!(rep.mean_error[0], 0.0, epsilon = 1e-14);
    assert_abs_diff_eq!(rep.mad[0], 3.0, epsilon = 1e-14);
    assert_abs_diff_eq!(rep.mad[1], 0.5, epsilon = 1e-14);
    assert!(rep.feasible);
    let tight = check_pmf_feasible(&p, &k, &UncertaintyBounds { epsilon: 0.0, sigma_m: 2.9 }, &[0.0, 0.0]);
    assert!(!tight.feasible);
}

#[test]
fn case_study_sensor_is_feasible() {
    let spec = GridSpec::square(30, 30.0);
    let k = build_expectation_kernel(&spec);
    let bounds = UncertaintyBounds { epsilon: 4.0, sigma_m: 16.0 };
    let y = [1.3, -2.2];
    let p = blur_pmf(&make_delta_pmf(&spec, &y).unwrap(), &[3.0, 3.0], 12.0);
    let rep = check_pmf_feasible(&p, &k, &bounds, &y);
    assert!(rep.feasible, "{rep:?}");
}

#[test]
fn constraint_block_shapes_and_values() {
    let spec = GridSpec::square(3, 3.0);
    let k = build_expectation_kernel(&spec);
    let l = v(&[2.0, -1.0]);
    let c = assemble_probability_constraints(&k, &UncertaintyBounds { epsilon: 0.5, sigma_m: 1.0 }, &l);
    assert_eq!(c.a_p.shape(), (4, 9));
    assert_eq!(c.a_x.shape(), (4, 2));
    assert_eq!(c.b_p.len(), 4);
    assert_abs_diff_eq!(c.b_p, v(&[-2.5, 0.5, 1.5, -1.5]), epsilon = 1e-15);
    assert_abs_diff_eq!(c.a_x, DMatrix::from_row_slice(4, 2, &[1., 0., 0., 1., -1., 0., 0., -1.]));
    for i in 0..9 {
        assert_eq!(c.a_p[(2, i)], -c.a_p[(0, i)]);
        assert_eq!(c.a_p[(0, i)], k.u[(0, i)]);
    }
}

#[test]
fn zero_epsilon_pins_the_mean() {
    let spec = GridSpec::square(3, 3.0);
    let k = build_expectation_kernel(&spec);
    let l = v(&[1.0, 1.0]);
    let x = v(&[0.0, 1.0]);
    let c = assemble_probability_constraints(&k, &UncertaintyBounds { epsilon: 0.0, sigma_m: 5.0 }, &l);
    // The delta at y = l - x = (1, 0) has mean exactly y, so every mean row is tight.
    let p = make_delta_pmf(&spec, &[1.0, 0.0]).unwrap().vector();
    assert_abs_diff_eq!(c.mean_residuals(&x, &p), DVector::zeros(4), epsilon = 1e-14);
    let off = make_delta_pmf(&spec, &[0.0, 0.0]).unwrap().vector();
    assert!(c.mean_residuals(&x, &off).max() > 0.5);
}

/// The affine blocks accept exactly the PMFs the direct moment check accepts.
#[test]
fn blocks_agree_with_moment_check() {
    let mut r = rng(31);
    let mut accepted = 0;
    for trial in 0..500 {
        let n = r.gen_range(2..7);
        let spec = GridSpec::square(n, r.gen_range(2.0..12.0));
        let k = build_expectation_kernel(&spec);
        let bounds = UncertaintyBounds {
            epsilon: r.gen_range(0.0..2.0),
            sigma_m: r.gen_range(0.0..4.0),
        };
        let l = v(&[r.gen_range(-3.0..3.0), r.gen_range(-3.0..3.0)]);
        let x = v(&[r.gen_range(-3.0..3.0), r.gen_range(-3.0..3.0)]);
        let c = assemble_probability_constraints(&k, &bounds, &l);
        let support = r.gen_range(1..4);
        let p = PmfGrid::new(spec.clone(), random_pmf(&mut r, spec.num_points(), support)).unwrap();
        let y: Vec<f64> = (&l - &x).iter().cloned().collect();
        let direct = check_pmf_feasible(&p, &k, &bounds, &y);
        let residual = c.max_residual(&x, &p.vector());
        if (residual.abs()) > 1e-9 {
            assert_eq!(direct.feasible, residual <= 0.0, "trial {trial}: {residual} vs {direct:?}");
        }
        accepted += direct.feasible as usize;
    }
    assert!(accepted > 0);
}

#[test]
fn pmf_validation_and_csv() {
    let spec = GridSpec::square(2, 2.0);
    assert!(PmfGrid::new(spec.clone(), vec![0.5, 0.5, 0.5, -0.5]).is_err());
    assert!(PmfGrid::new(spec.clone(), vec![0.5, 0.5, 0.5]).is_err());
    assert!(PmfGrid::new(spec.clone(), vec![0.5, 0.5, 0.5, 0.5]).is_err());
    assert!(GridSpec::new(vec![1, 4], vec![1.0, 1.0]).is_err());
    let p = PmfGrid::new(spec, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
    let mut buf = Vec::new();
    p.write_csv(&mut buf).unwrap();
    let back = PmfGrid::read_csv(buf.as_slice()).unwrap();
    assert_eq!(back, p);
}
