mod common;

use approx::assert_abs_diff_eq;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

use common::{exit_through, random_cell, random_pmf, rng, v};
use safe_field_core::basis::{CellGains, GainBasis, GainLayout};
use safe_field_core::clfcbf::{
    build_cbf_rows, build_clf_row, evaluate_row, numeric_c_p, Dynamics, RowKind,
};
use safe_field_core::geometry::ConvexCell;
use safe_field_core::measurement::GridSpec;
use safe_field_core::planning::ExitAssignment;

fn unit_square() -> ConvexCell {
    let pts = [v(&[0.0, 0.0]), v(&[1.0, 0.0]), v(&[1.0, 1.0]), v(&[0.0, 1.0])];
    ConvexCell::from_polygon(0, &pts, vec![0]).unwrap()
}

fn layout(n_u: usize, d: usize, n_maps: usize, n_landmarks: usize) -> GainLayout {
    GainLayout { n_u, d, n_maps, n_landmarks }
}

#[test]
fn clf_row_for_single_integrator() {
    let spec = GridSpec::square(3, 3.0);
    let basis = GainBasis::mean_only();
    let mats = basis.matrices(&spec);
    let lay = layout(2, 2, 1, 1);
    let exit = ExitAssignment {
        face: Some(1),
        v: v(&[-1.0, 0.0]),
        o: v(&[1.0, 0.5]),
        open_faces: vec![],
    };
    let row = build_clf_row(&exit, &Dynamics::single_integrator(2), 2.0, &mats, &lay);
    assert_eq!(row.kind, RowKind::Clf);
    assert_abs_diff_eq!(row.c_x, v(&[-2.0, 0.0]));
    // r = v . K_b - alpha_v v . o = -K_b[0] + 2.
    let mut gains = vec![0.0; lay.len()];
    assert_abs_diff_eq!(row.r.evaluate(&gains), 2.0);
    gains[lay.k_b(0)] = 1.5;
    assert_abs_diff_eq!(row.r.evaluate(&gains), 0.5);
    // c_p = R' K' v: only K[0][*] enters, through the first row of U.
    gains[lay.k(0, 0, 0, 0)] = 1.0;
    let cp = numeric_c_p(&row, &gains);
    for j in 0..9 {
        assert_abs_diff_eq!(cp[j], -mats[0][(0, j)], epsilon = 1e-15);
    }
    // Zero alpha drops the state term.
    let flat = build_clf_row(&exit, &Dynamics::single_integrator(2), 0.0, &mats, &lay);
    assert_abs_diff_eq!(flat.c_x, DVector::zeros(2));
    assert_abs_diff_eq!(flat.r.evaluate(&vec![0.0; lay.len()]), 0.0);
}

#[test]
fn cbf_rows_for_square() {
    let cell = unit_square();
    let spec = GridSpec::square(3, 3.0);
    let mats = GainBasis::default().matrices(&spec);
    let lay = layout(2, 2, 3, 1);
    let rows = build_cbf_rows(&cell, &[0, 2, 3], &Dynamics::single_integrator(2), 10.0, &mats, &lay);
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[1].kind, RowKind::Cbf { facet: 2 });
    // Top facet y <= 1: a = (0, 1), b = -1.
    assert_abs_diff_eq!(rows[1].c_x, v(&[0.0, 10.0]), epsilon = 1e-14);
    assert_abs_diff_eq!(rows[1].r.evaluate(&vec![0.0; lay.len()]), -10.0, epsilon = 1e-14);
    // With K_b = (0, 1) the top row reads a . u = 1 added to alpha_h (y - 1).
    let mut g = vec![0.0; lay.len()];
    g[lay.k_b(1)] = 1.0;
    assert_abs_diff_eq!(rows[1].r.evaluate(&g), -9.0, epsilon = 1e-14);
}

#[test]
fn exit_leaves_one_fewer_row() {
    let mut r = rng(2);
    for id in 0..10 {
        let cell = random_cell(&mut r, id, &[0.0, 0.0], 5.0);
        let face = r.gen_range(0..cell.body.num_rows());
        let exit = exit_through(&cell, face);
        let obstacles = exit.obstacle_rows(cell.body.num_rows());
        assert_eq!(obstacles.len(), cell.body.num_rows() - 1);
        assert!(!obstacles.contains(&face));
    }
}

#[test]
fn zero_gains_examples() {
    let cell = unit_square();
    let spec = GridSpec::square(3, 3.0);
    let mats = GainBasis::default().matrices(&spec);
    let lay = layout(2, 2, 3, 1);
    let dynamics = Dynamics::single_integrator(2);
    let exit = exit_through(&cell, 1);
    let clf = build_clf_row(&exit, &dynamics, 1.0, &mats, &lay);
    let cbfs = build_cbf_rows(&cell, &exit.obstacle_rows(4), &dynamics, 100.0, &mats, &lay);
    let zeros = vec![0.0; lay.len()];
    let p = DVector::from_element(9, 1.0 / 9.0);
    // On the exit face V = 0 and nothing moves.
    for y in [0.0, 0.3, 1.0] {
        assert_abs_diff_eq!(evaluate_row(&clf, &zeros, &v(&[1.0, y]), &p), 0.0, epsilon = 1e-14);
    }
    // Inside, a CBF row equals -alpha_h h_j < 0.
    let x = v(&[0.25, 0.6]);
    let h = cell.body.evaluate(&x).map(|e| -e);
    for row in &cbfs {
        let RowKind::Cbf { facet } = row.kind else { unreachable!() };
        let val = evaluate_row(row, &zeros, &x, &p);
        assert_abs_diff_eq!(val, -100.0 * h[facet], epsilon = 1e-12);
        assert!(val < 0.0);
    }
}

/// Row value computed by forming `u` from the gains and plugging into the definition.
fn direct_value(
    w: &DVector<f64>,
    alpha: f64,
    constant: f64,
    dynamics: &Dynamics,
    gains: &CellGains,
    mats: &[DMatrix<f64>],
    x: &DVector<f64>,
    pmfs: &[DVector<f64>],
) -> f64 {
    let mut u = gains.k_b.clone();
    for (m, p) in pmfs.iter().enumerate() {
        u += gains.k_p(m, mats) * p;
    }
    w.dot(&dynamics.rhs(x, &u)) + alpha * w.dot(x) + constant
}

#[test]
fn rows_match_direct_substitution() {
    let mut r = rng(17);
    let spec = GridSpec::square(4, 6.0);
    let mats = GainBasis::default().matrices(&spec);
    for id in 0..10 {
        let (d, n_u, nl) = (2, r.gen_range(1..4), r.gen_range(1..3));
        let dynamics = Dynamics {
            a: DMatrix::from_fn(d, d, |_, _| r.gen_range(-1.0..1.0)),
            b: DMatrix::from_fn(d, n_u, |_, _| r.gen_range(-1.0..1.0)),
        };
        let lay = layout(n_u, d, 3, nl);
        let values: Vec<f64> = (0..lay.len()).map(|_| r.gen_range(-2.0..2.0)).collect();
        let gains = CellGains::from_values(&lay, &values);
        assert_eq!(gains.to_values(), values);
        let cell = random_cell(&mut r, id, &[0.0, 0.0], 4.0);
        let exit = exit_through(&cell, 0);
        let (alpha_v, alpha_h) = (r.gen_range(0.0..3.0), r.gen_range(0.0..50.0));
        let x = v(&[r.gen_range(-3.0..3.0), r.gen_range(-3.0..3.0)]);
        let pmfs: Vec<DVector<f64>> = (0..nl)
            .map(|_| DVector::from_vec(random_pmf(&mut r, 16, 5)))
            .collect();
        let stacked = DVector::from_iterator(16 * nl, pmfs.iter().flat_map(|p| p.iter().cloned()));

        let clf = build_clf_row(&exit, &dynamics, alpha_v, &mats, &lay);
        let want = direct_value(&exit.v, alpha_v, -alpha_v * exit.v.dot(&exit.o), &dynamics, &gains, &mats, &x, &pmfs);
        assert_abs_diff_eq!(evaluate_row(&clf, &values, &x, &stacked), want, epsilon = 1e-10);

        let obstacles: Vec<usize> = (1..cell.body.num_rows()).collect();
        for row in build_cbf_rows(&cell, &obstacles, &dynamics, alpha_h, &mats, &lay) {
            let RowKind::Cbf { facet } = row.kind else { unreachable!() };
            let a = cell.body.normal(facet);
            let want = direct_value(&a, alpha_h, alpha_h * cell.body.offsets[facet], &dynamics, &gains, &mats, &x, &pmfs);
            assert_abs_diff_eq!(evaluate_row(&row, &values, &x, &stacked), want, epsilon = 1e-9);
        }
    }
}

#[test]
fn rows_are_affine_in_state_and_pmf() {
    let mut r = rng(23);
    let spec = GridSpec::square(3, 3.0);
    let mats = GainBasis::default().matrices(&spec);
    let lay = layout(2, 2, 3, 1);
    let cell = random_cell(&mut r, 0, &[0.0, 0.0], 4.0);
    let exit = exit_through(&cell, 2);
    let row = build_clf_row(&exit, &Dynamics::single_integrator(2), 1.0, &mats, &lay);
    let g: Vec<f64> = (0..lay.len()).map(|_| r.gen_range(-1.0..1.0)).collect();
    for _ in 0..20 {
        let (x0, x1) = (
            v(&[r.gen_range(-3.0..3.0), r.gen_range(-3.0..3.0)]),
            v(&[r.gen_range(-3.0..3.0), r.gen_range(-3.0..3.0)]),
        );
        let (p0, p1) = (
            DVector::from_vec(random_pmf(&mut r, 9, 3)),
            DVector::from_vec(random_pmf(&mut r, 9, 3)),
        );
        let f = |x: &DVector<f64>, p: &DVector<f64>| evaluate_row(&row, &g, x, p);
        let xm = (&x0 + &x1) / 2.0;
        let pm = (&p0 + &p1) / 2.0;
        // Second differences of an affine map vanish.
        assert_abs_diff_eq!(f(&x0, &p0) + f(&x1, &p0) - 2.0 * f(&xm, &p0), 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(f(&x0, &p0) + f(&x0, &p1) - 2.0 * f(&x0, &pm), 0.0, epsilon = 1e-10);
    }
}
