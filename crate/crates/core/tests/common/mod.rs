//! Random instances shared by the integration tests.
#![allow(dead_code)]

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use safe_field_core::geometry::ConvexCell;
use safe_field_core::measurement::{GridSpec, UncertaintyBounds};
use safe_field_core::planning::ExitAssignment;
use safe_field_core::synthesis::SynthesisConfig;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn v(xs: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(xs)
}

/// Counterclockwise points on a random ellipse around `center`; an affine image of points
/// on a circle is strictly convex.
pub fn random_polygon(rng: &mut ChaCha8Rng, n: usize, center: &[f64], radius: f64) -> Vec<DVector<f64>> {
    let mut angles: Vec<f64>;
    loop {
        angles = (0..n)
            .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
            .collect();
        angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut gaps: Vec<f64> = angles.windows(2).map(|w| w[1] - w[0]).collect();
        gaps.push(angles[0] + std::f64::consts::TAU - angles[n - 1]);
        let min_gap = gaps.iter().cloned().fold(f64::INFINITY, f64::min);
        let max_gap = gaps.iter().cloned().fold(0.0, f64::max);
        if min_gap > 0.25 && max_gap < 2.5 {
            break;
        }
    }
    let (sx, sy) = (radius * rng.gen_range(0.7..1.0), radius * rng.gen_range(0.7..1.0));
    let phi: f64 = rng.gen_range(0.0..std::f64::consts::PI);
    let (c, s) = (phi.cos(), phi.sin());
    angles
        .iter()
        .map(|&a| {
            let (px, py) = (sx * a.cos(), sy * a.sin());
            v(&[center[0] + c * px - s * py, center[1] + s * px + c * py])
        })
        .collect()
}

pub fn random_cell(rng: &mut ChaCha8Rng, id: usize, center: &[f64], radius: f64) -> ConvexCell {
    let n = rng.gen_range(4..=7);
    ConvexCell::from_polygon(id, &random_polygon(rng, n, center, radius), vec![0]).unwrap()
}

/// Exit through facet `face`: inward normal and facet midpoint.
pub fn exit_through(cell: &ConvexCell, face: usize) -> ExitAssignment {
    let f = cell.facet_vertices(face);
    ExitAssignment {
        face: Some(face),
        v: -cell.body.normal(face),
        o: (&f[0] + &f[1]) / 2.0,
        open_faces: Vec::new(),
    }
}

/// A random cell, its landmark and exit, sized so the landmark is visible from every
/// vertex of the grid `n x n` of width `width`.
pub struct Instance {
    pub cell: ConvexCell,
    pub landmark: DVector<f64>,
    pub exit: ExitAssignment,
    pub config: SynthesisConfig,
}

pub fn random_instance(
    rng: &mut ChaCha8Rng,
    id: usize,
    n: usize,
    width: f64,
    radius: f64,
    bounds: UncertaintyBounds,
) -> Instance {
    let cell = random_cell(rng, id, &[0.0, 0.0], radius);
    let landmark = v(&[rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)]);
    let face = rng.gen_range(0..cell.body.num_rows());
    let exit = exit_through(&cell, face);
    let mut config = SynthesisConfig::case_study(GridSpec::square(n, width));
    config.bounds = bounds;
    Instance {
        cell,
        landmark,
        exit,
        config,
    }
}

/// Random PMF with `support` nonzero entries.
pub fn random_pmf(rng: &mut ChaCha8Rng, np: usize, support: usize) -> Vec<f64> {
    let mut mass = vec![0.0; np];
    for _ in 0..support {
        mass[rng.gen_range(0..np)] += rng.gen_range(0.0..1.0);
    }
    let total: f64 = mass.iter().sum();
    if total == 0.0 {
        mass[0] = 1.0;
        return mass;
    }
    mass.iter().map(|m| m / total).collect()
}

/// Path of a file in the bundled case-study directory.
pub fn case_study(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data/case_study")
        .join(name)
}
