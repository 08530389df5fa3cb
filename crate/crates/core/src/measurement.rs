//! Robot-centered PMF grids, the expectation kernel and the feasible-PMF constraint set.
//!
//! Mass arrays are stored row-major: axis 0 varies slowest. Axis `q` of the array is
//! spatial axis `q`, and grid coordinates are cell-centered,
//! `theta_q(j) = w_q (j + 0.5) / n_q - w_q / 2`.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeasurementError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("landmark displacement {y:?} is outside the grid support")]
    LandmarkOutOfView { y: Vec<f64> },
    #[error("invalid PMF: {0}")]
    InvalidPmf(String),
    #[error("PMF file: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n: Vec<usize>,
    pub width: Vec<f64>,
}

impl GridSpec {
    pub fn new(n: Vec<usize>, width: Vec<f64>) -> Result<Self, MeasurementError> {
        let spec = Self { n, width };
        spec.validate()?;
        Ok(spec)
    }

    pub fn square(n: usize, width: f64) -> Self {
        Self {
            n: vec![n, n],
            width: vec![width, width],
        }
    }

    pub fn validate(&self) -> Result<(), MeasurementError> {
        if self.n.is_empty() || self.n.len() != self.width.len() {
            return Err(MeasurementError::InvalidGrid(
                "per-axis counts and widths must have the same nonzero length".into(),
            ));
        }
        if self.n.iter().any(|&n| n < 2) {
            return Err(MeasurementError::InvalidGrid("every axis needs n >= 2".into()));
        }
        if self.width.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(MeasurementError::InvalidGrid("widths must be positive".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.n.len()
    }

    pub fn num_points(&self) -> usize {
        self.n.iter().product()
    }

    pub fn pitch(&self, q: usize) -> f64 {
        self.width[q] / self.n[q] as f64
    }

    pub fn half_width(&self, q: usize) -> f64 {
        self.width[q] / 2.0
    }

    pub fn coord(&self, q: usize, j: usize) -> f64 {
        self.width[q] * (j as f64 + 0.5) / self.n[q] as f64 - self.width[q] / 2.0
    }

    /// Per-axis coordinates `theta_q`.
    pub fn axis_coords(&self, q: usize) -> Vec<f64> {
        (0..self.n[q]).map(|j| self.coord(q, j)).collect()
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.n).fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn unravel(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for q in (0..self.dim()).rev() {
            idx[q] = flat % self.n[q];
            flat /= self.n[q];
        }
        idx
    }

    pub fn in_support(&self, y: &[f64]) -> bool {
        y.len() == self.dim()
            && y
                .iter()
                .enumerate()
                .all(|(q, &v)| v.abs() <= self.half_width(q) + 1e-12)
    }

    /// Nearest grid index along axis `q`; ties go to the lower index.
    pub fn nearest_index(&self, q: usize, y: f64) -> usize {
        let t = (y + self.half_width(q)) / self.pitch(q) - 0.5;
        ((t - 0.5).ceil().max(0.0) as usize).min(self.n[q] - 1)
    }

    /// Grid refined by an integer factor per axis. With an odd factor every coarse center is
    /// also a fine center.
    pub fn refined(&self, factor: usize) -> Self {
        Self {
            n: self.n.iter().map(|&n| n * factor.max(1)).collect(),
            width: self.width.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PmfGrid {
    pub spec: GridSpec,
    pub mass: Vec<f64>,
}

impl PmfGrid {
    pub fn new(spec: GridSpec, mass: Vec<f64>) -> Result<Self, MeasurementError> {
        spec.validate()?;
        if mass.len() != spec.num_points() {
            return Err(MeasurementError::InvalidPmf(format!(
                "expected {} entries, got {}",
                spec.num_points(),
                mass.len()
            )));
        }
        if mass.iter().any(|&m| !(m >= 0.0) || !m.is_finite()) {
            return Err(MeasurementError::InvalidPmf("negative or non-finite mass".into()));
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(MeasurementError::InvalidPmf(format!("mass sums to {total}")));
        }
        Ok(Self { spec, mass })
    }

    pub fn uniform(spec: GridSpec) -> Self {
        let n = spec.num_points();
        Self {
            spec,
            mass: vec![1.0 / n as f64; n],
        }
    }

    pub fn vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.mass)
    }

    /// Per-axis marginals.
    pub fn marginals(&self) -> Marginals {
        let mut axes: Vec<Vec<f64>> = self.spec.n.iter().map(|&n| vec![0.0; n]).collect();
        for (flat, &m) in self.mass.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            for (q, j) in self.spec.unravel(flat).into_iter().enumerate() {
                axes[q][j] += m;
            }
        }
        Marginals {
            spec: self.spec.clone(),
            axes,
        }
    }

    /// Expectation of the displacement, `U P`.
    pub fn mean(&self) -> Vec<f64> {
        self.marginals().mean()
    }

    /// Row-major CSV: a header line `n_1,..,n_d,w_1,..,w_d`, then one mass value per line.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), MeasurementError> {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
        let io = |e: csv::Error| MeasurementError::Io(e.to_string());
        let mut header: Vec<String> = self.spec.n.iter().map(|n| n.to_string()).collect();
        header.extend(self.spec.width.iter().map(|w| w.to_string()));
        w.write_record(&header).map_err(io)?;
        for m in &self.mass {
            w.write_record([m.to_string()]).map_err(io)?;
        }
        w.flush().map_err(|e| MeasurementError::Io(e.to_string()))
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, MeasurementError> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(input);
        let mut records = r.records();
        let bad = |m: &str| MeasurementError::Io(m.to_string());
        let header = records
            .next()
            .ok_or_else(|| bad("empty file"))?
            .map_err(|e| bad(&e.to_string()))?;
        if header.len() % 2 != 0 || header.is_empty() {
            return Err(bad("header must hold n_1..n_d then w_1..w_d"));
        }
        let d = header.len() / 2;
        let n = (0..d)
            .map(|q| header[q].trim().parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| bad(&e.to_string()))?;
        let width = (d..2 * d)
            .map(|q| header[q].trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| bad(&e.to_string()))?;
        let mut mass = Vec::new();
        for rec in records {
            let rec = rec.map_err(|e| bad(&e.to_string()))?;
            for field in rec.iter() {
                mass.push(field.trim().parse::<f64>().map_err(|e| bad(&e.to_string()))?);
            }
        }
        PmfGrid::new(GridSpec::new(n, width)?, mass)
    }
}

/// Per-axis marginal masses of a PMF. Every basis map acts on one axis at a time, so the
/// marginals are all a controller needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginals {
    pub spec: GridSpec,
    pub axes: Vec<Vec<f64>>,
}

impl Marginals {
    /// `sum_j f(theta_q(j)) m_q(j)` for each axis.
    pub fn expect<F: Fn(usize, f64) -> f64>(&self, f: F) -> Vec<f64> {
        self.axes
            .iter()
            .enumerate()
            .map(|(q, m)| {
                m.iter()
                    .enumerate()
                    .filter(|(_, &p)| p != 0.0)
                    .map(|(j, &p)| f(q, self.spec.coord(q, j)) * p)
                    .sum()
            })
            .collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        self.expect(|_, t| t)
    }
}

/// `U`: row `q` holds `theta_q` of every grid point, in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectationKernel {
    pub spec: GridSpec,
    pub u: DMatrix<f64>,
}

pub fn build_expectation_kernel(spec: &GridSpec) -> ExpectationKernel {
    let d = spec.dim();
    let np = spec.num_points();
    let mut u = DMatrix::zeros(d, np);
    for flat in 0..np {
        for (q, j) in spec.unravel(flat).into_iter().enumerate() {
            u[(q, flat)] = spec.coord(q, j);
        }
    }
    ExpectationKernel {
        spec: spec.clone(),
        u,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyBounds {
    pub epsilon: f64,
    pub sigma_m: f64,
}

impl UncertaintyBounds {
    /// Logs a warning when a bound is below the grid pitch.
    pub fn check_resolution(&self, spec: &GridSpec) {
        let pitch = (0..spec.dim()).map(|q| spec.pitch(q)).fold(0.0, f64::max);
        if self.epsilon < pitch || self.sigma_m < pitch {
            log::warn!(
                "uncertainty bounds (epsilon={}, sigma_m={}) are below the grid pitch {pitch}",
                self.epsilon,
                self.sigma_m
            );
        }
    }
}

pub fn make_delta_pmf(spec: &GridSpec, y: &[f64]) -> Result<PmfGrid, MeasurementError> {
    if !spec.in_support(y) {
        return Err(MeasurementError::LandmarkOutOfView { y: y.to_vec() });
    }
    let idx: Vec<usize> = y
        .iter()
        .enumerate()
        .map(|(q, &v)| spec.nearest_index(q, v))
        .collect();
    let mut mass = vec![0.0; spec.num_points()];
    mass[spec.flat_index(&idx)] = 1.0;
    Ok(PmfGrid {
        spec: spec.clone(),
        mass,
    })
}

/// Truncated (3 sigma) 1-D Gaussian weights for offsets `-r..=r` cells.
fn gaussian_weights(sigma_cells: f64) -> Vec<f64> {
    if sigma_cells <= 0.0 {
        return vec![1.0];
    }
    let r = (3.0 * sigma_cells).ceil() as i64;
    (-r..=r)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma_cells * sigma_cells)).exp())
        .collect()
}

/// Drift in whole cells and Gaussian weights along axis `q`.
fn axis_blur(spec: &GridSpec, q: usize, drift: f64, variance: f64) -> (i64, Vec<f64>) {
    let pitch = spec.pitch(q);
    let shift = (drift / pitch).round() as i64;
    (shift, gaussian_weights(variance.max(0.0).sqrt() / pitch))
}

/// Spreads unit mass from `center` along one axis: the kernel center is clamped to the
/// grid and mass falling off the grid is dropped.
fn spread(n: usize, center: i64, weights: &[f64], out: &mut [f64], scale: f64) {
    let r = (weights.len() / 2) as i64;
    let c = center.clamp(0, n as i64 - 1);
    for (k, w) in weights.iter().enumerate() {
        let t = c + k as i64 - r;
        if t >= 0 && t < n as i64 {
            out[t as usize] += scale * w;
        }
    }
}

/// Convolves with an isotropic Gaussian of the given variance shifted by `drift`, both in
/// workspace units. Drift is rounded to whole cells, the kernel is truncated at 3 standard
/// deviations, off-grid mass is clipped and the result renormalized.
pub fn blur_pmf(p: &PmfGrid, drift: &[f64], variance: f64) -> PmfGrid {
    let spec = &p.spec;
    let mut mass = p.mass.clone();
    // The kernel is separable, so blur one axis at a time.
    for q in 0..spec.dim() {
        let (shift, weights) = axis_blur(spec, q, drift.get(q).copied().unwrap_or(0.0), variance);
        let n = spec.n[q];
        let stride: usize = spec.n[q + 1..].iter().product();
        let outer: usize = spec.n[..q].iter().product();
        let mut out = vec![0.0; mass.len()];
        let mut line_in = vec![0.0; n];
        let mut line_out = vec![0.0; n];
        for o in 0..outer {
            for s in 0..stride {
                let base = o * n * stride + s;
                for j in 0..n {
                    line_in[j] = mass[base + j * stride];
                }
                line_out.iter_mut().for_each(|v| *v = 0.0);
                for (j, &m) in line_in.iter().enumerate() {
                    if m != 0.0 {
                        spread(n, j as i64 + shift, &weights, &mut line_out, m);
                    }
                }
                for j in 0..n {
                    out[base + j * stride] = line_out[j];
                }
            }
        }
        mass = out;
    }
    let total: f64 = mass.iter().sum();
    mass.iter_mut().for_each(|m| *m /= total);
    PmfGrid {
        spec: spec.clone(),
        mass,
    }
}

/// Marginals of the blurred delta PMF at `y`, computed without forming the grid. Equal to
/// `blur_pmf(make_delta_pmf(y)).marginals()`.
pub fn blurred_delta_marginals(
    spec: &GridSpec,
    y: &[f64],
    drift: &[f64],
    variance: f64,
) -> Result<Marginals, MeasurementError> {
    if !spec.in_support(y) {
        return Err(MeasurementError::LandmarkOutOfView { y: y.to_vec() });
    }
    let axes = (0..spec.dim())
        .map(|q| {
            let (shift, weights) =
                axis_blur(spec, q, drift.get(q).copied().unwrap_or(0.0), variance);
            let mut line = vec![0.0; spec.n[q]];
            spread(
                spec.n[q],
                spec.nearest_index(q, y[q]) as i64 + shift,
                &weights,
                &mut line,
                1.0,
            );
            let total: f64 = line.iter().sum();
            line.iter_mut().for_each(|m| *m /= total);
            line
        })
        .collect();
    Ok(Marginals {
        spec: spec.clone(),
        axes,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    pub mean_error: Vec<f64>,
    pub mad: Vec<f64>,
    pub feasible: bool,
}

/// Mean error `U P - y` and mean absolute deviation per axis, checked against the bounds.
pub fn check_pmf_feasible(
    p: &PmfGrid,
    kernel: &ExpectationKernel,
    bounds: &UncertaintyBounds,
    truth: &[f64],
) -> FeasibilityReport {
    let d = kernel.u.nrows();
    let mut mean_error = vec![0.0; d];
    let mut mad = vec![0.0; d];
    for (i, &m) in p.mass.iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        for q in 0..d {
            mean_error[q] += kernel.u[(q, i)] * m;
            mad[q] += (kernel.u[(q, i)] - truth[q]).abs() * m;
        }
    }
    for q in 0..d {
        mean_error[q] -= truth[q];
    }
    let feasible = mean_error.iter().all(|e| e.abs() <= bounds.epsilon + 1e-12)
        && mad.iter().all(|&m| m <= bounds.sigma_m + 1e-12);
    FeasibilityReport {
        mean_error,
        mad,
        feasible,
    }
}

/// Affine description of the feasible PMFs for one landmark `l`:
///
/// * mean block `A'_x x + A_p P + b_p <= 0` (2d rows) with `A_p = [U; -U]`,
///   `A'_x = [I; -I]`, `b_p = [-l - eps; l - eps]`;
/// * MAD block per axis `q`: `z_q . P <= sigma_m`, `U_q - (l - x)_q <= z_q` and
///   `-U_q + (l - x)_q <= z_q` elementwise.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityConstraints {
    pub a_p: DMatrix<f64>,
    pub a_x: DMatrix<f64>,
    pub b_p: DVector<f64>,
    pub u: DMatrix<f64>,
    pub landmark: DVector<f64>,
    pub sigma_m: f64,
}

pub fn assemble_probability_constraints(
    kernel: &ExpectationKernel,
    bounds: &UncertaintyBounds,
    landmark: &DVector<f64>,
) -> ProbabilityConstraints {
    let d = kernel.u.nrows();
    let np = kernel.u.ncols();
    let mut a_p = DMatrix::zeros(2 * d, np);
    let mut a_x = DMatrix::zeros(2 * d, d);
    let mut b_p = DVector::zeros(2 * d);
    for q in 0..d {
        a_p.row_mut(q).copy_from(&kernel.u.row(q));
        a_p.row_mut(d + q).copy_from(&(-kernel.u.row(q)));
        a_x[(q, q)] = 1.0;
        a_x[(d + q, q)] = -1.0;
        b_p[q] = -landmark[q] - bounds.epsilon;
        b_p[d + q] = landmark[q] - bounds.epsilon;
    }
    ProbabilityConstraints {
        a_p,
        a_x,
        b_p,
        u: kernel.u.clone(),
        landmark: landmark.clone(),
        sigma_m: bounds.sigma_m,
    }
}

impl ProbabilityConstraints {
    pub fn dim(&self) -> usize {
        self.a_x.ncols()
    }

    pub fn num_points(&self) -> usize {
        self.a_p.ncols()
    }

    /// Mean-block residuals `A'_x x + A_p P + b_p`.
    pub fn mean_residuals(&self, x: &DVector<f64>, p: &DVector<f64>) -> DVector<f64> {
        &self.a_x * x + &self.a_p * p + &self.b_p
    }

    /// Smallest `z` satisfying the elementwise MAD rows: `|U_q - (l - x)_q|`.
    pub fn minimal_z(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let y = &self.landmark - x;
        DMatrix::from_fn(self.dim(), self.num_points(), |q, i| (self.u[(q, i)] - y[q]).abs())
    }

    /// Largest residual over every row of both blocks, with `z` at its minimal value.
    pub fn max_residual(&self, x: &DVector<f64>, p: &DVector<f64>) -> f64 {
        let z = self.minimal_z(x);
        let mad = (&z * p).add_scalar(-self.sigma_m);
        self.mean_residuals(x, p).max().max(mad.max())
    }
}
