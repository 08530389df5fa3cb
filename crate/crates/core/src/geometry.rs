//! Convex polytopes in halfspace form `A x + b <= 0`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use safe_field_lp::{solve_lp_with, Backend, Constraint, LpStatus, Sense, SolverOptions, StandardLp};

/// Vertex containment tolerance.
pub const CONTAIN_TOL: f64 = 1e-9;
/// Vertex deduplication distance.
pub const DEDUP_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("vertices are not in strictly convex counterclockwise order (at vertex {index})")]
    NonConvexInput { index: usize },
    #[error("consecutive vertices {index} and {next} coincide")]
    DegenerateInput { index: usize, next: usize },
    #[error("polytope is unbounded")]
    UnboundedPolytope,
    #[error("polytope is empty")]
    EmptyPolytope,
    #[error("halfspace row {row} has a zero normal")]
    ZeroNormal { row: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid environment: {0}")]
    InvalidEnvironment(String),
}

/// Rows `normals[j] . x + offsets[j] <= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfspaceSet {
    pub normals: DMatrix<f64>,
    pub offsets: DVector<f64>,
}

impl HalfspaceSet {
    pub fn new(normals: DMatrix<f64>, offsets: DVector<f64>) -> Result<Self, GeometryError> {
        if normals.nrows() != offsets.len() {
            return Err(GeometryError::DimensionMismatch(format!(
                "{} normals but {} offsets",
                normals.nrows(),
                offsets.len()
            )));
        }
        for j in 0..normals.nrows() {
            if normals.row(j).norm() == 0.0 {
                return Err(GeometryError::ZeroNormal { row: j });
            }
        }
        Ok(Self { normals, offsets })
    }

    pub fn dim(&self) -> usize {
        self.normals.ncols()
    }

    pub fn num_rows(&self) -> usize {
        self.normals.nrows()
    }

    pub fn normal(&self, j: usize) -> DVector<f64> {
        self.normals.row(j).transpose()
    }

    /// `A x + b`, one entry per row.
    pub fn evaluate(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.normals * x + &self.offsets
    }

    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        self.evaluate(x).max()
    }

    /// Same set with every normal scaled to unit length.
    pub fn normalized(&self) -> Self {
        let mut out = self.clone();
        for j in 0..self.num_rows() {
            let s = self.normals.row(j).norm();
            out.normals.row_mut(j).unscale_mut(s);
            out.offsets[j] /= s;
        }
        out
    }

    pub fn without_row(&self, j: usize) -> Self {
        Self {
            normals: self.normals.clone().remove_row(j),
            offsets: self.offsets.clone().remove_row(j),
        }
    }

    /// Rows that hold with equality at `x` within `tol`.
    pub fn active_rows(&self, x: &DVector<f64>, tol: f64) -> Vec<usize> {
        let r = self.evaluate(x);
        (0..r.len()).filter(|&j| r[j].abs() <= tol).collect()
    }
}

/// Halfspace form of a convex polygon given by counterclockwise vertices. Normals are unit
/// length and outward; row `i` is the edge from vertex `i` to vertex `i+1`.
pub fn polygon_to_halfspaces(vertices: &[DVector<f64>]) -> Result<HalfspaceSet, GeometryError> {
    let n = vertices.len();
    if vertices.iter().any(|v| v.len() != 2) {
        return Err(GeometryError::DimensionMismatch(
            "polygon input must be two-dimensional".into(),
        ));
    }
    if n < 3 {
        return Err(GeometryError::DimensionMismatch(format!(
            "a polygon needs at least 3 vertices, got {n}"
        )));
    }
    let edge = |i: usize| &vertices[(i + 1) % n] - &vertices[i];
    for i in 0..n {
        if edge(i).norm() <= 1e-12 {
            return Err(GeometryError::DegenerateInput {
                index: i,
                next: (i + 1) % n,
            });
        }
    }
    let mut turning = 0.0;
    for i in 0..n {
        let (e0, e1) = (edge(i), edge((i + 1) % n));
        let cross = e0[0] * e1[1] - e0[1] * e1[0];
        if cross <= 1e-12 * e0.norm() * e1.norm() {
            return Err(GeometryError::NonConvexInput { index: (i + 1) % n });
        }
        turning += cross.atan2(e0.dot(&e1));
    }
    // Left turns everywhere but winding more than once: a star, not a convex polygon.
    if (turning - 2.0 * std::f64::consts::PI).abs() > 1e-6 {
        return Err(GeometryError::NonConvexInput { index: 0 });
    }
    let mut normals = DMatrix::zeros(n, 2);
    let mut offsets = DVector::zeros(n);
    for i in 0..n {
        let e = edge(i);
        let len = e.norm();
        let nx = e[1] / len;
        let ny = -e[0] / len;
        normals[(i, 0)] = nx;
        normals[(i, 1)] = ny;
        offsets[i] = -(nx * vertices[i][0] + ny * vertices[i][1]);
    }
    HalfspaceSet::new(normals, offsets)
}

pub fn contains_point(body: &HalfspaceSet, x: &DVector<f64>, tol: f64) -> bool {
    body.evaluate(x).iter().all(|&r| r <= tol)
}

/// Vertices of a bounded polytope; counterclockwise in 2D.
pub fn cell_vertices(body: &HalfspaceSet) -> Result<Vec<DVector<f64>>, GeometryError> {
    let d = body.dim();
    if d == 0 {
        return Err(GeometryError::DimensionMismatch("zero-dimensional body".into()));
    }
    if !is_bounded(body)? {
        return Err(GeometryError::UnboundedPolytope);
    }
    let m = body.num_rows();
    let mut out: Vec<DVector<f64>> = Vec::new();
    let mut subset: Vec<usize> = (0..d).collect();
    if m >= d {
        loop {
            let a = DMatrix::from_fn(d, d, |r, c| body.normals[(subset[r], c)]);
            let b = DVector::from_fn(d, |r, _| -body.offsets[subset[r]]);
            if a.determinant().abs() > 1e-12 {
                if let Some(p) = a.lu().solve(&b) {
                    if body.max_violation(&p) <= CONTAIN_TOL
                        && !out.iter().any(|q| (q - &p).norm() <= DEDUP_TOL)
                    {
                        out.push(p);
                    }
                }
            }
            if !next_combination(&mut subset, m) {
                break;
            }
        }
    }
    if out.is_empty() {
        return Err(GeometryError::EmptyPolytope);
    }
    if d == 2 {
        let n = out.len() as f64;
        let cx = out.iter().map(|p| p[0]).sum::<f64>() / n;
        let cy = out.iter().map(|p| p[1]).sum::<f64>() / n;
        out.sort_by(|p, q| {
            let ap = (p[1] - cy).atan2(p[0] - cx);
            let aq = (q[1] - cy).atan2(q[0] - cx);
            ap.total_cmp(&aq)
        });
    }
    Ok(out)
}

fn next_combination(subset: &mut [usize], m: usize) -> bool {
    let k = subset.len();
    for i in (0..k).rev() {
        if subset[i] < m - k + i {
            subset[i] += 1;
            for j in i + 1..k {
                subset[j] = subset[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// True iff the recession cone `{r : A r <= 0}` is trivial.
fn is_bounded(body: &HalfspaceSet) -> Result<bool, GeometryError> {
    let d = body.dim();
    if d == 2 {
        // Normals positively span the plane iff no angular gap reaches pi.
        let mut angles: Vec<f64> = (0..body.num_rows())
            .map(|j| body.normals[(j, 1)].atan2(body.normals[(j, 0)]))
            .collect();
        if angles.len() < 3 {
            return Ok(false);
        }
        angles.sort_by(f64::total_cmp);
        let mut max_gap = angles[0] + 2.0 * std::f64::consts::PI - angles[angles.len() - 1];
        for w in angles.windows(2) {
            max_gap = max_gap.max(w[1] - w[0]);
        }
        return Ok(max_gap < std::f64::consts::PI - 1e-12);
    }
    // General d: maximize +-r_i over the recession cone intersected with a box.
    let options = SolverOptions::with_backend(Backend::DenseSimplex);
    for i in 0..d {
        for sign in [1.0, -1.0] {
            let mut lp = StandardLp::new(Sense::Maximize);
            for k in 0..d {
                lp.add_var(format!("r{k}"), -1.0, 1.0, if k == i { sign } else { 0.0 });
            }
            for j in 0..body.num_rows() {
                lp.ub.push(Constraint {
                    name: format!("row{j}"),
                    coeffs: (0..d).map(|k| (k, body.normals[(j, k)])).collect(),
                    rhs: 0.0,
                });
            }
            let sol = solve_lp_with(&lp, &options).map_err(|e| {
                GeometryError::DimensionMismatch(format!("boundedness check failed: {e}"))
            })?;
            if sol.status == LpStatus::Optimal && sol.objective > 1e-9 {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// A convex cell of the decomposition, stored with unit-norm facet rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexCell {
    pub id: usize,
    pub body: HalfspaceSet,
    pub landmark_ids: Vec<usize>,
    pub vertices: Vec<DVector<f64>>,
}

impl ConvexCell {
    pub fn from_polygon(
        id: usize,
        vertices: &[DVector<f64>],
        landmark_ids: Vec<usize>,
    ) -> Result<Self, GeometryError> {
        Self::from_halfspaces(id, polygon_to_halfspaces(vertices)?, landmark_ids)
    }

    pub fn from_halfspaces(
        id: usize,
        body: HalfspaceSet,
        landmark_ids: Vec<usize>,
    ) -> Result<Self, GeometryError> {
        let body = body.normalized();
        let vertices = cell_vertices(&body)?;
        Ok(Self {
            id,
            body,
            landmark_ids,
            vertices,
        })
    }

    pub fn dim(&self) -> usize {
        self.body.dim()
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        contains_point(&self.body, x, tol)
    }

    pub fn centroid(&self) -> DVector<f64> {
        let mut c = DVector::zeros(self.dim());
        for v in &self.vertices {
            c += v;
        }
        c / self.vertices.len() as f64
    }

    /// Vertices lying on facet `row`.
    pub fn facet_vertices(&self, row: usize) -> Vec<DVector<f64>> {
        self.vertices
            .iter()
            .filter(|v| {
                let r = self.body.normals.row(row).dot(&v.transpose()) + self.body.offsets[row];
                r.abs() <= 1e-7
            })
            .cloned()
            .collect()
    }

    /// Axis-aligned bounding box `(lower, upper)`.
    pub fn bounding_box(&self) -> (DVector<f64>, DVector<f64>) {
        let d = self.dim();
        let mut lo = DVector::from_element(d, f64::INFINITY);
        let mut hi = DVector::from_element(d, f64::NEG_INFINITY);
        for v in &self.vertices {
            for q in 0..d {
                lo[q] = lo[q].min(v[q]);
                hi[q] = hi[q].max(v[q]);
            }
        }
        (lo, hi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    pub dimension: usize,
    pub cells: Vec<ConvexCell>,
    pub landmarks: Vec<DVector<f64>>,
    pub start: DVector<f64>,
    pub goal: DVector<f64>,
    pub patrol_cycle: Option<Vec<usize>>,
}

impl Environment {
    /// Validates and builds an environment. Cell ids are their list positions.
    pub fn new(
        cells: Vec<ConvexCell>,
        landmarks: Vec<DVector<f64>>,
        start: DVector<f64>,
        goal: DVector<f64>,
        patrol_cycle: Option<Vec<usize>>,
    ) -> Result<Self, GeometryError> {
        let dimension = start.len();
        let env = Self {
            dimension,
            cells,
            landmarks,
            start,
            goal,
            patrol_cycle,
        };
        env.validate()?;
        Ok(env)
    }

    fn validate(&self) -> Result<(), GeometryError> {
        let invalid = |m: String| Err(GeometryError::InvalidEnvironment(m));
        if self.cells.is_empty() {
            return invalid("no cells".into());
        }
        if self.goal.len() != self.dimension {
            return invalid("goal dimension differs from start".into());
        }
        for (i, cell) in self.cells.iter().enumerate() {
            if cell.id != i {
                return invalid(format!("cell at position {i} has id {}", cell.id));
            }
            if cell.dim() != self.dimension {
                return invalid(format!("cell {i} has dimension {}", cell.dim()));
            }
            for &l in &cell.landmark_ids {
                if l >= self.landmarks.len() {
                    return invalid(format!("cell {i} references missing landmark {l}"));
                }
            }
        }
        if let Some(l) = self.landmarks.iter().find(|l| l.len() != self.dimension) {
            return invalid(format!("landmark {l:?} has the wrong dimension"));
        }
        if self.goal_cells().is_empty() {
            return invalid("goal is not a vertex of any cell".into());
        }
        if self.locate(&self.start).is_none() {
            return invalid("start lies outside every cell".into());
        }
        if let Some(cycle) = &self.patrol_cycle {
            if cycle.iter().any(|&c| c >= self.cells.len()) {
                return invalid("patrol cycle references a missing cell".into());
            }
        }
        // Sampled overlap test: interior samples of one cell must not be strictly inside
        // another.
        for a in &self.cells {
            let c = a.centroid();
            let mut samples = vec![c.clone()];
            samples.extend(a.vertices.iter().map(|v| &c + (v - &c) * 0.9));
            for b in &self.cells {
                if a.id == b.id {
                    continue;
                }
                if samples.iter().any(|s| b.body.max_violation(s) < -1e-7) {
                    return invalid(format!("cells {} and {} overlap", a.id, b.id));
                }
            }
        }
        Ok(())
    }

    /// Cells having the goal as a vertex.
    pub fn goal_cells(&self) -> Vec<usize> {
        self.cells
            .iter()
            .filter(|c| c.vertices.iter().any(|v| (v - &self.goal).norm() <= CONTAIN_TOL))
            .map(|c| c.id)
            .collect()
    }

    /// First cell (by id) containing `x` within a small tolerance.
    pub fn locate(&self, x: &DVector<f64>) -> Option<usize> {
        self.cells
            .iter()
            .find(|c| c.contains(x, 1e-9))
            .map(|c| c.id)
    }
}
