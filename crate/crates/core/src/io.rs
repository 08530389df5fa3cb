//! JSON records for environments and synthesized controllers.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{BasisMap, CellGains, GainBasis};
use crate::clfcbf::{Dynamics, RowKind};
use crate::geometry::{ConvexCell, Environment, GeometryError};
use crate::measurement::{GridSpec, UncertaintyBounds};
use crate::planning::{ExitAssignment, PlanMode};
use crate::synthesis::{CellController, RowMargin};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{path}: field `{field}`: {reason}")]
    Field {
        path: PathBuf,
        field: String,
        reason: String,
    },
    #[error("{path}: {source}")]
    Geometry {
        path: PathBuf,
        source: GeometryError,
    },
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(|source| IoError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| IoError::Parse {
        path: path.to_path_buf(),
        source,
    })
}

/// Pretty JSON with a trailing newline. Field order follows the record definitions.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("records serialize");
    s.push('\n');
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    /// Counter-clockwise polygon vertices.
    pub vertices: Vec<Vec<f64>>,
    pub landmark_ids: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentFile {
    pub dimension: usize,
    pub cells: Vec<CellRecord>,
    pub landmarks: Vec<Vec<f64>>,
    pub start: Vec<f64>,
    pub goal: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patrol_cycle: Option<Vec<usize>>,
}

impl EnvironmentFile {
    pub fn load(path: &Path) -> Result<Self, IoError> {
        read_json(path)
    }

    pub fn to_environment(&self, path: &Path) -> Result<Environment, IoError> {
        let field = |field: String, reason: String| IoError::Field {
            path: path.to_path_buf(),
            field,
            reason,
        };
        let geometry = |source| IoError::Geometry {
            path: path.to_path_buf(),
            source,
        };
        if self.dimension != 2 {
            return Err(field(
                "dimension".into(),
                "polygon input is only defined for d = 2".into(),
            ));
        }
        let point = |v: &[f64], name: String| {
            if v.len() == self.dimension {
                Ok(DVector::from_column_slice(v))
            } else {
                Err(field(name, format!("expected {} coordinates", self.dimension)))
            }
        };
        let mut cells = Vec::with_capacity(self.cells.len());
        for (i, c) in self.cells.iter().enumerate() {
            let vertices = c
                .vertices
                .iter()
                .enumerate()
                .map(|(k, v)| point(v, format!("cells[{i}].vertices[{k}]")))
                .collect::<Result<Vec<_>, _>>()?;
            cells.push(
                ConvexCell::from_polygon(i, &vertices, c.landmark_ids.clone()).map_err(geometry)?,
            );
        }
        let landmarks = self
            .landmarks
            .iter()
            .enumerate()
            .map(|(k, l)| point(l, format!("landmarks[{k}]")))
            .collect::<Result<Vec<_>, _>>()?;
        Environment::new(
            cells,
            landmarks,
            point(&self.start, "start".into())?,
            point(&self.goal, "goal".into())?,
            self.patrol_cycle.clone(),
        )
        .map_err(geometry)
    }
}

/// Loads and validates an environment file.
pub fn load_environment(path: &Path) -> Result<Environment, IoError> {
    EnvironmentFile::load(path)?.to_environment(path)
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| m.row(r).iter().cloned().collect())
        .collect()
}

fn from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, String> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != nc) {
        return Err(format!("{what}: ragged matrix"));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitRecord {
    pub face: Option<usize>,
    pub v: Vec<f64>,
    pub o: Vec<f64>,
    #[serde(default)]
    pub open_faces: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginRecord {
    #[serde(flatten)]
    pub kind: RowKind,
    pub delta: f64,
}

/// One cell's controller. Matrices are stored as lists of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerRecord {
    pub cell: usize,
    pub landmark_ids: Vec<usize>,
    pub landmarks: Vec<Vec<f64>>,
    pub exit: ExitRecord,
    pub alpha_v: f64,
    pub alpha_h: f64,
    pub epsilon: f64,
    pub sigma_m: f64,
    pub dynamics_a: Vec<Vec<f64>>,
    pub dynamics_b: Vec<Vec<f64>>,
    /// `gains_k[m][i]` is `K_{m,i}` (`n_u x d`).
    pub gains_k: Vec<Vec<Vec<Vec<f64>>>>,
    pub gains_kb: Vec<f64>,
    pub margins: Vec<MarginRecord>,
    pub objective: f64,
    pub goal_constraint: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerFile {
    pub mode: PlanMode,
    pub grid_n: Vec<usize>,
    pub grid_width: Vec<f64>,
    pub basis: Vec<BasisMap>,
    pub controllers: Vec<ControllerRecord>,
}

impl ControllerFile {
    pub fn from_controllers(mode: PlanMode, controllers: &[CellController]) -> Self {
        let first = controllers.first();
        Self {
            mode,
            grid_n: first.map_or(Vec::new(), |c| c.grid.n.clone()),
            grid_width: first.map_or(Vec::new(), |c| c.grid.width.clone()),
            basis: first.map_or(Vec::new(), |c| c.basis.maps.clone()),
            controllers: controllers.iter().map(record).collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        read_json(path)
    }

    pub fn to_controllers(&self, path: &Path) -> Result<Vec<CellController>, IoError> {
        let grid = GridSpec::new(self.grid_n.clone(), self.grid_width.clone()).map_err(|e| {
            IoError::Field {
                path: path.to_path_buf(),
                field: "grid".into(),
                reason: e.to_string(),
            }
        })?;
        let basis = GainBasis {
            maps: self.basis.clone(),
        };
        self.controllers
            .iter()
            .enumerate()
            .map(|(i, r)| {
                controller(r, &grid, &basis).map_err(|reason| IoError::Field {
                    path: path.to_path_buf(),
                    field: format!("controllers[{i}]"),
                    reason,
                })
            })
            .collect()
    }
}

fn record(c: &CellController) -> ControllerRecord {
    ControllerRecord {
        cell: c.cell_id,
        landmark_ids: c.landmark_ids.clone(),
        landmarks: c.landmarks.iter().map(|l| l.iter().cloned().collect()).collect(),
        exit: ExitRecord {
            face: c.exit.face,
            v: c.exit.v.iter().cloned().collect(),
            o: c.exit.o.iter().cloned().collect(),
            open_faces: c.exit.open_faces.clone(),
        },
        alpha_v: c.alpha_v,
        alpha_h: c.alpha_h,
        epsilon: c.bounds.epsilon,
        sigma_m: c.bounds.sigma_m,
        dynamics_a: rows(&c.dynamics.a),
        dynamics_b: rows(&c.dynamics.b),
        gains_k: c
            .gains
            .k
            .iter()
            .map(|km| km.iter().map(rows).collect())
            .collect(),
        gains_kb: c.gains.k_b.iter().cloned().collect(),
        margins: c
            .margins
            .iter()
            .map(|m| MarginRecord {
                kind: m.kind,
                delta: m.delta,
            })
            .collect(),
        objective: c.objective,
        goal_constraint: c.goal_constraint,
    }
}

fn controller(r: &ControllerRecord, grid: &GridSpec, basis: &GainBasis) -> Result<CellController, String> {
    let k = r
        .gains_k
        .iter()
        .map(|km| km.iter().map(|m| from_rows(m, "gains_k")).collect())
        .collect::<Result<Vec<Vec<_>>, _>>()?;
    if k.len() != r.landmarks.len() || k.iter().any(|km| km.len() != basis.len()) {
        return Err("gain blocks do not match landmarks and basis".into());
    }
    let gains = CellGains {
        k,
        k_b: DVector::from_vec(r.gains_kb.clone()),
    };
    let d = grid.dim();
    if gains.k.iter().flatten().any(|m| m.ncols() != d || m.nrows() != gains.k_b.len()) {
        return Err("gain matrices have the wrong shape".into());
    }
    Ok(CellController {
        cell_id: r.cell,
        landmark_ids: r.landmark_ids.clone(),
        landmarks: r.landmarks.iter().map(|l| DVector::from_vec(l.clone())).collect(),
        basis: basis.clone(),
        gains,
        margins: r
            .margins
            .iter()
            .map(|m| RowMargin {
                kind: m.kind,
                delta: m.delta,
            })
            .collect(),
        objective: r.objective,
        exit: ExitAssignment {
            face: r.exit.face,
            v: DVector::from_vec(r.exit.v.clone()),
            o: DVector::from_vec(r.exit.o.clone()),
            open_faces: r.exit.open_faces.clone(),
        },
        alpha_v: r.alpha_v,
        alpha_h: r.alpha_h,
        bounds: UncertaintyBounds {
            epsilon: r.epsilon,
            sigma_m: r.sigma_m,
        },
        grid: grid.clone(),
        dynamics: Dynamics {
            a: from_rows(&r.dynamics_a, "dynamics_a")?,
            b: from_rows(&r.dynamics_b, "dynamics_b")?,
        },
        goal_constraint: r.goal_constraint,
        duals: None,
    })
}
