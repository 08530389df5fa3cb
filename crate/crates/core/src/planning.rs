//! Cell adjacency graph, hop-count path search and exit-face assignment.

use std::collections::VecDeque;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{ConvexCell, Environment, CONTAIN_TOL};

/// Shared-facet detection tolerance.
const FACE_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanningError {
    #[error("start cell {start} and goal cell {goal} are not connected")]
    DisconnectedFreeSpace { start: usize, goal: usize },
    #[error("no path from cell {from} to cell {to}")]
    NoPath { from: usize, to: usize },
    #[error("cell {0} is not in the graph")]
    UnknownCell(usize),
    #[error("goal is not a vertex of cell {cell} with a valid CLF direction")]
    GoalNotVertex { cell: usize },
    #[error("cells {a} and {b} are consecutive in the plan but share no facet")]
    NotAdjacent { a: usize, b: usize },
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
}

/// A facet shared by two cells.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedFace {
    pub a: usize,
    pub b: usize,
    /// Facet row index in cell `a` and in cell `b`.
    pub row_a: usize,
    pub row_b: usize,
    /// Endpoints of the common segment.
    pub segment: (DVector<f64>, DVector<f64>),
}

impl SharedFace {
    pub fn midpoint(&self) -> DVector<f64> {
        (&self.segment.0 + &self.segment.1) * 0.5
    }

    /// Row index of the face in `cell`, if the cell is one of the two.
    pub fn row_in(&self, cell: usize) -> Option<usize> {
        if cell == self.a {
            Some(self.row_a)
        } else if cell == self.b {
            Some(self.row_b)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone)]
pub struct CellGraph {
    pub nodes: Vec<usize>,
    pub edges: Vec<SharedFace>,
    adjacency: Vec<Vec<usize>>,
}

impl CellGraph {
    /// Graph over abstract nodes `0..n` with the given undirected edges and no geometry.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut adjacency = vec![Vec::new(); n];
        for &(a, b) in edges {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for adj in &mut adjacency {
            adj.sort_unstable();
            adj.dedup();
        }
        Self {
            nodes: (0..n).collect(),
            edges: Vec::new(),
            adjacency,
        }
    }

    pub fn neighbors(&self, id: usize) -> &[usize] {
        &self.adjacency[id]
    }

    pub fn face_between(&self, a: usize, b: usize) -> Option<&SharedFace> {
        self.edges
            .iter()
            .find(|e| (e.a == a && e.b == b) || (e.a == b && e.b == a))
    }
}

/// Common segment of facet `ra` of `a` and facet `rb` of `b`, if they lie on the same line
/// with opposite normals and overlap with positive length.
fn shared_segment(
    a: &ConvexCell,
    ra: usize,
    b: &ConvexCell,
    rb: usize,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let na = a.body.normal(ra);
    let nb = b.body.normal(rb);
    if (&na + &nb).norm() > FACE_TOL || (a.body.offsets[ra] + b.body.offsets[rb]).abs() > FACE_TOL {
        return None;
    }
    let fa = a.facet_vertices(ra);
    let fb = b.facet_vertices(rb);
    if fa.len() < 2 || fb.len() < 2 || na.len() != 2 {
        return None;
    }
    // Parametrize the common line by the tangent direction.
    let t = DVector::from_vec(vec![-na[1], na[0]]);
    let range = |pts: &[DVector<f64>]| {
        let s: Vec<f64> = pts.iter().map(|p| p.dot(&t)).collect();
        (
            s.iter().cloned().fold(f64::INFINITY, f64::min),
            s.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        )
    };
    let (a0, a1) = range(&fa);
    let (b0, b1) = range(&fb);
    let (lo, hi) = (a0.max(b0), a1.min(b1));
    if hi - lo <= FACE_TOL {
        return None;
    }
    // Point on the line: -offset * normal (unit normal).
    let base = &na * (-a.body.offsets[ra]);
    Some((&base + &t * lo, &base + &t * hi))
}

/// Adjacency graph: an edge for every pair of cells sharing a facet segment of positive
/// length. Fails if the start and goal cells end up in different components.
pub fn build_graph(env: &Environment) -> Result<CellGraph, PlanningError> {
    let n = env.cells.len();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (&env.cells[i], &env.cells[j]);
            'rows: for ra in 0..a.body.num_rows() {
                for rb in 0..b.body.num_rows() {
                    if let Some(segment) = shared_segment(a, ra, b, rb) {
                        edges.push(SharedFace {
                            a: i,
                            b: j,
                            row_a: ra,
                            row_b: rb,
                            segment,
                        });
                        break 'rows;
                    }
                }
            }
        }
    }
    let pairs: Vec<(usize, usize)> = edges.iter().map(|e| (e.a, e.b)).collect();
    let mut graph = CellGraph::from_edges(n, &pairs);
    graph.edges = edges;
    if let (Some(start), Some(&goal)) = (env.locate(&env.start), env.goal_cells().first()) {
        if let Err(PlanningError::NoPath { .. }) = shortest_cell_path(&graph, start, goal) {
            return Err(PlanningError::DisconnectedFreeSpace { start, goal });
        }
    }
    Ok(graph)
}

/// Minimum-hop path. Among equal-length paths the one with the smallest next-cell ids wins.
pub fn shortest_cell_path(
    graph: &CellGraph,
    start: usize,
    goal: usize,
) -> Result<Vec<usize>, PlanningError> {
    let n = graph.nodes.len();
    for id in [start, goal] {
        if id >= n {
            return Err(PlanningError::UnknownCell(id));
        }
    }
    let mut parent = vec![usize::MAX; n];
    parent[start] = start;
    let mut queue = VecDeque::from([start]);
    while let Some(c) = queue.pop_front() {
        if c == goal {
            break;
        }
        for &nb in graph.neighbors(c) {
            if parent[nb] == usize::MAX {
                parent[nb] = c;
                queue.push_back(nb);
            }
        }
    }
    if parent[goal] == usize::MAX {
        return Err(PlanningError::NoPath {
            from: start,
            to: goal,
        });
    }
    let mut path = vec![goal];
    while *path.last().unwrap() != start {
        path.push(parent[*path.last().unwrap()]);
    }
    path.reverse();
    Ok(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlanMode {
    Stabilize,
    Patrol,
}

/// Linear CLF `V(x) = v . (x - o)` of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitAssignment {
    /// Facet row crossed to leave the cell; `None` in the goal cell.
    pub face: Option<usize>,
    pub v: DVector<f64>,
    pub o: DVector<f64>,
    /// Goal-cell facets through the goal that are shared with another cell. They bound no
    /// obstacle, so they carry no barrier.
    #[serde(default)]
    pub open_faces: Vec<usize>,
}

impl ExitAssignment {
    pub fn clf_value(&self, x: &DVector<f64>) -> f64 {
        self.v.dot(&(x - &self.o))
    }

    /// Facet rows that carry a barrier: every row except the exit face and open faces.
    pub fn obstacle_rows(&self, num_rows: usize) -> Vec<usize> {
        (0..num_rows)
            .filter(|&j| Some(j) != self.face && !self.open_faces.contains(&j))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub cell: usize,
    pub exit: ExitAssignment,
    pub successor: Option<usize>,
}

impl PlanEntry {
    /// Facet rows treated as obstacles.
    pub fn obstacle_rows(&self, cell: &ConvexCell) -> Vec<usize> {
        self.exit.obstacle_rows(cell.body.num_rows())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighLevelPlan {
    pub mode: PlanMode,
    pub entries: Vec<PlanEntry>,
}

impl HighLevelPlan {
    pub fn entry_for(&self, cell: usize) -> Option<&PlanEntry> {
        self.entries.iter().find(|e| e.cell == cell)
    }

    /// Index of the entry for the successor cell of `index`; `None` in the goal cell.
    pub fn next_index(&self, index: usize) -> Option<usize> {
        let next = self.entries[index].successor?;
        self.entries.iter().position(|e| e.cell == next)
    }

    /// Entry of the goal cell of a stabilizing plan.
    pub fn goal_index(&self) -> Option<usize> {
        match self.mode {
            PlanMode::Stabilize => self.entries.iter().position(|e| e.exit.face.is_none()),
            PlanMode::Patrol => None,
        }
    }
}

/// Goal-cell CLF: `o` is the goal and `v` the normalized sum of the inward unit normals of
/// the facets meeting at the goal, so `V >= 0` over the cell and `V(goal) = 0`. Facets
/// through the goal that are shared with a neighbor are left open: a barrier on them would
/// force `u` into the cell's tangent cone at the goal for every admissible PMF, which rules
/// out any robust controller that drives the state to the goal.
fn goal_assignment(
    graph: &CellGraph,
    cell: &ConvexCell,
    goal: &DVector<f64>,
) -> Result<ExitAssignment, PlanningError> {
    let err = PlanningError::GoalNotVertex { cell: cell.id };
    let active = cell.body.active_rows(goal, CONTAIN_TOL);
    if active.len() < cell.dim() || cell.body.max_violation(goal) > CONTAIN_TOL {
        return Err(err);
    }
    let mut v = DVector::zeros(cell.dim());
    for &j in &active {
        v -= cell.body.normal(j);
    }
    let norm = v.norm();
    if norm <= 1e-12 {
        return Err(err);
    }
    v /= norm;
    let open_faces = active
        .iter()
        .copied()
        .filter(|&j| graph.edges.iter().any(|e| e.row_in(cell.id) == Some(j)))
        .collect();
    let exit = ExitAssignment {
        face: None,
        v,
        o: goal.clone(),
        open_faces,
    };
    if cell.vertices.iter().any(|x| exit.clf_value(x) < -1e-9) {
        return Err(err);
    }
    Ok(exit)
}

fn face_assignment(
    env: &Environment,
    graph: &CellGraph,
    cell: usize,
    next: usize,
) -> Result<ExitAssignment, PlanningError> {
    let face = graph
        .face_between(cell, next)
        .ok_or(PlanningError::NotAdjacent { a: cell, b: next })?;
    let row = face.row_in(cell).expect("face belongs to cell");
    let c = &env.cells[cell];
    let shared_len = (&face.segment.1 - &face.segment.0).norm();
    let facet = c.facet_vertices(row);
    if facet.len() == 2 && ((&facet[1] - &facet[0]).norm() - shared_len).abs() > 1e-7 {
        log::warn!("exit facet of cell {cell} is only partly shared with cell {next}");
    }
    Ok(ExitAssignment {
        face: Some(row),
        v: -c.body.normal(row),
        o: face.midpoint(),
        open_faces: Vec::new(),
    })
}

/// Exit face, CLF direction and anchor for every cell of `path`. In patrol mode `path` is
/// a cycle whose first and last ids coincide.
pub fn assign_exit_faces(
    env: &Environment,
    graph: &CellGraph,
    path: &[usize],
    mode: PlanMode,
) -> Result<HighLevelPlan, PlanningError> {
    for &c in path {
        if c >= env.cells.len() {
            return Err(PlanningError::UnknownCell(c));
        }
    }
    let mut entries = Vec::new();
    match mode {
        PlanMode::Stabilize => {
            for (i, &cell) in path.iter().enumerate() {
                let (exit, successor) = match path.get(i + 1) {
                    Some(&next) => (face_assignment(env, graph, cell, next)?, Some(next)),
                    None => (goal_assignment(graph, &env.cells[cell], &env.goal)?, None),
                };
                entries.push(PlanEntry {
                    cell,
                    exit,
                    successor,
                });
            }
        }
        PlanMode::Patrol => {
            if path.len() < 3 || path.first() != path.last() {
                return Err(PlanningError::InvalidPlan(
                    "a patrol cycle needs at least two cells and must end where it starts".into(),
                ));
            }
            let cycle = &path[..path.len() - 1];
            for (i, &cell) in cycle.iter().enumerate() {
                if cycle[..i].contains(&cell) {
                    return Err(PlanningError::InvalidPlan(format!(
                        "cell {cell} appears twice in the patrol cycle"
                    )));
                }
                let next = path[i + 1];
                entries.push(PlanEntry {
                    cell,
                    exit: face_assignment(env, graph, cell, next)?,
                    successor: Some(next),
                });
            }
        }
    }
    Ok(HighLevelPlan { mode, entries })
}

/// Plan from the start cell to the goal cell, followed by entries routing every other
/// connected cell to that goal cell (stabilize), or around the environment's patrol cycle.
pub fn plan_environment(
    env: &Environment,
    graph: &CellGraph,
    mode: PlanMode,
) -> Result<HighLevelPlan, PlanningError> {
    match mode {
        PlanMode::Stabilize => {
            let start = env
                .locate(&env.start)
                .ok_or_else(|| PlanningError::InvalidPlan("start outside every cell".into()))?;
            // Nearest goal cell by hop count, smaller id on ties.
            let mut best: Option<Vec<usize>> = None;
            for goal in env.goal_cells() {
                if let Ok(p) = shortest_cell_path(graph, start, goal) {
                    if best.as_ref().map_or(true, |b| p.len() < b.len()) {
                        best = Some(p);
                    }
                }
            }
            let path = best.ok_or(PlanningError::DisconnectedFreeSpace {
                start,
                goal: env.goal_cells()[0],
            })?;
            let mut plan = assign_exit_faces(env, graph, &path, mode)?;
            // Every other connected cell hands over along its own shortest route to the
            // same goal cell, so any start in the free space has a controller.
            let goal_cell = *path.last().expect("nonempty path");
            for cell in 0..env.cells.len() {
                if path.contains(&cell) {
                    continue;
                }
                match shortest_cell_path(graph, cell, goal_cell) {
                    Ok(route) => {
                        let next = route[1];
                        plan.entries.push(PlanEntry {
                            cell,
                            exit: face_assignment(env, graph, cell, next)?,
                            successor: Some(next),
                        });
                    }
                    Err(_) => log::warn!("cell {cell} cannot reach the goal cell {goal_cell}"),
                }
            }
            Ok(plan)
        }
        PlanMode::Patrol => {
            let cycle = env.patrol_cycle.clone().ok_or_else(|| {
                PlanningError::InvalidPlan("environment has no patrol cycle".into())
            })?;
            assign_exit_faces(env, graph, &cycle, mode)
        }
    }
}
