//! Gain parameterization `K_P = sum_i K_i R_i` through fixed per-axis maps, and the layout
//! of the gain decision variables.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::measurement::{GridSpec, Marginals};

/// A map applied elementwise to grid coordinates along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisMap {
    /// `theta`
    Mean,
    /// `theta^2`
    Quadratic,
    /// `cos(pi theta / halfwidth)`
    Cosine,
}

impl BasisMap {
    pub fn eval(self, theta: f64, half_width: f64) -> f64 {
        match self {
            BasisMap::Mean => theta,
            BasisMap::Quadratic => theta * theta,
            BasisMap::Cosine => {
                // Exact zeros at odd multiples of half the half-width instead of ~1e-17.
                let c = (std::f64::consts::PI * theta / half_width).cos();
                if c.abs() < 1e-12 {
                    0.0
                } else {
                    c
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BasisMap::Mean => "mean",
            BasisMap::Quadratic => "quadratic",
            BasisMap::Cosine => "cosine",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainBasis {
    pub maps: Vec<BasisMap>,
}

impl Default for GainBasis {
    fn default() -> Self {
        Self {
            maps: vec![BasisMap::Mean, BasisMap::Quadratic, BasisMap::Cosine],
        }
    }
}

impl GainBasis {
    pub fn mean_only() -> Self {
        Self {
            maps: vec![BasisMap::Mean],
        }
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.maps.iter().map(|m| m.name().to_string()).collect()
    }

    /// `R_i` as `d x n_p` matrices over the grid.
    pub fn matrices(&self, spec: &GridSpec) -> Vec<DMatrix<f64>> {
        let d = spec.dim();
        let np = spec.num_points();
        self.maps
            .iter()
            .map(|&map| {
                let mut r = DMatrix::zeros(d, np);
                for flat in 0..np {
                    for (q, j) in spec.unravel(flat).into_iter().enumerate() {
                        r[(q, flat)] = map.eval(spec.coord(q, j), spec.half_width(q));
                    }
                }
                r
            })
            .collect()
    }

    /// `R_i P` for every map, evaluated from the marginals on the marginals' own grid.
    pub fn features(&self, m: &Marginals) -> Vec<DVector<f64>> {
        self.maps
            .iter()
            .map(|&map| DVector::from_vec(m.expect(|q, t| map.eval(t, m.spec.half_width(q)))))
            .collect()
    }
}

/// Index layout of the gain variables: `K_{m,i}` (`n_u x d`, row-major) for every landmark
/// `m` and map `i`, followed by `K_b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GainLayout {
    pub n_u: usize,
    pub d: usize,
    pub n_maps: usize,
    pub n_landmarks: usize,
}

impl GainLayout {
    pub fn k(&self, m: usize, i: usize, a: usize, b: usize) -> usize {
        ((m * self.n_maps + i) * self.n_u + a) * self.d + b
    }

    pub fn k_b(&self, a: usize) -> usize {
        self.n_landmarks * self.n_maps * self.n_u * self.d + a
    }

    pub fn len(&self) -> usize {
        self.n_landmarks * self.n_maps * self.n_u * self.d + self.n_u
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Concrete gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellGains {
    /// `k[m][i]` is `K_{m,i}`.
    pub k: Vec<Vec<DMatrix<f64>>>,
    pub k_b: DVector<f64>,
}

impl CellGains {
    pub fn zeros(layout: &GainLayout) -> Self {
        Self {
            k: vec![vec![DMatrix::zeros(layout.n_u, layout.d); layout.n_maps]; layout.n_landmarks],
            k_b: DVector::zeros(layout.n_u),
        }
    }

    pub fn layout(&self) -> GainLayout {
        let first = &self.k[0][0];
        GainLayout {
            n_u: self.k_b.len(),
            d: first.ncols(),
            n_maps: self.k[0].len(),
            n_landmarks: self.k.len(),
        }
    }

    pub fn from_values(layout: &GainLayout, values: &[f64]) -> Self {
        let mut g = Self::zeros(layout);
        for m in 0..layout.n_landmarks {
            for i in 0..layout.n_maps {
                for a in 0..layout.n_u {
                    for b in 0..layout.d {
                        g.k[m][i][(a, b)] = values[layout.k(m, i, a, b)];
                    }
                }
            }
        }
        for a in 0..layout.n_u {
            g.k_b[a] = values[layout.k_b(a)];
        }
        g
    }

    pub fn to_values(&self) -> Vec<f64> {
        let layout = self.layout();
        let mut v = vec![0.0; layout.len()];
        for m in 0..layout.n_landmarks {
            for i in 0..layout.n_maps {
                for a in 0..layout.n_u {
                    for b in 0..layout.d {
                        v[layout.k(m, i, a, b)] = self.k[m][i][(a, b)];
                    }
                }
            }
        }
        for a in 0..layout.n_u {
            v[layout.k_b(a)] = self.k_b[a];
        }
        v
    }

    /// `K_{P,m} = sum_i K_{m,i} R_i` for landmark `m`.
    pub fn k_p(&self, m: usize, matrices: &[DMatrix<f64>]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.k_b.len(), matrices[0].ncols());
        for (k, r) in self.k[m].iter().zip(matrices) {
            out += k * r;
        }
        out
    }

    /// `u = sum_m sum_i K_{m,i} f_{m,i} + K_b` from per-landmark features `f_{m,i} = R_i P_m`.
    pub fn apply(&self, features: &[Vec<DVector<f64>>]) -> DVector<f64> {
        let mut u = self.k_b.clone();
        for (km, fm) in self.k.iter().zip(features) {
            for (k, f) in km.iter().zip(fm) {
                u += k * f;
            }
        }
        u
    }
}
