use std::ops::Index;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute slack for symmetry checks on ground metrics.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Dense row-major square matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n] }
    }

    pub fn from_vec(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::InvalidMetric(format!(
                "expected {} entries for a {n}x{n} matrix, got {}",
                n * n,
                data.len()
            )));
        }
        Ok(Self { n, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch { expected: n, found: row.len(), row: i });
            }
            data.extend_from_slice(row);
        }
        Ok(Self { n, data })
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.n, |i, j| self.get(j, i))
    }

    /// Largest |m_ij - m_ji|.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { n: self.n, data: self.data.iter().map(|&x| f(x)).collect() }
    }
}

impl Index<(usize, usize)> for SquareMatrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.n + j]
    }
}

/// Pairwise distances between the `d` locations of a discrete space.
///
/// Always symmetric (within [`SYMMETRY_TOL`]), with an exactly zero diagonal
/// and finite non-negative entries.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundMetric(SquareMatrix);

impl GroundMetric {
    pub fn new(m: SquareMatrix) -> Result<Self> {
        for i in 0..m.n() {
            if m.get(i, i) != 0.0 {
                return Err(Error::InvalidMetric(format!(
                    "diagonal entry {i} is {} (must be 0)",
                    m.get(i, i)
                )));
            }
        }
        if let Some(pos) = m.as_slice().iter().position(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidMetric(format!(
                "entry ({}, {}) is negative or non-finite",
                pos / m.n(),
                pos % m.n()
            )));
        }
        let asym = m.max_asymmetry();
        if asym > SYMMETRY_TOL {
            return Err(Error::InvalidMetric(format!("asymmetry {asym:e} exceeds tolerance")));
        }
        Ok(Self(m))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(SquareMatrix::from_rows(rows)?)
    }

    /// Number of locations.
    #[inline]
    pub fn d(&self) -> usize {
        self.0.n()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    pub fn matrix(&self) -> &SquareMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> SquareMatrix {
        self.0
    }

    /// Strict upper-triangular entries, row by row.
    pub fn off_diagonal(&self) -> Vec<f64> {
        let d = self.d();
        let mut out = Vec::with_capacity(d * d.saturating_sub(1) / 2);
        for i in 0..d {
            out.extend_from_slice(&self.0.row(i)[i + 1..]);
        }
        out
    }

    /// Distance matrix with the same entries under the relabelling
    /// `new[perm[i]][perm[j]] = old[i][j]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let d = self.d();
        let mut m = SquareMatrix::zeros(d);
        for i in 0..d {
            for j in 0..d {
                m.set(perm[i], perm[j], self.get(i, j));
            }
        }
        Self::new(m)
    }
}

impl Index<(usize, usize)> for GroundMetric {
    type Output = f64;

    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.0[idx]
    }
}
