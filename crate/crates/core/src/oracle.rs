//! Exact small-scale solvers used as ground truth.
//!
//! [`exact_ot`] runs the transportation simplex: a northwest-corner basic
//! feasible solution, duals from the basis spanning tree, and pivots chosen by
//! Bland's rule (lowest row-major index enters, lowest index leaves among
//! ratio-test ties). Bland's rule terminates on the degenerate bases that
//! appear whenever a marginal has zero entries.

use rayon::prelude::*;
use serde::Serialize;

use crate::domain::{GroundMetric, HistogramCollection, SquareMatrix};
use crate::error::{Error, Result};
use crate::kantorovich::{augment_histogram, build_augmented, AugmentedCost, DeltaSpec};
use crate::numeric::neumaier_sum;
use crate::sinkhorn::CostMatrix;

/// Largest problem accepted by [`exact_ot`].
pub const EXACT_SIZE_LIMIT: usize = 64;

/// Largest space accepted by [`grid_barycenter_oracle`].
pub const GRID_ORACLE_MAX_D: usize = 3;

const MASS_TOL: f64 = 1e-10;
const MAX_PIVOTS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactSolution {
    pub value: f64,
    #[serde(skip)]
    pub plan: SquareMatrix,
    pub basis_size: usize,
    pub pivots: usize,
    /// Smallest reduced cost over non-basic cells at termination.
    pub min_reduced_cost: f64,
}

pub fn exact_ot(a: &[f64], b: &[f64], cost: &CostMatrix) -> Result<ExactSolution> {
    let n = cost.n();
    if n > EXACT_SIZE_LIMIT {
        return Err(Error::SizeGuard { size: n, limit: EXACT_SIZE_LIMIT });
    }
    for x in [a, b] {
        if x.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: x.len(), row: 0 });
        }
        if let Some(index) = x.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::NegativeOrNonFiniteEntry { row: 0, index, value: x[index] });
        }
    }
    let mass_a = neumaier_sum(a.iter().copied());
    let mass_b = neumaier_sum(b.iter().copied());
    if (mass_a - mass_b).abs() > MASS_TOL * mass_a.max(1.0) {
        return Err(Error::MassMismatch { mass_a, mass_b });
    }
    if n == 0 {
        return Ok(ExactSolution {
            value: 0.0,
            plan: SquareMatrix::zeros(0),
            basis_size: 0,
            pivots: 0,
            min_reduced_cost: 0.0,
        });
    }
    TransportSimplex::new(a, b, cost.matrix()).solve()
}

struct TransportSimplex<'a> {
    m: usize,
    n: usize,
    cost: &'a SquareMatrix,
    flow: Vec<f64>,
    basic: Vec<bool>,
}

impl<'a> TransportSimplex<'a> {
    /// Northwest-corner start: exactly `m + n - 1` basic cells forming a
    /// spanning tree, some possibly carrying zero flow.
    fn new(a: &[f64], b: &[f64], cost: &'a SquareMatrix) -> Self {
        let (m, n) = (a.len(), b.len());
        let mut flow = vec![0.0; m * n];
        let mut basic = vec![false; m * n];
        let mut supply = a.to_vec();
        let mut demand = b.to_vec();
        let (mut i, mut j) = (0, 0);
        loop {
            let x = supply[i].min(demand[j]);
            flow[i * n + j] = x;
            basic[i * n + j] = true;
            supply[i] -= x;
            demand[j] -= x;
            if i == m - 1 && j == n - 1 {
                break;
            }
            if j == n - 1 || (i < m - 1 && supply[i] <= demand[j]) {
                i += 1;
            } else {
                j += 1;
            }
        }
        Self { m, n, cost, flow, basic }
    }

    fn adjacency(&self) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
        let mut rows = vec![Vec::new(); self.m];
        let mut cols = vec![Vec::new(); self.n];
        for i in 0..self.m {
            for j in 0..self.n {
                if self.basic[i * self.n + j] {
                    rows[i].push(j);
                    cols[j].push(i);
                }
            }
        }
        (rows, cols)
    }

    /// Potentials with `u_i + v_j = c_ij` on basic cells and `u_0 = 0`.
    fn duals(&self, rows: &[Vec<usize>], cols: &[Vec<usize>]) -> (Vec<f64>, Vec<f64>) {
        let mut u = vec![f64::NAN; self.m];
        let mut v = vec![f64::NAN; self.n];
        u[0] = 0.0;
        // nodes: rows are 0..m, columns m..m+n
        let mut stack = vec![0usize];
        while let Some(node) = stack.pop() {
            if node < self.m {
                for &j in &rows[node] {
                    if v[j].is_nan() {
                        v[j] = self.cost.get(node, j) - u[node];
                        stack.push(self.m + j);
                    }
                }
            } else {
                let j = node - self.m;
                for &i in &cols[j] {
                    if u[i].is_nan() {
                        u[i] = self.cost.get(i, j) - v[j];
                        stack.push(i);
                    }
                }
            }
        }
        (u, v)
    }

    /// Tree path from row `i` to column `j` as a list of cells.
    fn path(&self, rows: &[Vec<usize>], cols: &[Vec<usize>], i: usize, j: usize) -> Vec<(usize, usize)> {
        let total = self.m + self.n;
        let mut parent = vec![usize::MAX; total];
        parent[i] = i;
        let mut queue = std::collections::VecDeque::from([i]);
        let target = self.m + j;
        while let Some(node) = queue.pop_front() {
            if node == target {
                break;
            }
            let next: Vec<usize> = if node < self.m {
                rows[node].iter().map(|&c| self.m + c).collect()
            } else {
                cols[node - self.m].clone()
            };
            for w in next {
                if parent[w] == usize::MAX {
                    parent[w] = node;
                    queue.push_back(w);
                }
            }
        }
        let mut cells = Vec::new();
        let mut node = target;
        while node != i {
            let prev = parent[node];
            let cell = if node < self.m { (node, prev - self.m) } else { (prev, node - self.m) };
            cells.push(cell);
            node = prev;
        }
        cells.reverse();
        cells
    }

    fn solve(mut self) -> Result<ExactSolution> {
        let scale = self.cost.max().abs().max(1.0);
        let eps = 1e-12 * scale;
        let mut pivots = 0;
        loop {
            let (rows, cols) = self.adjacency();
            let (u, v) = self.duals(&rows, &cols);
            let mut entering = None;
            let mut min_rc = f64::INFINITY;
            for i in 0..self.m {
                for j in 0..self.n {
                    if self.basic[i * self.n + j] {
                        continue;
                    }
                    let rc = self.cost.get(i, j) - u[i] - v[j];
                    min_rc = min_rc.min(rc);
                    if entering.is_none() && rc < -eps {
                        entering = Some((i, j));
                    }
                }
            }
            let Some((ei, ej)) = entering else {
                let plan = SquareMatrix::from_vec(self.m, self.flow.clone())?;
                let value = neumaier_sum(
                    (0..self.m * self.n).map(|k| self.flow[k] * self.cost.as_slice()[k]),
                );
                return Ok(ExactSolution {
                    value,
                    plan,
                    basis_size: self.basic.iter().filter(|&&b| b).count(),
                    pivots,
                    min_reduced_cost: if min_rc.is_finite() { min_rc } else { 0.0 },
                });
            };
            pivots += 1;
            if pivots > MAX_PIVOTS {
                return Err(Error::NotConverged { iterations: pivots, residual: min_rc });
            }
            // cycle: entering (+), then alternating -, +, ... along the tree path
            let path = self.path(&rows, &cols, ei, ej);
            let mut leave: Option<(usize, f64)> = None;
            for (k, &(i, j)) in path.iter().enumerate() {
                if k % 2 == 0 {
                    let idx = i * self.n + j;
                    let x = self.flow[idx];
                    match leave {
                        Some((best, bx)) if x > bx || (x == bx && idx > best) => {}
                        _ => leave = Some((idx, x)),
                    }
                }
            }
            let (leave_idx, theta) = leave.expect("cycle has at least one decreasing cell");
            for (k, &(i, j)) in path.iter().enumerate() {
                let idx = i * self.n + j;
                if k % 2 == 0 {
                    self.flow[idx] -= theta;
                } else {
                    self.flow[idx] += theta;
                }
            }
            self.flow[leave_idx] = 0.0;
            self.basic[leave_idx] = false;
            let enter_idx = ei * self.n + ej;
            self.basic[enter_idx] = true;
            self.flow[enter_idx] = theta;
        }
    }
}

/// Exact `K^p` between two histograms under the augmented cost.
pub fn exact_kantorovich(a: &[f64], b: &[f64], metric: &GroundMetric, delta: &DeltaSpec, p: f64) -> Result<f64> {
    let aug = build_augmented(metric, delta, p)?;
    exact_kantorovich_with(a, b, &aug)
}

pub fn exact_kantorovich_with(a: &[f64], b: &[f64], aug: &AugmentedCost) -> Result<f64> {
    if a.len() != aug.d() || b.len() != aug.d() {
        return Err(Error::DimensionMismatch { expected: aug.d(), found: a.len().max(b.len()), row: 0 });
    }
    Ok(exact_ot(&augment_histogram(a)?, &augment_histogram(b)?, aug.cost())?.value)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridOracleResult {
    pub a_best: Vec<f64>,
    pub value_best: f64,
    pub points_evaluated: usize,
}

/// Exhaustive minimization of the exact mean Kantorovich cost over the
/// lattice `{a >= 0, |a| = rho}` with spacing `grid_step`.
///
/// Ties (within 1e-12) go to the lexicographically smallest lattice point.
pub fn grid_barycenter_oracle(
    c: &HistogramCollection,
    metric: &GroundMetric,
    delta: &DeltaSpec,
    p: f64,
    rho: f64,
    grid_step: f64,
) -> Result<GridOracleResult> {
    let d = metric.d();
    if d > GRID_ORACLE_MAX_D {
        return Err(Error::SizeGuard { size: d, limit: GRID_ORACLE_MAX_D });
    }
    if c.d() != d {
        return Err(Error::DimensionMismatch { expected: d, found: c.d(), row: 0 });
    }
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::InvalidConfig(format!("rho must lie in (0, 1], got {rho}")));
    }
    if !(grid_step > 0.0 && grid_step <= 0.01 * rho * (1.0 + 1e-12)) {
        return Err(Error::InvalidConfig(format!("grid step {grid_step} must lie in (0, 0.01 rho]")));
    }
    let aug = build_augmented(metric, delta, p)?;
    let steps = (rho / grid_step).round() as usize;
    let unit = rho / steps as f64;
    let points = compositions(steps, d);
    let values: Vec<f64> = points
        .par_iter()
        .map(|counts| {
            let a: Vec<f64> = counts.iter().map(|&k| k as f64 * unit).collect();
            let terms: Result<Vec<f64>> =
                c.rows().iter().map(|b| exact_kantorovich_with(&a, b.values(), &aug)).collect();
            terms.map(|t| neumaier_sum(t) / c.len() as f64)
        })
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (k, &v) in values.iter().enumerate() {
        if v < values[best] - 1e-12 {
            best = k;
        }
    }
    Ok(GridOracleResult {
        a_best: points[best].iter().map(|&k| k as f64 * unit).collect(),
        value_best: values[best],
        points_evaluated: points.len(),
    })
}

/// All `d`-tuples of non-negative integers summing to `total`, in
/// lexicographic order.
fn compositions(total: usize, d: usize) -> Vec<Vec<usize>> {
    fn rec(remaining: usize, slots: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if slots == 1 {
            prefix.push(remaining);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for k in 0..=remaining {
            prefix.push(k);
            rec(remaining - k, slots - 1, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if d > 0 {
        rec(total, d, &mut Vec::with_capacity(d), &mut out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{rescale_collection, Histogram};

    fn line(points: &[f64]) -> CostMatrix {
        CostMatrix::new(SquareMatrix::from_fn(points.len(), |i, j| (points[i] - points[j]).abs())).unwrap()
    }

    #[test]
    fn singleton_polytope() {
        let c = line(&[0.0, 1.0]);
        let sol = exact_ot(&[1.0, 0.0], &[0.0, 1.0], &c).unwrap();
        assert_eq!(sol.value, 1.0);
        assert_eq!(sol.basis_size, 3);
    }

    #[test]
    fn one_dimensional_shift() {
        let c = line(&[0.0, 1.0, 2.0]);
        let sol = exact_ot(&[0.5, 0.5, 0.0], &[0.0, 0.5, 0.5], &c).unwrap();
        assert!((sol.value - 1.0).abs() < 1e-12);
        assert!(sol.min_reduced_cost >= -1e-10);
    }

    #[test]
    fn identical_marginals_cost_nothing() {
        let c = line(&[0.0, 1.0, 3.0, 7.0]);
        let a = [0.1, 0.2, 0.3, 0.4];
        let sol = exact_ot(&a, &a, &c).unwrap();
        assert_eq!(sol.value, 0.0);
        for i in 0..4 {
            assert!((sol.plan.get(i, i) - a[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn guards() {
        let c = line(&[0.0, 1.0]);
        assert!(matches!(exact_ot(&[1.0, 0.0], &[0.5, 0.0], &c), Err(Error::MassMismatch { .. })));
        let big = CostMatrix::new(SquareMatrix::zeros(65)).unwrap();
        assert!(matches!(exact_ot(&[0.0; 65], &[0.0; 65], &big), Err(Error::SizeGuard { .. })));
    }

    #[test]
    fn compositions_are_lexicographic() {
        let c = compositions(2, 3);
        assert_eq!(c.len(), 6);
        assert_eq!(c[0], vec![0, 0, 2]);
        assert_eq!(c[5], vec![2, 0, 0]);
    }

    #[test]
    fn grid_oracle_copies() {
        let metric = GroundMetric::from_rows(&[vec![0.0, 1.0, 2.0], vec![1.0, 0.0, 1.0], vec![2.0, 1.0, 0.0]]).unwrap();
        let c = rescale_collection(&[vec![0.2, 0.5, 0.3], vec![0.2, 0.5, 0.3]]).unwrap();
        let res = grid_barycenter_oracle(&c, &metric, &DeltaSpec::Quantile(95.0), 1.0, 1.0, 0.01).unwrap();
        assert!(res.value_best.abs() < 1e-12);
        for (x, y) in res.a_best.iter().zip([0.2, 0.5, 0.3]) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn grid_oracle_two_diracs_tie() {
        let metric = GroundMetric::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let rho = 0.5;
        let rows = vec![Histogram::new(vec![rho, 0.0]).unwrap(), Histogram::new(vec![0.0, rho]).unwrap()];
        let c = HistogramCollection::from_scaled(rows, 1.0).unwrap();
        let delta = DeltaSpec::Vector(vec![2.0, 2.0]);
        let res = grid_barycenter_oracle(&c, &metric, &delta, 1.0, rho, 0.005 * rho).unwrap();
        assert!((res.value_best - rho / 2.0).abs() < 1e-12);
        // every split is optimal; the lowest lexicographic point puts all mass on bin 2
        assert_eq!(res.a_best, vec![0.0, rho]);
    }

    #[test]
    fn grid_oracle_guards() {
        let metric = GroundMetric::new(SquareMatrix::from_fn(4, |i, j| (i as f64 - j as f64).abs())).unwrap();
        let c = rescale_collection(&[vec![1.0, 0.0, 0.0, 0.0]]).unwrap();
        assert!(matches!(
            grid_barycenter_oracle(&c, &metric, &DeltaSpec::Quantile(95.0), 1.0, 1.0, 0.01),
            Err(Error::SizeGuard { .. })
        ));
    }
}
