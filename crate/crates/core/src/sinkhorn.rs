//! Entropy-regularized optimal transport by alternating matrix scaling.
//!
//! For marginals `a`, `b` of equal mass and a cost `C`, the smoothed problem
//!
//! ```text
//! OT_λ(a, b, C) = min_{T ∈ U(a,b)} <T, C> - H(T) / λ,   H(T) = -Σ t_ij log t_ij
//! ```
//!
//! has the solution `T = diag(u) K diag(v)` with `K = exp(-λC)`. Scalings are
//! only carried on the supports of `a` and `b`; rows and columns with zero
//! mass are identically zero in the plan.
//!
//! Iterations run on the precomputed kernel until a scaling leaves
//! `[1e-100, 1e100]`. The last in-range scalings are then absorbed into log
//! potentials and the solve continues with log-sum-exp updates, which cannot
//! overflow.

use serde::Serialize;

use crate::domain::SquareMatrix;
use crate::error::{Error, Result};
use crate::numeric::neumaier_sum;

/// Scalings outside `[1/SCALING_LIMIT, SCALING_LIMIT]` trigger the log domain.
pub const SCALING_LIMIT: f64 = 1e100;

/// Iterations between two marginal-error checkpoints.
pub const CHECK_EVERY: usize = 10;

/// Relative tolerance on `|a| = |b|`.
pub const MASS_MATCH_TOL: f64 = 1e-9;

/// Non-negative transport cost.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    m: SquareMatrix,
    symmetric: bool,
}

impl CostMatrix {
    pub fn new(m: SquareMatrix) -> Result<Self> {
        if let Some(pos) = m.as_slice().iter().position(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidMetric(format!(
                "cost entry ({}, {}) is negative or non-finite",
                pos / m.n(),
                pos % m.n()
            )));
        }
        let symmetric = m.max_asymmetry() == 0.0;
        Ok(Self { m, symmetric })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(SquareMatrix::from_rows(rows)?)
    }

    pub fn n(&self) -> usize {
        self.m.n()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m.get(i, j)
    }

    pub fn matrix(&self) -> &SquareMatrix {
        &self.m
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    /// Same cost with `shift` added to every entry.
    pub fn shifted(&self, shift: f64) -> Result<Self> {
        Self::new(self.m.map(|x| x + shift))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornOptions {
    /// Threshold on the ℓ1 violation of the first marginal.
    pub tol: f64,
    pub max_iter: usize,
    pub want_plan: bool,
    /// Skip the kernel iterations and run log-sum-exp updates from the start.
    pub force_log_domain: bool,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        Self { tol: 1e-9, max_iter: 10_000, want_plan: false, force_log_domain: false }
    }
}

impl SinkhornOptions {
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_plan(mut self) -> Self {
        self.want_plan = true;
        self
    }

    pub fn log_domain(mut self) -> Self {
        self.force_log_domain = true;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SinkhornSolution {
    /// `<T, C> - H(T)/λ`.
    pub value: f64,
    pub transport_cost: f64,
    pub entropy: f64,
    /// Centered first dual potential; zero outside the support of `a`.
    pub dual_a: Vec<f64>,
    pub dual_b: Vec<f64>,
    pub support_a: Vec<bool>,
    pub support_b: Vec<bool>,
    #[serde(skip)]
    pub plan: Option<SquareMatrix>,
    pub iterations: usize,
    /// ℓ1 violation of the first marginal at the last checkpoint.
    pub marginal_err: f64,
    /// Marginal error recorded every [`CHECK_EVERY`] iterations.
    pub checkpoints: Vec<f64>,
    pub converged: bool,
    /// Whether the solve finished with log-sum-exp updates.
    pub log_domain: bool,
}

/// Scalings carried between solves that share a marginal, stored as logs.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    log_u: Vec<f64>,
    log_v: Vec<f64>,
}

impl WarmStart {
    pub fn new(n: usize) -> Self {
        Self { log_u: vec![0.0; n], log_v: vec![0.0; n] }
    }
}

/// `exp(-λC)` computed once and shared read-only by any number of solves.
#[derive(Debug, Clone)]
pub struct GibbsKernel<'c> {
    cost: &'c CostMatrix,
    cost_t: Option<SquareMatrix>,
    lambda: f64,
    k: SquareMatrix,
    k_t: Option<SquareMatrix>,
}

impl<'c> GibbsKernel<'c> {
    pub fn new(cost: &'c CostMatrix, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) || !(lambda * cost.m.max()).is_finite() && cost.n() > 0 {
            return Err(Error::NonFiniteKernel { lambda });
        }
        let k = cost.m.map(|c| (-lambda * c).exp());
        let (cost_t, k_t) = if cost.symmetric {
            (None, None)
        } else {
            (Some(cost.m.transpose()), Some(k.transpose()))
        };
        Ok(Self { cost, cost_t, lambda, k, k_t })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn n(&self) -> usize {
        self.cost.n()
    }

    #[inline]
    fn k_col(&self, j: usize) -> &[f64] {
        self.k_t.as_ref().unwrap_or(&self.k).row(j)
    }

    #[inline]
    fn c_col(&self, j: usize) -> &[f64] {
        self.cost_t.as_ref().unwrap_or(&self.cost.m).row(j)
    }

    /// Solves `OT_λ(a, b, C)`; see the module documentation.
    ///
    /// A solve that reaches `max_iter` is returned with `converged == false`.
    pub fn solve(
        &self,
        a: &[f64],
        b: &[f64],
        opts: &SinkhornOptions,
        warm: Option<&mut WarmStart>,
    ) -> Result<SinkhornSolution> {
        let n = self.n();
        check_marginal(a, n)?;
        check_marginal(b, n)?;
        let mass_a = neumaier_sum(a.iter().copied());
        let mass_b = neumaier_sum(b.iter().copied());
        if (mass_a - mass_b).abs() > MASS_MATCH_TOL * mass_a.max(1.0) {
            return Err(Error::MassMismatch { mass_a, mass_b });
        }
        let rows: Vec<usize> = (0..n).filter(|&i| a[i] > 0.0).collect();
        let cols: Vec<usize> = (0..n).filter(|&j| b[j] > 0.0).collect();
        let ra: Vec<f64> = rows.iter().map(|&i| a[i]).collect();
        let cb: Vec<f64> = cols.iter().map(|&j| b[j]).collect();

        let (mut f, mut g) = match &warm {
            Some(w) => (
                rows.iter().map(|&i| w.log_u[i]).collect::<Vec<_>>(),
                cols.iter().map(|&j| w.log_v[j]).collect::<Vec<_>>(),
            ),
            None => (vec![0.0; rows.len()], vec![0.0; cols.len()]),
        };
        let in_range = |x: &f64| x.abs() <= SCALING_LIMIT.ln();
        let mut log_mode = opts.force_log_domain || !f.iter().all(in_range) || !g.iter().all(in_range);
        let mut u: Vec<f64> = f.iter().map(|x| x.exp()).collect();
        let mut v: Vec<f64> = g.iter().map(|x| x.exp()).collect();
        let mut scratch_u = vec![0.0; rows.len()];
        let mut scratch_v = vec![0.0; cols.len()];
        let log_a: Vec<f64> = ra.iter().map(|x| x.ln()).collect();
        let log_b: Vec<f64> = cb.iter().map(|x| x.ln()).collect();

        let mut iter = 0;
        let mut checkpoints = Vec::new();
        let mut marginal_err = f64::INFINITY;
        let mut converged = rows.is_empty();
        while !converged && iter < opts.max_iter {
            if log_mode {
                self.log_update_rows(&rows, &cols, &log_a, &g, &mut f);
                self.log_update_cols(&rows, &cols, &log_b, &f, &mut g);
            } else {
                let ok = self.scale_rows(&rows, &cols, &ra, &v, &mut scratch_u)
                    && {
                        self.scale_cols(&rows, &cols, &cb, &scratch_u, &mut scratch_v)
                    };
                if !ok {
                    // absorb the last in-range scalings and redo this sweep
                    f = u.iter().map(|x| x.ln()).collect();
                    g = v.iter().map(|x| x.ln()).collect();
                    log_mode = true;
                    continue;
                }
                std::mem::swap(&mut u, &mut scratch_u);
                std::mem::swap(&mut v, &mut scratch_v);
            }
            iter += 1;
            if iter % CHECK_EVERY == 0 || iter == opts.max_iter {
                if !log_mode {
                    f = u.iter().map(|x| x.ln()).collect();
                    g = v.iter().map(|x| x.ln()).collect();
                }
                marginal_err = self.row_violation(&rows, &cols, &ra, &f, &g);
                checkpoints.push(marginal_err);
                converged = marginal_err <= opts.tol;
            }
        }
        if !log_mode {
            f = u.iter().map(|x| x.ln()).collect();
            g = v.iter().map(|x| x.ln()).collect();
        }
        if rows.is_empty() {
            marginal_err = 0.0;
        }

        // value, entropy and the optional plan from log T = f + g - λC
        let lambda = self.lambda;
        let mut plan = opts.want_plan.then(|| SquareMatrix::zeros(n));
        let mut cost_terms = Vec::with_capacity(rows.len());
        let mut ent_terms = Vec::with_capacity(rows.len());
        for (ii, &i) in rows.iter().enumerate() {
            let crow = self.cost.m.row(i);
            let mut cost_i = 0.0;
            let mut ent_i = 0.0;
            for (jj, &j) in cols.iter().enumerate() {
                let log_t = f[ii] + g[jj] - lambda * crow[j];
                let t = log_t.exp();
                if t > 0.0 {
                    cost_i += t * crow[j];
                    ent_i -= t * log_t;
                    if let Some(p) = plan.as_mut() {
                        p.set(i, j, t);
                    }
                }
            }
            cost_terms.push(cost_i);
            ent_terms.push(ent_i);
        }
        let transport_cost = neumaier_sum(cost_terms);
        let entropy = neumaier_sum(ent_terms);
        let value = transport_cost - entropy / lambda;

        let dual_a = centered_dual(n, &rows, &f, lambda);
        let dual_b = centered_dual(n, &cols, &g, lambda);
        if let Some(w) = warm {
            for (ii, &i) in rows.iter().enumerate() {
                w.log_u[i] = f[ii];
            }
            for (jj, &j) in cols.iter().enumerate() {
                w.log_v[j] = g[jj];
            }
        }
        let mut support_a = vec![false; n];
        rows.iter().for_each(|&i| support_a[i] = true);
        let mut support_b = vec![false; n];
        cols.iter().for_each(|&j| support_b[j] = true);

        Ok(SinkhornSolution {
            value,
            transport_cost,
            entropy,
            dual_a,
            dual_b,
            support_a,
            support_b,
            plan,
            iterations: iter,
            marginal_err,
            checkpoints,
            converged,
            log_domain: log_mode,
        })
    }

    /// `u_i = a_i / (K v)_i`; false when any scaling leaves the safe range.
    fn scale_rows(&self, rows: &[usize], cols: &[usize], ra: &[f64], v: &[f64], out: &mut [f64]) -> bool {
        for (ii, &i) in rows.iter().enumerate() {
            let krow = self.k.row(i);
            let s: f64 = cols.iter().zip(v).map(|(&j, &vj)| krow[j] * vj).sum();
            out[ii] = ra[ii] / s;
        }
        out.iter().all(|&x| safe_scaling(x))
    }

    fn scale_cols(&self, rows: &[usize], cols: &[usize], cb: &[f64], u: &[f64], out: &mut [f64]) -> bool {
        for (jj, &j) in cols.iter().enumerate() {
            let kcol = self.k_col(j);
            let s: f64 = rows.iter().zip(u).map(|(&i, &ui)| kcol[i] * ui).sum();
            out[jj] = cb[jj] / s;
        }
        out.iter().all(|&x| safe_scaling(x))
    }

    fn log_update_rows(&self, rows: &[usize], cols: &[usize], log_a: &[f64], g: &[f64], f: &mut [f64]) {
        let lambda = self.lambda;
        for (ii, &i) in rows.iter().enumerate() {
            let crow = self.cost.m.row(i);
            f[ii] = log_a[ii] - lse(cols.iter().zip(g).map(|(&j, &gj)| gj - lambda * crow[j]));
        }
    }

    fn log_update_cols(&self, rows: &[usize], cols: &[usize], log_b: &[f64], f: &[f64], g: &mut [f64]) {
        let lambda = self.lambda;
        for (jj, &j) in cols.iter().enumerate() {
            let ccol = self.c_col(j);
            g[jj] = log_b[jj] - lse(rows.iter().zip(f).map(|(&i, &fi)| fi - lambda * ccol[i]));
        }
    }

    fn row_violation(&self, rows: &[usize], cols: &[usize], ra: &[f64], f: &[f64], g: &[f64]) -> f64 {
        let lambda = self.lambda;
        rows.iter()
            .enumerate()
            .map(|(ii, &i)| {
                let crow = self.cost.m.row(i);
                let r = (f[ii] + lse(cols.iter().zip(g).map(|(&j, &gj)| gj - lambda * crow[j]))).exp();
                (r - ra[ii]).abs()
            })
            .sum()
    }
}

#[inline]
fn safe_scaling(x: f64) -> bool {
    (1.0 / SCALING_LIMIT..=SCALING_LIMIT).contains(&x)
}

/// Log-sum-exp over an iterator that is consumed twice via buffering.
#[inline]
fn lse<I: Iterator<Item = f64> + Clone>(it: I) -> f64 {
    let max = it.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + it.map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn centered_dual(n: usize, support: &[usize], logs: &[f64], lambda: f64) -> Vec<f64> {
    let mut out = vec![0.0; n];
    if support.is_empty() {
        return out;
    }
    let mean = neumaier_sum(logs.iter().copied()) / logs.len() as f64;
    for (k, &i) in support.iter().enumerate() {
        out[i] = (logs[k] - mean) / lambda;
    }
    out
}

fn check_marginal(x: &[f64], n: usize) -> Result<()> {
    if x.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: x.len(), row: 0 });
    }
    if let Some(index) = x.iter().position(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::NegativeOrNonFiniteEntry { row: 0, index, value: x[index] });
    }
    Ok(())
}

/// One-shot solve: builds the kernel and runs [`GibbsKernel::solve`].
pub fn sinkhorn_solve(
    a: &[f64],
    b: &[f64],
    cost: &CostMatrix,
    lambda: f64,
    opts: &SinkhornOptions,
) -> Result<SinkhornSolution> {
    GibbsKernel::new(cost, lambda)?.solve(a, b, opts, None)
}

/// Value of `OT_λ(a, b, C)`; fails with `NotConverged` if the tolerance was
/// not reached.
pub fn ot_lambda_value(a: &[f64], b: &[f64], cost: &CostMatrix, lambda: f64, opts: &SinkhornOptions) -> Result<f64> {
    let opts = SinkhornOptions { want_plan: false, ..*opts };
    let sol = sinkhorn_solve(a, b, cost, lambda, &opts)?;
    if !sol.converged {
        return Err(Error::NotConverged { iterations: sol.iterations, residual: sol.marginal_err });
    }
    Ok(sol.value)
}

/// Gradient of `OT_λ(·, b, C)` at `a`, centered to sum to zero.
///
/// Requires every entry of `a` to be positive.
pub fn dual_gradient(a: &[f64], b: &[f64], cost: &CostMatrix, lambda: f64, opts: &SinkhornOptions) -> Result<Vec<f64>> {
    if let Some(index) = a.iter().position(|&x| !(x > 0.0)) {
        return Err(Error::ZeroEntryInFirstMarginal { index });
    }
    let sol = sinkhorn_solve(a, b, cost, lambda, &SinkhornOptions { want_plan: false, ..*opts })?;
    if !sol.converged {
        return Err(Error::NotConverged { iterations: sol.iterations, residual: sol.marginal_err });
    }
    Ok(sol.dual_a)
}
