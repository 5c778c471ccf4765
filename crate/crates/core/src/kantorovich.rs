//! Kantorovich distances between histograms of unequal mass.
//!
//! A virtual point `ω` is appended to the space at distance `Δ_i` from every
//! location `i`. A histogram `a` with `|a| <= 1` becomes the probability
//! vector `[a; 1 - |a|]`, and the distance is ordinary optimal transport on
//! the augmented cost `[[M, Δ], [Δᵀ, 0]]^p` (entrywise power).

use serde::Serialize;

use crate::domain::{quantile_offdiag, GroundMetric, Histogram, SquareMatrix, MASS_SLACK};
use crate::error::{Error, Result};
use crate::numeric::neumaier_sum;
use crate::oracle::exact_ot;
use crate::sinkhorn::{sinkhorn_solve, CostMatrix, SinkhornOptions};

/// How the virtual cost vector is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum DeltaSpec {
    /// Explicit per-location costs.
    Vector(Vec<f64>),
    /// A constant equal to the given percentile of the off-diagonal distances.
    Quantile(f64),
}

/// Which conditions on `Δ` hold for a given metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Admissibility {
    /// `Δ_i >= max_j m_ij` for every `i`.
    pub dominates_rows: bool,
    /// `|Δ_i - Δ_j| <= m_ij` for every pair.
    pub lipschitz: bool,
    /// `m_ij <= Δ_i + Δ_j`, i.e. the augmented matrix is itself a metric.
    pub augmented_is_metric: bool,
}

impl Admissibility {
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if !self.dominates_rows {
            w.push("virtual cost is below the largest distance of some row; the Kantorovich norm conditions do not hold".to_string());
        }
        if !self.lipschitz {
            w.push("virtual cost varies faster than the metric between some pair".to_string());
        }
        if !self.augmented_is_metric {
            w.push("augmented cost violates the triangle inequality through the virtual point".to_string());
        }
        w
    }
}

/// The `(d+1) x (d+1)` cost `[[M, Δ], [Δᵀ, 0]]` raised entrywise to `p`.
#[derive(Debug, Clone)]
pub struct AugmentedCost {
    cost: CostMatrix,
    delta: Vec<f64>,
    p: f64,
    q: Option<f64>,
    admissibility: Admissibility,
}

impl AugmentedCost {
    /// Size `d` of the original space.
    pub fn d(&self) -> usize {
        self.delta.len()
    }

    pub fn cost(&self) -> &CostMatrix {
        &self.cost
    }

    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// Percentile used to build `Δ`, if it came from a quantile.
    pub fn q(&self) -> Option<f64> {
        self.q
    }

    pub fn admissibility(&self) -> Admissibility {
        self.admissibility
    }
}

pub fn build_augmented(metric: &GroundMetric, delta: &DeltaSpec, p: f64) -> Result<AugmentedCost> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::InvalidConfig(format!("exponent p must be >= 1, got {p}")));
    }
    let d = metric.d();
    let (delta, q) = match delta {
        DeltaSpec::Vector(v) => {
            if v.len() != d {
                return Err(Error::DimensionMismatch { expected: d, found: v.len(), row: 0 });
            }
            (v.clone(), None)
        }
        DeltaSpec::Quantile(q) => (vec![quantile_offdiag(metric, *q)?; d], Some(*q)),
    };
    if let Some(index) = delta.iter().position(|x| !(*x > 0.0 && x.is_finite())) {
        return Err(Error::NonPositiveDelta { index, value: delta[index] });
    }

    let admissibility = admissibility(metric, &delta);
    let n = d + 1;
    let raw = SquareMatrix::from_fn(n, |i, j| match (i < d, j < d) {
        (true, true) => metric.get(i, j),
        (true, false) => delta[i],
        (false, true) => delta[j],
        (false, false) => 0.0,
    });
    let powered = if p == 1.0 { raw } else { raw.map(|x| x.powf(p)) };
    Ok(AugmentedCost { cost: CostMatrix::new(powered)?, delta, p, q, admissibility })
}

fn admissibility(metric: &GroundMetric, delta: &[f64]) -> Admissibility {
    let d = metric.d();
    let mut adm = Admissibility { dominates_rows: true, lipschitz: true, augmented_is_metric: true };
    for i in 0..d {
        for j in 0..d {
            let m = metric.get(i, j);
            if delta[i] < m {
                adm.dominates_rows = false;
            }
            if (delta[i] - delta[j]).abs() > m && i != j {
                adm.lipschitz = false;
            }
            if m > delta[i] + delta[j] {
                adm.augmented_is_metric = false;
            }
        }
    }
    adm
}

/// `[a; 1 - |a|]`, with the deficit computed from a compensated sum.
pub fn augment_histogram(a: &[f64]) -> Result<Vec<f64>> {
    if let Some(index) = a.iter().position(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::NegativeOrNonFiniteEntry { row: 0, index, value: a[index] });
    }
    let mass = neumaier_sum(a.iter().copied());
    if mass > 1.0 + MASS_SLACK {
        return Err(Error::MassExceedsOne { mass });
    }
    let mut out = Vec::with_capacity(a.len() + 1);
    out.extend_from_slice(a);
    out.push((1.0 - mass).max(0.0));
    Ok(out)
}

/// Entropic strength, or the exact linear program.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regularization {
    Exact,
    Entropic(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KantorovichDistance {
    /// The distance raised to the power `p`.
    pub kp: f64,
    /// `kp^(1/p)`. For `p > 1` a negative smoothed `kp` maps to 0.
    pub k: f64,
}

pub fn kantorovich_distance(
    a: &Histogram,
    b: &Histogram,
    aug: &AugmentedCost,
    reg: Regularization,
    opts: &SinkhornOptions,
) -> Result<KantorovichDistance> {
    for h in [a, b] {
        if h.d() != aug.d() {
            return Err(Error::DimensionMismatch { expected: aug.d(), found: h.d(), row: 0 });
        }
    }
    let aa = augment_histogram(a.values())?;
    let bb = augment_histogram(b.values())?;
    let kp = match reg {
        Regularization::Exact => exact_ot(&aa, &bb, aug.cost())?.value,
        Regularization::Entropic(lambda) => {
            let sol = sinkhorn_solve(&aa, &bb, aug.cost(), lambda, opts)?;
            if !sol.converged {
                return Err(Error::NotConverged { iterations: sol.iterations, residual: sol.marginal_err });
            }
            sol.value
        }
    };
    let k = if aug.p() == 1.0 { kp } else { kp.max(0.0).powf(1.0 / aug.p()) };
    Ok(KantorovichDistance { kp, k })
}
