//! Kantorovich barycenter with a prescribed mass.
//!
//! Minimizes `(1/N) Σ_j OT_λ([a; 1-ρ], [b_j; 1-|b_j|], M̂^p)` over histograms
//! `a` of mass `ρ` by fixed-step exponentiated gradient descent on the
//! augmented simplex:
//!
//! 1. start from the uniform vector on the `d + 1` bins;
//! 2. solve the `N` smoothed problems and average their first dual potentials;
//! 3. update `a ← a ∘ exp(-c · ḡ)`;
//! 4. rescale the real bins to mass `ρ` and set the virtual bin to `1 - ρ`;
//!
//! until the ℓ1 change of the projected iterate falls below `tol_outer`.
//!
//! The averaged gradient is reduced in subject order, so results do not
//! depend on how the per-subject solves are scheduled.

use rayon::prelude::*;
use serde::Serialize;

use crate::domain::{
    auto_lambda, mean_mass, quantile_offdiag, Auto, GroundMetric, HistogramCollection, SolverConfig, TargetMass,
};
use crate::error::{Error, Result};
use crate::kantorovich::{augment_histogram, build_augmented, AugmentedCost, DeltaSpec};
use crate::numeric::{l1_distance, neumaier_sum};
use crate::sinkhorn::{GibbsKernel, SinkhornOptions, SinkhornSolution, WarmStart};

/// Worst violations of the iterate invariants seen during a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterateDiagnostics {
    /// `max |Σ_{i<d} a_i - ρ|` over projected iterates.
    pub max_mass_error: f64,
    /// `max |a_{d+1} - (1 - ρ)|` over projected iterates.
    pub max_virtual_error: f64,
    /// Smallest real-bin entry over projected iterates.
    pub min_real_entry: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BarycenterReport {
    /// Barycenter in the units of the raw data.
    pub barycenter: Vec<f64>,
    /// Target mass in raw units (`ρ · scale`).
    pub rho_scaled: f64,
    /// Target mass in rescaled units.
    pub rho: f64,
    pub scale: f64,
    /// Objective at every visited iterate, starting from the uniform vector.
    pub objective_trajectory: Vec<f64>,
    /// Objective at the returned iterate.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// ℓ1 change of the last update.
    pub last_change: f64,
    pub config_resolved: SolverConfig,
    pub delta: Vec<f64>,
    pub admissibility_warnings: Vec<String>,
    /// Inner solves that stopped at `max_sinkhorn`.
    pub inner_not_converged: usize,
    /// Inner solves that finished in the log domain.
    pub log_domain_solves: usize,
    pub diagnostics: IterateDiagnostics,
}

impl BarycenterReport {
    pub fn initial_objective(&self) -> f64 {
        self.objective_trajectory[0]
    }

    pub fn final_objective(&self) -> f64 {
        self.objective
    }
}

/// One outer step as seen by an observer.
#[derive(Debug)]
pub struct IterationView<'a> {
    pub iter: usize,
    /// Iterate the gradient was evaluated at.
    pub before: &'a [f64],
    /// Averaged dual potential.
    pub gradient: &'a [f64],
    /// Projected iterate.
    pub after: &'a [f64],
    pub objective_before: f64,
    pub step: f64,
    pub rho: f64,
}

/// Rescales the real bins to mass `rho` and sets the virtual bin to `1 - rho`.
pub fn project_mass(a: &[f64], rho: f64) -> Result<Vec<f64>> {
    let d = a.len().checked_sub(1).ok_or(Error::ZeroRealMass)?;
    let real = neumaier_sum(a[..d].iter().copied());
    if !(real > 0.0) || !real.is_finite() {
        return Err(Error::ZeroRealMass);
    }
    let mut out: Vec<f64> = a[..d].iter().map(|x| rho * x / real).collect();
    out.push(1.0 - rho);
    Ok(out)
}

/// `project_mass(a ∘ exp(-step · gradient), rho)`.
pub fn exponentiated_step(a: &[f64], gradient: &[f64], step: f64, rho: f64) -> Result<Vec<f64>> {
    let raw: Vec<f64> = a.iter().zip(gradient).map(|(x, g)| x * (-step * g).exp()).collect();
    project_mass(&raw, rho)
}

/// Mean smoothed Kantorovich cost of the augmented vector `a` to the collection.
pub fn objective(
    a: &[f64],
    c: &HistogramCollection,
    aug: &AugmentedCost,
    lambda: f64,
    opts: &SinkhornOptions,
) -> Result<f64> {
    if a.len() != aug.d() + 1 {
        return Err(Error::DimensionMismatch { expected: aug.d() + 1, found: a.len(), row: 0 });
    }
    let kernel = GibbsKernel::new(aug.cost(), lambda)?;
    let opts = SinkhornOptions { want_plan: false, ..*opts };
    let values = c
        .rows()
        .iter()
        .map(|b| {
            let sol = kernel.solve(a, &augment_histogram(b.values())?, &opts, None)?;
            if !sol.converged {
                return Err(Error::NotConverged { iterations: sol.iterations, residual: sol.marginal_err });
            }
            Ok(sol.value)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(neumaier_sum(values) / c.len() as f64)
}

/// Parameters after every data-dependent default has been resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedParams {
    pub lambda: f64,
    pub step: f64,
    pub rho: f64,
}

pub fn resolve_params(c: &HistogramCollection, metric: &GroundMetric, cfg: &SolverConfig) -> Result<ResolvedParams> {
    let lambda = match cfg.lambda {
        Auto::Value(l) => l,
        Auto::Auto => auto_lambda(metric)?,
    };
    let step = match cfg.step {
        Auto::Value(s) => s,
        Auto::Auto => {
            let q = quantile_offdiag(metric, cfg.q)?;
            if !(q > 0.0) {
                return Err(Error::ZeroMedianMetric);
            }
            1.0 / q
        }
    };
    let rho = match cfg.rho {
        TargetMass::Value(r) => r,
        TargetMass::Mean => mean_mass(c).min(1.0),
    };
    Ok(ResolvedParams { lambda, step, rho })
}

pub fn kantorovich_mean(c: &HistogramCollection, metric: &GroundMetric, cfg: &SolverConfig) -> Result<BarycenterReport> {
    kantorovich_mean_observed(c, metric, cfg, |_| {})
}

/// [`kantorovich_mean`], calling `observer` after every projected update.
pub fn kantorovich_mean_observed(
    c: &HistogramCollection,
    metric: &GroundMetric,
    cfg: &SolverConfig,
    mut observer: impl FnMut(&IterationView<'_>),
) -> Result<BarycenterReport> {
    cfg.validate()?;
    if c.is_empty() {
        return Err(Error::EmptyCollection);
    }
    let d = metric.d();
    if c.d() != d {
        return Err(Error::DimensionMismatch { expected: d, found: c.d(), row: 0 });
    }
    let params = resolve_params(c, metric, cfg)?;
    let ResolvedParams { lambda, step, rho } = params;
    let resolved = SolverConfig {
        lambda: Auto::Value(lambda),
        step: Auto::Value(step),
        rho: TargetMass::Value(rho),
        ..cfg.clone()
    };
    resolved.validate()?;

    let aug = build_augmented(metric, &DeltaSpec::Quantile(cfg.q), cfg.p)?;
    let targets: Vec<Vec<f64>> =
        c.rows().iter().map(|b| augment_histogram(b.values())).collect::<Result<_>>()?;
    let kernel = GibbsKernel::new(aug.cost(), lambda)?;
    let opts = SinkhornOptions {
        tol: cfg.tol_sinkhorn,
        max_iter: cfg.max_sinkhorn,
        want_plan: false,
        force_log_domain: false,
    };
    let mut warm: Vec<WarmStart> = (0..c.len()).map(|_| WarmStart::new(d + 1)).collect();
    let n_inv = 1.0 / c.len() as f64;

    let mut a = vec![1.0 / (d + 1) as f64; d + 1];
    let mut trajectory = Vec::new();
    // Fallback when the loop hits its cap. The uniform start is not projected
    // and never qualifies.
    let mut best = (f64::INFINITY, a.clone());
    let mut iterations = 0;
    let mut converged = false;
    let mut last_change = f64::INFINITY;
    let mut inner_not_converged = 0;
    let mut log_domain_solves = 0;
    let mut diag = IterateDiagnostics { max_mass_error: 0.0, max_virtual_error: 0.0, min_real_entry: f64::INFINITY };

    loop {
        let sols: Vec<SinkhornSolution> = targets
            .par_iter()
            .zip(warm.par_iter_mut())
            .map(|(b, w)| kernel.solve(&a, b, &opts, Some(w)))
            .collect::<Result<_>>()?;
        inner_not_converged += sols.iter().filter(|s| !s.converged).count();
        log_domain_solves += sols.iter().filter(|s| s.log_domain).count();
        let obj = neumaier_sum(sols.iter().map(|s| s.value)) * n_inv;
        trajectory.push(obj);
        if iterations > 0 && obj < best.0 {
            best = (obj, a.clone());
        }
        if converged || iterations == cfg.max_outer {
            break;
        }

        let gradient: Vec<f64> =
            (0..=d).map(|i| neumaier_sum(sols.iter().map(|s| s.dual_a[i])) * n_inv).collect();
        let next = exponentiated_step(&a, &gradient, step, rho)?;
        iterations += 1;
        let real_mass = neumaier_sum(next[..d].iter().copied());
        diag.max_mass_error = diag.max_mass_error.max((real_mass - rho).abs());
        diag.max_virtual_error = diag.max_virtual_error.max((next[d] - (1.0 - rho)).abs());
        diag.min_real_entry = diag.min_real_entry.min(next[..d].iter().copied().fold(f64::INFINITY, f64::min));
        observer(&IterationView {
            iter: iterations,
            before: &a,
            gradient: &gradient,
            after: &next,
            objective_before: obj,
            step,
            rho,
        });
        last_change = l1_distance(&next, &a);
        a = next;
        converged = last_change <= cfg.tol_outer;
    }

    let (objective, final_a) = if converged {
        (*trajectory.last().expect("trajectory is never empty"), a)
    } else {
        best
    };
    let scale = c.scale();
    Ok(BarycenterReport {
        barycenter: final_a[..d].iter().map(|x| x * scale).collect(),
        rho_scaled: rho * scale,
        rho,
        scale,
        objective_trajectory: trajectory,
        objective,
        iterations,
        converged,
        last_change,
        config_resolved: resolved,
        delta: aug.delta().to_vec(),
        admissibility_warnings: aug.admissibility().warnings(),
        inner_not_converged,
        log_domain_solves,
        diagnostics: diag,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{rescale_collection, SquareMatrix};

    #[test]
    fn projection_examples() {
        let p = project_mass(&[0.2, 0.2, 0.6], 0.5).unwrap();
        assert_eq!(p, vec![0.25, 0.25, 0.5]);
        let q = project_mass(&p, 0.5).unwrap();
        for (x, y) in p.iter().zip(&q) {
            assert!((x - y).abs() <= 1e-15);
        }
        assert!(matches!(project_mass(&[0.0, 0.0, 1.0], 0.5), Err(Error::ZeroRealMass)));
    }

    #[test]
    fn step_is_shift_invariant() {
        let a = [0.1, 0.3, 0.2, 0.4];
        let g = [0.5, -1.0, 2.0, 0.3];
        let shifted: Vec<f64> = g.iter().map(|x| x + 7.5).collect();
        let x = exponentiated_step(&a, &g, 0.8, 0.6).unwrap();
        let y = exponentiated_step(&a, &shifted, 0.8, 0.6).unwrap();
        for (u, v) in x.iter().zip(&y) {
            assert!((u - v).abs() <= 1e-12);
        }
    }

    #[test]
    fn symmetric_diracs_give_symmetric_barycenter() {
        let metric = GroundMetric::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let c = rescale_collection(&[vec![0.6, 0.0], vec![0.0, 0.6], vec![0.5, 0.5]]).unwrap().select(&[0, 1]);
        let cfg = SolverConfig::default().with_rho(0.6);
        let r = kantorovich_mean(&c, &metric, &cfg).unwrap();
        let a = &r.barycenter;
        assert!((a[0] - a[1]).abs() <= 1e-6 * r.rho_scaled, "{a:?}");
        assert!((a[0] + a[1] - r.rho_scaled).abs() <= 1e-9 * r.rho_scaled);
    }

    #[test]
    fn objective_of_single_histogram_is_self_cost() {
        let metric = GroundMetric::new(SquareMatrix::from_fn(3, |i, j| (i as f64 - j as f64).abs())).unwrap();
        let c = rescale_collection(&[vec![0.2, 0.5, 0.1]]).unwrap();
        let aug = build_augmented(&metric, &DeltaSpec::Quantile(95.0), 1.0).unwrap();
        let a = augment_histogram(c.rows()[0].values()).unwrap();
        let opts = SinkhornOptions::default();
        let obj = objective(&a, &c, &aug, 3.0, &opts).unwrap();
        let direct = crate::sinkhorn::ot_lambda_value(&a, &a, aug.cost(), 3.0, &opts).unwrap();
        assert_eq!(obj, direct);
        assert!(obj < 0.0);
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let metric = GroundMetric::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let c = rescale_collection(&[vec![1.0, 0.0, 0.0]]).unwrap();
        assert!(matches!(
            kantorovich_mean(&c, &metric, &SolverConfig::default()),
            Err(Error::DimensionMismatch { .. })
        ));
        let c = rescale_collection(&[vec![1.0, 0.0]]).unwrap();
        let mut cfg = SolverConfig::default();
        cfg.q = 120.0;
        assert!(kantorovich_mean(&c, &metric, &cfg).is_err());
    }
}
