//! Reference averages: the plain elementwise mean and the mean after Gaussian
//! smoothing over the ground metric.

use rayon::prelude::*;
use serde::Serialize;

use crate::domain::{GroundMetric, SquareMatrix};
use crate::error::{Error, Result};
use crate::numeric::neumaier_sum;

/// `2 √(2 ln 2)`, the ratio between FWHM and standard deviation.
pub fn fwhm_to_sigma(fwhm: f64) -> f64 {
    fwhm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt())
}

/// Column-stochastic Gaussian kernel: column `j` spreads the mass of
/// location `j` over its neighbours.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmoothingKernel {
    #[serde(skip)]
    weights: SquareMatrix,
    pub fwhm_mm: f64,
    pub sigma_mm: f64,
}

impl SmoothingKernel {
    pub fn new(metric: &GroundMetric, fwhm_mm: f64) -> Result<Self> {
        if !(fwhm_mm > 0.0 && fwhm_mm.is_finite()) {
            return Err(Error::InvalidConfig(format!("fwhm must be positive, got {fwhm_mm}")));
        }
        let sigma = fwhm_to_sigma(fwhm_mm);
        let d = metric.d();
        let denom = 2.0 * sigma * sigma;
        let raw = SquareMatrix::from_fn(d, |i, j| {
            let x = metric.get(i, j);
            (-x * x / denom).exp()
        });
        // The diagonal weight is 1, so no column sum can vanish.
        let col_sums: Vec<f64> = (0..d).map(|j| neumaier_sum((0..d).map(|i| raw.get(i, j)))).collect();
        let weights = SquareMatrix::from_fn(d, |i, j| raw.get(i, j) / col_sums[j]);
        Ok(Self { weights, fwhm_mm, sigma_mm: sigma })
    }

    pub fn d(&self) -> usize {
        self.weights.n()
    }

    pub fn weights(&self) -> &SquareMatrix {
        &self.weights
    }

    pub fn apply(&self, b: &[f64]) -> Result<Vec<f64>> {
        let d = self.d();
        if b.len() != d {
            return Err(Error::DimensionMismatch { expected: d, found: b.len(), row: 0 });
        }
        Ok((0..d).map(|i| neumaier_sum(self.weights.row(i).iter().zip(b).map(|(w, x)| w * x))).collect())
    }
}

/// Elementwise mean of raw vectors.
pub fn euclidean_mean(raw: &[Vec<f64>]) -> Result<Vec<f64>> {
    let d = raw.first().ok_or(Error::EmptyCollection)?.len();
    if let Some(row) = raw.iter().position(|r| r.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, found: raw[row].len(), row });
    }
    let n = raw.len() as f64;
    Ok((0..d).map(|i| neumaier_sum(raw.iter().map(|r| r[i])) / n).collect())
}

pub fn gaussian_smooth(b: &[f64], metric: &GroundMetric, fwhm_mm: f64) -> Result<Vec<f64>> {
    SmoothingKernel::new(metric, fwhm_mm)?.apply(b)
}

/// Mean of the individually smoothed vectors.
pub fn smoothed_mean(raw: &[Vec<f64>], metric: &GroundMetric, fwhm_mm: f64) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Err(Error::EmptyCollection);
    }
    let kernel = SmoothingKernel::new(metric, fwhm_mm)?;
    let smoothed = raw.par_iter().map(|b| kernel.apply(b)).collect::<Result<Vec<_>>>()?;
    euclidean_mean(&smoothed)
}
