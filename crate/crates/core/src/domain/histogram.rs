use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::neumaier_sum;

/// Slack allowed above unit mass.
pub const MASS_SLACK: f64 = 1e-12;

/// Non-negative weights over `d` locations with total mass at most one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    values: Vec<f64>,
}

impl Histogram {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_entries(&values, 0)?;
        let mass = neumaier_sum(values.iter().copied());
        if mass > 1.0 + MASS_SLACK {
            return Err(Error::MassExceedsOne { mass });
        }
        Ok(Self { values })
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mass(&self) -> f64 {
        neumaier_sum(self.values.iter().copied())
    }

    /// Deficient mass `1 - |a|`, clamped at zero.
    pub fn deficit(&self) -> f64 {
        (1.0 - self.mass()).max(0.0)
    }
}

fn check_entries(values: &[f64], row: usize) -> Result<()> {
    match values.iter().position(|v| !v.is_finite() || *v < 0.0) {
        Some(index) => Err(Error::NegativeOrNonFiniteEntry { row, index, value: values[index] }),
        None => Ok(()),
    }
}

/// `N` histograms on a common support, obtained from raw data by dividing
/// every vector by the largest raw mass.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramCollection {
    rows: Vec<Histogram>,
    d: usize,
    scale: f64,
}

impl HistogramCollection {
    /// Wraps histograms that are already expressed in rescaled units.
    pub fn from_scaled(rows: Vec<Histogram>, scale: f64) -> Result<Self> {
        let d = rows.first().ok_or(Error::EmptyCollection)?.d();
        if let Some(row) = rows.iter().position(|h| h.d() != d) {
            return Err(Error::DimensionMismatch { expected: d, found: rows[row].d(), row });
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidConfig(format!("scale must be positive, got {scale}")));
        }
        Ok(Self { rows, d, scale })
    }

    pub fn rows(&self) -> &[Histogram] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Factor that maps rescaled values back to raw units.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Rows picked by index, in the given order (same scale).
    pub fn select(&self, order: &[usize]) -> Self {
        Self { rows: order.iter().map(|&k| self.rows[k].clone()).collect(), d: self.d, scale: self.scale }
    }
}

/// Maps raw non-negative vectors into the unit-mass ball by dividing all of
/// them by the largest mass.
///
/// A maximum mass within [`MASS_SLACK`] of one is treated as exactly one so
/// that rescaling an already rescaled collection is the identity.
pub fn rescale_collection(raw: &[Vec<f64>]) -> Result<HistogramCollection> {
    let first = raw.first().ok_or(Error::EmptyCollection)?;
    let d = first.len();
    let mut max_mass = 0.0f64;
    for (j, row) in raw.iter().enumerate() {
        if row.len() != d {
            return Err(Error::DimensionMismatch { expected: d, found: row.len(), row: j });
        }
        check_entries(row, j)?;
        max_mass = max_mass.max(neumaier_sum(row.iter().copied()));
    }
    if max_mass <= 0.0 {
        return Err(Error::AllZeroCollection);
    }
    let scale = if (max_mass - 1.0).abs() <= MASS_SLACK { 1.0 } else { max_mass };
    let rows = raw
        .iter()
        .map(|row| Histogram { values: row.iter().map(|v| v / scale).collect() })
        .collect();
    Ok(HistogramCollection { rows, d, scale })
}

/// Arithmetic mean of the row masses.
pub fn mean_mass(c: &HistogramCollection) -> f64 {
    let total = neumaier_sum(c.rows.iter().map(Histogram::mass));
    total / c.rows.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rescale_by_max_mass() {
        let c = rescale_collection(&[vec![2.0, 0.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(c.scale(), 2.0);
        assert_eq!(c.rows()[0].values(), &[1.0, 0.0]);
        assert_eq!(c.rows()[1].values(), &[0.5, 0.5]);
    }

    #[test]
    fn rescale_single_vector() {
        let c = rescale_collection(&[vec![0.3, 0.2]]).unwrap();
        assert_eq!(c.scale(), 0.5);
        assert!((c.rows()[0].values()[0] - 0.6).abs() < 1e-15);
        assert!((c.rows()[0].values()[1] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn rescale_errors() {
        assert!(matches!(
            rescale_collection(&[vec![1.0, -1.0]]),
            Err(Error::NegativeOrNonFiniteEntry { row: 0, index: 1, .. })
        ));
        assert!(matches!(rescale_collection(&[]), Err(Error::EmptyCollection)));
        assert!(matches!(rescale_collection(&[vec![0.0, 0.0]]), Err(Error::AllZeroCollection)));
        assert!(matches!(
            rescale_collection(&[vec![1.0], vec![1.0, 2.0]]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(rescale_collection(&[vec![f64::INFINITY]]).is_err());
    }

    #[test]
    fn mean_mass_examples() {
        let c = rescale_collection(&[vec![1.0, 0.0], vec![0.25, 0.25]]).unwrap();
        assert_eq!(mean_mass(&c), 0.75);
        let c = rescale_collection(&[vec![0.5, 0.5]]).unwrap();
        assert_eq!(mean_mass(&c), 1.0);
        // masses {0.2, 0.4, 0.6} after rescaling by 0.6 are {1/3, 2/3, 1}
        let c = rescale_collection(&[vec![0.2], vec![0.4], vec![0.6]]).unwrap();
        assert!((mean_mass(&c) * c.scale() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn histogram_rejects_excess_mass() {
        assert!(matches!(Histogram::new(vec![0.7, 0.4]), Err(Error::MassExceedsOne { .. })));
        assert!(Histogram::new(vec![0.5, 0.5 + 1e-13]).is_ok());
    }

    proptest! {
        #[test]
        fn rescale_is_idempotent(raw in prop::collection::vec(
            prop::collection::vec(0.0f64..10.0, 4), 1..6)
        ) {
            prop_assume!(raw.iter().any(|r| r.iter().sum::<f64>() > 0.0));
            let once = rescale_collection(&raw).unwrap();
            let again: Vec<Vec<f64>> = once.rows().iter().map(|h| h.values().to_vec()).collect();
            let twice = rescale_collection(&again).unwrap();
            prop_assert_eq!(twice.scale(), 1.0);
            prop_assert_eq!(twice.rows(), once.rows());
        }

        #[test]
        fn mean_mass_scales_back(raw in prop::collection::vec(
            prop::collection::vec(0.0f64..10.0, 3), 1..6)
        ) {
            prop_assume!(raw.iter().any(|r| r.iter().sum::<f64>() > 0.0));
            let c = rescale_collection(&raw).unwrap();
            let raw_mean = raw.iter().map(|r| r.iter().sum::<f64>()).sum::<f64>() / raw.len() as f64;
            let m = mean_mass(&c);
            prop_assert!(m > 0.0 && m <= 1.0 + MASS_SLACK);
            prop_assert!((m * c.scale() - raw_mean).abs() <= 1e-12 * raw_mean);
        }
    }
}
