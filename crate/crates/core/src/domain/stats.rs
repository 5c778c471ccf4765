use crate::domain::GroundMetric;
use crate::error::{Error, Result};

/// Percentile of `values` with linear interpolation between order
/// statistics at position `(n - 1) * q / 100`.
///
/// `q` is a percentage in `(0, 100]`. Returns `NaN` for an empty slice.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * q / 100.0;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let frac = h - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// q-th percentile of the strictly off-diagonal (upper triangular) distances.
pub fn quantile_offdiag(metric: &GroundMetric, q: f64) -> Result<f64> {
    if metric.d() < 2 {
        return Err(Error::DegenerateMetric { d: metric.d() });
    }
    if !(q > 0.0 && q <= 100.0) {
        return Err(Error::InvalidConfig(format!("quantile {q} outside (0, 100]")));
    }
    Ok(quantile(&metric.off_diagonal(), q))
}

/// Entropic regularization strength `100 / median(M)`.
pub fn auto_lambda(metric: &GroundMetric) -> Result<f64> {
    let median = quantile_offdiag(metric, 50.0)?;
    if median <= 0.0 {
        return Err(Error::ZeroMedianMetric);
    }
    Ok(100.0 / median)
}
