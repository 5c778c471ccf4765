//! Domain types: histograms, ground metrics, solver configuration and the
//! scalar statistics derived from a metric.

mod config;
mod histogram;
mod matrix;
mod stats;

pub use config::{Auto, SolverConfig, TargetMass};
pub use histogram::{mean_mass, rescale_collection, Histogram, HistogramCollection, MASS_SLACK};
pub use matrix::{GroundMetric, SquareMatrix, SYMMETRY_TOL};
pub use stats::{auto_lambda, quantile, quantile_offdiag};
