use thiserror::Error;

use crate::io::FormatError;

/// Errors raised by the numerical routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("collection is empty")]
    EmptyCollection,
    #[error("entry {index} of row {row} is negative or non-finite ({value})")]
    NegativeOrNonFiniteEntry { row: usize, index: usize, value: f64 },
    #[error("every vector in the collection has zero mass")]
    AllZeroCollection,
    #[error("rows have inconsistent lengths: expected {expected}, found {found} at row {row}")]
    DimensionMismatch { expected: usize, found: usize, row: usize },
    #[error("histogram mass {mass} exceeds 1")]
    MassExceedsOne { mass: f64 },

    #[error("metric needs at least two points, got {d}")]
    DegenerateMetric { d: usize },
    #[error("median off-diagonal distance is zero")]
    ZeroMedianMetric,
    #[error("invalid ground metric: {0}")]
    InvalidMetric(String),
    #[error("metric of size {d} exceeds the dense storage cap {cap}")]
    MetricTooLarge { d: usize, cap: usize },
    #[error("invalid voxel mask: {0}")]
    InvalidMask(String),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("mesh edge graph is disconnected; component sizes {component_sizes:?}")]
    DisconnectedMesh { component_sizes: Vec<usize> },

    #[error("marginal masses differ: {mass_a} vs {mass_b}")]
    MassMismatch { mass_a: f64, mass_b: f64 },
    #[error("kernel is not finite for lambda {lambda}")]
    NonFiniteKernel { lambda: f64 },
    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("first marginal has a zero entry at index {index}")]
    ZeroEntryInFirstMarginal { index: usize },
    #[error("virtual cost entry {index} is not positive ({value})")]
    NonPositiveDelta { index: usize, value: f64 },
    #[error("real bins carry no mass; projection undefined")]
    ZeroRealMass,
    #[error("problem size {size} exceeds the oracle guard {limit}")]
    SizeGuard { size: usize, limit: usize },
    #[error("icosphere subdivisions {0} out of range 0..=5")]
    SubdivisionOutOfRange(u32),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Format(#[from] FormatError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
