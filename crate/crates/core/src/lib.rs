//! Entropy-regularized Kantorovich distances between histograms of unequal
//! mass on discrete metric spaces, and mass-constrained Kantorovich
//! barycenters of histogram collections.
//!
//! The crate also ships exact small-scale solvers used as references, the
//! usual smoothing baselines, and a synthetic group study on a sphere.

pub mod barycenter;
pub mod baselines;
pub mod domain;
pub mod error;
pub mod io;
pub mod kantorovich;
pub mod metric_build;
pub mod numeric;
pub mod oracle;
pub mod simulate;
pub mod sinkhorn;

pub use barycenter::{kantorovich_mean, BarycenterReport};
pub use domain::{
    rescale_collection, Auto, GroundMetric, Histogram, HistogramCollection, SolverConfig, SquareMatrix, TargetMass,
};
pub use error::{Error, Result};
pub use kantorovich::{build_augmented, kantorovich_distance, AugmentedCost, DeltaSpec, Regularization};
pub use metric_build::{GridSpec, Label, TriMesh};
pub use sinkhorn::{CostMatrix, SinkhornOptions, SinkhornSolution};
