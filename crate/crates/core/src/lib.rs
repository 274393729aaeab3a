//! Forecast reconciliation for hierarchical time series.
//!
//! The numerical core is generic over [`Real`] (`f32` or `f64`); the
//! aliases below fix it to `f64`.

pub mod baseforecast;
pub mod covariance;
mod error;
pub mod experiment;
pub mod hierarchy;
pub mod io;
pub mod metrics;
pub mod mintit;
pub mod pipeline;
pub mod reconcilers;
pub mod scalar;
pub mod scenarios;

#[cfg(test)]
mod testutil;

pub use error::Error;
pub use hierarchy::{build_structure_matrix, Hierarchy, HierarchyError};
pub use mintit::{mintit, CovarianceMode};
pub use pipeline::{reconcile_with, Reconciled};
pub use reconcilers::{make_reconciler, reconcile, Method};
pub use scalar::Real;

pub type StructureMatrixF64 = hierarchy::StructureMatrix<f64>;
pub type ResidualPanelF64 = covariance::ResidualPanel<f64>;
pub type CovarianceEstimateF64 = covariance::CovarianceEstimate<f64>;
pub type ForecastPanelF64 = reconcilers::ForecastPanel<f64>;
pub type GMatrixF64 = reconcilers::GMatrix<f64>;
pub type MinTitConfigF64 = mintit::MinTitConfig<f64>;
pub type MinTitResultF64 = mintit::MinTitResult<f64>;
pub type BaseFitF64 = baseforecast::BaseFit<f64>;
pub type ReconciledF64 = pipeline::Reconciled<f64>;
