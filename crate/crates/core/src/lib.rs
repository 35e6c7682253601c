//! Cross-temporal forecast reconciliation: constraint algebra, covariance
//! estimation, point and probabilistic reconciliation, scoring and a
//! Monte Carlo harness.

// `!(x > 0.0)` style checks deliberately reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod covariance;
pub mod dataset;
pub mod error;
pub mod hierarchy;
pub mod linalg;
pub mod models;
pub mod pipeline;
pub mod probabilistic;
pub mod reconcile;
pub mod residuals;
pub mod scoring;
pub mod simulation;

pub use covariance::{
    build_omega, CovarianceKind, CovarianceMatrix, CovarianceSpec, KroneckerFactor, LambdaMode, ResidualInput,
};
pub use error::{Error, Result};
pub use hierarchy::{CrossSectionalStructure, CrossTemporalStructure, HierarchyFile, TemporalStructure};
pub use models::{ArModel, OrderSelection};
pub use residuals::{ModelSet, OneStepResiduals, ResidualBlocks, ResidualKind, ResidualSet, TemporalData};
pub use reconcile::{InnerWeights, Method, ReconciliationMap};
pub use probabilistic::{ForecastSample, GaussianForecast, Provenance};
pub use scoring::{EsPairs, ScoreRaw, ScoreReport};
pub use simulation::{Sampler, SimulationConfig, StudyGrid, StudyMethod, StudyResults};
pub use dataset::Dataset;
pub use pipeline::{OriginStep, PipelineConfig, PipelineResult};
