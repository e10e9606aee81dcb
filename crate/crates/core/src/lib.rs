//! Covariate-dependent random partition models with normalized generalized
//! gamma cohesions, their Gibbs samplers and posterior summaries.

pub mod allocation;
pub mod cohesion;
pub mod conjugate;
pub mod covariates;
pub mod error;
pub mod io;
pub mod partition;
pub mod prior;
pub mod quadrature;
pub mod recurrent;
pub mod similarity;
pub mod simulate;
pub mod stats;
pub mod summaries;
pub mod trace;

pub use cohesion::NggParams;
pub use covariates::{CovariateRow, MetricChoice, MixedCovariateMatrix};
pub use error::{Error, Result};
pub use partition::Partition;
pub use similarity::{SimilarityConfig, SimilarityFamily};
