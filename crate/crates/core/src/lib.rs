//! Beran and generalized Beran estimators of conditional distribution
//! functions under right censoring, where each censoring indicator may be a
//! probability instead of a binary flag.

pub mod bandwidth;
pub mod data;
pub mod error;
pub mod estimator;
pub mod evaluation;
pub mod kernel;
pub mod probability;
pub mod synthetic;

pub use data::{Dataset, Indicator, ObservedSample};
pub use error::{Error, Result};
pub use estimator::{beran_fit, gbe_fit, SurvivalCurve};
pub use kernel::{Bandwidth, KernelFamily, KernelSpec, MultivariateMode};
