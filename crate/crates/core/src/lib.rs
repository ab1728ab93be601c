//! Subgroup performance audits for binary risk classifiers: cohort loading
//! and partitioning, classification metrics, logistic regression, propensity
//! score matching, bootstrap significance testing and synthetic cohorts.
//!
//! The numeric core (`metrics`, `stats`, `glm`, `matching`) is generic over
//! the scalar type through [`num::Real`]; the aliases below fix it to `f32`
//! or `f64`.

pub mod audit;
pub mod cohort;
pub mod error;
pub mod glm;
pub mod matching;
pub mod metrics;
pub mod num;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
pub use num::Real;

pub type DesignMatrixF64 = glm::DesignMatrix<f64>;
pub type DesignMatrixF32 = glm::DesignMatrix<f32>;
pub type LogisticModelF64 = glm::LogisticModel<f64>;
pub type LogisticModelF32 = glm::LogisticModel<f32>;
pub type FitOptionsF64 = glm::FitOptions<f64>;
pub type FitOptionsF32 = glm::FitOptions<f32>;
pub type ThresholdMetricsF64 = metrics::ThresholdMetrics<f64>;
pub type ThresholdMetricsF32 = metrics::ThresholdMetrics<f32>;
pub type CalibrationCurveF64 = metrics::CalibrationCurve<f64>;
pub type CalibrationCurveF32 = metrics::CalibrationCurve<f32>;
pub type TTestF64 = stats::TTest<f64>;
pub type TTestF32 = stats::TTest<f32>;
pub type PairMatchingF64 = matching::PairMatching<f64>;
pub type PairMatchingF32 = matching::PairMatching<f32>;
