//! Multifidelity estimation of cumulative distribution functions under a
//! sampling budget.
//!
//! A high-fidelity model `Y` is paired with cheaper low-fidelity models
//! `X_1..X_n`. An exploration phase samples all models jointly, fits a
//! linear surrogate of `Y` from each subset of low-fidelity models, and
//! decides how many joint samples to take before spending the rest of the
//! budget on the cheapest useful subset. The final estimate is a control
//! variate correction of the empirical CDF of `Y`.

pub mod cdf;
pub mod cv_estimator;
pub mod cvmdl;
pub mod ensemble;
pub mod error;
pub mod metrics;
pub mod scalar;
pub mod seed;
pub mod subset;
pub mod surrogate;

pub use error::{Error, Result};
pub use scalar::Real;
pub use seed::SeedStream;
pub use subset::Subset;
pub use cdf::{alternating_sort, quantile, Cdf1D, CdfEstimate, EvalGrid, GridSpec};
pub use cv_estimator::{AlphaMode, Integration, OracleStats, SubsetEvaluation, Weight, WeightSpec};
pub use cvmdl::{run_cvmdl, run_ecdf_baseline, BudgetLedger, CvmdlOptions, CvmdlOutput};
pub use ensemble::{Ensemble, EnsembleConfig, EnsembleDescriptor, JointBatch, SubsetBatch};
pub use metrics::{cvar, mean_std_from_cdf, risk_report, weighted_l2_error, RiskReport};
pub use surrogate::SurrogateCoefficients;

/// Double-precision instantiations.
pub type CdfEstimate64 = cdf::CdfEstimate<f64>;
pub type Cdf1D64 = cdf::Cdf1D<f64>;
pub type EvalGrid64 = cdf::EvalGrid<f64>;
pub type JointBatch64 = ensemble::JointBatch<f64>;
pub type SubsetBatch64 = ensemble::SubsetBatch<f64>;
pub type SurrogateCoefficients64 = surrogate::SurrogateCoefficients<f64>;
pub type CvmdlOutput64 = cvmdl::CvmdlOutput<f64>;
pub type EcdfOutput64 = cvmdl::EcdfOutput<f64>;
