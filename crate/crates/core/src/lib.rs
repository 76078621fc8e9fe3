//! Individualized continuous dose rules from Gaussian-process regression.
//!
//! A GP with an ARD squared-exponential kernel is fitted to
//! `(covariates, dose, reward)` records. For a new patient the recommended
//! dose maximizes the lower confidence surface `mean - s * sd` of the
//! posterior over the admissible dose interval, where `s` is a standard
//! normal quantile. Because the kernel factorizes into a covariate part and
//! a dose part, the surface for a fixed patient is a sum of exponentials in
//! the dose whose coefficients are computed once per patient
//! ([`policy::DoseCoefficients`]).
//!
//! The [`scenarios`] and [`harness`] modules reproduce the five simulated
//! dose-finding studies and the value-function protocol used to evaluate
//! the rule.

pub mod error;
pub mod gp;
pub mod harness;
pub mod io;
pub mod kernel;
pub mod normal;
pub mod optim;
pub mod policy;
pub mod rng;
pub mod scenarios;

pub use error::{Error, Result};
pub use gp::{
    compensated_sum, fit, log_marginal_likelihood, optimize_hyperparameters, Dataset, DoseRange, FittedGP, HyperSearch,
    Posterior, RewardScaler,
};
pub use harness::{
    penalty_sweep, run_experiment, run_replication, DosePolicy, ExperimentConfig, ExperimentSummary, SummaryRow,
};
pub use kernel::Hyperparameters;
pub use policy::{
    dose_coefficients, explain, feature_relevances, lcsl_objective, recommend_dose, Contribution, DoseCoefficients,
    DoseRecommendation, PenaltySpec,
};
pub use scenarios::Scenario;
