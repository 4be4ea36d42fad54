//! Simulation and inference for pairs of supercritical branching processes in
//! correlated random environments.
//!
//! Each generation draws a latent standard normal `g`, maps it to an offspring
//! law through an [`env::EnvironmentFamily`], and grows the population by a sum
//! of i.i.d. offspring counts. Two processes share their environments through a
//! Gaussian copula. The comparison statistic `R` of [`statistic`] is
//! asymptotically standard normal; [`inference`] inverts it into intervals and
//! tests, and [`verify`] and [`suites`] check the normal approximation by Monte
//! Carlo.

pub mod config;
pub mod env;
pub mod error;
pub mod inference;
pub mod quadrature;
pub mod report;
pub mod rng;
pub mod sim;
pub mod special;
pub mod statistic;
pub mod suites;
pub mod verify;

pub use config::{RunConfig, FORMAT_VERSION};
pub use env::{
    builtin_laws, env_moments, pair_correlation, CriticalityParams, EnvironmentFamily, LawRegistry,
    OffspringLaw, PairCorrelation,
};
pub use error::{Error, Result};
pub use inference::{
    ci_mu_diff, ci_sigma_sq, test_mu_equal, Interval, IntervalMethod, Observation, Scales,
};
pub use sim::{PairedTrajectory, PopulationCap, SimConfig, Trajectory};
pub use special::Probability;
pub use statistic::{model_params, r_statistic, ComparisonStatistic, ModelParams};
pub use suites::{SuiteRegistry, VerificationSuite, VerifyContext};
pub use verify::{SampleSet, VerificationReport};
