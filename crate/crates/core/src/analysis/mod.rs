//! Perturbation sensitivity, Gumbel ranking, correlation statistics and
//! flight-reduction policy search.

mod gumbel;
mod perturb;
mod policy;
mod scenario;
mod sensitivity;
pub mod stats;

use thiserror::Error;

pub use gumbel::{fit_gumbel, GumbelFit};
pub use perturb::{avg_daily_flight_reduction, perturb_adjacency, Perturbation};
pub use policy::{
    assemble_sweep, enumerate_policies, fidelity, impact_between, policy_impact, policy_sweep, quadrant, region_fractions, sample_policies, Policy,
    PolicyResult, PolicySweep, Quadrant, RegionFraction, DEFAULT_LEVELS, DEFAULT_POLICY_MODELS,
};
pub use scenario::{ensemble_mean, global_series, Forecasts, Scenario};
pub use sensitivity::{
    descending_ranks, node_sensitivity, sensitivity_score, sensitivity_scores, sensitivity_sweep, summarize, RegionSummary,
    SensitivityRecord, SensitivityReport,
};
pub use stats::{average_ranks, pearson, power_law_fit, spearman, PowerLaw};

use crate::forecast::ForecastError;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum AnalysisError {
    #[error("reduction fraction {fraction} for region {region} is outside [0, 1]")]
    BadFraction { region: usize, fraction: f64 },
    #[error("region index {0} is out of range")]
    UnknownRegion(usize),
    #[error("lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("input has zero variance")]
    ZeroVariance,
    #[error("power-law fit needs strictly positive data")]
    NonPositive,
    #[error("samples contain non-finite values")]
    NonFinite,
    #[error("Gumbel fit did not converge after {iterations} iterations (beta {beta}, last step {last_step})")]
    NoConvergence { iterations: usize, beta: f64, last_step: f64 },
    #[error("policy node set is empty")]
    EmptyNodeSet,
    #[error("policy grid is too large to enumerate")]
    TooManyPolicies,
    #[error("the ensemble is empty")]
    EmptyEnsemble,
    #[error("no forecast windows")]
    NoWindows,
    #[error(transparent)]
    Forecast(#[from] ForecastError),
    #[error("export failed: {0}")]
    Export(String),
}
