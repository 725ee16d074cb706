//! Statistical kernel: GEV distribution and maximum-likelihood fitting,
//! Mann-Whitney-Wilcoxon rank-sum test, Kolmogorov-Smirnov statistic.

mod gev;
mod ks;
mod mww;
pub mod optimize;

pub use gev::{fit_gev_mle, fit_gev_mle_with, pwm_initial_guess, GevFit, GevFitOptions, GevParams};
pub use ks::{ks_critical_value, ks_statistic};
pub use mww::{mww_test, rank_sum_distribution, MwwMethod, MwwResult, EXACT_MAX_TOTAL};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("invalid GEV parameters: {0}")]
    InvalidParams(String),
    #[error("probability {0} outside (0, 1)")]
    ProbabilityOutOfRange(f64),
    #[error("too few samples: {got} < {min}")]
    TooFewSamples { got: usize, min: usize },
    #[error("degenerate samples: zero variance")]
    ZeroVariance,
    #[error("samples contain non-finite values")]
    NonFinite,
    #[error("empty sample")]
    EmptySample,
}
