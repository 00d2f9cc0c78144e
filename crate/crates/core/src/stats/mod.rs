//! Inference for the experiment: OLS treatment-effect models, the
//! multinomial-logit balance model and its permutation test.

mod distributions;
mod effects;
mod mnl;
mod ols;
mod permutation;
pub mod report;

use thiserror::Error;

use crate::experiment::TreatmentArm;

pub use distributions::{f_survival, student_t_cdf, t_two_sided_p};
pub use effects::{
    alignment_effects, alignment_units, balance_inputs, diversity_effects, diversity_units, fit_arms, pairwise_effects,
    survey_effects, survey_units, ArmModel, BalanceInputs,
};
pub use mnl::{mnl_fit, standardize, MnlConfig, MnlFit, MnlProblem};
pub use ols::{ols_fit, ArmOutcome, DesignMatrix, RegressionResult, TermEstimate, INTERCEPT};
pub use permutation::{permuted_labels, randomization_check, LogLikSummary, PermutationTestResult};

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("design is rank deficient: column `{column}` is collinear with {depends_on:?}")]
    RankDeficient { column: String, depends_on: Vec<String> },
    #[error("{rows} rows cannot identify {columns} coefficients")]
    TooFewRows { rows: usize, columns: usize },
    #[error("arm {0} has no units with an outcome")]
    EmptyArm(TreatmentArm),
    #[error("malformed input: {0}")]
    Shape(String),
    #[error(
        "multinomial logit did not converge after {iterations} iterations \
         (max |gradient| {gradient_norm:e}, log-likelihood {log_likelihood})"
    )]
    NoConvergence { iterations: usize, gradient_norm: f64, log_likelihood: f64 },
}
