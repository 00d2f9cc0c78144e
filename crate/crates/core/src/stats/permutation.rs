//! Randomization check: how unusual is the observed covariate/arm
//! association compared with shuffled assignments?

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mnl::{MnlConfig, MnlProblem};
use super::StatsError;
use crate::experiment::TreatmentArm;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogLikSummary {
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub q05: f64,
    pub median: f64,
    pub q95: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermutationTestResult {
    pub observed_log_lik: f64,
    pub permuted: LogLikSummary,
    /// `(#{permuted >= observed} + 1) / (successful permutations + 1)`.
    pub p_value: f64,
    pub n_permutations: usize,
    pub failed_permutations: usize,
    pub seed: u64,
}

/// Relative slack when comparing log-likelihoods: shuffles that leave the
/// likelihood unchanged must count as ties despite summation-order noise.
const TIE_TOLERANCE: f64 = 1e-9;

/// Labels for permutation `index`, derived only from `(seed, index)` so the
/// loop can run in any order.
pub fn permuted_labels<T: Clone>(labels: &[T], seed: u64, index: u64) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let mut shuffled = labels.to_vec();
    shuffled.shuffle(&mut rng);
    shuffled
}

pub fn randomization_check(
    covariates: &[Vec<f64>],
    labels: &[TreatmentArm],
    n_permutations: usize,
    seed: u64,
    config: &MnlConfig,
) -> Result<PermutationTestResult, StatsError> {
    let problem = MnlProblem::new(covariates, labels)?;
    let classes = problem.classes(labels);
    let observed = problem.fit_classes(&classes, config)?.log_likelihood;

    let fits: Vec<Option<f64>> = (0..n_permutations as u64)
        .into_par_iter()
        .map(|i| {
            let shuffled = permuted_labels(&classes, seed, i + 1);
            problem.fit_classes(&shuffled, config).ok().map(|f| f.log_likelihood)
        })
        .collect();
    let mut permuted: Vec<f64> = fits.iter().flatten().copied().collect();
    let failed = n_permutations - permuted.len();

    let threshold = observed - TIE_TOLERANCE * observed.abs().max(1.0);
    let at_least = permuted.iter().filter(|&&ll| ll >= threshold).count();
    let p_value = (at_least + 1) as f64 / (permuted.len() + 1) as f64;

    permuted.sort_by(f64::total_cmp);
    Ok(PermutationTestResult {
        observed_log_lik: observed,
        permuted: summarize(&permuted),
        p_value,
        n_permutations,
        failed_permutations: failed,
        seed,
    })
}

fn summarize(sorted: &[f64]) -> LogLikSummary {
    if sorted.is_empty() {
        return LogLikSummary { count: 0, mean: f64::NAN, min: f64::NAN, q05: f64::NAN, median: f64::NAN, q95: f64::NAN, max: f64::NAN };
    }
    let quantile = |q: f64| {
        let pos = q * (sorted.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
    };
    LogLikSummary {
        count: sorted.len(),
        mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
        min: sorted[0],
        q05: quantile(0.05),
        median: quantile(0.5),
        q95: quantile(0.95),
        max: sorted[sorted.len() - 1],
    }
}
