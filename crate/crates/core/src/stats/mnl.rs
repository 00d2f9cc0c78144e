//! Multinomial logit of treatment arm on pre-treatment covariates, fit by
//! damped Newton steps with a small ridge penalty on the slopes.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::StatsError;
use crate::experiment::TreatmentArm;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MnlConfig {
    pub ridge: f64,
    pub gradient_tolerance: f64,
    pub max_iterations: usize,
}

impl Default for MnlConfig {
    fn default() -> Self {
        Self { ridge: 1e-6, gradient_tolerance: 1e-8, max_iterations: 200 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MnlFit {
    /// Arms in class order; the first is the reference category.
    pub arms: Vec<TreatmentArm>,
    /// One row per non-reference arm: intercept then one slope per
    /// (standardized) covariate.
    pub coefficients: Vec<Vec<f64>>,
    pub log_likelihood: f64,
    /// `sum_a n_a log(n_a / n)`.
    pub intercept_only_log_likelihood: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
}

/// Centers each column and scales it to unit variance. Constant columns
/// become all zeros.
pub fn standardize(covariates: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = covariates.len();
    let p = covariates.first().map_or(0, Vec::len);
    let mut out = covariates.to_vec();
    for j in 0..p {
        let mean = covariates.iter().map(|r| r[j]).sum::<f64>() / n as f64;
        let var = covariates.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        for row in out.iter_mut() {
            row[j] = if sd > 1e-12 * (1.0 + mean.abs()) { (row[j] - mean) / sd } else { 0.0 };
        }
    }
    out
}

/// Problem data shared between the observed fit and permutation refits.
#[derive(Clone, Debug)]
pub struct MnlProblem {
    /// Standardized covariates with a leading 1 column.
    design: Vec<Vec<f64>>,
    arms: Vec<TreatmentArm>,
}

impl MnlProblem {
    pub fn new(covariates: &[Vec<f64>], labels: &[TreatmentArm]) -> Result<Self, StatsError> {
        if covariates.len() != labels.len() {
            return Err(StatsError::Shape(format!(
                "{} covariate rows but {} labels",
                covariates.len(),
                labels.len()
            )));
        }
        let width = covariates.first().map_or(0, Vec::len);
        if covariates.iter().any(|r| r.len() != width || r.iter().any(|v| !v.is_finite())) {
            return Err(StatsError::Shape("covariate rows must be finite and equally wide".into()));
        }
        let mut arms: Vec<TreatmentArm> = labels.to_vec();
        arms.sort();
        arms.dedup();
        if arms.len() < 2 {
            return Err(StatsError::Shape("need at least two arms".into()));
        }
        let design = standardize(covariates)
            .into_iter()
            .map(|row| std::iter::once(1.0).chain(row).collect())
            .collect();
        Ok(Self { design, arms })
    }

    pub fn arms(&self) -> &[TreatmentArm] {
        &self.arms
    }

    pub fn classes(&self, labels: &[TreatmentArm]) -> Vec<usize> {
        labels
            .iter()
            .map(|a| self.arms.iter().position(|b| b == a).expect("label among fitted arms"))
            .collect()
    }

    pub fn fit(&self, labels: &[TreatmentArm], config: &MnlConfig) -> Result<MnlFit, StatsError> {
        let classes = self.classes(labels);
        self.fit_classes(&classes, config)
    }

    pub(crate) fn fit_classes(&self, classes: &[usize], config: &MnlConfig) -> Result<MnlFit, StatsError> {
        let n = self.design.len();
        let width = self.design[0].len();
        let k = self.arms.len();
        let m = (k - 1) * width;
        let mut counts = vec![0usize; k];
        for &c in classes {
            counts[c] += 1;
        }
        let intercept_only: f64 = counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| c as f64 * (c as f64 / n as f64).ln())
            .sum();

        // start at the intercept-only optimum
        let mut theta = vec![0.0; m];
        if counts.iter().all(|&c| c > 0) {
            for c in 1..k {
                theta[(c - 1) * width] = (counts[c] as f64 / counts[0] as f64).ln();
            }
        }

        let mut state = self.evaluate(&theta, classes, config.ridge, true);
        let mut iterations = 0;
        loop {
            let grad_norm = state.gradient.iter().fold(0.0f64, |acc, g| acc.max(g.abs()));
            if grad_norm <= config.gradient_tolerance {
                break;
            }
            if iterations == config.max_iterations {
                return Err(StatsError::NoConvergence {
                    iterations,
                    gradient_norm: grad_norm,
                    log_likelihood: state.log_likelihood,
                });
            }
            iterations += 1;
            let hessian = DMatrix::from_row_slice(m, m, &state.neg_hessian);
            let gradient = DVector::from_column_slice(&state.gradient);
            let step = match hessian.clone().cholesky() {
                Some(chol) => chol.solve(&gradient),
                None => {
                    let jitter = DMatrix::identity(m, m) * 1e-8;
                    (hessian + jitter)
                        .cholesky()
                        .map(|c| c.solve(&gradient))
                        .unwrap_or_else(|| gradient.clone())
                }
            };
            let mut scale = 1.0;
            loop {
                let candidate: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t + scale * s).collect();
                let trial = self.evaluate(&candidate, classes, config.ridge, false);
                if trial.objective >= state.objective - 1e-12 * state.objective.abs() || scale < 1e-10 {
                    theta = candidate;
                    state = self.evaluate(&theta, classes, config.ridge, true);
                    break;
                }
                scale *= 0.5;
            }
        }

        let coefficients = theta.chunks(width).map(<[f64]>::to_vec).collect();
        let gradient_norm = state.gradient.iter().fold(0.0f64, |acc, g| acc.max(g.abs()));
        Ok(MnlFit {
            arms: self.arms.clone(),
            coefficients,
            log_likelihood: state.log_likelihood,
            intercept_only_log_likelihood: intercept_only,
            iterations,
            gradient_norm,
        })
    }

    fn evaluate(&self, theta: &[f64], classes: &[usize], ridge: f64, derivatives: bool) -> Evaluation {
        let width = self.design[0].len();
        let k = self.arms.len();
        let m = theta.len();
        let mut log_likelihood = 0.0;
        let mut gradient = vec![0.0; if derivatives { m } else { 0 }];
        let mut neg_hessian = vec![0.0; if derivatives { m * m } else { 0 }];
        let mut eta = vec![0.0; k];
        let mut prob = vec![0.0; k];

        for (x, &y) in self.design.iter().zip(classes) {
            eta[0] = 0.0;
            for c in 1..k {
                let row = &theta[(c - 1) * width..c * width];
                eta[c] = row.iter().zip(x).map(|(b, v)| b * v).sum();
            }
            let max = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = eta.iter().map(|e| (e - max).exp()).sum();
            let log_denom = max + denom.ln();
            for c in 0..k {
                prob[c] = (eta[c] - log_denom).exp();
            }
            log_likelihood += eta[y] - log_denom;
            if !derivatives {
                continue;
            }
            for c in 1..k {
                let resid = f64::from(u8::from(y == c)) - prob[c];
                for (j, xj) in x.iter().enumerate() {
                    gradient[(c - 1) * width + j] += resid * xj;
                }
                for d in 1..k {
                    let w = prob[c] * (f64::from(u8::from(c == d)) - prob[d]);
                    if w == 0.0 {
                        continue;
                    }
                    for (j, xj) in x.iter().enumerate() {
                        let row = ((c - 1) * width + j) * m + (d - 1) * width;
                        for (l, xl) in x.iter().enumerate() {
                            neg_hessian[row + l] += w * xj * xl;
                        }
                    }
                }
            }
        }

        let mut penalty = 0.0;
        for c in 1..k {
            for j in 1..width {
                let i = (c - 1) * width + j;
                penalty += 0.5 * ridge * theta[i] * theta[i];
                if derivatives {
                    gradient[i] -= ridge * theta[i];
                    neg_hessian[i * m + i] += ridge;
                }
            }
        }
        Evaluation { log_likelihood, objective: log_likelihood - penalty, gradient, neg_hessian }
    }
}

struct Evaluation {
    log_likelihood: f64,
    objective: f64,
    gradient: Vec<f64>,
    neg_hessian: Vec<f64>,
}

/// Fits arm membership on covariates (standardized internally) and returns
/// the maximized log-likelihood with the coefficients.
pub fn mnl_fit(covariates: &[Vec<f64>], labels: &[TreatmentArm], config: &MnlConfig) -> Result<MnlFit, StatsError> {
    MnlProblem::new(covariates, labels)?.fit(labels, config)
}
