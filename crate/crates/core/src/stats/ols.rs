//! Ordinary least squares with classical (homoskedastic) inference.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::distributions::{f_survival, t_two_sided_p};
use super::StatsError;
use crate::experiment::TreatmentArm;

pub const INTERCEPT: &str = "intercept";

/// Regressors and outcome for one fit.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignMatrix {
    terms: Vec<String>,
    rows: Vec<Vec<f64>>,
    outcome: Vec<f64>,
    /// Units removed because their outcome was missing.
    pub dropped: usize,
}

/// One unit for a treatment-indicator model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArmOutcome {
    pub arm: TreatmentArm,
    pub outcome: Option<f64>,
}

impl DesignMatrix {
    pub fn new(terms: Vec<String>, rows: Vec<Vec<f64>>, outcome: Vec<f64>) -> Result<Self, StatsError> {
        if rows.len() != outcome.len() {
            return Err(StatsError::Shape(format!("{} rows but {} outcomes", rows.len(), outcome.len())));
        }
        if let Some(row) = rows.iter().find(|r| r.len() != terms.len()) {
            return Err(StatsError::Shape(format!("row of width {} for {} terms", row.len(), terms.len())));
        }
        Ok(Self { terms, rows, outcome, dropped: 0 })
    }

    /// Intercept plus one 0/1 indicator for each arm in `arms` other than
    /// `baseline`. Units in other arms are ignored; units with a missing
    /// outcome are dropped and counted.
    pub fn treatment(units: &[ArmOutcome], baseline: TreatmentArm, arms: &[TreatmentArm]) -> Result<Self, StatsError> {
        if !arms.contains(&baseline) {
            return Err(StatsError::Shape(format!("baseline {baseline} is not among the modelled arms")));
        }
        let indicators: Vec<TreatmentArm> = arms.iter().copied().filter(|a| *a != baseline).collect();
        let mut terms = vec![INTERCEPT.to_string()];
        terms.extend(indicators.iter().map(|a| a.as_str().to_string()));
        let mut rows = Vec::new();
        let mut outcome = Vec::new();
        let mut dropped = 0;
        for unit in units.iter().filter(|u| arms.contains(&u.arm)) {
            let Some(y) = unit.outcome.filter(|y| y.is_finite()) else {
                dropped += 1;
                continue;
            };
            let mut row = vec![1.0];
            row.extend(indicators.iter().map(|a| if *a == unit.arm { 1.0 } else { 0.0 }));
            rows.push(row);
            outcome.push(y);
        }
        for arm in arms {
            let present = units.iter().any(|u| u.arm == *arm && u.outcome.is_some_and(f64::is_finite));
            if !present {
                return Err(StatsError::EmptyArm(*arm));
            }
        }
        Ok(Self { terms, rows, outcome, dropped })
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    pub fn n_units(&self) -> usize {
        self.rows.len()
    }

    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_units(), self.n_terms(), |i, j| self.rows[i][j])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermEstimate {
    pub term: String,
    pub coefficient: f64,
    pub std_error: f64,
    pub t_stat: f64,
    pub p_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub terms: Vec<TermEstimate>,
    pub n_units: usize,
    pub dropped: usize,
    pub df_residual: usize,
    pub residual_variance: f64,
    pub r_squared: f64,
    pub f_statistic: f64,
    /// F-test of the full model against the intercept-only model (or the
    /// zero model when there is no intercept).
    pub overall_p_value: f64,
    /// Residuals are exactly zero (or there are no residual degrees of
    /// freedom); standard errors are reported as zero.
    pub degenerate: bool,
}

impl RegressionResult {
    pub fn term(&self, name: &str) -> Option<&TermEstimate> {
        self.terms.iter().find(|t| t.term == name)
    }

    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.term(name).map(|t| t.coefficient)
    }

    pub fn p_value(&self, name: &str) -> Option<f64> {
        self.term(name).map(|t| t.p_value)
    }

    pub fn std_error(&self, name: &str) -> Option<f64> {
        self.term(name).map(|t| t.std_error)
    }
}

/// Least-squares fit by Householder QR.
pub fn ols_fit(design: &DesignMatrix) -> Result<RegressionResult, StatsError> {
    let n = design.n_units();
    let k = design.n_terms();
    if k == 0 {
        return Err(StatsError::Shape("design has no columns".into()));
    }
    if n < k {
        return Err(StatsError::TooFewRows { rows: n, columns: k });
    }
    let x = design.matrix();
    let y = DVector::from_column_slice(design.outcome());

    let qr = x.clone().qr();
    let r = qr.r();
    for j in 0..k {
        let column_norm = x.column(j).norm();
        if column_norm == 0.0 || r[(j, j)].abs() <= 1e-10 * column_norm {
            return Err(StatsError::RankDeficient { column: design.terms[j].clone(), depends_on: dependents(design, j) });
        }
    }
    let qty = qr.q().transpose() * &y;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| StatsError::RankDeficient { column: design.terms[k - 1].clone(), depends_on: vec![] })?;

    let residuals = &y - &x * &beta;
    let rss = residuals.norm_squared();
    let df = n - k;
    let has_intercept = design.terms.iter().any(|t| t == INTERCEPT);
    let mean = y.mean();
    let tss = if has_intercept { y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() } else { y.norm_squared() };
    let scale = (y.norm_squared() / n as f64).sqrt();
    let degenerate = df == 0 || rss <= 1e-24 * y.norm_squared() || rss == 0.0;
    let residual_variance = if df == 0 { 0.0 } else { rss / df as f64 };

    // (X'X)^-1 = R^-1 R^-T
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| StatsError::RankDeficient { column: design.terms[k - 1].clone(), depends_on: vec![] })?;
    let xtx_inv = &r_inv * r_inv.transpose();

    let terms = (0..k)
        .map(|j| {
            let coefficient = beta[j];
            let (std_error, t_stat, p_value) = if degenerate {
                if coefficient.abs() <= 1e-10 * scale.max(f64::MIN_POSITIVE) {
                    (0.0, 0.0, 1.0)
                } else {
                    (0.0, coefficient.signum() * f64::INFINITY, 0.0)
                }
            } else {
                let se = (residual_variance * xtx_inv[(j, j)]).sqrt();
                let t = coefficient / se;
                (se, t, t_two_sided_p(t, df as f64))
            };
            TermEstimate { term: design.terms[j].clone(), coefficient, std_error, t_stat, p_value }
        })
        .collect::<Vec<_>>();

    let model_df = if has_intercept { k - 1 } else { k };
    let explained = (tss - rss).max(0.0);
    let (f_statistic, overall_p_value) = if model_df == 0 {
        (0.0, 1.0)
    } else if degenerate {
        let all_zero = terms.iter().filter(|t| t.term != INTERCEPT).all(|t| t.p_value == 1.0);
        if all_zero {
            (0.0, 1.0)
        } else {
            (f64::INFINITY, 0.0)
        }
    } else {
        let f = (explained / model_df as f64) / residual_variance;
        (f, f_survival(f, model_df as f64, df as f64))
    };
    let r_squared = if tss > 0.0 { 1.0 - rss / tss } else { 0.0 };

    Ok(RegressionResult {
        terms,
        n_units: n,
        dropped: design.dropped,
        df_residual: df,
        residual_variance,
        r_squared,
        f_statistic,
        overall_p_value,
        degenerate,
    })
}

/// Earlier columns that column `j` is (numerically) a combination of.
fn dependents(design: &DesignMatrix, j: usize) -> Vec<String> {
    if j == 0 {
        return vec![];
    }
    let x = design.matrix();
    let earlier = x.columns(0, j).into_owned();
    let target = x.column(j).into_owned();
    let Some(svd) = nalgebra::linalg::SVD::try_new(earlier, true, true, 1e-14, 0) else {
        return vec![];
    };
    match svd.solve(&target, 1e-10) {
        Ok(coef) => (0..j)
            .filter(|&i| coef[i].abs() > 1e-8)
            .map(|i| design.terms[i].clone())
            .collect(),
        Err(_) => vec![],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn design(terms: &[&str], rows: Vec<Vec<f64>>, y: Vec<f64>) -> DesignMatrix {
        DesignMatrix::new(terms.iter().map(|s| s.to_string()).collect(), rows, y).unwrap()
    }

    #[test]
    fn exact_interpolation_is_degenerate() {
        let d = design(&["intercept", "x"], vec![vec![1.0, 0.0], vec![1.0, 1.0]], vec![1.0, 3.0]);
        let fit = ols_fit(&d).unwrap();
        assert!((fit.coefficient("intercept").unwrap() - 1.0).abs() < 1e-12);
        assert!((fit.coefficient("x").unwrap() - 2.0).abs() < 1e-12);
        assert!(fit.degenerate);
        assert_eq!(fit.residual_variance, 0.0);
    }

    #[test]
    fn constant_outcome_gives_null_slopes() {
        let rows: Vec<Vec<f64>> = (0..12).map(|i| vec![1.0, (i % 3) as f64, (i * i % 5) as f64]).collect();
        let d = design(&["intercept", "a", "b"], rows, vec![2.5; 12]);
        let fit = ols_fit(&d).unwrap();
        for term in ["a", "b"] {
            assert!(fit.coefficient(term).unwrap().abs() < 1e-10);
            assert!((fit.p_value(term).unwrap() - 1.0).abs() < 1e-9);
        }
        assert_eq!(fit.overall_p_value, 1.0);
    }

    #[test]
    fn rank_deficiency_names_columns() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![1.0, i as f64, 2.0 * i as f64 + 1.0]).collect();
        let d = design(&["intercept", "x", "x2"], rows, (0..6).map(f64::from).collect());
        match ols_fit(&d) {
            Err(StatsError::RankDeficient { column, depends_on }) => {
                assert_eq!(column, "x2");
                assert_eq!(depends_on, ["intercept", "x"]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn too_few_rows() {
        let d = design(&["intercept", "x"], vec![vec![1.0, 0.0]], vec![1.0]);
        assert!(matches!(ols_fit(&d), Err(StatsError::TooFewRows { rows: 1, columns: 2 })));
    }

    #[test]
    fn treatment_design_layout() {
        let units = [
            ArmOutcome { arm: TreatmentArm::Viz, outcome: Some(1.0) },
            ArmOutcome { arm: TreatmentArm::VizIdeo, outcome: Some(2.0) },
            ArmOutcome { arm: TreatmentArm::IdeoRec, outcome: None },
            ArmOutcome { arm: TreatmentArm::IdeoRec, outcome: Some(3.0) },
            ArmOutcome { arm: TreatmentArm::Control, outcome: Some(9.0) },
        ];
        let d = DesignMatrix::treatment(&units, TreatmentArm::Viz, &TreatmentArm::TREATED).unwrap();
        assert_eq!(d.terms(), ["intercept", "viz_ideo", "ideo_rec"]);
        assert_eq!(d.rows(), [vec![1.0, 0.0, 0.0], vec![1.0, 1.0, 0.0], vec![1.0, 0.0, 1.0]]);
        assert_eq!(d.dropped, 1);

        let missing = [ArmOutcome { arm: TreatmentArm::Viz, outcome: Some(1.0) }];
        assert!(matches!(
            DesignMatrix::treatment(&missing, TreatmentArm::Viz, &TreatmentArm::TREATED),
            Err(StatsError::EmptyArm(TreatmentArm::VizIdeo))
        ));
    }
}
