//! Treatment-effect models over the exported analysis tables.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ols::{ols_fit, ArmOutcome, DesignMatrix, RegressionResult};
use super::StatsError;
use crate::experiment::TreatmentArm;
use crate::tables::{AlignmentRow, CovariateRow, DiversityRow, SurveyRow};

/// Which units and baseline an outcome model uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArmModel {
    /// Control plus the three treatments, Control as baseline.
    FourArm,
    /// Treated survey completers only, Viz as baseline.
    ThreeArm,
}

impl ArmModel {
    fn baseline(self) -> TreatmentArm {
        match self {
            ArmModel::FourArm => TreatmentArm::Control,
            ArmModel::ThreeArm => TreatmentArm::Viz,
        }
    }

    fn arms(self) -> &'static [TreatmentArm] {
        match self {
            ArmModel::FourArm => &TreatmentArm::ALL,
            ArmModel::ThreeArm => &TreatmentArm::TREATED,
        }
    }
}

pub fn fit_arms(units: &[ArmOutcome], baseline: TreatmentArm, arms: &[TreatmentArm]) -> Result<RegressionResult, StatsError> {
    ols_fit(&DesignMatrix::treatment(units, baseline, arms)?)
}

/// Survey units, optionally without the IdeoRec participants who followed a
/// recommended account.
pub fn survey_units(rows: &[SurveyRow], question: usize, filter_acceptors: bool) -> Vec<ArmOutcome> {
    rows.iter()
        .filter(|r| !(filter_acceptors && r.arm == TreatmentArm::IdeoRec && r.accepted == Some(true)))
        .map(|r| ArmOutcome { arm: r.arm, outcome: Some(f64::from(r.delta(question))) })
        .collect()
}

/// One fit per question (keys 1 to 4) of the post-minus-pre delta on
/// treatment indicators.
pub fn survey_effects(
    rows: &[SurveyRow],
    baseline: TreatmentArm,
    filter_acceptors: bool,
) -> Result<BTreeMap<usize, RegressionResult>, StatsError> {
    (1..=4)
        .map(|q| {
            let units = survey_units(rows, q, filter_acceptors);
            fit_arms(&units, baseline, &TreatmentArm::TREATED).map(|fit| (q, fit))
        })
        .collect()
}

pub fn diversity_units(rows: &[DiversityRow], week: u8, model: ArmModel) -> Vec<ArmOutcome> {
    rows.iter()
        .filter(|r| model == ArmModel::FourArm || (r.arm != TreatmentArm::Control && r.completed_surveys))
        .map(|r| ArmOutcome { arm: r.arm, outcome: r.delta(week) })
        .collect()
}

/// Change in connection diversity from week 0 to `week`. Units without
/// both snapshots are dropped and counted in `dropped`.
pub fn diversity_effects(rows: &[DiversityRow], week: u8, model: ArmModel) -> Result<RegressionResult, StatsError> {
    if !(1..=3).contains(&week) {
        return Err(StatsError::Shape(format!("week must be 1, 2 or 3, got {week}")));
    }
    fit_arms(&diversity_units(rows, week, model), model.baseline(), model.arms())
}

pub fn alignment_units(rows: &[AlignmentRow], model: ArmModel) -> Vec<ArmOutcome> {
    rows.iter()
        .filter(|r| model == ArmModel::FourArm || (r.arm != TreatmentArm::Control && r.completed_surveys))
        .map(|r| ArmOutcome { arm: r.arm, outcome: r.delta })
        .collect()
}

/// `|after| - |before|` mean URL alignment on treatment indicators.
pub fn alignment_effects(rows: &[AlignmentRow], model: ArmModel) -> Result<RegressionResult, StatsError> {
    fit_arms(&alignment_units(rows, model), model.baseline(), model.arms())
}

/// Two-group fit on units in `arm_a` or `arm_b`, with `arm_a` as baseline.
pub fn pairwise_effects(
    units: &[ArmOutcome],
    arm_a: TreatmentArm,
    arm_b: TreatmentArm,
) -> Result<RegressionResult, StatsError> {
    if arm_a == arm_b {
        return Err(StatsError::Shape("pairwise comparison needs two distinct arms".into()));
    }
    fit_arms(units, arm_a, &[arm_a, arm_b])
}

/// Covariate matrix for the randomization check.
#[derive(Clone, Debug, PartialEq)]
pub struct BalanceInputs {
    pub columns: Vec<&'static str>,
    pub covariates: Vec<Vec<f64>>,
    pub labels: Vec<TreatmentArm>,
    /// Units in the selected arms left out for a missing value in a kept
    /// column.
    pub dropped: usize,
}

/// Units in `arms`, restricted to the covariate columns that are observed
/// for at least `min_coverage` of those units (Control units have no
/// pre-survey, so a four-arm check falls back to the snapshot and URL
/// covariates). Units missing any kept column are dropped.
pub fn balance_inputs(rows: &[CovariateRow], arms: &[TreatmentArm], min_coverage: f64) -> BalanceInputs {
    let units: Vec<&CovariateRow> = rows.iter().filter(|r| arms.contains(&r.arm)).collect();
    let keep: Vec<usize> = (0..CovariateRow::COLUMNS.len())
        .filter(|&j| {
            let observed = units.iter().filter(|r| r.values()[j].is_some()).count();
            !units.is_empty() && observed as f64 >= min_coverage * units.len() as f64
        })
        .collect();
    let mut covariates = Vec::new();
    let mut labels = Vec::new();
    for row in &units {
        let values = row.values();
        if let Some(x) = keep.iter().map(|&j| values[j]).collect::<Option<Vec<f64>>>() {
            covariates.push(x);
            labels.push(row.arm);
        }
    }
    BalanceInputs {
        columns: keep.iter().map(|&j| CovariateRow::COLUMNS[j]).collect(),
        dropped: units.len() - labels.len(),
        covariates,
        labels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::AccountId;

    fn survey_row(i: usize, arm: TreatmentArm, delta: [i8; 4], accepted: Option<bool>) -> SurveyRow {
        SurveyRow {
            user_id: AccountId::new(format!("u{i}")).unwrap(),
            arm,
            accepted,
            pre_q1: 3,
            pre_q2: 3,
            pre_q3: 3,
            pre_q4: 3,
            post_q1: (3 + delta[0]) as u8,
            post_q2: (3 + delta[1]) as u8,
            post_q3: (3 + delta[2]) as u8,
            post_q4: (3 + delta[3]) as u8,
            delta_q1: delta[0],
            delta_q2: delta[1],
            delta_q3: delta[2],
            delta_q4: delta[3],
        }
    }

    #[test]
    fn balance_inputs_skip_sparse_columns() {
        let rows: Vec<CovariateRow> = (0..8)
            .map(|i| {
                let treated = i % 4 != 0;
                let pre = treated.then_some(3.0);
                CovariateRow {
                    user_id: AccountId::new(format!("u{i}")).unwrap(),
                    arm: TreatmentArm::ALL[i % 4],
                    pre_q1: pre,
                    pre_q2: pre,
                    pre_q3: pre,
                    pre_q4: pre,
                    diversity_week0: Some(0.5),
                    abs_pre_alignment: (i != 5).then_some(0.2),
                }
            })
            .collect();
        let all = balance_inputs(&rows, &TreatmentArm::ALL, 0.8);
        assert_eq!(all.columns, ["diversity_week0", "abs_pre_alignment"]);
        assert_eq!((all.labels.len(), all.dropped), (7, 1));
        let treated = balance_inputs(&rows, &TreatmentArm::TREATED, 0.8);
        assert_eq!(treated.columns.len(), 6);
        assert_eq!(treated.labels.len(), 5);
    }

    #[test]
    fn zero_deltas_give_zero_coefficients() {
        let rows: Vec<SurveyRow> =
            (0..30).map(|i| survey_row(i, TreatmentArm::TREATED[i % 3], [0; 4], None)).collect();
        let fits = survey_effects(&rows, TreatmentArm::Viz, false).unwrap();
        assert_eq!(fits.len(), 4);
        for fit in fits.values() {
            for term in &fit.terms {
                assert_eq!(term.coefficient.abs(), 0.0);
            }
        }
    }

    #[test]
    fn acceptor_filter_drops_only_ideo_rec_acceptors() {
        let mut rows: Vec<SurveyRow> =
            (0..9).map(|i| survey_row(i, TreatmentArm::TREATED[i % 3], [1, 0, 0, 0], Some(false))).collect();
        rows.push(survey_row(9, TreatmentArm::IdeoRec, [4, 0, 0, 0], Some(true)));
        rows.push(survey_row(10, TreatmentArm::Viz, [4, 0, 0, 0], Some(true)));
        assert_eq!(survey_units(&rows, 1, true).len(), 10);
        let fits = survey_effects(&rows, TreatmentArm::Viz, true).unwrap();
        assert_eq!(fits[&1].n_units, 10);
    }

    #[test]
    fn empty_arm_after_filtering() {
        let rows = vec![
            survey_row(0, TreatmentArm::Viz, [0; 4], None),
            survey_row(1, TreatmentArm::VizIdeo, [1; 4], None),
            survey_row(2, TreatmentArm::IdeoRec, [1; 4], Some(true)),
        ];
        assert!(matches!(
            survey_effects(&rows, TreatmentArm::Viz, true),
            Err(StatsError::EmptyArm(TreatmentArm::IdeoRec))
        ));
    }

    #[test]
    fn pairwise_needs_distinct_non_empty_arms() {
        let units = [ArmOutcome { arm: TreatmentArm::Viz, outcome: Some(0.0) }];
        assert!(pairwise_effects(&units, TreatmentArm::Viz, TreatmentArm::Viz).is_err());
        assert!(matches!(
            pairwise_effects(&units, TreatmentArm::Viz, TreatmentArm::IdeoRec),
            Err(StatsError::EmptyArm(TreatmentArm::IdeoRec))
        ));
    }

    #[test]
    fn no_change_diversity_is_null() {
        let rows: Vec<DiversityRow> = (0..40)
            .map(|i| DiversityRow {
                user_id: AccountId::new(format!("u{i}")).unwrap(),
                arm: TreatmentArm::ALL[i % 4],
                completed_surveys: true,
                d_week0: Some(0.3 + 0.01 * i as f64),
                d_week1: Some(0.3 + 0.01 * i as f64),
                d_week2: None,
                d_week3: Some(0.3 + 0.01 * i as f64),
            })
            .collect();
        let fit = diversity_effects(&rows, 1, ArmModel::FourArm).unwrap();
        assert!(fit.terms.iter().all(|t| t.coefficient.abs() < 1e-12));
        assert_eq!(fit.terms[0].term, "intercept");
        assert_eq!(fit.terms.len(), 4);

        match diversity_effects(&rows, 2, ArmModel::FourArm) {
            Err(StatsError::EmptyArm(_)) => {}
            other => panic!("week 2 has no snapshots: {other:?}"),
        }
        let three = diversity_effects(&rows, 3, ArmModel::ThreeArm).unwrap();
        assert_eq!(three.n_units, 30);
        assert!(diversity_effects(&rows, 4, ArmModel::FourArm).is_err());
    }
}
