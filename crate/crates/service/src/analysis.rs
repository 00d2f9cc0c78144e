//! Report assembly shared by the CLI and the admin endpoint.

use mirror_core::stats::report::{permutation_summary, regression_table};
use mirror_core::stats::{
    alignment_effects, balance_inputs, diversity_effects, randomization_check, survey_effects, ArmModel, MnlConfig,
    PermutationTestResult, RegressionResult, StatsError,
};
use mirror_core::tables::AnalysisTables;
use mirror_core::TreatmentArm;
use serde::Deserialize;

/// Share of units that must observe a covariate for it to enter the
/// balance model.
pub const BALANCE_MIN_COVERAGE: f64 = 0.8;

#[derive(Clone, Debug, Deserialize)]
#[serde(default)]
pub struct ReportOptions {
    pub permutations: usize,
    pub seed: u64,
    pub completed_only: bool,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self { permutations: 1000, seed: 0, completed_only: false }
    }
}

pub fn survey_section(
    tables: &AnalysisTables,
    baseline: TreatmentArm,
    filter_acceptors: bool,
) -> Result<Vec<(String, RegressionResult)>, StatsError> {
    Ok(survey_effects(&tables.survey, baseline, filter_acceptors)?
        .into_iter()
        .map(|(q, fit)| (format!("Q{q}"), fit))
        .collect())
}

pub fn diversity_section(
    tables: &AnalysisTables,
    weeks: &[u8],
    model: ArmModel,
) -> Result<Vec<(String, RegressionResult)>, StatsError> {
    weeks
        .iter()
        .map(|&w| diversity_effects(&tables.diversity, w, model).map(|fit| (format!("week {w}"), fit)))
        .collect()
}

pub fn balance_check(
    tables: &AnalysisTables,
    arms: &[TreatmentArm],
    permutations: usize,
    seed: u64,
) -> Result<(Vec<&'static str>, PermutationTestResult), StatsError> {
    let inputs = balance_inputs(&tables.covariates, arms, BALANCE_MIN_COVERAGE);
    if inputs.columns.is_empty() {
        return Err(StatsError::Shape("no covariate is observed often enough to check balance".into()));
    }
    let result = randomization_check(&inputs.covariates, &inputs.labels, permutations, seed, &MnlConfig::default())?;
    Ok((inputs.columns, result))
}

fn table(title: &str, columns: &[(String, RegressionResult)]) -> String {
    let refs: Vec<(String, &RegressionResult)> = columns.iter().map(|(n, f)| (n.clone(), f)).collect();
    regression_table(title, &refs)
}

fn section<T>(out: &mut String, title: &str, result: Result<T, StatsError>, render: impl FnOnce(T) -> String) {
    match result {
        Ok(value) => out.push_str(&render(value)),
        Err(e) => out.push_str(&format!("{title}: not estimable ({e})\n")),
    }
    out.push('\n');
}

/// Every model the study reports, as plain text. Models that cannot be fit
/// on the current data say so instead of failing the whole report.
pub fn full_report(tables: &AnalysisTables, options: &ReportOptions) -> String {
    let mut out = format!(
        "Units: {} survey, {} diversity, {} alignment, {} covariate rows\n\n",
        tables.survey.len(),
        tables.diversity.len(),
        tables.alignment.len(),
        tables.covariates.len()
    );
    for baseline in [TreatmentArm::Viz, TreatmentArm::VizIdeo] {
        let title = format!("Survey deltas vs {baseline}");
        section(&mut out, &title, survey_section(tables, baseline, false), |cols| table(&title, &cols));
    }
    let title = "Survey deltas vs viz, recommendation acceptors removed";
    section(&mut out, title, survey_section(tables, TreatmentArm::Viz, true), |cols| table(title, &cols));

    for (model, name) in [(ArmModel::FourArm, "four-arm"), (ArmModel::ThreeArm, "three-arm")] {
        let title = format!("Connection diversity change, {name}");
        section(&mut out, &title, diversity_section(tables, &[1, 2, 3], model), |cols| table(&title, &cols));
    }

    let title = "Shared-URL alignment change";
    let alignment = [ArmModel::FourArm, ArmModel::ThreeArm]
        .into_iter()
        .map(|m| alignment_effects(&tables.alignment, m).map(|fit| (format!("{m:?}"), fit)))
        .collect::<Result<Vec<_>, _>>();
    section(&mut out, title, alignment, |cols| table(title, &cols));

    section(
        &mut out,
        "Randomization check",
        balance_check(tables, &TreatmentArm::ALL, options.permutations, options.seed),
        |(columns, result)| format!("Covariates: {}\n{}", columns.join(", "), permutation_summary(&result)),
    );
    out
}
