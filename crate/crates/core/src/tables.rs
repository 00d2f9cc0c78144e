//! Flat per-unit analysis tables exported from the experiment store.

use std::fs::File;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::experiment::{ExperimentStore, Session, SnapshotOffset, TreatmentArm};
use crate::ideology::{
    alignment_delta, connection_diversity, url_alignment_avg, AlignmentTable, LabelMap, SharePhase,
};
use crate::network::AccountId;

pub const SURVEY_FILE: &str = "survey.csv";
pub const DIVERSITY_FILE: &str = "diversity.csv";
pub const ALIGNMENT_FILE: &str = "alignment.csv";
pub const COVARIATE_FILE: &str = "covariates.csv";

#[derive(Debug, Error)]
pub enum TableError {
    #[error("{file}: {source}")]
    Csv { file: String, source: csv::Error },
    #[error("{file}: {source}")]
    Io { file: String, source: std::io::Error },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurveyRow {
    pub user_id: AccountId,
    pub arm: TreatmentArm,
    /// IdeoRec only; empty until a day-1 snapshot exists.
    pub accepted: Option<bool>,
    pub pre_q1: u8,
    pub pre_q2: u8,
    pub pre_q3: u8,
    pub pre_q4: u8,
    pub post_q1: u8,
    pub post_q2: u8,
    pub post_q3: u8,
    pub post_q4: u8,
    pub delta_q1: i8,
    pub delta_q2: i8,
    pub delta_q3: i8,
    pub delta_q4: i8,
}

impl SurveyRow {
    /// Delta for question `q` in `1..=4`.
    pub fn delta(&self, q: usize) -> i8 {
        match q {
            1 => self.delta_q1,
            2 => self.delta_q2,
            3 => self.delta_q3,
            4 => self.delta_q4,
            _ => panic!("question index {q} outside 1..=4"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversityRow {
    pub user_id: AccountId,
    pub arm: TreatmentArm,
    pub completed_surveys: bool,
    pub d_week0: Option<f64>,
    pub d_week1: Option<f64>,
    pub d_week2: Option<f64>,
    pub d_week3: Option<f64>,
}

impl DiversityRow {
    pub fn at_week(&self, week: u8) -> Option<f64> {
        match week {
            0 => self.d_week0,
            1 => self.d_week1,
            2 => self.d_week2,
            3 => self.d_week3,
            _ => None,
        }
    }

    /// `d_week - d_week0`, when both snapshots exist.
    pub fn delta(&self, week: u8) -> Option<f64> {
        Some(self.at_week(week)? - self.d_week0?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRow {
    pub user_id: AccountId,
    pub arm: TreatmentArm,
    pub completed_surveys: bool,
    pub urls_before: usize,
    pub urls_after: usize,
    pub before: Option<f64>,
    pub after: Option<f64>,
    pub delta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovariateRow {
    pub user_id: AccountId,
    pub arm: TreatmentArm,
    pub pre_q1: Option<f64>,
    pub pre_q2: Option<f64>,
    pub pre_q3: Option<f64>,
    pub pre_q4: Option<f64>,
    pub diversity_week0: Option<f64>,
    pub abs_pre_alignment: Option<f64>,
}

impl CovariateRow {
    pub const COLUMNS: [&'static str; 6] =
        ["pre_q1", "pre_q2", "pre_q3", "pre_q4", "diversity_week0", "abs_pre_alignment"];

    pub fn values(&self) -> [Option<f64>; 6] {
        [self.pre_q1, self.pre_q2, self.pre_q3, self.pre_q4, self.diversity_week0, self.abs_pre_alignment]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportOptions {
    /// Keep only survey completers among treated units in the diversity and
    /// alignment tables. Control units are always kept.
    pub require_completed_surveys: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AnalysisTables {
    pub survey: Vec<SurveyRow>,
    pub diversity: Vec<DiversityRow>,
    pub alignment: Vec<AlignmentRow>,
    pub covariates: Vec<CovariateRow>,
}

struct Unit<'a> {
    user: &'a AccountId,
    arm: TreatmentArm,
    session: Option<&'a Session>,
}

impl Unit<'_> {
    fn completed_surveys(&self) -> bool {
        self.session.is_some_and(|s| s.pre_survey.is_some() && s.post_survey.is_some())
    }
}

/// One row per analysis unit: each participant's first session, plus the
/// registered control accounts.
pub fn export_analysis_tables(
    store: &ExperimentStore,
    labels: &LabelMap,
    alignment: &AlignmentTable,
    options: ExportOptions,
) -> AnalysisTables {
    let mut units: Vec<Unit> = store
        .first_sessions()
        .map(|s| Unit { user: &s.user, arm: s.arm, session: Some(s) })
        .collect();
    units.extend(
        store.state().controls.iter().map(|user| Unit { user, arm: TreatmentArm::Control, session: None }),
    );
    units.sort_by(|a, b| a.user.cmp(b.user));

    let mut tables = AnalysisTables::default();
    for unit in &units {
        let diversity_at = |offset| {
            store.snapshot(unit.user, offset).map(|snap| connection_diversity(&snap.followees, labels).score)
        };
        let shares = |phase| {
            store.state().shares.iter().filter(move |s| &s.user_id == unit.user && s.phase == phase).map(|s| s.url.as_str())
        };
        let before = url_alignment_avg(unit.user, SharePhase::Before, shares(SharePhase::Before), alignment);
        let after = url_alignment_avg(unit.user, SharePhase::After, shares(SharePhase::After), alignment);
        let completed = unit.completed_surveys();

        if let Some(session) = unit.session {
            if let (Some(pre), Some(post)) = (session.pre_survey, session.post_survey) {
                let (p, q) = (pre.answers(), post.answers());
                let d = session.survey_delta().expect("both surveys present");
                tables.survey.push(SurveyRow {
                    user_id: unit.user.clone(),
                    arm: unit.arm,
                    accepted: store.acceptance(session.id).ok().flatten(),
                    pre_q1: p[0],
                    pre_q2: p[1],
                    pre_q3: p[2],
                    pre_q4: p[3],
                    post_q1: q[0],
                    post_q2: q[1],
                    post_q3: q[2],
                    post_q4: q[3],
                    delta_q1: d[0],
                    delta_q2: d[1],
                    delta_q3: d[2],
                    delta_q4: d[3],
                });
            }
            let pre = session.pre_survey.map(|s| s.answers().map(f64::from));
            tables.covariates.push(CovariateRow {
                user_id: unit.user.clone(),
                arm: unit.arm,
                pre_q1: pre.map(|a| a[0]),
                pre_q2: pre.map(|a| a[1]),
                pre_q3: pre.map(|a| a[2]),
                pre_q4: pre.map(|a| a[3]),
                diversity_week0: diversity_at(SnapshotOffset::Week0),
                abs_pre_alignment: before.mean.map(f64::abs),
            });
        } else {
            tables.covariates.push(CovariateRow {
                user_id: unit.user.clone(),
                arm: unit.arm,
                pre_q1: None,
                pre_q2: None,
                pre_q3: None,
                pre_q4: None,
                diversity_week0: diversity_at(SnapshotOffset::Week0),
                abs_pre_alignment: before.mean.map(f64::abs),
            });
        }

        let keep_outcomes = unit.arm == TreatmentArm::Control || completed || !options.require_completed_surveys;
        if keep_outcomes {
            tables.diversity.push(DiversityRow {
                user_id: unit.user.clone(),
                arm: unit.arm,
                completed_surveys: completed,
                d_week0: diversity_at(SnapshotOffset::Week0),
                d_week1: diversity_at(SnapshotOffset::Week1),
                d_week2: diversity_at(SnapshotOffset::Week2),
                d_week3: diversity_at(SnapshotOffset::Week3),
            });
            tables.alignment.push(AlignmentRow {
                user_id: unit.user.clone(),
                arm: unit.arm,
                completed_surveys: completed,
                urls_before: before.urls_counted,
                urls_after: after.urls_counted,
                before: before.mean,
                after: after.mean,
                delta: alignment_delta(&before, &after),
            });
        }
    }
    tables
}

fn write_rows<T: Serialize>(dir: &Path, file: &str, rows: &[T]) -> Result<(), TableError> {
    let path = dir.join(file);
    let mut writer = csv::Writer::from_path(&path).map_err(|source| TableError::Csv { file: file.into(), source })?;
    for row in rows {
        writer.serialize(row).map_err(|source| TableError::Csv { file: file.into(), source })?;
    }
    writer.flush().map_err(|source| TableError::Io { file: file.into(), source })
}

fn read_rows<T: DeserializeOwned>(dir: &Path, file: &str) -> Result<Vec<T>, TableError> {
    let handle = File::open(dir.join(file)).map_err(|source| TableError::Io { file: file.into(), source })?;
    csv::Reader::from_reader(handle)
        .deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|source| TableError::Csv { file: file.into(), source })
}

impl AnalysisTables {
    pub fn write_dir(&self, dir: &Path) -> Result<(), TableError> {
        std::fs::create_dir_all(dir).map_err(|source| TableError::Io { file: dir.display().to_string(), source })?;
        write_rows(dir, SURVEY_FILE, &self.survey)?;
        write_rows(dir, DIVERSITY_FILE, &self.diversity)?;
        write_rows(dir, ALIGNMENT_FILE, &self.alignment)?;
        write_rows(dir, COVARIATE_FILE, &self.covariates)
    }

    pub fn read_dir(dir: &Path) -> Result<Self, TableError> {
        Ok(Self {
            survey: read_rows(dir, SURVEY_FILE)?,
            diversity: read_rows(dir, DIVERSITY_FILE)?,
            alignment: read_rows(dir, ALIGNMENT_FILE)?,
            covariates: read_rows(dir, COVARIATE_FILE)?,
        })
    }
}
