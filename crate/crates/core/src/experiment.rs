//! Experiment lifecycle: arm assignment, surveys, the guess game, followee
//! snapshots and recommendation acceptance.
//!
//! Every state change is an [`EventRecord`] appended to a totally ordered
//! log. [`ExperimentStore::replay`] rebuilds the state from the log alone, so
//! the log (plus optional state snapshots) is the persistence format.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ideology::UrlShare;
use crate::network::{hop_distance, AccountId, Hops, MutualGraph};
use crate::recommender::Recommendation;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("account `{0}` is not part of the study population")]
    UnknownUser(AccountId),
    #[error("account `{0}` is a control unit and cannot start a session")]
    ControlUser(AccountId),
    #[error("account `{0}` already participated and cannot be a control unit")]
    AlreadyParticipant(AccountId),
    #[error("unknown session {0}")]
    UnknownSession(SessionId),
    #[error("survey answer {0} is outside 1..=5")]
    InvalidAnswer(u8),
    #[error("out of order: {0}")]
    OutOfOrder(&'static str),
    #[error("{0} already recorded")]
    Duplicate(&'static str),
    #[error("node `{0}` is not in the sample graph")]
    UnknownNode(AccountId),
    #[error("operation requires arm {expected}, session is {actual}")]
    WrongArm { expected: TreatmentArm, actual: TreatmentArm },
    #[error("account `{0}` was not recommended in this session")]
    NotRecommended(AccountId),
    #[error("event log line {line}: {reason}")]
    CorruptLog { line: usize, reason: String },
    #[error("event log sequence gap: expected {expected}, found {found}")]
    SequenceGap { expected: u64, found: u64 },
    #[error("unrecognized value `{0}`")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreatmentArm {
    Viz,
    VizIdeo,
    IdeoRec,
    Control,
}

impl TreatmentArm {
    pub const TREATED: [TreatmentArm; 3] = [TreatmentArm::Viz, TreatmentArm::VizIdeo, TreatmentArm::IdeoRec];
    pub const ALL: [TreatmentArm; 4] =
        [TreatmentArm::Control, TreatmentArm::Viz, TreatmentArm::VizIdeo, TreatmentArm::IdeoRec];

    pub fn as_str(self) -> &'static str {
        match self {
            TreatmentArm::Viz => "viz",
            TreatmentArm::VizIdeo => "viz_ideo",
            TreatmentArm::IdeoRec => "ideo_rec",
            TreatmentArm::Control => "control",
        }
    }

    /// Whether the network is coloured by ideology for this arm.
    pub fn shows_ideology(self) -> bool {
        matches!(self, TreatmentArm::VizIdeo | TreatmentArm::IdeoRec)
    }

    pub fn shows_recommendations(self) -> bool {
        matches!(self, TreatmentArm::IdeoRec)
    }
}

impl fmt::Display for TreatmentArm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TreatmentArm {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace(['-', '+'], "_").as_str() {
            "viz" => Ok(TreatmentArm::Viz),
            "viz_ideo" | "vizideo" => Ok(TreatmentArm::VizIdeo),
            "ideo_rec" | "ideorec" => Ok(TreatmentArm::IdeoRec),
            "control" => Ok(TreatmentArm::Control),
            _ => Err(ExperimentError::Parse(s.to_string())),
        }
    }
}

/// Uniform draw over the three treated arms for the `index`-th new
/// participant. Each index has its own ChaCha stream, so the draw depends
/// only on `(seed, index)`.
pub fn assign_arm(seed: u64, index: u64) -> TreatmentArm {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    TreatmentArm::TREATED[rng.gen_range(0..3)]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SessionId(pub u64);

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurveyPhase {
    Pre,
    Post,
}

/// Answers to the four Likert questions, each in `1..=5`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSurvey")]
pub struct SurveyResponse {
    phase: SurveyPhase,
    answers: [u8; 4],
}

#[derive(Deserialize)]
struct RawSurvey {
    phase: SurveyPhase,
    answers: [u8; 4],
}

impl TryFrom<RawSurvey> for SurveyResponse {
    type Error = ExperimentError;

    fn try_from(raw: RawSurvey) -> Result<Self, Self::Error> {
        SurveyResponse::new(raw.phase, raw.answers)
    }
}

impl SurveyResponse {
    pub fn new(phase: SurveyPhase, answers: [u8; 4]) -> Result<Self, ExperimentError> {
        if let Some(&bad) = answers.iter().find(|a| !(1..=5).contains(*a)) {
            return Err(ExperimentError::InvalidAnswer(bad));
        }
        Ok(Self { phase, answers })
    }

    pub fn phase(&self) -> SurveyPhase {
        self.phase
    }

    pub fn answers(&self) -> [u8; 4] {
        self.answers
    }
}

/// Post minus pre for each question; each entry lies in `-4..=4`.
pub fn survey_delta(pre: &SurveyResponse, post: &SurveyResponse) -> [i8; 4] {
    let mut out = [0i8; 4];
    for (q, slot) in out.iter_mut().enumerate() {
        *slot = post.answers[q] as i8 - pre.answers[q] as i8;
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoliticalIdeology {
    Liberal,
    Conservative,
    Moderate,
    Declined,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gender {
    Female,
    Male,
    Other,
    Declined,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgeBand {
    #[serde(rename = "18-24")]
    From18To24,
    #[serde(rename = "25-34")]
    From25To34,
    #[serde(rename = "35-44")]
    From35To44,
    #[serde(rename = "45-54")]
    From45To54,
    #[serde(rename = "55-64")]
    From55To64,
    #[serde(rename = "65+")]
    Over65,
    #[serde(rename = "declined")]
    Declined,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemographicsResponse {
    pub political_ideology: PoliticalIdeology,
    pub gender: Gender,
    pub age_band: AgeBand,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuessResult {
    pub guessed: AccountId,
    pub true_node: AccountId,
    pub hops: Hops,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: SessionId,
    pub user: AccountId,
    pub arm: TreatmentArm,
    pub created_at: DateTime<Utc>,
    /// Only a user's first session enters the analysis tables.
    pub first_session: bool,
    pub pre_survey: Option<SurveyResponse>,
    pub post_survey: Option<SurveyResponse>,
    pub demographics: Option<DemographicsResponse>,
    pub guess: Option<GuessResult>,
    pub recommendations_issued: bool,
    pub recommendations_shown: Vec<Recommendation>,
    pub selected_recommendations: Vec<AccountId>,
    pub completed: bool,
    pub completed_at: Option<DateTime<Utc>>,
}

impl Session {
    pub fn survey_delta(&self) -> Option<[i8; 4]> {
        Some(survey_delta(self.pre_survey.as_ref()?, self.post_survey.as_ref()?))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotOffset {
    Week0,
    Day1,
    Week1,
    Week2,
    Week3,
}

impl SnapshotOffset {
    pub fn week(w: u8) -> Option<Self> {
        match w {
            0 => Some(SnapshotOffset::Week0),
            1 => Some(SnapshotOffset::Week1),
            2 => Some(SnapshotOffset::Week2),
            3 => Some(SnapshotOffset::Week3),
            _ => None,
        }
    }
}

impl FromStr for SnapshotOffset {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "week0" => Ok(SnapshotOffset::Week0),
            "day1" => Ok(SnapshotOffset::Day1),
            "week1" => Ok(SnapshotOffset::Week1),
            "week2" => Ok(SnapshotOffset::Week2),
            "week3" => Ok(SnapshotOffset::Week3),
            _ => Err(ExperimentError::Parse(s.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FolloweeSnapshot {
    pub user: AccountId,
    pub offset: SnapshotOffset,
    pub followees: BTreeSet<AccountId>,
    pub captured_at: DateTime<Utc>,
}

/// Whether the day-1 followee list contains any account recommended in the
/// session.
pub fn detect_acceptance(session: &Session, day1: &FolloweeSnapshot) -> Result<bool, ExperimentError> {
    if session.arm != TreatmentArm::IdeoRec {
        return Err(ExperimentError::WrongArm { expected: TreatmentArm::IdeoRec, actual: session.arm });
    }
    Ok(session.recommendations_shown.iter().any(|r| day1.followees.contains(&r.account)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum Event {
    SessionCreated { user: AccountId, arm: TreatmentArm, new_assignment: bool },
    SurveyRecorded { response: SurveyResponse },
    GuessSubmitted { result: GuessResult },
    RecommendationsIssued { recommendations: Vec<Recommendation> },
    SelectionUpdated { selected: Vec<AccountId> },
    DemographicsRecorded { response: DemographicsResponse },
    ControlRegistered { user: AccountId },
    SnapshotRecorded { snapshot: FolloweeSnapshot },
    SharesImported { shares: Vec<UrlShare> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    pub session_id: Option<SessionId>,
    pub at: DateTime<Utc>,
    #[serde(flatten)]
    pub event: Event,
}

/// Everything derived from the event log.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StoreState {
    pub rng_seed: u64,
    /// Sequence number the next event will get.
    pub next_seq: u64,
    pub sessions: BTreeMap<SessionId, Session>,
    pub assignments: BTreeMap<AccountId, TreatmentArm>,
    pub sessions_by_user: BTreeMap<AccountId, Vec<SessionId>>,
    pub controls: BTreeSet<AccountId>,
    pub snapshots: BTreeMap<AccountId, BTreeMap<SnapshotOffset, FolloweeSnapshot>>,
    pub shares: Vec<UrlShare>,
}

impl StoreState {
    fn apply(&mut self, record: &EventRecord) -> Result<(), ExperimentError> {
        if record.seq != self.next_seq {
            return Err(ExperimentError::SequenceGap { expected: self.next_seq, found: record.seq });
        }
        self.next_seq += 1;
        let session_id = record.session_id;
        match &record.event {
            Event::SessionCreated { user, arm, .. } => {
                let sid = session_id.ok_or(ExperimentError::OutOfOrder("event requires a session id"))?;
                self.assignments.entry(user.clone()).or_insert(*arm);
                let history = self.sessions_by_user.entry(user.clone()).or_default();
                let first_session = history.is_empty();
                history.push(sid);
                self.sessions.insert(
                    sid,
                    Session {
                        id: sid,
                        user: user.clone(),
                        arm: *arm,
                        created_at: record.at,
                        first_session,
                        pre_survey: None,
                        post_survey: None,
                        demographics: None,
                        guess: None,
                        recommendations_issued: false,
                        recommendations_shown: Vec::new(),
                        selected_recommendations: Vec::new(),
                        completed: false,
                        completed_at: None,
                    },
                );
            }
            Event::SurveyRecorded { response } => {
                let s = session_mut(&mut self.sessions, session_id)?;
                match response.phase() {
                    SurveyPhase::Pre => s.pre_survey = Some(*response),
                    SurveyPhase::Post => {
                        s.post_survey = Some(*response);
                        s.completed = true;
                        s.completed_at = Some(record.at);
                    }
                }
            }
            Event::GuessSubmitted { result } => session_mut(&mut self.sessions, session_id)?.guess = Some(result.clone()),
            Event::RecommendationsIssued { recommendations } => {
                let s = session_mut(&mut self.sessions, session_id)?;
                s.recommendations_issued = true;
                s.recommendations_shown = recommendations.clone();
            }
            Event::SelectionUpdated { selected } => session_mut(&mut self.sessions, session_id)?.selected_recommendations = selected.clone(),
            Event::DemographicsRecorded { response } => session_mut(&mut self.sessions, session_id)?.demographics = Some(*response),
            Event::ControlRegistered { user } => {
                self.controls.insert(user.clone());
            }
            Event::SnapshotRecorded { snapshot } => {
                self.snapshots
                    .entry(snapshot.user.clone())
                    .or_default()
                    .insert(snapshot.offset, snapshot.clone());
            }
            Event::SharesImported { shares } => self.shares.extend(shares.iter().cloned()),
        }
        Ok(())
    }
}

fn session_mut(
    sessions: &mut BTreeMap<SessionId, Session>,
    id: Option<SessionId>,
) -> Result<&mut Session, ExperimentError> {
    let sid = id.ok_or(ExperimentError::OutOfOrder("event requires a session id"))?;
    sessions.get_mut(&sid).ok_or(ExperimentError::UnknownSession(sid))
}

/// Event-sourced experiment state with an optional on-disk journal.
#[derive(Debug, Default)]
pub struct ExperimentStore {
    state: StoreState,
    log: Vec<EventRecord>,
    journal: Option<BufWriter<File>>,
}

impl ExperimentStore {
    pub fn new(rng_seed: u64) -> Self {
        Self { state: StoreState { rng_seed, ..Default::default() }, log: Vec::new(), journal: None }
    }

    /// Rebuilds a store from a full log.
    pub fn replay<'a, I>(rng_seed: u64, events: I) -> Result<Self, ExperimentError>
    where
        I: IntoIterator<Item = &'a EventRecord>,
    {
        let mut store = Self::new(rng_seed);
        for record in events {
            store.state.apply(record)?;
            store.log.push(record.clone());
        }
        Ok(store)
    }

    /// Opens (or creates) a newline-delimited journal. When `snapshot` is a
    /// state file written by [`ExperimentStore::write_snapshot`], replay
    /// starts from it and skips already-covered events.
    pub fn open(rng_seed: u64, journal: &Path, snapshot: Option<&Path>) -> Result<Self, ExperimentError> {
        let mut store = Self::new(rng_seed);
        if let Some(path) = snapshot.filter(|p| p.exists()) {
            let state: StoreState = serde_json::from_reader(BufReader::new(File::open(path)?))?;
            store.state = state;
            store.state.rng_seed = rng_seed;
        }
        if journal.exists() {
            for (n, line) in BufReader::new(File::open(journal)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: EventRecord = serde_json::from_str(&line)
                    .map_err(|e| ExperimentError::CorruptLog { line: n + 1, reason: e.to_string() })?;
                if record.seq < store.state.next_seq {
                    store.log.push(record);
                    continue;
                }
                store.state.apply(&record)?;
                store.log.push(record);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(journal)?;
        store.journal = Some(BufWriter::new(file));
        Ok(store)
    }

    pub fn write_snapshot(&self, path: &Path) -> Result<(), ExperimentError> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.state_json())?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn state(&self) -> &StoreState {
        &self.state
    }

    /// Canonical serialization of the derived state.
    pub fn state_json(&self) -> String {
        serde_json::to_string(&self.state).expect("state is always serializable")
    }

    pub fn events(&self) -> &[EventRecord] {
        &self.log
    }

    pub fn session(&self, id: SessionId) -> Result<&Session, ExperimentError> {
        self.state.sessions.get(&id).ok_or(ExperimentError::UnknownSession(id))
    }

    pub fn sessions(&self) -> impl Iterator<Item = &Session> {
        self.state.sessions.values()
    }

    pub fn arm_of(&self, user: &AccountId) -> Option<TreatmentArm> {
        self.state.assignments.get(user).copied()
    }

    pub fn snapshot(&self, user: &AccountId, offset: SnapshotOffset) -> Option<&FolloweeSnapshot> {
        self.state.snapshots.get(user)?.get(&offset)
    }

    fn append(
        &mut self,
        session_id: Option<SessionId>,
        at: DateTime<Utc>,
        event: Event,
    ) -> Result<(), ExperimentError> {
        let record = EventRecord { seq: self.state.next_seq, session_id, at, event };
        if let Some(journal) = self.journal.as_mut() {
            serde_json::to_writer(&mut *journal, &record)?;
            journal.write_all(b"\n")?;
            journal.flush()?;
        }
        self.state.apply(&record)?;
        self.log.push(record);
        Ok(())
    }

    /// Starts a session. A returning user keeps the arm of their first
    /// session; a new user gets the next seeded draw.
    pub fn create_session(
        &mut self,
        user: &AccountId,
        population: &MutualGraph,
        at: DateTime<Utc>,
    ) -> Result<Session, ExperimentError> {
        if !population.contains(user) {
            return Err(ExperimentError::UnknownUser(user.clone()));
        }
        if self.state.controls.contains(user) {
            return Err(ExperimentError::ControlUser(user.clone()));
        }
        let (arm, new_assignment) = match self.state.assignments.get(user) {
            Some(arm) => (*arm, false),
            None => (assign_arm(self.state.rng_seed, self.state.assignments.len() as u64), true),
        };
        let sid = SessionId(self.state.sessions.len() as u64 + 1);
        self.append(Some(sid), at, Event::SessionCreated { user: user.clone(), arm, new_assignment })?;
        Ok(self.state.sessions[&sid].clone())
    }

    pub fn record_survey(
        &mut self,
        id: SessionId,
        response: SurveyResponse,
        at: DateTime<Utc>,
    ) -> Result<&Session, ExperimentError> {
        let session = self.session(id)?;
        match response.phase() {
            SurveyPhase::Pre if session.pre_survey.is_some() => return Err(ExperimentError::Duplicate("pre-survey")),
            SurveyPhase::Post if session.post_survey.is_some() => {
                return Err(ExperimentError::Duplicate("post-survey"))
            }
            SurveyPhase::Post if session.pre_survey.is_none() => {
                return Err(ExperimentError::OutOfOrder("post-survey requires the pre-survey"))
            }
            SurveyPhase::Post if session.guess.is_none() => {
                return Err(ExperimentError::OutOfOrder("post-survey requires a submitted guess"))
            }
            _ => {}
        }
        self.append(Some(id), at, Event::SurveyRecorded { response })?;
        self.session(id)
    }

    pub fn submit_guess(
        &mut self,
        id: SessionId,
        guessed: &AccountId,
        sample: &MutualGraph,
        at: DateTime<Utc>,
    ) -> Result<GuessResult, ExperimentError> {
        let session = self.session(id)?;
        if session.pre_survey.is_none() {
            return Err(ExperimentError::OutOfOrder("guess requires the pre-survey"));
        }
        if session.guess.is_some() {
            return Err(ExperimentError::Duplicate("guess"));
        }
        if !sample.contains(guessed) {
            return Err(ExperimentError::UnknownNode(guessed.clone()));
        }
        let true_node = session.user.clone();
        let hops = hop_distance(sample, guessed, &true_node)
            .map_err(|_| ExperimentError::UnknownNode(true_node.clone()))?;
        let result = GuessResult { guessed: guessed.clone(), true_node, hops };
        self.append(Some(id), at, Event::GuessSubmitted { result: result.clone() })?;
        Ok(result)
    }

    /// Records the list shown to an IdeoRec participant. The list is issued
    /// once; later calls return the stored list.
    pub fn issue_recommendations(
        &mut self,
        id: SessionId,
        recommendations: Vec<Recommendation>,
        at: DateTime<Utc>,
    ) -> Result<&[Recommendation], ExperimentError> {
        let session = self.session(id)?;
        if session.arm != TreatmentArm::IdeoRec {
            return Err(ExperimentError::WrongArm { expected: TreatmentArm::IdeoRec, actual: session.arm });
        }
        if session.guess.is_none() {
            return Err(ExperimentError::OutOfOrder("recommendations follow the guess"));
        }
        if !session.recommendations_issued {
            self.append(Some(id), at, Event::RecommendationsIssued { recommendations })?;
        }
        Ok(&self.session(id)?.recommendations_shown)
    }

    pub fn record_selection(
        &mut self,
        id: SessionId,
        selected: Vec<AccountId>,
        at: DateTime<Utc>,
    ) -> Result<&Session, ExperimentError> {
        let session = self.session(id)?;
        if session.post_survey.is_some() {
            return Err(ExperimentError::OutOfOrder("selections close with the post-survey"));
        }
        if let Some(bad) = selected
            .iter()
            .find(|a| !session.recommendations_shown.iter().any(|r| &r.account == *a))
        {
            return Err(ExperimentError::NotRecommended(bad.clone()));
        }
        self.append(Some(id), at, Event::SelectionUpdated { selected })?;
        self.session(id)
    }

    pub fn record_demographics(
        &mut self,
        id: SessionId,
        response: DemographicsResponse,
        at: DateTime<Utc>,
    ) -> Result<&Session, ExperimentError> {
        let session = self.session(id)?;
        if session.demographics.is_some() {
            return Err(ExperimentError::Duplicate("demographics"));
        }
        if session.pre_survey.is_none() {
            return Err(ExperimentError::OutOfOrder("demographics follow the pre-survey"));
        }
        self.append(Some(id), at, Event::DemographicsRecorded { response })?;
        self.session(id)
    }

    /// Adds an observational control unit. Controls never get sessions.
    pub fn register_control(&mut self, user: &AccountId, at: DateTime<Utc>) -> Result<(), ExperimentError> {
        if self.state.assignments.contains_key(user) {
            return Err(ExperimentError::AlreadyParticipant(user.clone()));
        }
        if self.state.controls.contains(user) {
            return Err(ExperimentError::Duplicate("control registration"));
        }
        self.append(None, at, Event::ControlRegistered { user: user.clone() })
    }

    pub fn snapshot_followees(
        &mut self,
        user: &AccountId,
        offset: SnapshotOffset,
        followees: BTreeSet<AccountId>,
        at: DateTime<Utc>,
    ) -> Result<FolloweeSnapshot, ExperimentError> {
        if !self.state.assignments.contains_key(user) && !self.state.controls.contains(user) {
            return Err(ExperimentError::UnknownUser(user.clone()));
        }
        if self.snapshot(user, offset).is_some() {
            return Err(ExperimentError::Duplicate("snapshot offset"));
        }
        let snapshot = FolloweeSnapshot { user: user.clone(), offset, followees, captured_at: at };
        self.append(None, at, Event::SnapshotRecorded { snapshot: snapshot.clone() })?;
        Ok(snapshot)
    }

    pub fn import_shares(&mut self, shares: Vec<UrlShare>, at: DateTime<Utc>) -> Result<(), ExperimentError> {
        if shares.is_empty() {
            return Ok(());
        }
        self.append(None, at, Event::SharesImported { shares })
    }

    /// Acceptance for an IdeoRec session, `None` until its day-1 snapshot
    /// exists.
    pub fn acceptance(&self, id: SessionId) -> Result<Option<bool>, ExperimentError> {
        let session = self.session(id)?;
        match self.snapshot(&session.user, SnapshotOffset::Day1) {
            Some(day1) => detect_acceptance(session, day1).map(Some),
            None if session.arm != TreatmentArm::IdeoRec => {
                Err(ExperimentError::WrongArm { expected: TreatmentArm::IdeoRec, actual: session.arm })
            }
            None => Ok(None),
        }
    }

    /// First sessions in id order.
    pub fn first_sessions(&self) -> impl Iterator<Item = &Session> {
        self.state.sessions.values().filter(|s| s.first_session)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(s: &str) -> AccountId {
        AccountId::new(s).unwrap()
    }

    fn t(minute: u32) -> DateTime<Utc> {
        DateTime::parse_from_rfc3339(&format!("2017-07-01T12:{minute:02}:00Z")).unwrap().with_timezone(&Utc)
    }

    fn sample() -> MutualGraph {
        MutualGraph::from_edges([(id("a"), id("b")), (id("b"), id("c")), (id("x"), id("y"))])
    }

    fn survey(phase: SurveyPhase, answers: [u8; 4]) -> SurveyResponse {
        SurveyResponse::new(phase, answers).unwrap()
    }

    #[test]
    fn assignment_is_roughly_uniform() {
        let mut counts = [0usize; 3];
        for i in 0..9000 {
            let arm = assign_arm(42, i);
            counts[TreatmentArm::TREATED.iter().position(|a| *a == arm).unwrap()] += 1;
        }
        for c in counts {
            assert!((c as f64 / 9000.0 - 1.0 / 3.0).abs() <= 0.02, "{counts:?}");
        }
    }

    #[test]
    fn returning_user_keeps_arm() {
        let mut store = ExperimentStore::new(7);
        let g = sample();
        let first = store.create_session(&id("a"), &g, t(0)).unwrap();
        let second = store.create_session(&id("a"), &g, t(1)).unwrap();
        assert_eq!(first.arm, second.arm);
        assert!(first.first_session);
        assert!(!second.first_session);
        assert!(matches!(store.create_session(&id("zz"), &g, t(2)), Err(ExperimentError::UnknownUser(_))));
    }

    #[test]
    fn survey_validation_and_ordering() {
        assert!(matches!(
            SurveyResponse::new(SurveyPhase::Pre, [1, 2, 6, 3]),
            Err(ExperimentError::InvalidAnswer(6))
        ));
        assert!(serde_json::from_str::<SurveyResponse>(r#"{"phase":"pre","answers":[0,1,1,1]}"#).is_err());

        let mut store = ExperimentStore::new(1);
        let g = sample();
        let s = store.create_session(&id("a"), &g, t(0)).unwrap();
        assert!(matches!(
            store.record_survey(s.id, survey(SurveyPhase::Post, [3; 4]), t(1)),
            Err(ExperimentError::OutOfOrder(_))
        ));
        assert!(matches!(store.submit_guess(s.id, &id("b"), &g, t(1)), Err(ExperimentError::OutOfOrder(_))));
        store.record_survey(s.id, survey(SurveyPhase::Pre, [2, 3, 4, 4]), t(1)).unwrap();
        assert!(matches!(
            store.record_survey(s.id, survey(SurveyPhase::Pre, [2, 3, 4, 4]), t(2)),
            Err(ExperimentError::Duplicate(_))
        ));
        let guess = store.submit_guess(s.id, &id("b"), &g, t(2)).unwrap();
        assert_eq!(guess.hops, Hops::Finite(1));
        assert!(matches!(store.submit_guess(s.id, &id("a"), &g, t(3)), Err(ExperimentError::Duplicate(_))));
        let done = store.record_survey(s.id, survey(SurveyPhase::Post, [2, 4, 4, 4]), t(3)).unwrap();
        assert!(done.completed);
        assert_eq!(done.survey_delta(), Some([0, 1, 0, 0]));
    }

    #[test]
    fn deltas_are_zero_for_identical_surveys() {
        let pre = survey(SurveyPhase::Pre, [1, 5, 3, 2]);
        let post = survey(SurveyPhase::Post, [1, 5, 3, 2]);
        assert_eq!(survey_delta(&pre, &post), [0; 4]);
    }

    #[test]
    fn guesses_report_hops() {
        let g = sample();
        let mut store = ExperimentStore::new(3);
        let s = store.create_session(&id("a"), &g, t(0)).unwrap();
        store.record_survey(s.id, survey(SurveyPhase::Pre, [3; 4]), t(1)).unwrap();
        assert!(matches!(store.submit_guess(s.id, &id("nope"), &g, t(2)), Err(ExperimentError::UnknownNode(_))));
        assert_eq!(store.submit_guess(s.id, &id("a"), &g, t(2)).unwrap().hops, Hops::Finite(0));

        let s2 = store.create_session(&id("c"), &g, t(3)).unwrap();
        store.record_survey(s2.id, survey(SurveyPhase::Pre, [3; 4]), t(4)).unwrap();
        assert_eq!(store.submit_guess(s2.id, &id("y"), &g, t(5)).unwrap().hops, Hops::Unreachable);
    }

    #[test]
    fn acceptance_detection() {
        let rec = |a: &str, rank| Recommendation {
            account: id(a),
            rank,
            marginal_gain: 0.1,
            cumulative_score: 0.5,
        };
        let mut session = Session {
            id: SessionId(1),
            user: id("u"),
            arm: TreatmentArm::IdeoRec,
            created_at: t(0),
            first_session: true,
            pre_survey: None,
            post_survey: None,
            demographics: None,
            guess: None,
            recommendations_issued: true,
            recommendations_shown: vec![rec("r1", 1), rec("r2", 2)],
            selected_recommendations: vec![],
            completed: false,
            completed_at: None,
        };
        let day1 = |ids: &[&str]| FolloweeSnapshot {
            user: id("u"),
            offset: SnapshotOffset::Day1,
            followees: ids.iter().map(|s| id(s)).collect(),
            captured_at: t(0),
        };
        assert!(detect_acceptance(&session, &day1(&["x", "r2"])).unwrap());
        assert!(!detect_acceptance(&session, &day1(&["x", "y"])).unwrap());
        session.arm = TreatmentArm::Viz;
        assert!(matches!(detect_acceptance(&session, &day1(&["r2"])), Err(ExperimentError::WrongArm { .. })));
    }

    #[test]
    fn snapshots_unique_per_offset() {
        let g = sample();
        let mut store = ExperimentStore::new(3);
        store.create_session(&id("a"), &g, t(0)).unwrap();
        let f: BTreeSet<AccountId> = [id("b")].into();
        store.snapshot_followees(&id("a"), SnapshotOffset::Week0, f.clone(), t(1)).unwrap();
        assert!(matches!(
            store.snapshot_followees(&id("a"), SnapshotOffset::Week0, f.clone(), t(2)),
            Err(ExperimentError::Duplicate(_))
        ));
        assert!(matches!(
            store.snapshot_followees(&id("stranger"), SnapshotOffset::Week0, f, t(2)),
            Err(ExperimentError::UnknownUser(_))
        ));
    }

    #[test]
    fn controls_never_get_sessions() {
        let g = sample();
        let mut store = ExperimentStore::new(3);
        store.register_control(&id("c"), t(0)).unwrap();
        assert!(matches!(store.create_session(&id("c"), &g, t(1)), Err(ExperimentError::ControlUser(_))));
        store.create_session(&id("a"), &g, t(1)).unwrap();
        assert!(matches!(store.register_control(&id("a"), t(2)), Err(ExperimentError::AlreadyParticipant(_))));
    }

    #[test]
    fn event_record_line_format() {
        let record = EventRecord {
            seq: 0,
            session_id: Some(SessionId(4)),
            at: t(0),
            event: Event::SurveyRecorded { response: survey(SurveyPhase::Pre, [1, 2, 3, 4]) },
        };
        let line = serde_json::to_string(&record).unwrap();
        assert_eq!(
            line,
            r#"{"seq":0,"session_id":4,"at":"2017-07-01T12:00:00Z","type":"survey_recorded","payload":{"response":{"phase":"pre","answers":[1,2,3,4]}}}"#
        );
        let back: EventRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back, record);
    }

    #[test]
    fn arm_names_parse() {
        for arm in TreatmentArm::ALL {
            assert_eq!(arm.as_str().parse::<TreatmentArm>().unwrap(), arm);
        }
        assert_eq!("Viz+Ideo".parse::<TreatmentArm>().unwrap(), TreatmentArm::VizIdeo);
        assert!("other".parse::<TreatmentArm>().is_err());
    }
}
