//! HTTP+JSON API. Treatment gating happens here: what a session may see is
//! decided from its arm on every request.

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use mirror_core::experiment::{DemographicsResponse, ExperimentError, SurveyPhase, SurveyResponse};
use mirror_core::ideology::displayed_diversity;
use mirror_core::network::{AccountId, Hops};
use mirror_core::recommender::{recommend, what_if, RecommendError};
use mirror_core::tables::{export_analysis_tables, AnalysisTables, ExportOptions};
use mirror_core::{ExperimentStore, IdeologyLabel, SessionId, TreatmentArm};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tracing::{error, warn};

use crate::analysis::{full_report, ReportOptions};
use crate::audit::RecommendationAudit;
use crate::auth::{AuthError, IdLogin, LoginProvider, LoginRequest, TokenSigner};
use crate::ingest::{relative_sizes, DatasetBundle};

pub type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

#[derive(Clone, Debug)]
pub struct ApiSettings {
    pub token_secret: String,
    pub admin_token: String,
    pub max_recommendations: usize,
    pub audit_log: Option<PathBuf>,
}

pub struct AppState {
    bundle: Arc<DatasetBundle>,
    store: Mutex<ExperimentStore>,
    signer: TokenSigner,
    login: Box<dyn LoginProvider>,
    admin_token: String,
    max_recommendations: usize,
    audit: Option<Mutex<RecommendationAudit>>,
    clock: Clock,
}

impl AppState {
    pub fn new(bundle: Arc<DatasetBundle>, store: ExperimentStore, settings: ApiSettings) -> std::io::Result<Self> {
        let audit = match &settings.audit_log {
            Some(path) => Some(Mutex::new(RecommendationAudit::open(path)?)),
            None => None,
        };
        Ok(Self {
            login: Box::new(IdLogin::new(bundle.sample.clone())),
            bundle,
            store: Mutex::new(store),
            signer: TokenSigner::new(settings.token_secret.as_bytes()),
            admin_token: settings.admin_token,
            max_recommendations: settings.max_recommendations,
            audit,
            clock: Arc::new(Utc::now),
        })
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_login(mut self, login: Box<dyn LoginProvider>) -> Self {
        self.login = login;
        self
    }

    pub fn store(&self) -> MutexGuard<'_, ExperimentStore> {
        // a panic while holding the lock leaves state that was already
        // journaled, so continuing is safe
        self.store.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
    }

    pub fn bundle(&self) -> &DatasetBundle {
        &self.bundle
    }

    pub fn write_snapshot(&self, path: &Path) -> Result<(), ExperimentError> {
        self.store().write_snapshot(path)
    }

    fn now(&self) -> DateTime<Utc> {
        (self.clock)()
    }
}

#[derive(Debug)]
pub enum ApiError {
    Unauthorized(String),
    Forbidden(String),
    NotFound(String),
    Conflict(String),
    Invalid(String),
    Internal(String),
}

impl ApiError {
    fn status(&self) -> StatusCode {
        match self {
            ApiError::Unauthorized(_) => StatusCode::UNAUTHORIZED,
            ApiError::Forbidden(_) => StatusCode::FORBIDDEN,
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Conflict(_) => StatusCode::CONFLICT,
            ApiError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = self.status();
        let message = match self {
            ApiError::Internal(detail) => {
                error!(%detail, "request failed");
                "internal error".to_string()
            }
            ApiError::Unauthorized(m)
            | ApiError::Forbidden(m)
            | ApiError::NotFound(m)
            | ApiError::Conflict(m)
            | ApiError::Invalid(m) => m,
        };
        (status, Json(json!({ "error": message }))).into_response()
    }
}

impl From<ExperimentError> for ApiError {
    fn from(e: ExperimentError) -> Self {
        let message = e.to_string();
        match e {
            ExperimentError::UnknownSession(_) => ApiError::NotFound(message),
            ExperimentError::OutOfOrder(_) | ExperimentError::Duplicate(_) => ApiError::Conflict(message),
            // the arm names are not echoed back to participants
            ExperimentError::WrongArm { .. } => ApiError::Forbidden("feature not enabled for this session".into()),
            ExperimentError::ControlUser(_) | ExperimentError::AlreadyParticipant(_) => ApiError::Forbidden(message),
            ExperimentError::UnknownUser(_)
            | ExperimentError::InvalidAnswer(_)
            | ExperimentError::UnknownNode(_)
            | ExperimentError::NotRecommended(_)
            | ExperimentError::Parse(_) => ApiError::Invalid(message),
            ExperimentError::CorruptLog { .. }
            | ExperimentError::SequenceGap { .. }
            | ExperimentError::Io(_)
            | ExperimentError::Json(_) => ApiError::Internal(message),
        }
    }
}

impl From<AuthError> for ApiError {
    fn from(e: AuthError) -> Self {
        match e {
            AuthError::NotInStudy(_) => ApiError::Forbidden(e.to_string()),
            AuthError::Malformed | AuthError::BadSignature => ApiError::Unauthorized(e.to_string()),
        }
    }
}

impl From<RecommendError> for ApiError {
    fn from(e: RecommendError) -> Self {
        match e {
            RecommendError::NotRecommended(_) | RecommendError::IneligibleCandidate(_) => ApiError::Invalid(e.to_string()),
            _ => ApiError::Internal(e.to_string()),
        }
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;
type Shared = Arc<AppState>;

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers.get(header::AUTHORIZATION)?.to_str().ok()?.strip_prefix("Bearer ")
}

/// The token must be valid and belong to the session named in the path.
fn authorize(state: &AppState, headers: &HeaderMap, path_id: u64) -> Result<SessionId, ApiError> {
    let token = bearer(headers).ok_or_else(|| ApiError::Unauthorized("missing bearer token".into()))?;
    let session = state.signer.verify(token)?;
    if session.0 != path_id {
        return Err(ApiError::Forbidden("token belongs to a different session".into()));
    }
    Ok(session)
}

fn authorize_admin(state: &AppState, headers: &HeaderMap) -> Result<(), ApiError> {
    match bearer(headers) {
        Some(token) if !state.admin_token.is_empty() && token == state.admin_token => Ok(()),
        _ => Err(ApiError::Unauthorized("admin token required".into())),
    }
}

/// Capabilities granted to an arm, listed only when enabled.
pub fn features(arm: TreatmentArm) -> Vec<&'static str> {
    let mut out = Vec::new();
    if arm.shows_ideology() {
        out.push("colors");
    }
    if arm.shows_recommendations() {
        out.push("recommendations");
    }
    out
}

#[derive(Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: u64,
    pub token: String,
    pub arm: TreatmentArm,
    pub returning: bool,
    pub features: Vec<String>,
}

async fn create_session(State(state): State<Shared>, Json(request): Json<LoginRequest>) -> ApiResult<SessionCreated> {
    let user = state.login.authenticate(&request)?;
    let now = state.now();
    let session = state.store().create_session(&user, &state.bundle.sample, now)?;
    Ok(Json(SessionCreated {
        session_id: session.id.0,
        token: state.signer.issue(session.id),
        arm: session.arm,
        returning: !session.first_session,
        features: features(session.arm).into_iter().map(String::from).collect(),
    }))
}

#[derive(Serialize, Deserialize)]
pub struct NetworkNode {
    pub id: AccountId,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// PageRank relative to the largest in the sample.
    pub size: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub color: Option<String>,
}

#[derive(Serialize, Deserialize)]
pub struct NetworkPayload {
    pub session_id: u64,
    pub features: Vec<String>,
    pub nodes: Vec<NetworkNode>,
    /// Pairs of indices into `nodes`.
    pub edges: Vec<[usize; 2]>,
}

fn color_of(label: IdeologyLabel) -> &'static str {
    match label {
        IdeologyLabel::Left => "blue",
        IdeologyLabel::Right => "red",
        IdeologyLabel::Unsure => "gray",
    }
}

async fn network(State(state): State<Shared>, UrlPath(id): UrlPath<u64>, headers: HeaderMap) -> ApiResult<NetworkPayload> {
    let sid = authorize(&state, &headers, id)?;
    let arm = {
        let store = state.store();
        let session = store.session(sid)?;
        if session.pre_survey.is_none() {
            return Err(ExperimentError::OutOfOrder("the network is shown after the pre-survey").into());
        }
        session.arm
    };
    let bundle = &state.bundle;
    let sizes = relative_sizes(&bundle.pagerank);
    let nodes = bundle
        .sample
        .ids()
        .iter()
        .map(|id| {
            let p = bundle.layout.get(id).expect("layout covers the sample");
            let color = arm
                .shows_ideology()
                .then(|| color_of(bundle.labels.get(id).copied().unwrap_or(IdeologyLabel::Unsure)).to_string());
            NetworkNode { id: id.clone(), x: p.x, y: p.y, z: p.z, size: sizes.get(id).copied().unwrap_or(0.0), color }
        })
        .collect();
    let edges = bundle.sample.edge_indices().map(|(a, b)| [a, b]).collect();
    Ok(Json(NetworkPayload {
        session_id: sid.0,
        features: features(arm).into_iter().map(String::from).collect(),
        nodes,
        edges,
    }))
}

#[derive(Serialize, Deserialize)]
pub struct TweetsPayload {
    pub account_id: AccountId,
    pub tweets: Vec<String>,
}

async fn tweets(
    State(state): State<Shared>,
    UrlPath((id, account)): UrlPath<(u64, String)>,
    headers: HeaderMap,
) -> ApiResult<TweetsPayload> {
    authorize(&state, &headers, id)?;
    let account = AccountId::new(account).map_err(|e| ApiError::Invalid(e.to_string()))?;
    if !state.bundle.sample.contains(&account) {
        return Err(ApiError::NotFound(format!("account `{account}` is not in the network")));
    }
    let tweets = state.bundle.tweets.get(&account).cloned().unwrap_or_default();
    Ok(Json(TweetsPayload { account_id: account, tweets }))
}

#[derive(Deserialize)]
pub struct SurveyBody {
    pub answers: [u8; 4],
}

#[derive(Serialize, Deserialize)]
pub struct SessionStatus {
    pub session_id: u64,
    pub completed: bool,
}

async fn survey(
    State(state): State<Shared>,
    UrlPath((id, phase)): UrlPath<(u64, String)>,
    headers: HeaderMap,
    Json(body): Json<SurveyBody>,
) -> ApiResult<SessionStatus> {
    let sid = authorize(&state, &headers, id)?;
    let phase = match phase.as_str() {
        "pre" => SurveyPhase::Pre,
        "post" => SurveyPhase::Post,
        other => return Err(ApiError::NotFound(format!("no survey phase `{other}`"))),
    };
    let response = SurveyResponse::new(phase, body.answers)?;
    let now = state.now();
    let mut store = state.store();
    let session = store.record_survey(sid, response, now)?;
    Ok(Json(SessionStatus { session_id: sid.0, completed: session.completed }))
}

#[derive(Deserialize)]
pub struct GuessBody {
    pub account_id: String,
}

#[derive(Serialize, Deserialize)]
pub struct GuessPayload {
    pub guessed: AccountId,
    pub true_node: AccountId,
    pub hops: Hops,
    /// Displayed connection diversity, 0 to 1.
    pub diversity_score: f64,
}

async fn guess(
    State(state): State<Shared>,
    UrlPath(id): UrlPath<u64>,
    headers: HeaderMap,
    Json(body): Json<GuessBody>,
) -> ApiResult<GuessPayload> {
    let sid = authorize(&state, &headers, id)?;
    let guessed = AccountId::new(body.account_id).map_err(|e| ApiError::Invalid(e.to_string()))?;
    let now = state.now();
    let bundle = &state.bundle;
    let result = state.store().submit_guess(sid, &guessed, &bundle.sample, now)?;
    let score = displayed_diversity(&result.true_node, &bundle.sample, &bundle.pagerank, &bundle.labels)
        .map_err(|e| ApiError::Internal(e.to_string()))?
        .score;
    Ok(Json(GuessPayload { guessed: result.guessed, true_node: result.true_node, hops: result.hops, diversity_score: score }))
}

#[derive(Serialize, Deserialize)]
pub struct RecommendationItem {
    pub account_id: AccountId,
    pub rank: usize,
    pub marginal_gain: f64,
    pub cumulative_score: f64,
}

#[derive(Serialize, Deserialize)]
pub struct RecommendationsPayload {
    pub recommendations: Vec<RecommendationItem>,
    pub current_score: f64,
}

async fn recommendations(
    State(state): State<Shared>,
    UrlPath(id): UrlPath<u64>,
    headers: HeaderMap,
) -> ApiResult<RecommendationsPayload> {
    let sid = authorize(&state, &headers, id)?;
    let bundle = &state.bundle;
    let now = state.now();
    let mut store = state.store();
    let session = store.session(sid)?;
    if session.arm != TreatmentArm::IdeoRec {
        return Err(ExperimentError::WrongArm { expected: TreatmentArm::IdeoRec, actual: session.arm }.into());
    }
    if session.guess.is_none() {
        return Err(ExperimentError::OutOfOrder("recommendations follow the guess").into());
    }
    let user = session.user.clone();
    let fresh = !session.recommendations_issued;
    let list = if fresh {
        recommend(&user, &bundle.sample, &bundle.pagerank, &bundle.labels, state.max_recommendations)?
    } else {
        Vec::new()
    };
    let shown = store.issue_recommendations(sid, list, now)?.to_vec();
    let selected = store.session(sid)?.selected_recommendations.clone();
    drop(store);

    if fresh {
        if let Some(audit) = &state.audit {
            let mut audit = audit.lock().unwrap_or_else(|p| p.into_inner());
            if let Err(e) = audit.record(sid, &shown, now) {
                warn!(error = %e, session = %sid, "could not append to the recommendation audit log");
            }
        }
    }
    let current = what_if(&user, &selected, &shown, &bundle.sample, &bundle.pagerank, &bundle.labels)?;
    Ok(Json(RecommendationsPayload {
        recommendations: shown
            .into_iter()
            .map(|r| RecommendationItem {
                account_id: r.account,
                rank: r.rank,
                marginal_gain: r.marginal_gain,
                cumulative_score: r.cumulative_score,
            })
            .collect(),
        current_score: current.current_score,
    }))
}

#[derive(Deserialize)]
pub struct WhatIfBody {
    pub selected: Vec<String>,
}

#[derive(Serialize, Deserialize)]
pub struct WhatIfPayload {
    pub selected: Vec<AccountId>,
    pub diversity_score: f64,
}

async fn whatif(
    State(state): State<Shared>,
    UrlPath(id): UrlPath<u64>,
    headers: HeaderMap,
    Json(body): Json<WhatIfBody>,
) -> ApiResult<WhatIfPayload> {
    let sid = authorize(&state, &headers, id)?;
    let selected = body
        .selected
        .into_iter()
        .map(AccountId::new)
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| ApiError::Invalid(e.to_string()))?;
    let bundle = &state.bundle;
    let now = state.now();
    let mut store = state.store();
    let session = store.session(sid)?;
    if session.arm != TreatmentArm::IdeoRec {
        return Err(ExperimentError::WrongArm { expected: TreatmentArm::IdeoRec, actual: session.arm }.into());
    }
    if !session.recommendations_issued {
        return Err(ExperimentError::OutOfOrder("no recommendations have been issued yet").into());
    }
    let user = session.user.clone();
    let shown = session.recommendations_shown.clone();
    let state_after = what_if(&user, &selected, &shown, &bundle.sample, &bundle.pagerank, &bundle.labels)?;
    store.record_selection(sid, state_after.selected.clone(), now)?;
    Ok(Json(WhatIfPayload { selected: state_after.selected, diversity_score: state_after.current_score }))
}

async fn demographics(
    State(state): State<Shared>,
    UrlPath(id): UrlPath<u64>,
    headers: HeaderMap,
    Json(body): Json<DemographicsResponse>,
) -> ApiResult<SessionStatus> {
    let sid = authorize(&state, &headers, id)?;
    let now = state.now();
    let mut store = state.store();
    let session = store.record_demographics(sid, body, now)?;
    Ok(Json(SessionStatus { session_id: sid.0, completed: session.completed }))
}

#[derive(Deserialize, Default)]
pub struct ExportQuery {
    #[serde(default)]
    pub completed_only: bool,
}

#[derive(Serialize, Deserialize)]
pub struct ExportPayload {
    pub survey: Vec<mirror_core::tables::SurveyRow>,
    pub diversity: Vec<mirror_core::tables::DiversityRow>,
    pub alignment: Vec<mirror_core::tables::AlignmentRow>,
    pub covariates: Vec<mirror_core::tables::CovariateRow>,
}

fn export_tables(state: &AppState, completed_only: bool) -> AnalysisTables {
    let options = ExportOptions { require_completed_surveys: completed_only };
    export_analysis_tables(&state.store(), &state.bundle.labels, &state.bundle.alignment, options)
}

async fn admin_export(
    State(state): State<Shared>,
    headers: HeaderMap,
    Query(query): Query<ExportQuery>,
) -> ApiResult<ExportPayload> {
    authorize_admin(&state, &headers)?;
    let t = export_tables(&state, query.completed_only);
    Ok(Json(ExportPayload { survey: t.survey, diversity: t.diversity, alignment: t.alignment, covariates: t.covariates }))
}

async fn admin_report(
    State(state): State<Shared>,
    headers: HeaderMap,
    Query(options): Query<ReportOptions>,
) -> Result<Response, ApiError> {
    authorize_admin(&state, &headers)?;
    let tables = export_tables(&state, options.completed_only);
    let text = tokio::task::spawn_blocking(move || full_report(&tables, &options))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], text).into_response())
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/api/session", post(create_session))
        .route("/api/session/{id}/network", get(network))
        .route("/api/session/{id}/tweets/{account}", get(tweets))
        .route("/api/session/{id}/survey/{phase}", post(survey))
        .route("/api/session/{id}/guess", post(guess))
        .route("/api/session/{id}/recommendations", get(recommendations))
        .route("/api/session/{id}/whatif", post(whatif))
        .route("/api/session/{id}/demographics", post(demographics))
        .route("/api/admin/export", get(admin_export))
        .route("/api/admin/report", get(admin_report))
        .with_state(state)
}
