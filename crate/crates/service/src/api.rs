//! HTTP routes. Every session sits behind its own mutex, so turns on one
//! session are serialized while other sessions proceed. Engine work runs on
//! the blocking pool. A turn is computed on a copy of the state, journaled,
//! and only then committed, so readers see either the old or the new state.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use anamnesis_core::dialogue::{ConversationState, DialogueError, EmoteMode, Engine, EngineConfig, Profile, Reply};
use anamnesis_core::eval::{aggregate_ratings, Anonymization, RatingAggregate, RatingRecord};
use anamnesis_core::journal::{replay_file, JournalError, JournalWriter};
use anamnesis_core::kb::DifferentialDiagnosis;
use anamnesis_core::nlg::EngineVariant;
use anamnesis_core::rng::key_hash;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::config::ServiceConfig;

#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub suggestions: Vec<String>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, error: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                error: error.into(),
                suggestions: Vec::new(),
            },
        }
    }

    fn internal(error: impl std::fmt::Display) -> Self {
        log::error!("{error}");
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, error.to_string())
    }
}

impl From<DialogueError> for ApiError {
    fn from(e: DialogueError) -> Self {
        let status = match &e {
            DialogueError::RfeNotFound { suggestions, .. } => {
                let mut err = Self::new(StatusCode::NOT_FOUND, e.to_string());
                err.body.suggestions = suggestions.clone();
                return err;
            }
            DialogueError::UnknownSession(_) => StatusCode::NOT_FOUND,
            DialogueError::Concluded(_) => StatusCode::CONFLICT,
            DialogueError::Config(_) => StatusCode::BAD_REQUEST,
            _ => return Self::internal(e),
        };
        Self::new(status, e.to_string())
    }
}

impl From<JournalError> for ApiError {
    fn from(e: JournalError) -> Self {
        Self::internal(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Defaults for fields a start request leaves out.
#[derive(Debug, Clone)]
pub struct SessionDefaults {
    pub variant: EngineVariant,
    pub seed: u64,
    pub max_questions: usize,
    pub margin_threshold: f64,
}

impl From<&ServiceConfig> for SessionDefaults {
    fn from(c: &ServiceConfig) -> Self {
        Self {
            variant: c.variant,
            seed: c.seed,
            max_questions: c.max_questions,
            margin_threshold: c.margin_threshold,
        }
    }
}

struct Pair {
    case_ref: String,
    session_a: String,
    session_b: String,
    models: Anonymization,
    revealed: AtomicBool,
}

struct RatingLog {
    records: Vec<RatingRecord>,
    file: Option<File>,
}

pub struct AppState {
    engine: Engine,
    defaults: SessionDefaults,
    sessions: RwLock<HashMap<String, Arc<Mutex<ConversationState>>>>,
    next_session: AtomicU64,
    journal: Option<Mutex<JournalWriter<File>>>,
    pairs: RwLock<HashMap<String, Arc<Pair>>>,
    next_pair: AtomicU64,
    ratings: Mutex<RatingLog>,
}

fn counter_of(id: &str, prefix: char) -> Option<u64> {
    id.strip_prefix(prefix)?.parse().ok()
}

impl AppState {
    /// Sessions found in an existing journal are restored and new ids
    /// continue after the largest one seen. Ratings already on file are
    /// loaded too. Paired runs live in memory only.
    pub fn new(
        engine: Engine,
        defaults: SessionDefaults,
        journal: Option<&Path>,
        ratings: Option<&Path>,
    ) -> anyhow::Result<Self> {
        let mut sessions = HashMap::new();
        let mut next_session = 1;
        let writer = match journal {
            Some(path) => {
                for (id, state) in replay_file(path)? {
                    if let Some(n) = counter_of(&id, 'c') {
                        next_session = next_session.max(n + 1);
                    }
                    sessions.insert(id, Arc::new(Mutex::new(state)));
                }
                if !sessions.is_empty() {
                    log::info!("restored {} sessions from {}", sessions.len(), path.display());
                }
                Some(Mutex::new(JournalWriter::open(path)?))
            }
            None => None,
        };
        let mut records = Vec::new();
        let file = match ratings {
            Some(path) => {
                if path.exists() {
                    for (i, line) in std::fs::read_to_string(path)?.lines().enumerate() {
                        if line.trim().is_empty() {
                            continue;
                        }
                        let record: RatingRecord = serde_json::from_str(line)
                            .map_err(|e| anyhow::anyhow!("{} line {}: {e}", path.display(), i + 1))?;
                        records.push(record);
                    }
                }
                Some(OpenOptions::new().create(true).append(true).open(path)?)
            }
            None => None,
        };
        Ok(Self {
            engine,
            defaults,
            sessions: RwLock::new(sessions),
            next_session: AtomicU64::new(next_session),
            journal: writer,
            pairs: RwLock::new(HashMap::new()),
            next_pair: AtomicU64::new(1),
            ratings: Mutex::new(RatingLog { records, file }),
        })
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<ConversationState>>, ApiError> {
        self.sessions
            .read()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| DialogueError::UnknownSession(id.to_string()).into())
    }

    fn journal(&self, session_id: &str, events: &[anamnesis_core::dialogue::Event]) -> Result<(), ApiError> {
        if let Some(j) = &self.journal {
            j.lock().expect("journal poisoned").append_all(session_id, events)?;
        }
        Ok(())
    }

    fn config_for(&self, req: &StartRequest) -> EngineConfig {
        let emote_mode = req.emote_mode.unwrap_or(if self.engine.has_classifier() {
            EmoteMode::Classifier
        } else {
            EmoteMode::None
        });
        EngineConfig {
            variant: req.variant.unwrap_or(self.defaults.variant),
            max_questions: req.max_questions.unwrap_or(self.defaults.max_questions),
            margin_threshold: req.margin_threshold.unwrap_or(self.defaults.margin_threshold),
            seed: req.seed.unwrap_or(self.defaults.seed),
            emote_mode,
            ..EngineConfig::default()
        }
    }

    /// Starts a session and journals its first events.
    pub fn start(&self, req: &StartRequest) -> Result<StartResponse, ApiError> {
        let config = self.config_for(req);
        let profile = Profile {
            age_band: req.age_band.clone(),
            gender: req.gender.clone(),
        };
        let id = format!("c{:06}", self.next_session.fetch_add(1, Ordering::SeqCst));
        let (state, step) = self.engine.start(id.clone(), profile, &req.rfe, config)?;
        self.journal(&id, &step.events)?;
        self.sessions
            .write()
            .expect("session map poisoned")
            .insert(id.clone(), Arc::new(Mutex::new(state)));
        Ok(StartResponse::new(id, step.reply))
    }

    pub fn answer(&self, id: &str, text: &str) -> Result<Reply, ApiError> {
        let session = self.session(id)?;
        let mut guard = session.lock().expect("session poisoned");
        let mut next = guard.clone();
        let step = self.engine.answer(&mut next, text)?;
        self.journal(id, &step.events)?;
        *guard = next;
        Ok(step.reply)
    }

    pub fn state(&self, id: &str) -> Result<ConversationState, ApiError> {
        Ok(self.session(id)?.lock().expect("session poisoned").clone())
    }

    pub fn differential(&self, id: &str) -> Result<DifferentialDiagnosis, ApiError> {
        let session = self.session(id)?;
        let guard = session.lock().expect("session poisoned");
        Ok(self.engine.differential(&guard)?)
    }

    fn pair(&self, id: &str) -> Result<Arc<Pair>, ApiError> {
        self.pairs
            .read()
            .expect("pair map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown paired run {id}")))
    }

    /// Whether the session belongs to a paired run whose models are still
    /// hidden from the rater.
    fn hidden(&self, session_id: &str) -> bool {
        self.pairs.read().expect("pair map poisoned").values().any(|p| {
            !p.revealed.load(Ordering::SeqCst) && (p.session_a == session_id || p.session_b == session_id)
        })
    }

    /// Two sessions on the same case, one per model, behind anonymous labels.
    pub fn start_pair(&self, req: &PairRequest) -> Result<PairStartResponse, ApiError> {
        let [first, second] = req.models.unwrap_or([EngineVariant::Expert, EngineVariant::Full]);
        let pair_id = format!("p{:06}", self.next_pair.fetch_add(1, Ordering::SeqCst));
        let seed = req.seed.unwrap_or(self.defaults.seed);
        let models = Anonymization::assign(first.as_str(), second.as_str(), seed ^ key_hash(&pair_id));
        let mut sides = Vec::with_capacity(2);
        for model in [&models.a, &models.b] {
            let start = StartRequest {
                age_band: req.age_band.clone(),
                gender: req.gender.clone(),
                rfe: req.rfe.clone(),
                variant: Some(model.parse().map_err(|e: String| ApiError::internal(e))?),
                seed: Some(seed),
                emote_mode: None,
                max_questions: req.max_questions,
                margin_threshold: None,
            };
            sides.push(self.start(&start)?);
        }
        let b = sides.pop().expect("two sides");
        let a = sides.pop().expect("two sides");
        let case_ref = req.case_ref.clone().unwrap_or_else(|| pair_id.clone());
        self.pairs.write().expect("pair map poisoned").insert(
            pair_id.clone(),
            Arc::new(Pair {
                case_ref: case_ref.clone(),
                session_a: a.session_id.clone(),
                session_b: b.session_id.clone(),
                models,
                revealed: AtomicBool::new(false),
            }),
        );
        Ok(PairStartResponse { pair_id, case_ref, a, b })
    }

    /// Sends one answer to both sides; a side that already concluded is
    /// skipped and reported as `null`.
    pub fn answer_pair(&self, pair_id: &str, text: &str) -> Result<PairAnswerResponse, ApiError> {
        let pair = self.pair(pair_id)?;
        let mut replies = [None, None];
        for (slot, id) in replies.iter_mut().zip([&pair.session_a, &pair.session_b]) {
            if self.state(id)?.is_active() {
                *slot = Some(self.answer(id, text)?);
            }
        }
        let [a, b] = replies;
        Ok(PairAnswerResponse { a, b })
    }

    pub fn pair_view(&self, pair_id: &str) -> Result<PairView, ApiError> {
        let pair = self.pair(pair_id)?;
        let a = self.state(&pair.session_a)?;
        let b = self.state(&pair.session_b)?;
        let revealed = pair.revealed.load(Ordering::SeqCst);
        Ok(PairView {
            pair_id: pair_id.to_string(),
            case_ref: pair.case_ref.clone(),
            concluded: !a.is_active() && !b.is_active(),
            a: redact(&a, !revealed),
            b: redact(&b, !revealed),
            models: revealed.then(|| pair.models.clone()),
        })
    }

    /// Validates and stores a rating. For a paired run both sides must have
    /// concluded; the model identities are returned once the rating is in.
    pub fn rate(&self, req: RatingRequest) -> Result<RatingResponse, ApiError> {
        let pair = req.pair_id.as_deref().map(|id| self.pair(id)).transpose()?;
        let case_ref = match (&pair, req.case_ref) {
            (_, Some(c)) => c,
            (Some(p), None) => p.case_ref.clone(),
            (None, None) => return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "case_ref or pair_id required")),
        };
        if let Some(p) = &pair {
            let done = !self.state(&p.session_a)?.is_active() && !self.state(&p.session_b)?.is_active();
            if !done {
                return Err(ApiError::new(StatusCode::CONFLICT, "both conversations must conclude before rating"));
            }
        }
        let record = RatingRecord {
            rater_id: req.rater_id,
            case_ref,
            points_a: req.points_a,
            points_b: req.points_b,
            comment: req.comment.filter(|c| !c.trim().is_empty()),
        };
        record
            .validate()
            .map_err(|reason| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, reason))?;
        {
            let mut log = self.ratings.lock().expect("rating log poisoned");
            if let Some(f) = &mut log.file {
                let mut line = serde_json::to_vec(&record).map_err(ApiError::internal)?;
                line.push(b'\n');
                f.write_all(&line).and_then(|_| f.flush()).map_err(ApiError::internal)?;
            }
            log.records.push(record.clone());
        }
        let models = pair.map(|p| {
            p.revealed.store(true, Ordering::SeqCst);
            p.models.clone()
        });
        Ok(RatingResponse { record, models })
    }

    pub fn ratings(&self) -> Result<RatingsView, ApiError> {
        let records = self.ratings.lock().expect("rating log poisoned").records.clone();
        let aggregate = if records.is_empty() {
            None
        } else {
            Some(aggregate_ratings(&records).map_err(ApiError::internal)?)
        };
        Ok(RatingsView { records, aggregate })
    }
}

/// Session state as JSON, with the engine configuration removed when the
/// model identity must stay hidden.
fn redact(state: &ConversationState, hide: bool) -> serde_json::Value {
    let mut v = serde_json::to_value(state).expect("state serializes");
    if hide {
        if let Some(obj) = v.as_object_mut() {
            obj.remove("config");
        }
    }
    v
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StartRequest {
    pub age_band: String,
    pub gender: String,
    pub rfe: String,
    #[serde(default)]
    pub variant: Option<EngineVariant>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub emote_mode: Option<EmoteMode>,
    #[serde(default)]
    pub max_questions: Option<usize>,
    #[serde(default)]
    pub margin_threshold: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StartResponse {
    pub session_id: String,
    /// The first question, or `None` if the complaint alone was decisive.
    pub question: Option<String>,
    pub reply: Reply,
}

impl StartResponse {
    fn new(session_id: String, reply: Reply) -> Self {
        let question = match &reply {
            Reply::Question { text, .. } => Some(text.clone()),
            _ => None,
        };
        Self {
            session_id,
            question,
            reply,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnswerRequest {
    pub text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairRequest {
    pub age_band: String,
    pub gender: String,
    pub rfe: String,
    #[serde(default)]
    pub models: Option<[EngineVariant; 2]>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub case_ref: Option<String>,
    #[serde(default)]
    pub max_questions: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairStartResponse {
    pub pair_id: String,
    pub case_ref: String,
    pub a: StartResponse,
    pub b: StartResponse,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairAnswerResponse {
    pub a: Option<Reply>,
    pub b: Option<Reply>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairView {
    pub pair_id: String,
    pub case_ref: String,
    pub concluded: bool,
    pub a: serde_json::Value,
    pub b: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub models: Option<Anonymization>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatingRequest {
    pub rater_id: String,
    #[serde(default)]
    pub pair_id: Option<String>,
    #[serde(default)]
    pub case_ref: Option<String>,
    pub points_a: u8,
    pub points_b: u8,
    #[serde(default)]
    pub comment: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatingResponse {
    pub record: RatingRecord,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub models: Option<Anonymization>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatingsView {
    pub records: Vec<RatingRecord>,
    pub aggregate: Option<RatingAggregate>,
}

type Shared = State<Arc<AppState>>;

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> ApiResult<T> {
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map(Json),
        Err(e) => Err(ApiError::internal(e)),
    }
}

async fn healthz() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn start_conversation(State(app): Shared, Json(req): Json<StartRequest>) -> ApiResult<StartResponse> {
    blocking(move || app.start(&req)).await
}

async fn submit_answer(State(app): Shared, UrlPath(id): UrlPath<String>, Json(req): Json<AnswerRequest>) -> ApiResult<Reply> {
    blocking(move || app.answer(&id, &req.text)).await
}

async fn get_conversation(State(app): Shared, UrlPath(id): UrlPath<String>) -> ApiResult<serde_json::Value> {
    blocking(move || {
        let state = app.state(&id)?;
        Ok(redact(&state, app.hidden(&id)))
    })
    .await
}

async fn get_differential(State(app): Shared, UrlPath(id): UrlPath<String>) -> ApiResult<DifferentialDiagnosis> {
    blocking(move || app.differential(&id)).await
}

async fn start_pair(State(app): Shared, Json(req): Json<PairRequest>) -> ApiResult<PairStartResponse> {
    blocking(move || app.start_pair(&req)).await
}

async fn answer_pair(State(app): Shared, UrlPath(id): UrlPath<String>, Json(req): Json<AnswerRequest>) -> ApiResult<PairAnswerResponse> {
    blocking(move || app.answer_pair(&id, &req.text)).await
}

async fn get_pair(State(app): Shared, UrlPath(id): UrlPath<String>) -> ApiResult<PairView> {
    blocking(move || app.pair_view(&id)).await
}

async fn post_rating(State(app): Shared, Json(req): Json<RatingRequest>) -> ApiResult<RatingResponse> {
    blocking(move || app.rate(req)).await
}

async fn get_ratings(State(app): Shared) -> ApiResult<RatingsView> {
    blocking(move || app.ratings()).await
}

pub fn router(app: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/conversations", post(start_conversation))
        .route("/conversations/{id}", get(get_conversation))
        .route("/conversations/{id}/answers", post(submit_answer))
        .route("/conversations/{id}/differential", get(get_differential))
        .route("/pairs", post(start_pair))
        .route("/pairs/{id}", get(get_pair))
        .route("/pairs/{id}/answers", post(answer_pair))
        .route("/ratings", get(get_ratings).post(post_rating))
        .with_state(app)
}
