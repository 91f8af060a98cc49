//! JSON HTTP boundary over the session engine and the translation memory.
//!
//! Every endpoint maps to exactly one engine or TM operation. Mutating
//! endpoints accept a client `request_id`; a retry with the same id replays
//! the stored reply instead of running the operation (and its LLM calls) again.

use std::collections::HashMap;
use std::future::Future;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::agents::AgentError;
use crate::config::{Config, ConfigError};
use crate::mqm::{JobContext, LanguagePair};
use crate::provider::{ChatProvider, ProviderError};
use crate::session::{Session, SessionEngine, SessionError, SessionRepository};
use crate::templates::{TemplateError, TemplateSet};
use crate::tm::{
    EntryKind, Provenance, RetrievalQuery, TmEntry, TmError, TmNamespace, TmStore,
};

/// The body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
    pub request_id: String,
    #[serde(skip)]
    status: u16,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            code: code.to_string(),
            message: message.into(),
            request_id: String::new(),
            status: status.as_u16(),
        }
    }

    pub fn status(&self) -> StatusCode {
        StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR)
    }

    fn with_request_id(mut self, request_id: Option<&str>) -> Self {
        self.request_id = match request_id {
            Some(id) => id.to_string(),
            None => format!("srv-{}", uuid::Uuid::new_v4().simple()),
        };
        self
    }

    fn malformed(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "malformed_body", message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut this = self;
        if this.request_id.is_empty() {
            this = this.with_request_id(None);
        }
        (this.status(), Json(this)).into_response()
    }
}

fn provider_error(err: &ProviderError) -> ApiError {
    let code = match err {
        ProviderError::Unavailable { .. } => "provider_unavailable",
        ProviderError::Timeout { .. } => "provider_timeout",
        ProviderError::RateLimited { .. } => "provider_rate_limited",
        ProviderError::InvalidRequest { .. } => "provider_invalid_request",
    };
    ApiError::new(StatusCode::BAD_GATEWAY, code, err.to_string())
}

impl From<SessionError> for ApiError {
    fn from(err: SessionError) -> Self {
        use SessionError as E;
        let message = err.to_string();
        let (status, code) = match &err {
            E::EmptySource => (StatusCode::BAD_REQUEST, "empty_source"),
            E::InvalidInput(_) => (StatusCode::BAD_REQUEST, "invalid_input"),
            E::InvalidDimensionSet(_) => (StatusCode::BAD_REQUEST, "invalid_dimension_set"),
            E::UnknownSession(_) => (StatusCode::NOT_FOUND, "unknown_session"),
            E::UnknownCandidate(_) => (StatusCode::NOT_FOUND, "unknown_candidate"),
            E::SessionFinalized => (StatusCode::CONFLICT, "session_finalized"),
            E::InvalidState { .. } => (StatusCode::CONFLICT, "invalid_state"),
            E::NoDecision => (StatusCode::CONFLICT, "no_decision"),
            E::NoCandidates => (StatusCode::CONFLICT, "no_candidates"),
            E::AllAgentsFailed(_) => (StatusCode::BAD_GATEWAY, "all_agents_failed"),
            E::Agent(AgentError::Provider(p)) => return provider_error(p),
            E::Agent(AgentError::MalformedResponse(_)) => {
                (StatusCode::BAD_GATEWAY, "malformed_model_response")
            }
            E::Agent(AgentError::Precondition(_)) => (StatusCode::BAD_REQUEST, "precondition_failed"),
            E::Agent(AgentError::Retrieval(_)) => (StatusCode::INTERNAL_SERVER_ERROR, "tm_failure"),
            E::TmWrite(_) => (StatusCode::INTERNAL_SERVER_ERROR, "tm_write_failed"),
            E::CorruptLog { .. } | E::EmptyLog | E::Storage(_) => {
                (StatusCode::INTERNAL_SERVER_ERROR, "storage_failure")
            }
        };
        ApiError::new(status, code, message)
    }
}

impl From<TmError> for ApiError {
    fn from(err: TmError) -> Self {
        let status = match err {
            TmError::InvalidEntry(_) | TmError::InvalidQuery(_) => StatusCode::BAD_REQUEST,
            TmError::ImmutableEntry(_) | TmError::PolicyViolation(_) => StatusCode::CONFLICT,
            TmError::StoreCorrupt { .. } | TmError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let code = match err {
            TmError::InvalidEntry(_) => "invalid_entry",
            TmError::InvalidQuery(_) => "invalid_query",
            TmError::ImmutableEntry(_) => "immutable_entry",
            TmError::PolicyViolation(_) => "policy_violation",
            TmError::StoreCorrupt { .. } | TmError::Io(_) => "storage_failure",
        };
        ApiError::new(status, code, err.to_string())
    }
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Templates(#[from] TemplateError),
    #[error("translation memory: {0}")]
    Tm(#[from] TmError),
    #[error("session store: {0}")]
    Sessions(#[from] SessionError),
    #[error("cannot bind {addr}: {source}")]
    BindFailure {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error("server failed: {0}")]
    Io(#[from] std::io::Error),
}

pub struct AppState {
    pub engine: SessionEngine,
    pub provider: Arc<dyn ChatProvider>,
    pub tm: Arc<TmStore>,
    pub sessions: Arc<SessionRepository>,
    create_replies: Mutex<HashMap<String, (u16, Value)>>,
}

impl AppState {
    pub fn new(
        engine: SessionEngine,
        provider: Arc<dyn ChatProvider>,
        tm: Arc<TmStore>,
        sessions: Arc<SessionRepository>,
    ) -> Self {
        Self {
            engine,
            provider,
            tm,
            sessions,
            create_replies: Mutex::new(HashMap::new()),
        }
    }

    /// Builds provider, stores and templates from a loaded config.
    pub fn from_config(config: &Config) -> Result<Self, ServeError> {
        let provider = config.provider.build()?;
        let templates = match &config.server.templates_dir {
            Some(dir) => TemplateSet::from_dir(dir)?,
            None => TemplateSet::shipped(),
        };
        let tm = match &config.server.tm_path {
            Some(path) => TmStore::open(path)?,
            None => TmStore::in_memory(),
        };
        let sessions = match &config.server.session_dir {
            Some(dir) => SessionRepository::open(dir)?,
            None => SessionRepository::in_memory(),
        };
        Ok(Self::new(
            SessionEngine::new(Arc::new(templates), config.provider.agent_config()),
            provider,
            Arc::new(tm),
            Arc::new(sessions),
        ))
    }
}

type Shared = Arc<AppState>;

fn parse_body<T>(body: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    body.map(|Json(b)| b)
        .map_err(|e| ApiError::malformed(e.body_text()).with_request_id(None))
}

fn reply(status: u16, value: Value) -> Response {
    (
        StatusCode::from_u16(status).unwrap_or(StatusCode::OK),
        Json(value),
    )
        .into_response()
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .unwrap_or_else(|e| Err(ApiError::internal(format!("worker failed: {e}"))))
}

/// Runs one engine operation on a session under its writer lock, honouring
/// the request id for replays. Only successful replies are remembered, so a
/// failed request may be retried with the same id.
async fn mutate<F>(state: Shared, id: String, request_id: Option<String>, op: F) -> Response
where
    F: FnOnce(&AppState, &mut Session) -> Result<(), SessionError> + Send + 'static,
{
    let rid = request_id.clone();
    let outcome = blocking(move || {
        let handle = state.sessions.get(&id)?;
        let mut slot = handle.lock();
        if let Some(rid) = &request_id {
            if let Some((status, value)) = slot.replies.get(rid) {
                return Ok((*status, value.clone()));
            }
        }
        let result = op(&state, &mut slot.session);
        let committed = state.sessions.commit(&handle, &mut slot);
        result?;
        committed?;
        let value = serde_json::to_value(&slot.session)
            .map_err(|e| ApiError::internal(e.to_string()))?;
        if let Some(rid) = request_id {
            slot.replies.insert(rid, (200, value.clone()));
        }
        Ok((200, value))
    })
    .await;
    match outcome {
        Ok((status, value)) => reply(status, value),
        Err(err) => err.with_request_id(rid.as_deref()).into_response(),
    }
}

#[derive(Debug, Deserialize)]
pub struct CreateBody {
    pub source: String,
    #[serde(default)]
    pub draft: Option<String>,
    #[serde(default)]
    pub goal: String,
    pub src_lang: String,
    pub tgt_lang: String,
    pub job: JobContext,
    #[serde(default)]
    pub request_id: Option<String>,
}

async fn create_session(State(state): State<Shared>, body: Result<Json<CreateBody>, JsonRejection>) -> Response {
    let body = match parse_body(body) {
        Ok(b) => b,
        Err(e) => return e.into_response(),
    };
    let rid = body.request_id.clone();
    let outcome = blocking(move || {
        let mut replies = state.create_replies.lock().unwrap_or_else(|p| p.into_inner());
        if let Some((status, value)) = body.request_id.as_ref().and_then(|r| replies.get(r)) {
            return Ok((*status, value.clone()));
        }
        let pair = LanguagePair::new(&body.src_lang, &body.tgt_lang)
            .map_err(|e| ApiError::from(SessionError::InvalidInput(e.to_string())))?;
        let session = Session::create(&body.source, body.draft.as_deref(), &body.goal, pair, body.job)?;
        let value = serde_json::to_value(&session).map_err(|e| ApiError::internal(e.to_string()))?;
        state.sessions.insert(session)?;
        if let Some(rid) = body.request_id {
            replies.insert(rid, (201, value.clone()));
        }
        Ok((201, value))
    })
    .await;
    match outcome {
        Ok((status, value)) => reply(status, value),
        Err(err) => err.with_request_id(rid.as_deref()).into_response(),
    }
}

async fn get_session(State(state): State<Shared>, UrlPath(id): UrlPath<String>) -> Response {
    match state.sessions.get(&id) {
        Ok(handle) => Json(handle.snapshot()).into_response(),
        Err(e) => ApiError::from(e).into_response(),
    }
}

async fn get_events(State(state): State<Shared>, UrlPath(id): UrlPath<String>) -> Response {
    match state.sessions.get(&id) {
        Ok(handle) => Json(handle.snapshot().events).into_response(),
        Err(e) => ApiError::from(e).into_response(),
    }
}

#[derive(Debug, Deserialize)]
pub struct RouteBody {
    pub instruction: String,
    #[serde(default)]
    pub request_id: Option<String>,
}

#[derive(Debug, Deserialize)]
pub struct OverrideBody {
    pub dimensions: Vec<String>,
    #[serde(default)]
    pub request_id: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
pub struct PlainBody {
    #[serde(default)]
    pub request_id: Option<String>,
}

#[derive(Debug, Deserialize)]
pub struct ReviseBody {
    pub candidate_id: String,
    pub instruction: String,
    #[serde(default)]
    pub request_id: Option<String>,
}

#[derive(Debug, Deserialize)]
pub struct ConfirmBody {
    pub candidate_id: String,
    #[serde(default)]
    pub request_id: Option<String>,
}

macro_rules! body_or_400 {
    ($body:expr) => {
        match parse_body($body) {
            Ok(b) => b,
            Err(e) => return e.into_response(),
        }
    };
}

async fn route_session(
    State(state): State<Shared>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<RouteBody>, JsonRejection>,
) -> Response {
    let body = body_or_400!(body);
    mutate(state, id, body.request_id, move |st, s| {
        st.engine
            .request_routing(s, st.provider.as_ref(), &body.instruction, &st.tm)
    })
    .await
}

async fn override_session(
    State(state): State<Shared>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<OverrideBody>, JsonRejection>,
) -> Response {
    let body = body_or_400!(body);
    mutate(state, id, body.request_id, move |st, s| {
        st.engine.apply_override(s, &body.dimensions)
    })
    .await
}

async fn invoke_session(
    State(state): State<Shared>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<PlainBody>, JsonRejection>,
) -> Response {
    let body = body_or_400!(body);
    mutate(state, id, body.request_id, move |st, s| {
        st.engine.invoke_selected(s, st.provider.as_ref(), &st.tm)
    })
    .await
}

async fn revise_session(
    State(state): State<Shared>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<ReviseBody>, JsonRejection>,
) -> Response {
    let body = body_or_400!(body);
    mutate(state, id, body.request_id, move |st, s| {
        st.engine.request_revision(
            s,
            st.provider.as_ref(),
            &body.candidate_id,
            &body.instruction,
            &st.tm,
        )
    })
    .await
}

async fn synthesize_session(
    State(state): State<Shared>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<PlainBody>, JsonRejection>,
) -> Response {
    let body = body_or_400!(body);
    mutate(state, id, body.request_id, move |st, s| {
        st.engine.request_synthesis(s, st.provider.as_ref())
    })
    .await
}

async fn confirm_session(
    State(state): State<Shared>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<ConfirmBody>, JsonRejection>,
) -> Response {
    let body = body_or_400!(body);
    mutate(state, id, body.request_id, move |st, s| {
        st.engine.confirm(s, &body.candidate_id, &st.tm)
    })
    .await
}

#[derive(Debug, Deserialize)]
pub struct SearchParams {
    pub q: String,
    pub src: String,
    pub tgt: String,
    #[serde(default)]
    pub k: Option<usize>,
}

async fn tm_search(State(state): State<Shared>, params: Result<Query<SearchParams>, QueryRejection>) -> Response {
    let params = match params {
        Ok(Query(p)) => p,
        Err(e) => return ApiError::new(StatusCode::BAD_REQUEST, "malformed_query", e.body_text()).into_response(),
    };
    let pair = match LanguagePair::new(&params.src, &params.tgt) {
        Ok(p) => p,
        Err(e) => return ApiError::new(StatusCode::BAD_REQUEST, "invalid_query", e.to_string()).into_response(),
    };
    let mut query = RetrievalQuery::new(params.q, pair);
    if let Some(k) = params.k {
        query = query.top_k(k);
    }
    match state.tm.retrieve(&query) {
        Ok(hits) => Json(hits).into_response(),
        Err(e) => ApiError::from(e).into_response(),
    }
}

/// A TM entry as submitted by a client; the server fills in what is missing.
#[derive(Debug, Deserialize)]
pub struct NewEntry {
    #[serde(default)]
    pub entry_id: Option<String>,
    pub namespace: TmNamespace,
    pub kind: EntryKind,
    pub language_pair: LanguagePair,
    #[serde(default)]
    pub source_text: String,
    pub target_text: String,
    #[serde(default = "default_provenance")]
    pub provenance: Provenance,
    #[serde(default)]
    pub created_at: Option<DateTime<Utc>>,
    #[serde(default)]
    pub note: String,
}

fn default_provenance() -> Provenance {
    Provenance::Seeded
}

#[derive(Debug, Deserialize)]
pub struct EntryBody {
    pub entry: NewEntry,
    #[serde(default)]
    pub request_id: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EntryCreated {
    pub entry_id: String,
}

async fn tm_add(State(state): State<Shared>, body: Result<Json<EntryBody>, JsonRejection>) -> Response {
    let body = body_or_400!(body);
    let rid = body.request_id.clone();
    let e = body.entry;
    let entry = TmEntry {
        entry_id: e.entry_id.unwrap_or_else(TmEntry::new_id),
        namespace: e.namespace,
        kind: e.kind,
        language_pair: e.language_pair,
        source_text: e.source_text,
        target_text: e.target_text,
        provenance: e.provenance,
        created_at: e.created_at.unwrap_or_else(Utc::now),
        note: e.note,
    };
    let tm = state.tm.clone();
    match blocking(move || tm.upsert_entry(entry).map_err(ApiError::from)).await {
        Ok(entry_id) => (StatusCode::CREATED, Json(EntryCreated { entry_id })).into_response(),
        Err(err) => err.with_request_id(rid.as_deref()).into_response(),
    }
}

async fn healthz() -> &'static str {
    "ok"
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

/// The endpoint table. With `static_dir`, unmatched paths are served from it.
pub fn app(state: Arc<AppState>, static_dir: Option<&Path>) -> Router {
    let router = Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/route", post(route_session))
        .route("/sessions/{id}/override", post(override_session))
        .route("/sessions/{id}/invoke", post(invoke_session))
        .route("/sessions/{id}/revise", post(revise_session))
        .route("/sessions/{id}/synthesize", post(synthesize_session))
        .route("/sessions/{id}/confirm", post(confirm_session))
        .route("/sessions/{id}/events", get(get_events))
        .route("/tm/search", get(tm_search))
        .route("/tm/entries", post(tm_add));
    let router = match static_dir {
        Some(dir) => router.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => router.fallback(not_found),
    };
    router.with_state(state)
}

pub async fn bind(addr: &str) -> Result<tokio::net::TcpListener, ServeError> {
    tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| ServeError::BindFailure {
            addr: addr.to_string(),
            source,
        })
}

/// Serves until `shutdown` resolves, then lets in-flight requests finish.
pub async fn serve_on<S>(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    static_dir: Option<PathBuf>,
    shutdown: S,
) -> Result<(), ServeError>
where
    S: Future<Output = ()> + Send + 'static,
{
    let local: Option<SocketAddr> = listener.local_addr().ok();
    if let Some(addr) = local {
        log::info!("listening on http://{addr}");
    }
    axum::serve(listener, app(state, static_dir.as_deref()))
        .with_graceful_shutdown(shutdown)
        .await?;
    log::info!("server stopped");
    Ok(())
}

/// Binds the configured address and serves until `shutdown` resolves.
pub async fn serve<S>(config: &Config, state: Arc<AppState>, shutdown: S) -> Result<(), ServeError>
where
    S: Future<Output = ()> + Send + 'static,
{
    let listener = bind(&config.server.bind).await?;
    serve_on(listener, state, config.server.static_dir.clone(), shutdown).await
}
