//! HTTP session API. Each request drives the same [`Session`] engine used by
//! batch simulation, one turn at a time, with a human supplying answers.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use elicit_core::backends::{AnswerInterpreter, BackendError, HumanAnswerer, Questioner};
use elicit_core::metrics::{score_profiles, PositionScore};
use elicit_core::session::{session_seed, TurnRecord};
use elicit_core::{
    synth_profiles, Entry, ProfileView, Session, SessionConfig, SessionError, StructuredProfile,
    SyntheticProfileSpec, Termination, Transcript, UpdateMode,
};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

pub struct AppState {
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    questioner: Arc<dyn Questioner>,
    interpreter: Arc<dyn AnswerInterpreter>,
    defaults: SessionConfig,
    log: Option<Mutex<File>>,
    created: AtomicUsize,
}

impl AppState {
    /// `transcript_log`, when set, receives one JSON line per finished
    /// session.
    pub fn new(
        questioner: Arc<dyn Questioner>,
        interpreter: Arc<dyn AnswerInterpreter>,
        defaults: SessionConfig,
        transcript_log: Option<&Path>,
    ) -> std::io::Result<Self> {
        let log = transcript_log
            .map(|p| OpenOptions::new().create(true).append(true).open(p))
            .transpose()?
            .map(Mutex::new);
        Ok(Self {
            sessions: RwLock::new(HashMap::new()),
            questioner,
            interpreter,
            defaults,
            log,
            created: AtomicUsize::new(0),
        })
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown session `{id}`")))
    }

    fn append_log(&self, transcript: &Transcript) {
        let Some(log) = &self.log else { return };
        let mut file = lock(log);
        let line = serde_json::to_string(transcript).expect("transcript serializes");
        if let Err(e) = writeln!(file, "{line}").and_then(|_| file.flush()) {
            tracing::error!(error = %e, "cannot append to transcript log");
        }
    }
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::bad_request(r.body_text())
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let status = match &e {
            SessionError::Terminated(_) => StatusCode::CONFLICT,
            SessionError::NoPendingQuestion => StatusCode::CONFLICT,
            SessionError::EmptyTarget | SessionError::InvalidBudget => StatusCode::BAD_REQUEST,
            SessionError::Transition { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            SessionError::Simulator {
                source: BackendError::Llm(_),
                ..
            } => StatusCode::BAD_GATEWAY,
            SessionError::Simulator { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            SessionError::Questioner { .. } => StatusCode::BAD_GATEWAY,
        };
        let message = match std::error::Error::source(&e) {
            Some(s) => format!("{e}: {s}"),
            None => e.to_string(),
        };
        ApiError::new(status, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": self.message, "status": self.status.as_u16() });
        (self.status, Json(body)).into_response()
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub target: Option<StructuredProfile>,
    pub synthetic: Option<SyntheticProfileSpec>,
    pub max_questions: Option<usize>,
    pub mode: Option<UpdateMode>,
    pub seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnswerBody {
    pub answer: Option<String>,
    #[serde(default)]
    pub no_preference: bool,
}

/// Session state as returned by every endpoint. `transcript` is filled in
/// once the session has terminated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub source_id: String,
    pub question: Option<String>,
    pub question_count: usize,
    pub max_questions: usize,
    pub mode: UpdateMode,
    pub termination: Option<Termination>,
    pub reconstructed: Vec<Entry>,
    pub turns: Vec<TurnRecord>,
    pub transcript: Option<Transcript>,
}

impl SessionView {
    fn of(id: &str, s: &Session) -> Self {
        Self {
            session_id: id.to_string(),
            source_id: s.target().source_id().to_string(),
            question: s.pending_question().map(str::to_string),
            question_count: s.question_count(),
            max_questions: s.config().max_questions,
            mode: s.config().update_mode,
            termination: s.termination(),
            reconstructed: s.state().entries().to_vec(),
            turns: s.turns().iter().map(TurnRecord::from).collect(),
            transcript: s.transcript(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveMetrics {
    pub session_id: String,
    pub question_count: usize,
    pub termination: Option<Termination>,
    pub bleu: f64,
    pub rouge1_f: f64,
    #[serde(rename = "rougeL_f")]
    pub rouge_l_f: f64,
    pub per_position_scores: Vec<PositionScore>,
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

async fn create_session(
    State(st): State<Arc<AppState>>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> Result<(StatusCode, Json<SessionView>), ApiError> {
    let Json(req) = body?;
    let target = match (req.target, req.synthetic) {
        (Some(t), None) => t,
        (None, Some(spec)) => synth_profiles(&spec, 1)
            .map_err(|e| ApiError::bad_request(format!("synthetic: {e}")))?
            .remove(0),
        _ => return Err(ApiError::bad_request("give exactly one of `target` or `synthetic`")),
    };
    let index = st.created.fetch_add(1, Ordering::SeqCst);
    let mut cfg = st.defaults.clone();
    cfg.seed = req.seed.unwrap_or_else(|| session_seed(st.defaults.seed, index));
    if let Some(n) = req.max_questions {
        cfg.max_questions = n;
    }
    if let Some(mode) = req.mode {
        cfg.update_mode = mode;
    }
    let mut session = Session::new(target, cfg)?;
    let id = format!("s{index:06}");
    let st2 = st.clone();
    let (view, session) = blocking(move || {
        session.ask(st2.questioner.as_ref())?;
        Ok((SessionView::of(&id, &session), session))
    })
    .await?;
    tracing::info!(session_id = %view.session_id, source_id = %view.source_id, "session created");
    if let Some(t) = &view.transcript {
        st.append_log(t);
    }
    st.sessions
        .write()
        .unwrap_or_else(|e| e.into_inner())
        .insert(view.session_id.clone(), Arc::new(Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(view)))
}

async fn answer(
    State(st): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<AnswerBody>, JsonRejection>,
) -> Result<Json<SessionView>, ApiError> {
    let Json(body) = body?;
    let reply = match (body.answer, body.no_preference) {
        (_, true) => String::new(),
        (Some(a), false) => a,
        (None, false) => return Err(ApiError::bad_request("give `answer` or `no_preference: true`")),
    };
    let handle = st.session(&id)?;
    blocking(move || {
        let mut s = lock(&handle);
        if let Some(t) = s.termination() {
            return Err(SessionError::Terminated(t).into());
        }
        if s.pending_question().is_none() {
            // An earlier questioner failure left no question to answer.
            s.ask(st.questioner.as_ref())?;
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "no question was pending; fetch the session for the new question",
            ));
        }
        let human = HumanAnswerer {
            reply: &reply,
            no_preference: body.no_preference,
            interpreter: st.interpreter.as_ref(),
        };
        s.answer(&human)?;
        s.ask(st.questioner.as_ref())?;
        let view = SessionView::of(&id, &s);
        if let Some(t) = &view.transcript {
            st.append_log(t);
        }
        Ok(Json(view))
    })
    .await
}

async fn get_session(
    State(st): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<SessionView>, ApiError> {
    let handle = st.session(&id)?;
    let s = lock(&handle);
    Ok(Json(SessionView::of(&id, &s)))
}

async fn get_metrics(
    State(st): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<LiveMetrics>, ApiError> {
    let handle = st.session(&id)?;
    let s = lock(&handle);
    let (bleu, rouge) = score_profiles(s.state(), s.target());
    let mut prefix = s.start().clone();
    let mut per_position_scores = Vec::with_capacity(s.turns().len());
    for (k, qa) in s.turns().iter().enumerate() {
        prefix = prefix
            .apply_transition(qa)
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
        let (b, r) = score_profiles(&prefix, s.target());
        per_position_scores.push(PositionScore {
            position: k + 1,
            bleu: b,
            rouge1_f: r.rouge1_f,
            rouge_l_f: r.rouge_l_f,
        });
    }
    Ok(Json(LiveMetrics {
        session_id: id,
        question_count: s.question_count(),
        termination: s.termination(),
        bleu,
        rouge1_f: rouge.rouge1_f,
        rouge_l_f: rouge.rouge_l_f,
        per_position_scores,
    }))
}

pub fn router(state: Arc<AppState>, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/answer", post(answer))
        .route("/sessions/{id}/metrics", get(get_metrics))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

pub struct ServeOptions {
    pub addr: SocketAddr,
    pub static_dir: Option<PathBuf>,
}

/// Serves until interrupted with Ctrl-C.
pub async fn serve(state: Arc<AppState>, opts: ServeOptions) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(opts.addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state, opts.static_dir.as_deref()))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
