//! Fixture-scripted stand-ins for ASR engines, the teacher and the scorer.
//!
//! Routes:
//!
//! | route                              | behaviour source                  |
//! |------------------------------------|-----------------------------------|
//! | `POST /engines/{engine}/transcribe`| `engines.{engine}`                |
//! | `POST /transcribe`                 | `engines.default`                 |
//! | `POST /teacher/describe`, `/describe` | `teacher`                      |
//! | `POST /scorer/score`, `/score`     | `scorer` (reference model)        |
//! | `GET /hits`                        | per-key request counters          |
//!
//! Requests are matched to fixture entries by `clip_id` (falling back to
//! `uri`). A behaviour is one of `text`, `empty`, `error`, `malformed`,
//! optionally preceded by `delay_ms`. `{clip_id}` inside a text is
//! substituted. Engine clips with neither an entry nor a `default` get a 404.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use soundmark_core::arbiter::ReferenceScorer;
use soundmark_core::services::TeacherTask;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use crate::wire::{DescribeRequest, ScoreRequest, ScoreResponse, TranscribeRequest};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorSpec {
    pub status: u16,
    #[serde(default)]
    pub body: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Behavior {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub empty: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorSpec>,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub malformed: bool,
    #[serde(skip_serializing_if = "is_zero")]
    pub delay_ms: u64,
}

fn is_zero(v: &u64) -> bool {
    *v == 0
}

impl Behavior {
    pub fn text(t: impl Into<String>) -> Self {
        Self {
            text: Some(t.into()),
            ..Self::default()
        }
    }

    pub fn empty() -> Self {
        Self {
            empty: true,
            ..Self::default()
        }
    }

    pub fn error(status: u16, body: impl Into<String>) -> Self {
        Self {
            error: Some(ErrorSpec {
                status,
                body: body.into(),
            }),
            ..Self::default()
        }
    }

    pub fn malformed() -> Self {
        Self {
            malformed: true,
            ..Self::default()
        }
    }

    pub fn delayed(mut self, delay_ms: u64) -> Self {
        self.delay_ms = delay_ms;
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineFixture {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub default: Option<Behavior>,
    pub clips: BTreeMap<String, Behavior>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherBehavior {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generate: Option<Behavior>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub critique: Option<Behavior>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expand: Option<Behavior>,
}

impl TeacherBehavior {
    fn for_task(&self, task: TeacherTask) -> Option<&Behavior> {
        match task {
            TeacherTask::Generate => self.generate.as_ref(),
            TeacherTask::Critique => self.critique.as_ref(),
            TeacherTask::Expand => self.expand.as_ref(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherFixture {
    pub default: TeacherBehavior,
    pub clips: BTreeMap<String, TeacherBehavior>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerFixture {
    pub seed: u64,
    /// Texts for which the scorer answers 500.
    pub fail_texts: Vec<String>,
    pub delay_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fixture {
    pub engines: BTreeMap<String, EngineFixture>,
    pub teacher: TeacherFixture,
    pub scorer: ScorerFixture,
}

impl Fixture {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, FixtureError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| FixtureError(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| FixtureError(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(
            path,
            serde_json::to_string_pretty(self).expect("fixture serializes"),
        )
    }

    pub fn engine(&mut self, engine_id: &str) -> &mut EngineFixture {
        self.engines.entry(engine_id.to_owned()).or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid fixture: {0}")]
pub struct FixtureError(String);

fn default_teacher_text(task: TeacherTask) -> &'static str {
    match task {
        TeacherTask::Generate => "Ambient sounds recorded in clip {clip_id}.",
        TeacherTask::Critique => "ACCEPT",
        TeacherTask::Expand => {
            "Q: What can be heard in this recording?\nA: Ambient sounds recorded in clip {clip_id}."
        }
    }
}

struct MockState {
    fixture: Fixture,
    scorer: ReferenceScorer,
    hits: Mutex<HashMap<String, u64>>,
    describe_log: Mutex<Vec<DescribeRequest>>,
}

impl MockState {
    fn hit(&self, key: String) {
        *self.hits.lock().unwrap().entry(key).or_default() += 1;
    }
}

async fn respond(behavior: &Behavior, clip_id: &str) -> Response {
    if behavior.delay_ms > 0 {
        tokio::time::sleep(Duration::from_millis(behavior.delay_ms)).await;
    }
    if let Some(err) = &behavior.error {
        let status = StatusCode::from_u16(err.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        return (status, err.body.clone()).into_response();
    }
    if behavior.malformed {
        return (StatusCode::OK, "<<not json>>").into_response();
    }
    let text = if behavior.empty {
        String::new()
    } else {
        behavior
            .text
            .clone()
            .unwrap_or_default()
            .replace("{clip_id}", clip_id)
    };
    Json(serde_json::json!({ "text": text })).into_response()
}

fn request_key(clip_id: &Option<String>, uri: &str) -> String {
    clip_id.clone().unwrap_or_else(|| uri.to_owned())
}

async fn transcribe(
    State(state): State<Arc<MockState>>,
    UrlPath(engine): UrlPath<String>,
    Json(req): Json<TranscribeRequest>,
) -> Response {
    transcribe_for(&state, &engine, req).await
}

async fn transcribe_default(
    State(state): State<Arc<MockState>>,
    Json(req): Json<TranscribeRequest>,
) -> Response {
    transcribe_for(&state, "default", req).await
}

async fn transcribe_for(state: &MockState, engine: &str, req: TranscribeRequest) -> Response {
    let key = request_key(&req.clip_id, &req.uri);
    state.hit(format!("{engine}/{key}"));
    let Some(fixture) = state.fixture.engines.get(engine) else {
        return (StatusCode::NOT_FOUND, format!("unknown engine {engine}")).into_response();
    };
    match fixture.clips.get(&key).or(fixture.default.as_ref()) {
        Some(behavior) => respond(behavior, &key).await,
        None => (StatusCode::NOT_FOUND, format!("unscripted clip {key}")).into_response(),
    }
}

async fn describe(
    State(state): State<Arc<MockState>>,
    Json(req): Json<DescribeRequest>,
) -> Response {
    let key = request_key(&req.clip_id, &req.uri);
    let task = req.task.unwrap_or(TeacherTask::Generate);
    state.hit(format!("teacher/{}/{key}", task_name(task)));
    state.describe_log.lock().unwrap().push(req);
    let teacher = &state.fixture.teacher;
    let behavior = teacher
        .clips
        .get(&key)
        .and_then(|b| b.for_task(task))
        .or_else(|| teacher.default.for_task(task))
        .cloned()
        .unwrap_or_else(|| Behavior::text(default_teacher_text(task)));
    respond(&behavior, &key).await
}

async fn score(State(state): State<Arc<MockState>>, Json(req): Json<ScoreRequest>) -> Response {
    state.hit("scorer".into());
    let fx = &state.fixture.scorer;
    if fx.delay_ms > 0 {
        tokio::time::sleep(Duration::from_millis(fx.delay_ms)).await;
    }
    if fx.fail_texts.contains(&req.text) {
        return (StatusCode::INTERNAL_SERVER_ERROR, "scripted scorer failure").into_response();
    }
    Json(ScoreResponse {
        token_logprobs: state.scorer.logprobs(&req.text, &req.context_token),
    })
    .into_response()
}

async fn hits(State(state): State<Arc<MockState>>) -> Json<BTreeMap<String, u64>> {
    Json(
        state
            .hits
            .lock()
            .unwrap()
            .iter()
            .map(|(k, v)| (k.clone(), *v))
            .collect(),
    )
}

fn task_name(task: TeacherTask) -> &'static str {
    match task {
        TeacherTask::Generate => "generate",
        TeacherTask::Critique => "critique",
        TeacherTask::Expand => "expand",
    }
}

fn router(state: Arc<MockState>) -> Router {
    Router::new()
        .route("/engines/{engine}/transcribe", post(transcribe))
        .route("/transcribe", post(transcribe_default))
        .route("/teacher/describe", post(describe))
        .route("/describe", post(describe))
        .route("/scorer/score", post(score))
        .route("/score", post(score))
        .route("/hits", get(hits))
        .with_state(state)
}

/// A running mock server. Shuts down when dropped.
pub struct MockServer {
    addr: SocketAddr,
    state: Arc<MockState>,
    shutdown: Option<oneshot::Sender<()>>,
    task: Option<JoinHandle<()>>,
}

impl MockServer {
    /// Bind to an ephemeral localhost port.
    pub async fn start(fixture: Fixture) -> std::io::Result<Self> {
        Self::bind(fixture, SocketAddr::from(([127, 0, 0, 1], 0))).await
    }

    pub async fn bind(fixture: Fixture, addr: SocketAddr) -> std::io::Result<Self> {
        let listener = TcpListener::bind(addr).await?;
        let addr = listener.local_addr()?;
        let state = Arc::new(MockState {
            scorer: ReferenceScorer::new(fixture.scorer.seed),
            fixture,
            hits: Mutex::new(HashMap::new()),
            describe_log: Mutex::new(Vec::new()),
        });
        let (tx, rx) = oneshot::channel();
        let app = router(state.clone());
        let task = tokio::spawn(async move {
            let serve = axum::serve(listener, app).with_graceful_shutdown(async {
                let _ = rx.await;
            });
            if let Err(e) = serve.await {
                tracing::error!(error = %e, "mock server stopped");
            }
        });
        Ok(Self {
            addr,
            state,
            shutdown: Some(tx),
            task: Some(task),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn engine_url(&self, engine_id: &str) -> String {
        format!("{}/engines/{engine_id}", self.base_url())
    }

    pub fn teacher_url(&self) -> String {
        format!("{}/teacher", self.base_url())
    }

    pub fn scorer_url(&self) -> String {
        format!("{}/scorer", self.base_url())
    }

    /// Requests seen for `key`: `"{engine}/{clip_id}"`,
    /// `"teacher/{task}/{clip_id}"` or `"scorer"`.
    pub fn hits(&self, key: &str) -> u64 {
        self.state
            .hits
            .lock()
            .unwrap()
            .get(key)
            .copied()
            .unwrap_or(0)
    }

    pub fn total_hits(&self) -> u64 {
        self.state.hits.lock().unwrap().values().sum()
    }

    /// Every teacher request body received so far.
    pub fn describe_log(&self) -> Vec<DescribeRequest> {
        self.state.describe_log.lock().unwrap().clone()
    }

    /// Serve until the process is interrupted.
    pub async fn run_until_ctrl_c(mut self) {
        let _ = tokio::signal::ctrl_c().await;
        self.stop().await;
    }

    pub async fn stop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(task) = self.task.take() {
            let _ = task.await;
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}
