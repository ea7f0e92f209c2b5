use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use soundmark_core::arbiter::{AcousticContext, Scorer};
use soundmark_core::services::{
    EngineFailure, PairTranscriber, Teacher, TeacherRequest, TeacherTask,
};
use soundmark_core::{AudioClipRef, ServiceError, TranscriptionResult};
use thiserror::Error;

use crate::wire::{
    DescribeRequest, DescribeResponse, ScoreRequest, ScoreResponse, TranscribeRequest,
    TranscribeResponse,
};

/// Environment variable holding the bearer token sent to every endpoint.
pub const TOKEN_ENV: &str = "TAI_GATEWAY_TOKEN";

const MAX_BACKOFF: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    pub engine_id: String,
    pub endpoint_url: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_base_ms")]
    pub backoff_base_ms: u64,
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_max_retries() -> u32 {
    2
}

fn default_backoff_base_ms() -> u64 {
    200
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{field}: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl EngineConfig {
    pub fn new(engine_id: impl Into<String>, endpoint_url: impl Into<String>) -> Self {
        Self {
            engine_id: engine_id.into(),
            endpoint_url: endpoint_url.into(),
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            backoff_base_ms: default_backoff_base_ms(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |field: &str, message: &str| {
            Err(ConfigError {
                field: format!("{}.{field}", self.engine_id),
                message: message.to_owned(),
            })
        };
        if self.engine_id.is_empty() {
            return err("engine_id", "must be non-empty");
        }
        if reqwest::Url::parse(&self.endpoint_url).is_err() {
            return err("endpoint_url", "is not a valid URL");
        }
        if self.timeout_ms == 0 {
            return err("timeout_ms", "must be positive");
        }
        if self.backoff_base_ms == 0 {
            return err("backoff_base_ms", "must be positive");
        }
        Ok(())
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{path}", self.endpoint_url.trim_end_matches('/'))
    }

    /// Delay before retry number `retry` (1-based): base · 2^(retry−1).
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = 1u64 << (retry.saturating_sub(1)).min(20);
        Duration::from_millis(self.backoff_base_ms.saturating_mul(factor)).min(MAX_BACKOFF)
    }
}

/// Check that a set of engine configs is individually valid with unique ids.
pub fn validate_engines(engines: &[EngineConfig]) -> Result<(), ConfigError> {
    for (i, e) in engines.iter().enumerate() {
        e.validate()?;
        if engines[..i].iter().any(|o| o.engine_id == e.engine_id) {
            return Err(ConfigError {
                field: "engines".into(),
                message: format!("duplicate engine_id {:?}", e.engine_id),
            });
        }
    }
    Ok(())
}

enum Attempt<T> {
    Done(T),
    Retry(ServiceError),
    Fatal(ServiceError),
}

/// JSON-over-HTTP client shared by every engine, teacher and scorer call.
/// Cheap to clone; clones share one connection pool.
#[derive(Debug, Clone)]
pub struct GatewayClient {
    http: reqwest::Client,
    bearer: Option<String>,
}

impl Default for GatewayClient {
    fn default() -> Self {
        Self::new(std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty()))
    }
}

impl GatewayClient {
    pub fn new(bearer: Option<String>) -> Self {
        Self {
            http: reqwest::Client::new(),
            bearer,
        }
    }

    async fn attempt<Req, Resp>(&self, url: &str, body: &Req, timeout: Duration) -> Attempt<Resp>
    where
        Req: Serialize + ?Sized,
        Resp: DeserializeOwned,
    {
        let mut req = self.http.post(url).json(body).timeout(timeout);
        if let Some(token) = &self.bearer {
            req = req.bearer_auth(token);
        }
        let resp = match req.send().await {
            Ok(r) => r,
            Err(e) if e.is_timeout() => {
                return Attempt::Retry(ServiceError::Timeout {
                    attempts: 0,
                    cause: format!("no response within {} ms", timeout.as_millis()),
                })
            }
            Err(e) => {
                return Attempt::Retry(ServiceError::Timeout {
                    attempts: 0,
                    cause: format!("unreachable: {e}"),
                })
            }
        };
        let status = resp.status();
        let text = match resp.text().await {
            Ok(t) => t,
            Err(e) if e.is_timeout() => {
                return Attempt::Retry(ServiceError::Timeout {
                    attempts: 0,
                    cause: "body not received in time".into(),
                })
            }
            Err(e) => return Attempt::Fatal(ServiceError::malformed(&e.to_string())),
        };
        if !status.is_success() {
            let err = ServiceError::EngineError {
                status: status.as_u16(),
                body: soundmark_core::error::excerpt(&text, 500),
            };
            return if status.is_server_error() || status.as_u16() == 429 {
                Attempt::Retry(err)
            } else {
                Attempt::Fatal(err)
            };
        }
        match serde_json::from_str(&text) {
            Ok(v) => Attempt::Done(v),
            Err(_) => Attempt::Fatal(ServiceError::malformed(&text)),
        }
    }

    /// POST `body` to `{endpoint}/{path}` with the endpoint's timeout and
    /// retry policy. At most `1 + max_retries` requests are sent.
    pub async fn call<Req, Resp>(
        &self,
        endpoint: &EngineConfig,
        path: &str,
        body: &Req,
    ) -> Result<Resp, ServiceError>
    where
        Req: Serialize + ?Sized,
        Resp: DeserializeOwned,
    {
        let url = endpoint.url(path);
        let timeout = Duration::from_millis(endpoint.timeout_ms);
        let attempts = 1 + endpoint.max_retries;
        let mut last = None;
        for n in 1..=attempts {
            if n > 1 {
                tokio::time::sleep(endpoint.backoff(n - 1)).await;
            }
            match self.attempt(&url, body, timeout).await {
                Attempt::Done(v) => return Ok(v),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(e) => {
                    tracing::debug!(endpoint = %endpoint.engine_id, attempt = n, error = %e, "retryable failure");
                    last = Some(e);
                }
            }
        }
        Err(match last.expect("at least one attempt") {
            ServiceError::Timeout { cause, .. } => ServiceError::Timeout { attempts, cause },
            other => other,
        })
    }

    /// Transcribe one clip. The engine's text is returned verbatim; an empty
    /// string is a valid "no speech" result.
    pub async fn transcribe(
        &self,
        clip: &AudioClipRef,
        engine: &EngineConfig,
    ) -> Result<TranscriptionResult, ServiceError> {
        let started = Instant::now();
        let body = TranscribeRequest {
            uri: clip.uri.clone(),
            clip_id: Some(clip.clip_id.clone()),
            options: Default::default(),
        };
        let resp: TranscribeResponse = self.call(engine, "transcribe", &body).await?;
        Ok(TranscriptionResult {
            engine_id: engine.engine_id.clone(),
            raw_text: resp.text,
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }

    /// Send a prompt plus audio locator to the teacher; returns its text.
    pub async fn teacher_call(
        &self,
        prompt: &str,
        audio_uri: &str,
        endpoint: &EngineConfig,
        clip_id: Option<&str>,
        task: Option<TeacherTask>,
    ) -> Result<String, ServiceError> {
        let body = DescribeRequest {
            uri: audio_uri.to_owned(),
            prompt: prompt.to_owned(),
            clip_id: clip_id.map(str::to_owned),
            task,
        };
        let resp: DescribeResponse = self.call(endpoint, "describe", &body).await?;
        Ok(resp.text)
    }
}

/// Two ASR engines queried concurrently.
#[derive(Debug, Clone)]
pub struct DualAsrGateway {
    client: GatewayClient,
    engines: [EngineConfig; 2],
}

impl DualAsrGateway {
    pub fn new(client: GatewayClient, engines: [EngineConfig; 2]) -> Self {
        Self { client, engines }
    }

    pub fn engines(&self) -> &[EngineConfig; 2] {
        &self.engines
    }
}

#[async_trait]
impl PairTranscriber for DualAsrGateway {
    fn engine_ids(&self) -> [&str; 2] {
        [&self.engines[0].engine_id, &self.engines[1].engine_id]
    }

    async fn transcribe_pair(
        &self,
        clip: &AudioClipRef,
    ) -> Result<[TranscriptionResult; 2], EngineFailure> {
        let (a, b) = tokio::join!(
            self.client.transcribe(clip, &self.engines[0]),
            self.client.transcribe(clip, &self.engines[1]),
        );
        let tag = |engine: &EngineConfig| {
            let id = engine.engine_id.clone();
            move |source| EngineFailure {
                engine_id: id,
                source,
            }
        };
        let a = a.map_err(tag(&self.engines[0]))?;
        let b = b.map_err(tag(&self.engines[1]))?;
        Ok([a, b])
    }
}

#[derive(Debug, Clone)]
pub struct HttpTeacher {
    client: GatewayClient,
    endpoint: EngineConfig,
}

impl HttpTeacher {
    pub fn new(client: GatewayClient, endpoint: EngineConfig) -> Self {
        Self { client, endpoint }
    }
}

#[async_trait]
impl Teacher for HttpTeacher {
    fn endpoint_id(&self) -> &str {
        &self.endpoint.engine_id
    }

    async fn describe(&self, request: TeacherRequest<'_>) -> Result<String, ServiceError> {
        self.client
            .teacher_call(
                request.prompt,
                request.audio_uri,
                &self.endpoint,
                Some(request.clip_id),
                Some(request.task),
            )
            .await
    }
}

/// Scorer backed by a model-serving endpoint exposing per-token
/// log-probabilities. Tokenization, and hence `|h|`, is the server's.
#[derive(Debug, Clone)]
pub struct RemoteModelScorer {
    client: GatewayClient,
    endpoint: EngineConfig,
}

impl RemoteModelScorer {
    pub fn new(client: GatewayClient, endpoint: EngineConfig) -> Self {
        Self { client, endpoint }
    }
}

#[async_trait]
impl Scorer for RemoteModelScorer {
    fn backend_id(&self) -> &str {
        &self.endpoint.engine_id
    }

    async fn score(&self, text: &str, ctx: &AcousticContext) -> Result<Vec<f64>, ServiceError> {
        let body = ScoreRequest {
            text: text.to_owned(),
            context_token: ctx.context_token.clone(),
        };
        let resp: ScoreResponse = self.client.call(&self.endpoint, "score", &body).await?;
        Ok(resp.token_logprobs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles() {
        let mut e = EngineConfig::new("a", "http://localhost:1");
        e.backoff_base_ms = 100;
        assert_eq!(e.backoff(1), Duration::from_millis(100));
        assert_eq!(e.backoff(2), Duration::from_millis(200));
        assert_eq!(e.backoff(3), Duration::from_millis(400));
        assert_eq!(e.backoff(40), MAX_BACKOFF);
    }

    #[test]
    fn config_validation() {
        let ok = EngineConfig::new("a", "http://127.0.0.1:9/engines/a");
        ok.validate().unwrap();
        assert_eq!(
            ok.url("transcribe"),
            "http://127.0.0.1:9/engines/a/transcribe"
        );
        let mut bad = ok.clone();
        bad.timeout_ms = 0;
        assert_eq!(bad.validate().unwrap_err().field, "a.timeout_ms");
        let mut bad = ok.clone();
        bad.endpoint_url = "not a url".into();
        assert!(bad.validate().is_err());
        assert!(validate_engines(&[ok.clone(), ok]).is_err());
    }
}
