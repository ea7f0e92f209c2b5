//! Contracts for the external services the pipeline talks to.
//!
//! HTTP implementations live in the gateway crate; tests substitute
//! in-memory fakes.

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ServiceError;
use crate::types::{AudioClipRef, TranscriptionResult};

/// A failed call within a two-engine fanout, tagged with the engine.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("engine {engine_id}: {source}")]
pub struct EngineFailure {
    pub engine_id: String,
    #[source]
    pub source: ServiceError,
}

/// Two heterogeneous ASR engines queried together.
#[async_trait]
pub trait PairTranscriber: Send + Sync {
    /// Engine ids in configured order.
    fn engine_ids(&self) -> [&str; 2];

    /// Transcribe one clip with both engines. Results are in configured
    /// order; any single failure fails the pair.
    async fn transcribe_pair(
        &self,
        clip: &AudioClipRef,
    ) -> Result<[TranscriptionResult; 2], EngineFailure>;
}

/// Which step of the curation protocol a teacher request belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherTask {
    Generate,
    Critique,
    Expand,
}

#[derive(Debug, Clone, Copy)]
pub struct TeacherRequest<'a> {
    pub task: TeacherTask,
    pub clip_id: &'a str,
    pub audio_uri: &'a str,
    pub prompt: &'a str,
}

/// A native-audio teacher model.
#[async_trait]
pub trait Teacher: Send + Sync {
    fn endpoint_id(&self) -> &str;

    /// Return the teacher's response text verbatim.
    async fn describe(&self, request: TeacherRequest<'_>) -> Result<String, ServiceError>;
}
