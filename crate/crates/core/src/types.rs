//! Domain types shared by every pipeline stage.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::InvariantError;

/// One raw audio clip, referenced by locator only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioClipRef {
    pub clip_id: String,
    pub uri: String,
    pub duration_seconds: f64,
    pub source_tag: String,
}

impl AudioClipRef {
    pub fn new(
        clip_id: impl Into<String>,
        uri: impl Into<String>,
        duration_seconds: f64,
        source_tag: impl Into<String>,
    ) -> Self {
        Self {
            clip_id: clip_id.into(),
            uri: uri.into(),
            duration_seconds,
            source_tag: source_tag.into(),
        }
    }

    pub fn validate(&self) -> Result<(), InvariantError> {
        if self.clip_id.is_empty() {
            return Err(InvariantError::new("", "clip_id", "must be non-empty"));
        }
        if !self.duration_seconds.is_finite() || self.duration_seconds < 0.0 {
            return Err(InvariantError::new(
                &self.clip_id,
                "duration_seconds",
                format!("must be a finite value >= 0, got {}", self.duration_seconds),
            ));
        }
        Ok(())
    }
}

/// A single engine hypothesis for a clip.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub engine_id: String,
    /// Engine output verbatim. Empty means the engine heard no speech.
    pub raw_text: String,
    pub normalized_text: String,
}

/// Per-engine transcriptions of one clip, in configured engine order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CandidateSet {
    pub clip_id: String,
    pub candidates: Vec<Candidate>,
}

impl CandidateSet {
    pub fn new(clip_id: impl Into<String>, candidates: Vec<Candidate>) -> Self {
        Self {
            clip_id: clip_id.into(),
            candidates,
        }
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn get(&self, engine_id: &str) -> Option<&Candidate> {
        self.candidates.iter().find(|c| c.engine_id == engine_id)
    }

    /// True when every candidate normalizes to the empty string.
    pub fn all_empty(&self) -> bool {
        self.candidates.iter().all(|c| c.normalized_text.is_empty())
    }
}

/// Outcome of the Verify stage for one clip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RouteDecision {
    /// Both engines returned empty text; the text check was skipped.
    BypassSoundmark,
    Pass {
        score: f64,
    },
    Pruned {
        score: f64,
    },
}

impl RouteDecision {
    pub fn score(&self) -> Option<f64> {
        match *self {
            RouteDecision::BypassSoundmark => None,
            RouteDecision::Pass { score } | RouteDecision::Pruned { score } => Some(score),
        }
    }

    pub fn is_pruned(&self) -> bool {
        matches!(self, RouteDecision::Pruned { .. })
    }

    pub fn kind(&self) -> RouteKind {
        match self {
            RouteDecision::BypassSoundmark => RouteKind::BypassSoundmark,
            RouteDecision::Pass { .. } => RouteKind::Pass,
            RouteDecision::Pruned { .. } => RouteKind::Pruned,
        }
    }
}

/// Score-free tag of a [`RouteDecision`], as written in manifests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteKind {
    BypassSoundmark,
    Pass,
    Pruned,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum CritiqueStatus {
    #[default]
    NotRun,
    Accepted,
    Revised(String),
    Rejected(String),
}

impl CritiqueStatus {
    /// Accepted or Revised: the caption survived the audit.
    pub fn is_approved(&self) -> bool {
        matches!(self, CritiqueStatus::Accepted | CritiqueStatus::Revised(_))
    }
}

/// Socio-functional label. Closed set of nine categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LabelTag {
    Conversation,
    Entertainment,
    Education,
    Music,
    Others,
    Announcement,
    Media,
    Emergency,
    Cultural,
}

impl LabelTag {
    pub const ALL: [LabelTag; 9] = [
        LabelTag::Conversation,
        LabelTag::Entertainment,
        LabelTag::Education,
        LabelTag::Music,
        LabelTag::Others,
        LabelTag::Announcement,
        LabelTag::Media,
        LabelTag::Emergency,
        LabelTag::Cultural,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            LabelTag::Conversation => "Conversation",
            LabelTag::Entertainment => "Entertainment",
            LabelTag::Education => "Education",
            LabelTag::Music => "Music",
            LabelTag::Others => "Others",
            LabelTag::Announcement => "Announcement",
            LabelTag::Media => "Media",
            LabelTag::Emergency => "Emergency",
            LabelTag::Cultural => "Cultural",
        }
    }

    pub fn index(&self) -> usize {
        *self as usize
    }
}

impl fmt::Display for LabelTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LabelTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LabelTag::ALL
            .iter()
            .copied()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown label {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub teacher_endpoint_id: String,
    pub prompt_template_id: String,
    /// UTC, RFC 3339.
    pub timestamp: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstructionPair {
    pub instruction: String,
    pub response: String,
    pub clip_id: String,
    pub provenance: Provenance,
}

/// Full curation state of one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct CurationRecord {
    pub clip: AudioClipRef,
    pub candidates: CandidateSet,
    /// `None` until the Verify stage has produced a decision.
    pub route: Option<RouteDecision>,
    pub caption: Option<String>,
    pub critique_status: CritiqueStatus,
    pub labels: BTreeSet<LabelTag>,
    pub pairs: Vec<InstructionPair>,
}

impl CurationRecord {
    /// A fresh record that has not been through any stage.
    pub fn unprocessed(clip: AudioClipRef) -> Self {
        let clip_id = clip.clip_id.clone();
        Self {
            clip,
            candidates: CandidateSet::new(clip_id, Vec::new()),
            route: None,
            caption: None,
            critique_status: CritiqueStatus::NotRun,
            labels: BTreeSet::new(),
            pairs: Vec::new(),
        }
    }

    pub fn clip_id(&self) -> &str {
        &self.clip.clip_id
    }

    pub fn validate(&self) -> Result<(), InvariantError> {
        self.clip.validate()?;
        let id = self.clip_id();
        if !self.candidates.is_empty() && self.candidates.clip_id != id {
            return Err(InvariantError::new(
                id,
                "candidates",
                format!("belong to clip {:?}", self.candidates.clip_id),
            ));
        }
        let mut engines = BTreeSet::new();
        for c in &self.candidates.candidates {
            if c.engine_id.is_empty() {
                return Err(InvariantError::new(id, "candidates", "empty engine_id"));
            }
            if !engines.insert(c.engine_id.as_str()) {
                return Err(InvariantError::new(
                    id,
                    "candidates",
                    format!("duplicate engine_id {:?}", c.engine_id),
                ));
            }
        }
        if let Some(score) = self.route.and_then(|r| r.score()) {
            if !(0.0..=1.0).contains(&score) {
                return Err(InvariantError::new(
                    id,
                    "score",
                    format!("must lie in [0, 1], got {score}"),
                ));
            }
        }
        if matches!(self.route, Some(RouteDecision::Pruned { .. })) {
            if self.caption.is_some() {
                return Err(InvariantError::new(
                    id,
                    "caption",
                    "pruned clip carries a caption",
                ));
            }
            if !self.pairs.is_empty() {
                return Err(InvariantError::new(
                    id,
                    "pairs",
                    "pruned clip carries instruction pairs",
                ));
            }
        }
        if !self.pairs.is_empty() && !self.critique_status.is_approved() {
            return Err(InvariantError::new(
                id,
                "pairs",
                "instruction pairs require an accepted or revised critique",
            ));
        }
        for (i, pair) in self.pairs.iter().enumerate() {
            if pair.instruction.trim().is_empty() || pair.response.trim().is_empty() {
                return Err(InvariantError::new(
                    id,
                    "pairs",
                    format!("pair {i} has an empty instruction or response"),
                ));
            }
            if pair.clip_id != id {
                return Err(InvariantError::new(
                    id,
                    "pairs",
                    format!("pair {i} references clip {:?}", pair.clip_id),
                ));
            }
        }
        Ok(())
    }
}

/// Result of one ASR engine call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranscriptionResult {
    pub engine_id: String,
    /// Empty string means the engine detected no speech.
    pub raw_text: String,
    pub latency_ms: u64,
}

/// One supervised fine-tuning example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    pub instruction: String,
    /// Target response Y.
    pub target_response: String,
    /// Ground transcript injected as text conditioning. Empty for soundmark clips.
    pub ground_transcript: String,
    pub clip_uri: String,
}
