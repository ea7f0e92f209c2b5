//! Dual-ASR audio corpus curation and transcription arbitration.
//!
//! The crate is organised by pipeline role:
//!
//! - [`types`] and [`manifest`]: per-clip curation state and its
//!   line-delimited on-disk format.
//! - [`similarity`]: transcript normalization and the consistency score.
//! - [`vgc`]: verify / generate / critique curation and the batch runner.
//! - [`arbiter`]: perplexity-based selection among ASR hypotheses.
//! - [`stats`] and [`sft_export`]: reporting and training-data export.
//!
//! External services (ASR engines, the teacher model, the scorer) are
//! reached through the traits in [`services`] and [`arbiter::Scorer`].

pub mod arbiter;
pub mod error;
pub mod manifest;
pub mod services;
pub mod sft_export;
pub mod similarity;
pub mod stats;
pub mod types;
pub mod vgc;

pub use error::{InvariantError, ManifestError, ServiceError};
pub use types::{
    AudioClipRef, Candidate, CandidateSet, CritiqueStatus, CurationRecord, InstructionPair,
    LabelTag, Provenance, RouteDecision, RouteKind, SftRecord, TranscriptionResult,
};
