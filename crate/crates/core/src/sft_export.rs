//! Curated manifest → supervised fine-tuning records.

use std::collections::HashMap;

use thiserror::Error;

use crate::types::{CurationRecord, RouteDecision, SftRecord};

/// Where the ground transcript of each example comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GroundSource {
    /// The raw text of one configured engine.
    Engine(String),
    /// Arbiter selections keyed by clip_id. A clip that arbitrated to pure
    /// audio maps to `None`.
    Arbitrated(HashMap<String, Option<String>>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExportError {
    #[error("clip {clip_id:?} has no candidate from engine {engine_id:?}")]
    MissingEngine { clip_id: String, engine_id: String },
    #[error("clip {0:?} has no arbitration result")]
    MissingArbitration(String),
}

/// Whether a record contributes training examples.
pub fn is_exportable(record: &CurationRecord) -> bool {
    matches!(
        record.route,
        Some(RouteDecision::Pass { .. }) | Some(RouteDecision::BypassSoundmark)
    ) && record.critique_status.is_approved()
        && !record.pairs.is_empty()
}

fn ground_transcript(
    record: &CurationRecord,
    source: &GroundSource,
) -> Result<String, ExportError> {
    if record.route == Some(RouteDecision::BypassSoundmark) {
        return Ok(String::new());
    }
    match source {
        GroundSource::Engine(engine_id) => record
            .candidates
            .get(engine_id)
            .map(|c| c.raw_text.clone())
            .ok_or_else(|| ExportError::MissingEngine {
                clip_id: record.clip_id().to_owned(),
                engine_id: engine_id.clone(),
            }),
        GroundSource::Arbitrated(selected) => selected
            .get(record.clip_id())
            .map(|text| text.clone().unwrap_or_default())
            .ok_or_else(|| ExportError::MissingArbitration(record.clip_id().to_owned())),
    }
}

/// One [`SftRecord`] per instruction pair of every exportable record,
/// ordered by (clip_id, pair index). Pruned, unverified and rejected clips
/// emit nothing.
pub fn export_sft<'a>(
    records: impl IntoIterator<Item = &'a CurationRecord>,
    source: &GroundSource,
) -> Result<Vec<SftRecord>, ExportError> {
    let mut eligible: Vec<&CurationRecord> =
        records.into_iter().filter(|r| is_exportable(r)).collect();
    eligible.sort_by(|a, b| a.clip_id().cmp(b.clip_id()));
    let mut out = Vec::new();
    for record in eligible {
        let ground = ground_transcript(record, source)?;
        out.extend(record.pairs.iter().map(|pair| SftRecord {
            instruction: pair.instruction.clone(),
            target_response: pair.response.clone(),
            ground_transcript: ground.clone(),
            clip_uri: record.clip.uri.clone(),
        }));
    }
    Ok(out)
}
