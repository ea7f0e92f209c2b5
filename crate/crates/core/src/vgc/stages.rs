//! The teacher-facing stages: caption generation, critique and
//! instruction expansion. Each takes the current record and returns the
//! stage result without mutating the record.

use thiserror::Error;

use super::prompts::{parse_instruction_pairs, parse_verdict, PromptTemplates};
use crate::error::ServiceError;
use crate::services::{Teacher, TeacherRequest, TeacherTask};
use crate::types::{CritiqueStatus, CurationRecord, InstructionPair, Provenance, RouteDecision};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StageError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Service(#[from] ServiceError),
}

pub const DEFAULT_MAX_PAIRS_PER_CLIP: usize = 4;

/// Ask the teacher for an acoustic caption. Only the audio locator reaches
/// the prompt.
pub async fn generate_caption(
    record: &CurationRecord,
    templates: &PromptTemplates,
    teacher: &dyn Teacher,
) -> Result<String, StageError> {
    match record.route {
        Some(RouteDecision::Pass { .. }) | Some(RouteDecision::BypassSoundmark) => {}
        Some(RouteDecision::Pruned { .. }) => {
            return Err(StageError::Precondition(format!(
                "clip {} was pruned at verify",
                record.clip_id()
            )))
        }
        None => {
            return Err(StageError::Precondition(format!(
                "clip {} has not been verified",
                record.clip_id()
            )))
        }
    }
    let prompt = templates.generate_prompt(&record.clip.uri);
    let caption = teacher
        .describe(TeacherRequest {
            task: TeacherTask::Generate,
            clip_id: record.clip_id(),
            audio_uri: &record.clip.uri,
            prompt: &prompt,
        })
        .await?;
    let caption = caption.trim();
    if caption.is_empty() {
        return Err(ServiceError::malformed("empty caption").into());
    }
    Ok(caption.to_owned())
}

/// Audit a caption with the teacher and parse its verdict.
pub async fn critique_caption(
    record: &CurationRecord,
    templates: &PromptTemplates,
    teacher: &dyn Teacher,
) -> Result<CritiqueStatus, StageError> {
    let caption = record.caption.as_deref().ok_or_else(|| {
        StageError::Precondition(format!("clip {} has no caption", record.clip_id()))
    })?;
    let prompt = templates.critique_prompt(&record.clip.uri, caption);
    let response = teacher
        .describe(TeacherRequest {
            task: TeacherTask::Critique,
            clip_id: record.clip_id(),
            audio_uri: &record.clip.uri,
            prompt: &prompt,
        })
        .await?;
    parse_verdict(&response).map_err(|_| ServiceError::malformed(&response).into())
}

/// Fold a critique verdict into the record. A revision replaces the caption;
/// a rejection drops it while keeping the clip.
pub fn apply_critique(record: &mut CurationRecord, status: CritiqueStatus) {
    match &status {
        CritiqueStatus::Revised(text) => record.caption = Some(text.clone()),
        CritiqueStatus::Rejected(_) => record.caption = None,
        CritiqueStatus::Accepted | CritiqueStatus::NotRun => {}
    }
    record.critique_status = status;
}

/// Expand an audited caption into instruction-response pairs.
///
/// Returns an empty list (not an error) if the teacher produced no usable
/// pair; the caller decides whether that deserves a diagnostic.
pub async fn expand_instructions(
    record: &CurationRecord,
    templates: &PromptTemplates,
    teacher: &dyn Teacher,
    max_pairs: usize,
    timestamp: &str,
) -> Result<Vec<InstructionPair>, StageError> {
    if !record.critique_status.is_approved() {
        return Err(StageError::Precondition(format!(
            "clip {} critique status is {:?}",
            record.clip_id(),
            record.critique_status
        )));
    }
    let caption = record.caption.as_deref().ok_or_else(|| {
        StageError::Precondition(format!("clip {} has no caption", record.clip_id()))
    })?;
    let prompt = templates.expand_prompt(&record.clip.uri, caption, max_pairs);
    let response = teacher
        .describe(TeacherRequest {
            task: TeacherTask::Expand,
            clip_id: record.clip_id(),
            audio_uri: &record.clip.uri,
            prompt: &prompt,
        })
        .await?;
    let provenance = Provenance {
        teacher_endpoint_id: teacher.endpoint_id().to_owned(),
        prompt_template_id: templates.template_id.clone(),
        timestamp: timestamp.to_owned(),
    };
    Ok(parse_instruction_pairs(&response, max_pairs)
        .into_iter()
        .map(|(instruction, response)| InstructionPair {
            instruction,
            response,
            clip_id: record.clip_id().to_owned(),
            provenance: provenance.clone(),
        })
        .collect())
}
