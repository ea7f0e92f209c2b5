//! Stage-at-a-time curation runner with bounded concurrency and
//! per-stage checkpoints.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::router::{route, RouterConfig};
use super::stages::{apply_critique, critique_caption, expand_instructions, generate_caption};
use super::PromptTemplates;
use crate::error::ManifestError;
use crate::manifest::{read_manifest, write_manifest, MalformedPolicy};
use crate::services::{PairTranscriber, Teacher};
use crate::similarity::{normalize_text, NormalizerConfig};
use crate::types::{Candidate, CandidateSet, CritiqueStatus, CurationRecord, RouteDecision};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Verify,
    Generate,
    Critique,
    Expand,
}

impl Stage {
    pub const ALL: [Stage; 4] = [
        Stage::Verify,
        Stage::Generate,
        Stage::Critique,
        Stage::Expand,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Stage::Verify => "verify",
            Stage::Generate => "generate",
            Stage::Critique => "critique",
            Stage::Expand => "expand",
        }
    }

    fn checkpoint_file(&self) -> String {
        format!("{}-{}.jsonl", *self as usize + 1, self.name())
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub router: RouterConfig,
    pub normalizer: NormalizerConfig,
    pub templates: PromptTemplates,
    pub workers: usize,
    pub max_pairs_per_clip: usize,
    /// RFC 3339 timestamp stamped on every new instruction pair.
    pub timestamp: String,
    /// Emit a progress line every this many clips per stage (0 disables).
    pub progress_every: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            router: RouterConfig::default(),
            normalizer: NormalizerConfig::default(),
            templates: PromptTemplates::default(),
            workers: 16,
            max_pairs_per_clip: super::DEFAULT_MAX_PAIRS_PER_CLIP,
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            progress_every: 1000,
        }
    }
}

/// The services a run talks to. The teacher is only needed for the
/// generate, critique and expand stages.
#[derive(Clone, Copy)]
pub struct Services<'a> {
    pub transcriber: &'a dyn PairTranscriber,
    pub teacher: Option<&'a dyn Teacher>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipError {
    pub clip_id: String,
    pub stage: Stage,
    pub message: String,
}

/// Totals for one run. `raw = bypass + pass + pruned + errored`; a clip that
/// failed at any stage in this run is counted only as errored.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub raw: usize,
    pub bypass: usize,
    pub pass: usize,
    pub pruned: usize,
    pub errored: usize,
    pub pairs: usize,
    pub rejected_by_critique: usize,
    pub errors: Vec<ClipError>,
    /// Approved clips for which the teacher produced no usable pair.
    pub clips_without_pairs: Vec<String>,
}

impl RunReport {
    pub fn has_failures(&self) -> bool {
        self.errored > 0
    }

    fn tally(records: &[CurationRecord], errors: BTreeMap<String, ClipError>) -> Self {
        let mut report = RunReport {
            raw: records.len(),
            ..RunReport::default()
        };
        for r in records {
            if errors.contains_key(r.clip_id()) {
                continue;
            }
            match r.route {
                Some(RouteDecision::BypassSoundmark) => report.bypass += 1,
                Some(RouteDecision::Pass { .. }) => report.pass += 1,
                Some(RouteDecision::Pruned { .. }) => report.pruned += 1,
                None => {
                    report.errored += 1;
                    continue;
                }
            }
            report.pairs += r.pairs.len();
            if matches!(r.critique_status, CritiqueStatus::Rejected(_)) {
                report.rejected_by_critique += 1;
            }
            if r.critique_status.is_approved() && r.pairs.is_empty() {
                report.clips_without_pairs.push(r.clip_id().to_owned());
            }
        }
        report.errored += errors.len();
        report.errors = errors.into_values().collect();
        report
    }

    /// Human-readable `key: value` summary.
    pub fn render_text(&self) -> String {
        let mut out = format!(
            "raw: {}\nbypass: {}\npass: {}\npruned: {}\nerrored: {}\npairs: {}\nrejected_by_critique: {}\n",
            self.raw, self.bypass, self.pass, self.pruned, self.errored, self.pairs,
            self.rejected_by_critique
        );
        for e in &self.errors {
            out.push_str(&format!(
                "error: {} [{}] {}\n",
                e.clip_id,
                e.stage.name(),
                e.message
            ));
        }
        out
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("stage {0} needs a teacher endpoint")]
    MissingTeacher(&'static str),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] ManifestError),
    #[error("checkpoint directory {path}: {source}")]
    CheckpointDir {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Directory holding one full manifest per completed stage.
#[derive(Debug, Clone)]
pub struct Checkpoints {
    dir: PathBuf,
}

impl Checkpoints {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, stage: Stage) -> PathBuf {
        self.dir.join(stage.checkpoint_file())
    }

    /// Latest completed stage checkpoint among `stages`, if any.
    pub fn latest(&self, stages: &[Stage]) -> Option<(Stage, PathBuf)> {
        stages
            .iter()
            .rev()
            .map(|&s| (s, self.path(s)))
            .find(|(_, p)| p.is_file())
    }
}

/// Build the candidate set for a clip from raw engine results.
pub fn candidates_from_results(
    clip_id: &str,
    results: &[crate::types::TranscriptionResult],
    normalizer: &NormalizerConfig,
) -> CandidateSet {
    CandidateSet::new(
        clip_id,
        results
            .iter()
            .map(|r| Candidate {
                engine_id: r.engine_id.clone(),
                raw_text: r.raw_text.clone(),
                normalized_text: normalize_text(&r.raw_text, normalizer),
            })
            .collect(),
    )
}

async fn step(
    stage: Stage,
    mut record: CurationRecord,
    opts: &RunOptions,
    services: Services<'_>,
) -> (CurationRecord, Option<ClipError>) {
    let fail = |message: String| ClipError {
        clip_id: String::new(),
        stage,
        message,
    };
    let outcome: Result<(), ClipError> = match stage {
        Stage::Verify => {
            if record.route.is_some() {
                Ok(())
            } else {
                match services.transcriber.transcribe_pair(&record.clip).await {
                    Ok(results) => {
                        let set =
                            candidates_from_results(record.clip_id(), &results, &opts.normalizer);
                        match route(&set, &opts.router) {
                            Ok(decision) => {
                                record.candidates = set;
                                record.route = Some(decision);
                                Ok(())
                            }
                            Err(e) => Err(fail(e.to_string())),
                        }
                    }
                    Err(e) => Err(fail(e.to_string())),
                }
            }
        }
        Stage::Generate => {
            let eligible = matches!(
                record.route,
                Some(RouteDecision::Pass { .. }) | Some(RouteDecision::BypassSoundmark)
            ) && record.caption.is_none()
                && record.critique_status == CritiqueStatus::NotRun;
            if !eligible {
                Ok(())
            } else {
                let teacher = services.teacher.expect("teacher checked before run");
                match generate_caption(&record, &opts.templates, teacher).await {
                    Ok(caption) => {
                        record.caption = Some(caption);
                        Ok(())
                    }
                    Err(e) => Err(fail(e.to_string())),
                }
            }
        }
        Stage::Critique => {
            if record.caption.is_none() || record.critique_status != CritiqueStatus::NotRun {
                Ok(())
            } else {
                let teacher = services.teacher.expect("teacher checked before run");
                match critique_caption(&record, &opts.templates, teacher).await {
                    Ok(status) => {
                        apply_critique(&mut record, status);
                        Ok(())
                    }
                    Err(e) => Err(fail(e.to_string())),
                }
            }
        }
        Stage::Expand => {
            let eligible = record.critique_status.is_approved()
                && record.pairs.is_empty()
                && !record.route.is_some_and(|r| r.is_pruned());
            if !eligible {
                Ok(())
            } else {
                let teacher = services.teacher.expect("teacher checked before run");
                match expand_instructions(
                    &record,
                    &opts.templates,
                    teacher,
                    opts.max_pairs_per_clip,
                    &opts.timestamp,
                )
                .await
                {
                    Ok(pairs) => {
                        if pairs.is_empty() {
                            tracing::warn!(
                                clip_id = record.clip_id(),
                                "teacher produced no usable instruction pairs"
                            );
                        }
                        record.pairs = pairs;
                        Ok(())
                    }
                    Err(e) => Err(fail(e.to_string())),
                }
            }
        }
    };
    let error = outcome.err().map(|mut e| {
        e.clip_id = record.clip_id().to_owned();
        e
    });
    (record, error)
}

/// Run one stage over every record with at most `opts.workers` clips in
/// flight. Output is ordered by clip_id.
pub async fn run_stage(
    stage: Stage,
    records: Vec<CurationRecord>,
    opts: &RunOptions,
    services: Services<'_>,
) -> (Vec<CurationRecord>, Vec<ClipError>) {
    let total = records.len();
    let done = AtomicUsize::new(0);
    let results: Vec<_> = stream::iter(records)
        .map(|record| {
            let done = &done;
            async move {
                let out = step(stage, record, opts, services).await;
                let n = done.fetch_add(1, Ordering::Relaxed) + 1;
                if opts.progress_every > 0 && (n.is_multiple_of(opts.progress_every) || n == total) {
                    tracing::info!(stage = stage.name(), done = n, total, "progress");
                }
                out
            }
        })
        .buffer_unordered(opts.workers.max(1))
        .collect()
        .await;

    let mut records = Vec::with_capacity(results.len());
    let mut errors = Vec::new();
    for (record, error) in results {
        records.push(record);
        errors.extend(error);
    }
    records.sort_by(|a, b| a.clip.clip_id.cmp(&b.clip.clip_id));
    errors.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    (records, errors)
}

/// Run `stages` in order over `records`.
///
/// Per-clip failures are isolated and reported; they never abort the run.
/// With checkpoints, the newest existing stage manifest replaces `records`
/// as input and each completed stage writes its own manifest. Stages skip
/// clips that already carry their output, so re-running on a finished
/// manifest makes no service calls and changes nothing.
pub async fn run_pipeline(
    records: Vec<CurationRecord>,
    stages: &[Stage],
    opts: &RunOptions,
    services: Services<'_>,
    checkpoints: Option<&Checkpoints>,
) -> Result<(Vec<CurationRecord>, RunReport), PipelineError> {
    if let Some(stage) = stages.iter().find(|s| **s != Stage::Verify) {
        if services.teacher.is_none() {
            return Err(PipelineError::MissingTeacher(stage.name()));
        }
    }
    let mut records = records;
    if let Some(cp) = checkpoints {
        fs::create_dir_all(cp.dir()).map_err(|source| PipelineError::CheckpointDir {
            path: cp.dir().to_path_buf(),
            source,
        })?;
        if let Some((stage, path)) = cp.latest(stages) {
            tracing::info!(stage = stage.name(), path = %path.display(), "resuming from checkpoint");
            records = read_manifest(&path, MalformedPolicy::Abort)?.0;
        }
    }

    let mut errors: BTreeMap<String, ClipError> = BTreeMap::new();
    for &stage in stages {
        let (next, stage_errors) = run_stage(stage, records, opts, services).await;
        records = next;
        for e in stage_errors {
            errors.entry(e.clip_id.clone()).or_insert(e);
        }
        if let Some(cp) = checkpoints {
            write_manifest(cp.path(stage), &records)?;
        }
    }
    let report = RunReport::tally(&records, errors);
    Ok((records, report))
}
