//! Line-delimited manifest format.
//!
//! Every line is one JSON object whose keys appear in this fixed order:
//!
//! ```text
//! clip_id, uri, duration_seconds, source_tag, candidates, route, score,
//! caption, critique_status, labels, pairs
//! ```
//!
//! `route` is one of `"bypass_soundmark"`, `"pass"`, `"pruned"` or `null`
//! (not yet verified); `score` is `null` unless the route is `pass` or
//! `pruned`. `critique_status` is an object tagged by `state`
//! (`not_run`, `accepted`, `revised` + `text`, `rejected` + `reason`).
//!
//! Files are written to a `.partial` sibling and renamed into place on
//! success, so a reader never observes a half-written manifest.

use std::collections::{BTreeSet, HashSet};
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{InvariantError, ManifestError};
use crate::types::{
    AudioClipRef, Candidate, CandidateSet, CritiqueStatus, CurationRecord, InstructionPair,
    LabelTag, Provenance, RouteDecision, RouteKind, SftRecord,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestLine {
    clip_id: String,
    uri: String,
    duration_seconds: f64,
    source_tag: String,
    candidates: Vec<Candidate>,
    route: Option<RouteKind>,
    score: Option<f64>,
    caption: Option<String>,
    critique_status: WireCritique,
    labels: BTreeSet<LabelTag>,
    pairs: Vec<WirePair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case", deny_unknown_fields)]
enum WireCritique {
    NotRun,
    Accepted,
    Revised { text: String },
    Rejected { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WirePair {
    instruction: String,
    response: String,
    provenance: Provenance,
}

impl From<&CurationRecord> for ManifestLine {
    fn from(r: &CurationRecord) -> Self {
        ManifestLine {
            clip_id: r.clip.clip_id.clone(),
            uri: r.clip.uri.clone(),
            duration_seconds: r.clip.duration_seconds,
            source_tag: r.clip.source_tag.clone(),
            candidates: r.candidates.candidates.clone(),
            route: r.route.map(|d| d.kind()),
            score: r.route.and_then(|d| d.score()),
            caption: r.caption.clone(),
            critique_status: match &r.critique_status {
                CritiqueStatus::NotRun => WireCritique::NotRun,
                CritiqueStatus::Accepted => WireCritique::Accepted,
                CritiqueStatus::Revised(text) => WireCritique::Revised { text: text.clone() },
                CritiqueStatus::Rejected(reason) => WireCritique::Rejected {
                    reason: reason.clone(),
                },
            },
            labels: r.labels.clone(),
            pairs: r
                .pairs
                .iter()
                .map(|p| WirePair {
                    instruction: p.instruction.clone(),
                    response: p.response.clone(),
                    provenance: p.provenance.clone(),
                })
                .collect(),
        }
    }
}

impl ManifestLine {
    fn into_record(self) -> Result<CurationRecord, InvariantError> {
        let id = self.clip_id;
        let route = match (self.route, self.score) {
            (None, None) => None,
            (Some(RouteKind::BypassSoundmark), None) => Some(RouteDecision::BypassSoundmark),
            (Some(RouteKind::Pass), Some(score)) => Some(RouteDecision::Pass { score }),
            (Some(RouteKind::Pruned), Some(score)) => Some(RouteDecision::Pruned { score }),
            (route, score) => {
                return Err(InvariantError::new(
                    &id,
                    "score",
                    format!("inconsistent with route {route:?}: {score:?}"),
                ))
            }
        };
        let pairs = self
            .pairs
            .into_iter()
            .map(|p| InstructionPair {
                instruction: p.instruction,
                response: p.response,
                clip_id: id.clone(),
                provenance: p.provenance,
            })
            .collect();
        Ok(CurationRecord {
            clip: AudioClipRef {
                clip_id: id.clone(),
                uri: self.uri,
                duration_seconds: self.duration_seconds,
                source_tag: self.source_tag,
            },
            candidates: CandidateSet::new(id, self.candidates),
            route,
            caption: self.caption,
            critique_status: match self.critique_status {
                WireCritique::NotRun => CritiqueStatus::NotRun,
                WireCritique::Accepted => CritiqueStatus::Accepted,
                WireCritique::Revised { text } => CritiqueStatus::Revised(text),
                WireCritique::Rejected { reason } => CritiqueStatus::Rejected(reason),
            },
            labels: self.labels,
            pairs,
        })
    }
}

/// Serialize one record to a single manifest line (no trailing newline).
pub fn encode_record(record: &CurationRecord) -> Result<String, ManifestError> {
    record.validate()?;
    Ok(serde_json::to_string(&ManifestLine::from(record))?)
}

/// What to do with a line that does not parse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MalformedPolicy {
    /// Record a diagnostic and continue with the next line.
    Skip,
    /// Yield the error and stop reading.
    #[default]
    Abort,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: usize,
    pub message: String,
}

/// Streaming writer. Output goes to `<dest>.partial` until [`finish`] renames
/// it into place; dropping an unfinished writer removes the partial file.
///
/// [`finish`]: ManifestWriter::finish
pub struct ManifestWriter {
    dest: PathBuf,
    partial: PathBuf,
    out: Option<BufWriter<File>>,
    count: usize,
}

impl ManifestWriter {
    pub fn create(dest: impl AsRef<Path>) -> Result<Self, ManifestError> {
        let dest = dest.as_ref().to_path_buf();
        let partial = partial_path(&dest);
        let file = File::create(&partial).map_err(|e| ManifestError::io(&partial, e))?;
        Ok(Self {
            dest,
            partial,
            out: Some(BufWriter::new(file)),
            count: 0,
        })
    }

    pub fn write(&mut self, record: &CurationRecord) -> Result<(), ManifestError> {
        let line = encode_record(record)?;
        self.write_line(&line)
    }

    fn write_line(&mut self, line: &str) -> Result<(), ManifestError> {
        let out = self.out.as_mut().expect("writer used after finish");
        out.write_all(line.as_bytes())
            .and_then(|_| out.write_all(b"\n"))
            .map_err(|e| ManifestError::io(&self.partial, e))?;
        self.count += 1;
        Ok(())
    }

    /// Flush, sync and move the file into place. Returns the record count.
    pub fn finish(mut self) -> Result<usize, ManifestError> {
        let out = self.out.take().expect("writer finished twice");
        let file = out
            .into_inner()
            .map_err(|e| ManifestError::io(&self.partial, e.into_error()))?;
        file.sync_all()
            .map_err(|e| ManifestError::io(&self.partial, e))?;
        drop(file);
        fs::rename(&self.partial, &self.dest).map_err(|e| ManifestError::io(&self.dest, e))?;
        Ok(self.count)
    }
}

impl Drop for ManifestWriter {
    fn drop(&mut self) {
        if self.out.take().is_some() {
            let _ = fs::remove_file(&self.partial);
        }
    }
}

fn partial_path(dest: &Path) -> PathBuf {
    let mut name = dest.file_name().unwrap_or_default().to_os_string();
    name.push(".partial");
    dest.with_file_name(name)
}

/// Write all records to `dest`. On any error nothing is left at `dest` or at
/// the partial path.
pub fn write_manifest<'a, I>(dest: impl AsRef<Path>, records: I) -> Result<usize, ManifestError>
where
    I: IntoIterator<Item = &'a CurationRecord>,
{
    let mut writer = ManifestWriter::create(dest)?;
    for record in records {
        writer.write(record)?;
    }
    writer.finish()
}

/// Streaming manifest reader.
///
/// Yields records in file order. Malformed lines follow the configured
/// [`MalformedPolicy`]; invariant violations (including duplicate `clip_id`)
/// are always yielded as errors, and reading continues after them.
pub struct ManifestReader<R> {
    lines: io::Lines<R>,
    source: PathBuf,
    policy: MalformedPolicy,
    line_no: usize,
    seen: HashSet<String>,
    diagnostics: Vec<Diagnostic>,
    done: bool,
}

impl ManifestReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>, policy: MalformedPolicy) -> Result<Self, ManifestError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| ManifestError::io(path, e))?;
        Ok(Self::with_source(BufReader::new(file), path, policy))
    }
}

impl<R: BufRead> ManifestReader<R> {
    pub fn new(reader: R, policy: MalformedPolicy) -> Self {
        Self::with_source(reader, "<stream>", policy)
    }

    fn with_source(reader: R, source: impl Into<PathBuf>, policy: MalformedPolicy) -> Self {
        Self {
            lines: reader.lines(),
            source: source.into(),
            policy,
            line_no: 0,
            seen: HashSet::new(),
            diagnostics: Vec::new(),
            done: false,
        }
    }

    /// Lines skipped under [`MalformedPolicy::Skip`].
    pub fn diagnostics(&self) -> &[Diagnostic] {
        &self.diagnostics
    }

    fn decode(&mut self, text: &str) -> Result<CurationRecord, ManifestError> {
        let line = self.line_no;
        let wire: ManifestLine =
            serde_json::from_str(text).map_err(|e| ManifestError::Malformed {
                line,
                message: e.to_string(),
            })?;
        let record = wire
            .into_record()
            .and_then(|r| r.validate().map(|_| r))
            .map_err(|source| ManifestError::Invariant { line, source })?;
        if !self.seen.insert(record.clip.clip_id.clone()) {
            return Err(ManifestError::Invariant {
                line,
                source: InvariantError::new(
                    record.clip_id(),
                    "clip_id",
                    "is not unique in manifest",
                ),
            });
        }
        Ok(record)
    }
}

impl<R: BufRead> Iterator for ManifestReader<R> {
    type Item = Result<CurationRecord, ManifestError>;

    fn next(&mut self) -> Option<Self::Item> {
        while !self.done {
            let text = match self.lines.next()? {
                Ok(text) => text,
                Err(e) => {
                    self.done = true;
                    return Some(Err(ManifestError::io(&self.source, e)));
                }
            };
            self.line_no += 1;
            if text.trim().is_empty() {
                continue;
            }
            match self.decode(&text) {
                Err(ManifestError::Malformed { line, message }) => match self.policy {
                    MalformedPolicy::Skip => {
                        tracing::warn!(line, %message, "skipping malformed manifest line");
                        self.diagnostics.push(Diagnostic { line, message });
                    }
                    MalformedPolicy::Abort => {
                        self.done = true;
                        return Some(Err(ManifestError::Malformed { line, message }));
                    }
                },
                other => return Some(other),
            }
        }
        None
    }
}

/// Convenience: read a whole manifest, failing on the first error that the
/// policy does not absorb.
pub fn read_manifest(
    path: impl AsRef<Path>,
    policy: MalformedPolicy,
) -> Result<(Vec<CurationRecord>, Vec<Diagnostic>), ManifestError> {
    let mut reader = ManifestReader::open(path, policy)?;
    let records = reader.by_ref().collect::<Result<Vec<_>, _>>()?;
    Ok((records, reader.diagnostics))
}

/// Write any serializable items as line-delimited JSON, atomically.
pub fn write_jsonl<'a, T, I>(dest: impl AsRef<Path>, items: I) -> Result<usize, ManifestError>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let mut writer = ManifestWriter::create(dest)?;
    for item in items {
        let line = serde_json::to_string(item)?;
        writer.write_line(&line)?;
    }
    writer.finish()
}

/// Write SFT records, one JSON object per line with keys
/// `instruction, target_response, ground_transcript, clip_uri`.
pub fn write_sft(dest: impl AsRef<Path>, records: &[SftRecord]) -> Result<usize, ManifestError> {
    write_jsonl(dest, records)
}

/// Read any line-delimited JSON file, failing on the first bad line.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, ManifestError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| ManifestError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| ManifestError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| ManifestError::Malformed {
                line: i + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}
