//! Corpus accounting and plot-ready report files.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{CandidateSet, CurationRecord, LabelTag, RouteDecision};
use crate::vgc::{route, RouteError, RouterConfig};

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("no label assignments to compute a distribution over")]
    NoAssignments,
    #[error("clip {clip_id:?} has negative duration {duration}")]
    NegativeDuration { clip_id: String, duration: f64 },
    #[error("tau values must be ascending and within [0, 1]")]
    BadTaus,
    #[error("clip {clip_id:?}: {source}")]
    Route {
        clip_id: String,
        #[source]
        source: RouteError,
    },
    #[error("writing {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: csv::Error,
    },
}

/// `100 * count / total` in tenths of a percent, rounded half-up, computed
/// in integers so no value straddles a rounding boundary by float error.
pub fn percent_tenths(count: u64, total: u64) -> u64 {
    assert!(total > 0);
    let scaled = u128::from(count) * 1000;
    let total = u128::from(total);
    let (q, r) = (scaled / total, scaled % total);
    (q + u128::from(2 * r >= total)) as u64
}

fn format_tenths(t: u64) -> String {
    format!("{}.{}", t / 10, t % 10)
}

/// Round half-up to two decimals.
pub fn round2(x: f64) -> f64 {
    (x * 100.0 + 0.5).floor() / 100.0
}

/// Label occurrence over assignments: a record with k labels contributes k.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport {
    /// Occurrence counts indexed by [`LabelTag::index`].
    pub counts: [u64; 9],
    pub total_assignments: u64,
    pub total_clips: u64,
    /// Σ duration / 3600, two decimals.
    pub total_hours: f64,
    /// Validated (pass or bypass) over all clips.
    pub retention: f64,
}

impl DistributionReport {
    pub fn count(&self, tag: LabelTag) -> u64 {
        self.counts[tag.index()]
    }

    /// Percentage in tenths, e.g. 464 for 46.4 %.
    pub fn percent_tenths(&self, tag: LabelTag) -> u64 {
        percent_tenths(self.count(tag), self.total_assignments)
    }

    pub fn percent(&self, tag: LabelTag) -> f64 {
        self.percent_tenths(tag) as f64 / 10.0
    }

    /// Labels sorted by descending count; ties keep the canonical order.
    pub fn ranked(&self) -> Vec<(LabelTag, u64)> {
        let mut rows: Vec<_> = LabelTag::ALL.iter().map(|&t| (t, self.count(t))).collect();
        rows.sort_by_key(|r| std::cmp::Reverse(r.1));
        rows
    }
}

/// Single-pass, mergeable label and accounting aggregate.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusTally {
    counts: [u64; 9],
    clips: u64,
    validated: u64,
    pruned: u64,
    seconds: f64,
}

impl CorpusTally {
    pub fn add(&mut self, record: &CurationRecord) -> Result<(), StatsError> {
        let d = record.clip.duration_seconds;
        if d < 0.0 || !d.is_finite() {
            return Err(StatsError::NegativeDuration {
                clip_id: record.clip_id().to_owned(),
                duration: d,
            });
        }
        self.clips += 1;
        self.seconds += d;
        match record.route {
            Some(RouteDecision::Pass { .. }) | Some(RouteDecision::BypassSoundmark) => {
                self.validated += 1
            }
            Some(RouteDecision::Pruned { .. }) => self.pruned += 1,
            None => {}
        }
        for tag in &record.labels {
            self.counts[tag.index()] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &CorpusTally) {
        for (a, b) in self.counts.iter_mut().zip(other.counts) {
            *a += b;
        }
        self.clips += other.clips;
        self.validated += other.validated;
        self.pruned += other.pruned;
        self.seconds += other.seconds;
    }

    pub fn accounting(&self) -> Accounting {
        Accounting::from_counts(self.clips, self.validated, self.pruned, self.seconds)
    }

    pub fn distribution(&self) -> Result<DistributionReport, StatsError> {
        let total_assignments: u64 = self.counts.iter().sum();
        if total_assignments == 0 {
            return Err(StatsError::NoAssignments);
        }
        let acc = self.accounting();
        Ok(DistributionReport {
            counts: self.counts,
            total_assignments,
            total_clips: self.clips,
            total_hours: acc.hours,
            retention: acc.retention,
        })
    }
}

fn tally<'a>(
    records: impl IntoIterator<Item = &'a CurationRecord>,
) -> Result<CorpusTally, StatsError> {
    let mut t = CorpusTally::default();
    for r in records {
        t.add(r)?;
    }
    Ok(t)
}

pub fn label_distribution<'a>(
    records: impl IntoIterator<Item = &'a CurationRecord>,
) -> Result<DistributionReport, StatsError> {
    tally(records)?.distribution()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Accounting {
    pub clips: u64,
    pub validated: u64,
    pub pruned: u64,
    /// Clips with no verify decision yet.
    pub unverified: u64,
    pub hours: f64,
    pub retention: f64,
}

impl Accounting {
    pub fn from_counts(clips: u64, validated: u64, pruned: u64, seconds: f64) -> Self {
        Self {
            clips,
            validated,
            pruned,
            unverified: clips - validated - pruned,
            hours: round2(seconds / 3600.0),
            retention: if clips == 0 {
                0.0
            } else {
                validated as f64 / clips as f64
            },
        }
    }
}

pub fn corpus_accounting<'a>(
    records: impl IntoIterator<Item = &'a CurationRecord>,
) -> Result<Accounting, StatsError> {
    Ok(tally(records)?.accounting())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tau: f64,
    pub bypass: u64,
    pub pass: u64,
    pub pruned: u64,
}

/// Route counts for each threshold. Each pair is scored once.
pub fn tau_sweep<'a>(
    pairs: impl IntoIterator<Item = &'a CandidateSet>,
    taus: &[f64],
    boundary_inclusive: bool,
) -> Result<Vec<SweepRow>, StatsError> {
    if taus.windows(2).any(|w| w[0] > w[1]) || taus.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(StatsError::BadTaus);
    }
    let mut rows: Vec<SweepRow> = taus
        .iter()
        .map(|&tau| SweepRow {
            tau,
            bypass: 0,
            pass: 0,
            pruned: 0,
        })
        .collect();
    // Score at tau = 0 to get S; the per-tau decision is then a comparison.
    let probe = RouterConfig {
        tau: 0.0,
        boundary_inclusive: true,
    };
    for pair in pairs {
        let decision = route(pair, &probe).map_err(|source| StatsError::Route {
            clip_id: pair.clip_id.clone(),
            source,
        })?;
        for row in &mut rows {
            match decision.score() {
                None => row.bypass += 1,
                Some(score) => {
                    let cfg = RouterConfig {
                        tau: row.tau,
                        boundary_inclusive,
                    };
                    if cfg.passes(score) {
                        row.pass += 1;
                    } else {
                        row.pruned += 1;
                    }
                }
            }
        }
    }
    Ok(rows)
}

/// `0.0, 0.1, …, 1.0`.
pub fn default_taus() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    /// Training pairs in thousands.
    pub scale_k: f64,
    /// Externally measured accuracy, percent.
    pub accuracy: f64,
}

pub enum PlotData<'a> {
    Labels(&'a DistributionReport),
    Scaling(&'a [ScalingPoint]),
    Sweep(&'a [SweepRow]),
}

impl PlotData<'_> {
    fn header(&self) -> &'static [&'static str] {
        match self {
            PlotData::Labels(_) => &["label", "percent"],
            PlotData::Scaling(_) => &["scale_k", "accuracy"],
            PlotData::Sweep(_) => &["tau", "bypass", "pass", "pruned"],
        }
    }

    fn rows(&self) -> Vec<Vec<String>> {
        match self {
            PlotData::Labels(r) if r.total_assignments == 0 => Vec::new(),
            PlotData::Labels(r) => r
                .ranked()
                .into_iter()
                .map(|(tag, _)| vec![tag.to_string(), format_tenths(r.percent_tenths(tag))])
                .collect(),
            PlotData::Scaling(points) => points
                .iter()
                .map(|p| vec![p.scale_k.to_string(), format!("{:.1}", p.accuracy)])
                .collect(),
            PlotData::Sweep(rows) => rows
                .iter()
                .map(|r| {
                    vec![
                        r.tau.to_string(),
                        r.bypass.to_string(),
                        r.pass.to_string(),
                        r.pruned.to_string(),
                    ]
                })
                .collect(),
        }
    }
}

/// Write a CSV with a header row; values at displayed precision.
pub fn emit_plot_data(data: &PlotData<'_>, dest: impl AsRef<Path>) -> Result<usize, StatsError> {
    let dest = dest.as_ref();
    let io = |source| StatsError::Io {
        path: dest.display().to_string(),
        source,
    };
    let mut w = csv::Writer::from_path(dest).map_err(io)?;
    w.write_record(data.header()).map_err(io)?;
    let rows = data.rows();
    for row in &rows {
        w.write_record(row).map_err(io)?;
    }
    w.flush().map_err(|e| io(e.into()))?;
    Ok(rows.len())
}
