//! Per-clip injection decisions over a verified manifest.

use std::collections::HashMap;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use soundmark_core::arbiter::{
    fallback_injection, AcousticContext, Injection, InjectionMode, Scorer,
};
use soundmark_core::CurationRecord;

/// One line of `arbitrate --out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeLine {
    pub clip_id: String,
    pub mode: String,
    /// `selected` or `pure_audio_bypass`.
    pub outcome: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub engine_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ac_ppl: Option<f64>,
    /// Scoring failed and the first non-empty transcript was used instead.
    #[serde(default)]
    pub degraded: bool,
}

/// One line of `arbitrate --trace`, per scored candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLine {
    pub clip_id: String,
    pub engine_id: String,
    pub text: String,
    pub ac_ppl: f64,
    pub selected: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ArbitrationReport {
    pub clips: usize,
    pub selected: usize,
    pub pure_audio: usize,
    pub degraded: usize,
    pub errored: usize,
    pub errors: Vec<(String, String)>,
}

impl ArbitrationReport {
    pub fn render_text(&self) -> String {
        let mut out = format!(
            "clips: {}\nselected: {}\npure_audio: {}\ndegraded: {}\nerrored: {}\n",
            self.clips, self.selected, self.pure_audio, self.degraded, self.errored
        );
        for (clip, msg) in &self.errors {
            out.push_str(&format!("error: {clip} {msg}\n"));
        }
        out
    }
}

impl OutcomeLine {
    fn new(clip_id: &str, mode: &InjectionMode, injection: Injection, degraded: bool) -> Self {
        let (outcome, engine_id, text, ac_ppl) = match injection {
            Injection::PureAudio => ("pure_audio_bypass", None, None, None),
            Injection::Text {
                engine_id,
                text,
                ac_ppl,
            } => ("selected", Some(engine_id), Some(text), ac_ppl),
        };
        Self {
            clip_id: clip_id.to_owned(),
            mode: mode.to_string(),
            outcome: outcome.to_owned(),
            engine_id,
            text,
            ac_ppl,
            degraded,
        }
    }
}

pub struct Arbitrated {
    pub outcomes: Vec<OutcomeLine>,
    pub trace: Vec<TraceLine>,
    pub report: ArbitrationReport,
}

/// Decide every clip with at most `workers` in flight; output is ordered
/// by clip_id. Clips without candidates are reported as errors.
pub async fn arbitrate_records(
    records: &[CurationRecord],
    mode: &InjectionMode,
    scorer: &dyn Scorer,
    workers: usize,
) -> Arbitrated {
    let results: Vec<_> = stream::iter(records)
        .map(|r| async move {
            if r.candidates.is_empty() {
                return Err((r.clip_id().to_owned(), "no candidates; run verify first".to_owned()));
            }
            let ctx = AcousticContext::for_clip(&r.clip.uri);
            match mode.decide(&r.candidates, &ctx, scorer).await {
                Ok((injection, scored)) => {
                    let chosen = match &injection {
                        Injection::Text { engine_id, .. } => Some(engine_id.clone()),
                        Injection::PureAudio => None,
                    };
                    let trace = scored
                        .into_iter()
                        .map(|s| TraceLine {
                            clip_id: r.clip_id().to_owned(),
                            selected: chosen.as_deref() == Some(s.engine_id.as_str()),
                            engine_id: s.engine_id,
                            text: s.text,
                            ac_ppl: s.ac_ppl,
                        })
                        .collect::<Vec<_>>();
                    Ok((OutcomeLine::new(r.clip_id(), mode, injection, false), trace))
                }
                Err(e) => {
                    tracing::warn!(clip_id = r.clip_id(), error = %e, "arbitration degraded to fallback");
                    let injection = fallback_injection(&r.candidates);
                    Ok((OutcomeLine::new(r.clip_id(), mode, injection, true), Vec::new()))
                }
            }
        })
        .buffer_unordered(workers.max(1))
        .collect()
        .await;

    let mut out = Arbitrated {
        outcomes: Vec::new(),
        trace: Vec::new(),
        report: ArbitrationReport {
            clips: records.len(),
            ..Default::default()
        },
    };
    for result in results {
        match result {
            Ok((line, trace)) => {
                out.outcomes.push(line);
                out.trace.extend(trace);
            }
            Err(e) => out.report.errors.push(e),
        }
    }
    out.outcomes.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    // Candidate order within a clip is kept by the stable sort.
    out.trace.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    out.report.errors.sort();
    for line in &out.outcomes {
        match line.outcome.as_str() {
            "selected" => out.report.selected += 1,
            _ => out.report.pure_audio += 1,
        }
        out.report.degraded += usize::from(line.degraded);
    }
    out.report.errored = out.report.errors.len();
    out
}

/// Selected text per clip, `None` for pure audio.
pub fn selections(outcomes: &[OutcomeLine]) -> HashMap<String, Option<String>> {
    outcomes
        .iter()
        .map(|o| (o.clip_id.clone(), o.text.clone()))
        .collect()
}
