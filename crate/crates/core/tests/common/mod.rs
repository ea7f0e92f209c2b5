#![allow(dead_code)]

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use soundmark_core::arbiter::{AcousticContext, ReferenceScorer, Scorer};
use soundmark_core::services::{
    EngineFailure, PairTranscriber, Teacher, TeacherRequest, TeacherTask,
};
use soundmark_core::{AudioClipRef, CurationRecord, ServiceError, TranscriptionResult};

#[derive(Debug, Clone)]
pub enum Scripted {
    Text(String),
    Fail(ServiceError),
}

pub fn timeout() -> ServiceError {
    ServiceError::Timeout {
        attempts: 1,
        cause: "scripted".into(),
    }
}

/// Two engines answering from a per-clip script.
pub struct FakeAsr {
    pub engines: [String; 2],
    pub script: HashMap<String, [Scripted; 2]>,
    pub calls: AtomicUsize,
    pub jitter_ms: u64,
}

impl FakeAsr {
    pub fn new(script: HashMap<String, [Scripted; 2]>) -> Self {
        Self {
            engines: ["engine_a".into(), "engine_b".into()],
            script,
            calls: AtomicUsize::new(0),
            jitter_ms: 0,
        }
    }
}

#[async_trait]
impl PairTranscriber for FakeAsr {
    fn engine_ids(&self) -> [&str; 2] {
        [&self.engines[0], &self.engines[1]]
    }

    async fn transcribe_pair(
        &self,
        clip: &AudioClipRef,
    ) -> Result<[TranscriptionResult; 2], EngineFailure> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if self.jitter_ms > 0 {
            let h = clip
                .clip_id
                .bytes()
                .fold(0u64, |h, b| h.wrapping_mul(31).wrapping_add(b as u64));
            tokio::time::sleep(Duration::from_millis(h % self.jitter_ms)).await;
        }
        let script = self.script.get(&clip.clip_id).expect("unscripted clip");
        let mut out = Vec::new();
        for (engine, s) in self.engines.iter().zip(script) {
            match s {
                Scripted::Text(t) => out.push(TranscriptionResult {
                    engine_id: engine.clone(),
                    raw_text: t.clone(),
                    latency_ms: 1,
                }),
                Scripted::Fail(e) => {
                    return Err(EngineFailure {
                        engine_id: engine.clone(),
                        source: e.clone(),
                    })
                }
            }
        }
        Ok(out.try_into().unwrap())
    }
}

/// Teacher with default responses per task and per-clip overrides.
pub struct FakeTeacher {
    pub overrides: HashMap<(String, TeacherTask), Scripted>,
    pub prompts: Mutex<Vec<(TeacherTask, String, String)>>,
    pub calls: AtomicUsize,
}

impl FakeTeacher {
    pub fn new() -> Self {
        Self {
            overrides: HashMap::new(),
            prompts: Mutex::new(Vec::new()),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn set(&mut self, clip: &str, task: TeacherTask, s: Scripted) {
        self.overrides.insert((clip.to_owned(), task), s);
    }

    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

#[async_trait]
impl Teacher for FakeTeacher {
    fn endpoint_id(&self) -> &str {
        "fake-teacher"
    }

    async fn describe(&self, req: TeacherRequest<'_>) -> Result<String, ServiceError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.prompts.lock().unwrap().push((
            req.task,
            req.clip_id.to_owned(),
            req.prompt.to_owned(),
        ));
        if let Some(s) = self.overrides.get(&(req.clip_id.to_owned(), req.task)) {
            return match s {
                Scripted::Text(t) => Ok(t.clone()),
                Scripted::Fail(e) => Err(e.clone()),
            };
        }
        Ok(match req.task {
            TeacherTask::Generate => format!("Ambient street sounds in clip {}", req.clip_id),
            TeacherTask::Critique => "ACCEPT".into(),
            TeacherTask::Expand => format!(
                "Q: What can be heard in {0}?\nA: Street sounds.\nQ: Is there speech in {0}?\nA: Possibly.",
                req.clip_id
            ),
        })
    }
}

/// ReferenceScorer wrapper counting calls, optionally failing on a text.
pub struct CountingScorer {
    pub inner: ReferenceScorer,
    pub calls: AtomicUsize,
    pub fail_on: Option<String>,
}

impl CountingScorer {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ReferenceScorer::new(seed),
            calls: AtomicUsize::new(0),
            fail_on: None,
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

#[async_trait]
impl Scorer for CountingScorer {
    fn backend_id(&self) -> &str {
        "counting"
    }

    async fn score(&self, text: &str, ctx: &AcousticContext) -> Result<Vec<f64>, ServiceError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if self.fail_on.as_deref() == Some(text) {
            return Err(timeout());
        }
        self.inner.score(text, ctx).await
    }
}

pub fn clip(i: usize) -> AudioClipRef {
    AudioClipRef::new(
        format!("clip-{i:05}"),
        format!("s3://corpus/clip-{i:05}.wav"),
        7.5,
        "synthetic",
    )
}

/// The 1,000-clip routing fixture: 100 both-empty, 700 agreeing, 200
/// disagreeing. Returns input records and the ASR script.
pub fn synthetic_corpus(
    n_bypass: usize,
    n_agree: usize,
    n_disagree: usize,
) -> (Vec<CurationRecord>, HashMap<String, [Scripted; 2]>) {
    let mut records = Vec::new();
    let mut script = HashMap::new();
    let total = n_bypass + n_agree + n_disagree;
    for i in 0..total {
        let c = clip(i);
        let pair = if i < n_bypass {
            [Scripted::Text(String::new()), Scripted::Text("  。".into())]
        } else if i < n_bypass + n_agree {
            [
                Scripted::Text(format!("今天天氣很好 {i}")),
                Scripted::Text(format!("今天天氣很好，{i}!")),
            ]
        } else {
            [
                Scripted::Text(format!("阮欲去夜市 {i}")),
                Scripted::Text("the quick brown fox".into()),
            ]
        };
        script.insert(c.clip_id.clone(), pair);
        records.push(CurationRecord::unprocessed(c));
    }
    (records, script)
}
