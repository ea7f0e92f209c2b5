//! Inference-time arbitration between ASR hypotheses.
//!
//! Each non-empty candidate is scored by an audio-conditioned model and
//! ranked by its acoustically-conditioned perplexity
//! `exp(-(1/|h|) * Σ log P(w_i | w_<i, audio))`. The lowest wins. When every
//! candidate is empty the arbiter injects no text at all.

use async_trait::async_trait;
use futures::future::join_all;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ServiceError;
use crate::types::CandidateSet;

/// Opaque handle for the audio representation a scorer conditions on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcousticContext {
    pub clip_uri: String,
    pub context_token: String,
}

impl AcousticContext {
    pub fn for_clip(clip_uri: &str) -> Self {
        Self {
            clip_uri: clip_uri.to_owned(),
            context_token: clip_uri.to_owned(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub engine_id: String,
    pub text: String,
    pub token_logprobs: Vec<f64>,
    pub ac_ppl: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArbitrationOutcome {
    Selected(ScoredCandidate),
    PureAudioBypass,
}

/// Backend returning per-token log-probabilities of `text` given the audio.
///
/// The token sequence is the backend's own tokenization; its length is the
/// `|h|` used for normalization.
#[async_trait]
pub trait Scorer: Send + Sync {
    fn backend_id(&self) -> &str;

    async fn score(&self, text: &str, ctx: &AcousticContext) -> Result<Vec<f64>, ServiceError>;
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PerplexityError {
    #[error("cannot compute perplexity of an empty token sequence")]
    Empty,
    #[error("token {index} has log-probability {value}; expected a finite value <= 0")]
    InvalidLogprob { index: usize, value: f64 },
}

/// `exp(-mean(token_logprobs))`. Always ≥ 1 on valid input.
pub fn ac_ppl(token_logprobs: &[f64]) -> Result<f64, PerplexityError> {
    if token_logprobs.is_empty() {
        return Err(PerplexityError::Empty);
    }
    if let Some((index, &value)) = token_logprobs
        .iter()
        .enumerate()
        .find(|(_, v)| !v.is_finite() || **v > 0.0)
    {
        return Err(PerplexityError::InvalidLogprob { index, value });
    }
    let mean = token_logprobs.iter().sum::<f64>() / token_logprobs.len() as f64;
    Ok((-mean).exp())
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ArbitrationError {
    #[error("no candidates to arbitrate")]
    NoCandidates,
    #[error("scoring {engine_id} failed: {source}")]
    Scorer {
        engine_id: String,
        #[source]
        source: ServiceError,
    },
    #[error("scorer output for {engine_id} is unusable: {source}")]
    BadScores {
        engine_id: String,
        #[source]
        source: PerplexityError,
    },
    #[error("unknown engine {0:?}")]
    UnknownEngine(String),
}

/// Score every candidate whose normalized text is non-empty, concurrently.
/// Results keep the configured candidate order.
pub async fn score_candidates(
    candidates: &CandidateSet,
    ctx: &AcousticContext,
    scorer: &dyn Scorer,
) -> Result<Vec<ScoredCandidate>, ArbitrationError> {
    let live: Vec<_> = candidates
        .candidates
        .iter()
        .filter(|c| !c.normalized_text.is_empty())
        .collect();
    let scores = join_all(live.iter().map(|c| scorer.score(&c.raw_text, ctx))).await;
    live.into_iter()
        .zip(scores)
        .map(|(c, result)| {
            let token_logprobs = result.map_err(|source| ArbitrationError::Scorer {
                engine_id: c.engine_id.clone(),
                source,
            })?;
            let ppl = ac_ppl(&token_logprobs).map_err(|source| ArbitrationError::BadScores {
                engine_id: c.engine_id.clone(),
                source,
            })?;
            Ok(ScoredCandidate {
                engine_id: c.engine_id.clone(),
                text: c.raw_text.clone(),
                token_logprobs,
                ac_ppl: ppl,
            })
        })
        .collect()
}

/// Index of the minimum perplexity; the earliest wins ties.
pub fn argmin_ppl(scored: &[ScoredCandidate]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, c) in scored.iter().enumerate() {
        match best {
            Some(b) if scored[b].ac_ppl <= c.ac_ppl => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Arbitration together with every scored candidate, for audit traces.
#[derive(Debug, Clone, PartialEq)]
pub struct TracedArbitration {
    pub outcome: ArbitrationOutcome,
    pub scored: Vec<ScoredCandidate>,
}

pub async fn arbitrate_traced(
    candidates: &CandidateSet,
    ctx: &AcousticContext,
    scorer: &dyn Scorer,
) -> Result<TracedArbitration, ArbitrationError> {
    if candidates.is_empty() {
        return Err(ArbitrationError::NoCandidates);
    }
    if candidates.all_empty() {
        return Ok(TracedArbitration {
            outcome: ArbitrationOutcome::PureAudioBypass,
            scored: Vec::new(),
        });
    }
    let scored = score_candidates(candidates, ctx, scorer).await?;
    let best = argmin_ppl(&scored).expect("at least one non-empty candidate");
    Ok(TracedArbitration {
        outcome: ArbitrationOutcome::Selected(scored[best].clone()),
        scored,
    })
}

/// Select the candidate with the lowest AC-PPL, or bypass to pure audio when
/// all candidates are empty (the scorer is then never called).
pub async fn arbitrate(
    candidates: &CandidateSet,
    ctx: &AcousticContext,
    scorer: &dyn Scorer,
) -> Result<ArbitrationOutcome, ArbitrationError> {
    Ok(arbitrate_traced(candidates, ctx, scorer).await?.outcome)
}

/// Which transcription, if any, to inject as text conditioning.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionMode {
    /// Never inject text.
    None,
    /// Always inject the named engine's transcript, unscored.
    SingleAsr(String),
    /// Full perplexity arbitration.
    DualAsr,
}

impl std::str::FromStr for InjectionMode {
    type Err = String;

    /// `none`, `single:<engine_id>` or `dual`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(InjectionMode::None),
            "dual" => Ok(InjectionMode::DualAsr),
            _ => match s.strip_prefix("single:") {
                Some(id) if !id.is_empty() => Ok(InjectionMode::SingleAsr(id.to_owned())),
                _ => Err(format!(
                    "invalid mode {s:?}; expected none, single:<engine_id> or dual"
                )),
            },
        }
    }
}

impl std::fmt::Display for InjectionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InjectionMode::None => f.write_str("none"),
            InjectionMode::SingleAsr(id) => write!(f, "single:{id}"),
            InjectionMode::DualAsr => f.write_str("dual"),
        }
    }
}

/// What an injection strategy decided for one clip.
#[derive(Debug, Clone, PartialEq)]
pub enum Injection {
    PureAudio,
    Text {
        engine_id: String,
        text: String,
        /// Present only when the text was chosen by arbitration.
        ac_ppl: Option<f64>,
    },
}

/// Fallback when the scorer fails under dual mode: the first configured
/// engine's transcript, flagged by the caller as degraded.
pub fn fallback_injection(candidates: &CandidateSet) -> Injection {
    match candidates
        .candidates
        .iter()
        .find(|c| !c.normalized_text.is_empty())
    {
        Some(c) => Injection::Text {
            engine_id: c.engine_id.clone(),
            text: c.raw_text.clone(),
            ac_ppl: None,
        },
        None => Injection::PureAudio,
    }
}

impl InjectionMode {
    pub fn validate(&self, engine_ids: &[&str]) -> Result<(), ArbitrationError> {
        match self {
            InjectionMode::SingleAsr(id) if !engine_ids.contains(&id.as_str()) => {
                Err(ArbitrationError::UnknownEngine(id.clone()))
            }
            _ => Ok(()),
        }
    }

    /// Apply this strategy to one clip. Dual mode also returns the scored
    /// candidates for tracing.
    pub async fn decide(
        &self,
        candidates: &CandidateSet,
        ctx: &AcousticContext,
        scorer: &dyn Scorer,
    ) -> Result<(Injection, Vec<ScoredCandidate>), ArbitrationError> {
        match self {
            InjectionMode::None => Ok((Injection::PureAudio, Vec::new())),
            InjectionMode::SingleAsr(id) => {
                let c = candidates
                    .get(id)
                    .ok_or_else(|| ArbitrationError::UnknownEngine(id.clone()))?;
                // An empty transcript injects nothing.
                let injection = if c.normalized_text.is_empty() {
                    Injection::PureAudio
                } else {
                    Injection::Text {
                        engine_id: c.engine_id.clone(),
                        text: c.raw_text.clone(),
                        ac_ppl: None,
                    }
                };
                Ok((injection, Vec::new()))
            }
            InjectionMode::DualAsr => {
                let traced = arbitrate_traced(candidates, ctx, scorer).await?;
                let injection = match traced.outcome {
                    ArbitrationOutcome::PureAudioBypass => Injection::PureAudio,
                    ArbitrationOutcome::Selected(c) => Injection::Text {
                        engine_id: c.engine_id,
                        text: c.text,
                        ac_ppl: Some(c.ac_ppl),
                    },
                };
                Ok((injection, traced.scored))
            }
        }
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic character-level stand-in for an audio-conditioned model.
///
/// Tokens are Unicode code points. The probability of each character is a
/// fixed function of `(seed, context_token, preceding characters, character)`
/// drawn from a seeded hash and mapped into `[0.02, 0.98)`, so every
/// log-probability is finite and strictly negative. It is not a normalized
/// distribution over a vocabulary; it only has to be a stable logprob source.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReferenceScorer {
    seed: u64,
}

impl ReferenceScorer {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn logprobs(&self, text: &str, context_token: &str) -> Vec<f64> {
        let mut state = mix(self.seed ^ fnv1a(context_token.as_bytes()));
        text.chars()
            .map(|c| {
                let h = mix(state ^ mix(u64::from(u32::from(c))));
                let unit = (h >> 11) as f64 / (1u64 << 53) as f64;
                state = mix(state.wrapping_mul(FNV_PRIME) ^ u64::from(u32::from(c)));
                (0.02 + 0.96 * unit).ln()
            })
            .collect()
    }
}

#[async_trait]
impl Scorer for ReferenceScorer {
    fn backend_id(&self) -> &str {
        "reference"
    }

    async fn score(&self, text: &str, ctx: &AcousticContext) -> Result<Vec<f64>, ServiceError> {
        Ok(self.logprobs(text, &ctx.context_token))
    }
}
