use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::similarity::consistency_score;
use crate::types::{CandidateSet, RouteDecision};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RouterConfig {
    pub tau: f64,
    /// When true a score exactly equal to `tau` passes.
    pub boundary_inclusive: bool,
}

impl Default for RouterConfig {
    fn default() -> Self {
        Self {
            tau: 0.6,
            boundary_inclusive: true,
        }
    }
}

impl RouterConfig {
    pub fn new(tau: f64) -> Result<Self, RouteError> {
        let cfg = Self {
            tau,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), RouteError> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(RouteError::InvalidTau(self.tau));
        }
        Ok(())
    }

    pub fn passes(&self, score: f64) -> bool {
        if self.boundary_inclusive {
            score >= self.tau
        } else {
            score > self.tau
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RouteError {
    #[error("router.tau must satisfy 0 <= tau <= 1, got {0}")]
    InvalidTau(f64),
    #[error("routing needs exactly 2 candidates, got {0}")]
    CandidateCount(usize),
}

/// Verify-stage routing of a two-engine candidate set.
pub fn route(pair: &CandidateSet, cfg: &RouterConfig) -> Result<RouteDecision, RouteError> {
    let [a, b] = pair.candidates.as_slice() else {
        return Err(RouteError::CandidateCount(pair.len()));
    };
    if a.normalized_text.is_empty() && b.normalized_text.is_empty() {
        return Ok(RouteDecision::BypassSoundmark);
    }
    let score = consistency_score(&a.normalized_text, &b.normalized_text);
    Ok(if cfg.passes(score) {
        RouteDecision::Pass { score }
    } else {
        RouteDecision::Pruned { score }
    })
}
