//! The declarative run configuration, read from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};
use soundmark_core::arbiter::{ReferenceScorer, Scorer};
use soundmark_core::similarity::NormalizerConfig;
use soundmark_core::vgc::{PromptTemplates, RouterConfig, RunOptions, DEFAULT_MAX_PAIRS_PER_CLIP};
use soundmark_gateway::{validate_engines, EngineConfig, GatewayClient, RemoteModelScorer};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScorerConfig {
    Reference { seed: u64 },
    Remote { endpoint: EngineConfig },
}

impl ScorerConfig {
    pub fn build(&self, client: &GatewayClient) -> Box<dyn Scorer> {
        match self {
            ScorerConfig::Reference { seed } => Box::new(ReferenceScorer::new(*seed)),
            ScorerConfig::Remote { endpoint } => {
                Box::new(RemoteModelScorer::new(client.clone(), endpoint.clone()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub engines: Vec<EngineConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher: Option<EngineConfig>,
    #[serde(default)]
    pub router: RouterConfig,
    #[serde(default)]
    pub normalizer: NormalizerConfig,
    #[serde(default)]
    pub templates: PromptTemplates,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_max_pairs")]
    pub max_pairs_per_clip: usize,
    /// RFC 3339 timestamp for instruction-pair provenance. Unset means the
    /// wall clock at startup, which makes runs differ byte-for-byte.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pinned_timestamp: Option<String>,
    /// Clips between progress lines on stderr; 0 disables them.
    #[serde(default = "default_progress_every")]
    pub progress_every: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scorer: Option<ScorerConfig>,
}

fn default_workers() -> usize {
    16
}

fn default_max_pairs() -> usize {
    DEFAULT_MAX_PAIRS_PER_CLIP
}

fn default_progress_every() -> usize {
    1000
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            engines: Vec::new(),
            teacher: None,
            router: RouterConfig::default(),
            normalizer: NormalizerConfig::default(),
            templates: PromptTemplates::default(),
            workers: default_workers(),
            max_pairs_per_clip: default_max_pairs(),
            pinned_timestamp: None,
            progress_every: default_progress_every(),
            scorer: None,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("reading {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always representable as TOML")
    }

    /// Checks that hold for every subcommand. Service endpoints are checked
    /// by the commands that need them.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if let Err(e) = self.router.validate() {
            return bad(e.to_string());
        }
        if let Err(e) = self.templates.validate() {
            return bad(e.to_string());
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if self.max_pairs_per_clip == 0 {
            return bad("max_pairs_per_clip must be at least 1".into());
        }
        if let Some(ts) = &self.pinned_timestamp {
            if chrono::DateTime::parse_from_rfc3339(ts).is_err() {
                return bad(format!(
                    "pinned_timestamp {ts:?} is not an RFC 3339 timestamp"
                ));
            }
        }
        if !self.engines.is_empty() {
            self.asr_engines()?;
        }
        if let Some(t) = &self.teacher {
            t.validate()
                .map_err(|e| CliError::Config(format!("teacher.{e}")))?;
        }
        if let Some(ScorerConfig::Remote { endpoint }) = &self.scorer {
            endpoint
                .validate()
                .map_err(|e| CliError::Config(format!("scorer.endpoint.{e}")))?;
        }
        Ok(())
    }

    pub fn asr_engines(&self) -> Result<[EngineConfig; 2], CliError> {
        let engines: [EngineConfig; 2] = self.engines.clone().try_into().map_err(|v: Vec<_>| {
            CliError::Config(format!(
                "engines must list exactly 2 ASR engines, found {}",
                v.len()
            ))
        })?;
        validate_engines(&engines).map_err(|e| CliError::Config(format!("engines: {e}")))?;
        Ok(engines)
    }

    pub fn teacher(&self) -> Result<&EngineConfig, CliError> {
        self.teacher
            .as_ref()
            .ok_or_else(|| CliError::Config("this command needs a [teacher] endpoint".into()))
    }

    pub fn scorer(&self) -> Result<&ScorerConfig, CliError> {
        self.scorer
            .as_ref()
            .ok_or_else(|| CliError::Config("this command needs a [scorer] section".into()))
    }

    pub fn run_options(&self) -> RunOptions {
        let mut opts = RunOptions {
            router: self.router,
            normalizer: self.normalizer,
            templates: self.templates.clone(),
            workers: self.workers,
            max_pairs_per_clip: self.max_pairs_per_clip,
            progress_every: self.progress_every,
            ..RunOptions::default()
        };
        if let Some(ts) = &self.pinned_timestamp {
            opts.timestamp = ts.clone();
        }
        opts
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
workers = 4
pinned_timestamp = "2025-06-01T00:00:00Z"

[[engines]]
engine_id = "whisper"
endpoint_url = "http://127.0.0.1:9000/engines/whisper"

[[engines]]
engine_id = "breeze"
endpoint_url = "http://127.0.0.1:9000/engines/breeze"
timeout_ms = 5000

[teacher]
engine_id = "teacher"
endpoint_url = "http://127.0.0.1:9000/teacher"

[router]
tau = 0.6

[scorer]
kind = "reference"
seed = 7
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg: PipelineConfig = toml::from_str(SAMPLE).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.engines[1].timeout_ms, 5000);
        assert_eq!(cfg.engines[0].max_retries, 2);
        assert_eq!(cfg.scorer, Some(ScorerConfig::Reference { seed: 7 }));
        assert!(cfg.router.boundary_inclusive);
        let back: PipelineConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_bad_tau_by_name() {
        let cfg: PipelineConfig = toml::from_str("[router]\ntau = 1.5\n").unwrap();
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("tau"), "{msg}");
    }

    #[test]
    fn engine_count_is_exactly_two() {
        let cfg: PipelineConfig =
            toml::from_str("[[engines]]\nengine_id = \"a\"\nendpoint_url = \"http://x\"\n")
                .unwrap();
        assert!(cfg
            .validate()
            .unwrap_err()
            .to_string()
            .contains("exactly 2"));
    }

    #[test]
    fn reference_scorer_needs_seed() {
        assert!(toml::from_str::<PipelineConfig>("[scorer]\nkind = \"reference\"\n").is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<PipelineConfig>("wrokers = 3\n").is_err());
    }

    #[test]
    fn bad_timestamp() {
        let cfg = PipelineConfig {
            pinned_timestamp: Some("yesterday".into()),
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
