//! Network side of the pipeline: JSON-over-HTTP clients for ASR engines,
//! the teacher model and a remote scorer, plus a fixture-driven mock server
//! that stands in for all three.

pub mod client;
pub mod mock;
pub mod wire;

pub use client::{
    validate_engines, ConfigError, DualAsrGateway, EngineConfig, GatewayClient, HttpTeacher,
    RemoteModelScorer, TOKEN_ENV,
};
pub use mock::{Behavior, Fixture, MockServer};
