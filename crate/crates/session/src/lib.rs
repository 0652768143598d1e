//! Live session host: steps the shared-control loop at a fixed tick against
//! a connected client's inputs and streams state frames back.

pub mod latency;
pub mod server;
pub mod session;
pub mod wire;

pub use latency::{latency_report, LatencyReport, TickTiming};
pub use server::{router, serve, ServerState};
pub use session::{Session, SessionAssets, SessionCondition, SessionConfig, SessionRecord};
pub use wire::{FrameIn, FrameOut, Handshake, TrialStatus, SCHEMA_VERSION};

use brace_core::episode::EpisodeError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("invalid session config: {0}")]
    Config(String),
    #[error(transparent)]
    Episode(#[from] EpisodeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
