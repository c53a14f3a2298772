//! Remote supervision service.
//!
//! A rollout that needs a human supervisor talks to a console over TCP
//! through [`RemoteSupervisor`], which implements the same
//! [`Supervisor`](lazydagger_core::meta::Supervisor) trait as the in-process
//! analytic supervisor. See [`protocol`] for the wire format.

pub mod client;
pub mod protocol;
pub mod server;
pub mod supervisor;

pub use client::ConsoleClient;
pub use protocol::{Message, Phase, PROTOCOL_VERSION};
pub use server::{serve, Health, ServiceHandle, SessionConfig};
pub use supervisor::RemoteSupervisor;

use protocol::ErrorCode;

#[derive(Debug, thiserror::Error)]
pub enum InterventionError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed message: {0}")]
    Json(#[from] serde_json::Error),
    #[error("frame of {0} bytes exceeds the limit")]
    FrameTooLarge(usize),
    #[error("connection closed")]
    Closed,
    #[error("peer speaks protocol {0}, expected {PROTOCOL_VERSION}")]
    VersionMismatch(u32),
    #[error("rejected ({code:?}): {message}")]
    Rejected { code: ErrorCode, message: String },
    #[error("unexpected message: {0}")]
    Unexpected(String),
    #[error("session {0:?} already exists")]
    DuplicateSession(String),
    #[error("no session {0:?}")]
    UnknownSession(String),
    #[error("cannot bind {address}: {source}")]
    Bind {
        address: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = InterventionError> = std::result::Result<T, E>;
