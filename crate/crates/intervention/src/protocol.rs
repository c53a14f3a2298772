//! Wire protocol between the service and a supervisor console.
//!
//! Every message is one frame: a 4-byte big-endian payload length followed
//! by a UTF-8 JSON object. The object carries the protocol version and a
//! `type` tag:
//!
//! ```text
//! 00 00 00 2f {"protocol":1,"type":"hello","session_id":"s","token":"t"}
//! ```
//!
//! | type                   | direction        | purpose                                  |
//! |------------------------|------------------|------------------------------------------|
//! | `hello`                | console → server | join a session with its shared token     |
//! | `resync`               | server → console | full state; always the first reply       |
//! | `request_intervention` | server → console | rollout paused, supervisor action needed |
//! | `human_action`         | console → server | answer, echoing the request's `t`        |
//! | `mode_update`          | server → console | mode flip or decimated autonomous step   |
//! | `error`                | both             | rejection, stale answer, timeout         |

use std::io::{ErrorKind, Read, Write};

use lazydagger_core::env::{EnvAction, EnvState, Scene};
use lazydagger_core::meta::Mode;
use lazydagger_core::safety::AbsoluteThresholds;
use serde::{Deserialize, Serialize};

use crate::{InterventionError, Result};

pub const PROTOCOL_VERSION: u32 = 1;
/// Frames above this size are refused rather than allocated.
pub const MAX_FRAME: usize = 16 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Idle,
    AwaitingHuman,
    AutonomousStreaming,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub context_switches: u64,
    pub supervisor_actions: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub session_id: String,
    pub token: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionRequest {
    pub session_id: String,
    pub episode: usize,
    pub t: usize,
    pub state: EnvState,
    pub scene: Scene,
    pub robot_action: EnvAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<AbsoluteThresholds>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanAction {
    pub session_id: String,
    pub t: usize,
    pub action: EnvAction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateKind {
    /// The mode changed at this step.
    Transition,
    /// Periodic autonomous-step summary.
    Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeUpdate {
    pub session_id: String,
    pub kind: UpdateKind,
    pub mode: Mode,
    pub episode: usize,
    pub t: usize,
    pub state: EnvState,
    pub counters: Counters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resync {
    pub session_id: String,
    pub phase: Phase,
    pub mode: Mode,
    pub episode: usize,
    pub t: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<EnvState>,
    pub scene: Scene,
    pub counters: Counters,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<AbsoluteThresholds>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pending: Option<InterventionRequest>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadToken,
    UnknownSession,
    SessionBusy,
    VersionMismatch,
    ExpectedHello,
    StaleTimestep,
    NoOutstandingRequest,
    Timeout,
    Malformed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorMessage {
    pub code: ErrorCode,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(clippy::large_enum_variant)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Hello(Hello),
    RequestIntervention(InterventionRequest),
    HumanAction(HumanAction),
    ModeUpdate(ModeUpdate),
    Resync(Resync),
    Error(ErrorMessage),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub protocol: u32,
    #[serde(flatten)]
    pub message: Message,
}

impl Message {
    pub fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        Message::Error(ErrorMessage {
            code,
            message: message.into(),
        })
    }
}

pub fn encode(message: &Message) -> Result<Vec<u8>> {
    let body = serde_json::to_vec(&Frame {
        protocol: PROTOCOL_VERSION,
        message: message.clone(),
    })?;
    if body.len() > MAX_FRAME {
        return Err(InterventionError::FrameTooLarge(body.len()));
    }
    let mut out = Vec::with_capacity(4 + body.len());
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

pub fn write_message(w: &mut impl Write, message: &Message) -> Result<()> {
    w.write_all(&encode(message)?)?;
    w.flush()?;
    Ok(())
}

/// Reads one frame. A clean end of stream before the length prefix is
/// reported as [`InterventionError::Closed`].
pub fn read_frame(r: &mut impl Read) -> Result<Frame> {
    let mut len = [0u8; 4];
    if let Err(e) = r.read_exact(&mut len) {
        return Err(match e.kind() {
            ErrorKind::UnexpectedEof | ErrorKind::ConnectionReset | ErrorKind::ConnectionAborted => {
                InterventionError::Closed
            }
            _ => e.into(),
        });
    }
    read_body(r, u32::from_be_bytes(len) as usize)
}

pub(crate) fn read_body(r: &mut impl Read, len: usize) -> Result<Frame> {
    if len > MAX_FRAME {
        return Err(InterventionError::FrameTooLarge(len));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    Ok(serde_json::from_slice(&body)?)
}

/// Reads one frame and checks its protocol version.
pub fn read_message(r: &mut impl Read) -> Result<Message> {
    let frame = read_frame(r)?;
    if frame.protocol != PROTOCOL_VERSION {
        return Err(InterventionError::VersionMismatch(frame.protocol));
    }
    Ok(frame.message)
}
