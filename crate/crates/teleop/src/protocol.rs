//! Wire protocol for `/session`: JSON text frames, one message per frame,
//! tagged by `type`.
//!
//! A session opens with the client's `hello`; the server answers with its own
//! `hello` (carrying the session id and rates) or an `error` frame and close.
//! After that the server streams `snapshot`, `phase_event` and
//! `safety_event`; the client sends `command` and finally `bye`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use resqsim_core::control::PhaseId;
use resqsim_core::{OperatorCommand, PerceptionMode, SafetyReport, StateSnapshot};

pub const PROTOCOL_VERSION: u32 = 1;
pub const SUPPORTED_VERSIONS: &[u32] = &[PROTOCOL_VERSION];

/// Consecutive bad frames after which the server drops the connection.
pub const MAX_CONSECUTIVE_FAULTS: u32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hello {
    pub version: u32,
    pub mode: PerceptionMode,
    /// Scenario name. The client may leave it out to accept whatever the
    /// server runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    /// Set by the server.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session: Option<SessionInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionInfo {
    pub id: String,
    pub config_hash: String,
    pub seed: u64,
    pub control_rate_hz: f64,
    pub snapshot_rate_hz: f64,
    /// Simulated seconds per wall-clock second.
    pub time_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotFrame {
    pub seq: u64,
    pub tick: u64,
    pub snapshot: StateSnapshot,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandFrame {
    pub seq: u64,
    pub command: OperatorCommand,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseEvent {
    pub tick: u64,
    pub t: f64,
    pub from: PhaseId,
    pub to: PhaseId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SafetyEventKind {
    Contact { relative_speed: f64 },
    /// Sent once the post-contact analysis window has been recorded.
    Report { report: SafetyReport },
    Warning { message: String },
    /// The trial ended without a report.
    Aborted { status: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafetyEvent {
    pub tick: u64,
    pub t: f64,
    pub event: SafetyEventKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    /// Frame is not valid JSON or does not match the schema.
    Malformed,
    UnknownType,
    /// Valid message that is not allowed at this point of the session.
    Unexpected,
    UnsupportedVersion,
    ModeMismatch,
    ScenarioMismatch,
    /// Another operator holds the session.
    Busy,
    /// Commands arrive faster than the simulation drains them.
    Overflow,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorFrame {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supported_versions: Option<Vec<u32>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ByeReason {
    /// Client is leaving.
    ClientDone,
    /// Trial finished and the report was sent.
    Completed,
    /// Operator left mid-trial and the robot was brought to a halt.
    Interrupted,
    /// Trial stopped by a fault or abort.
    Aborted,
    ProtocolFaults,
    Shutdown,
    /// Replay stream reached the end of the log.
    EndOfLog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bye {
    pub reason: ByeReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Hello(Hello),
    Snapshot(SnapshotFrame),
    Command(CommandFrame),
    PhaseEvent(PhaseEvent),
    SafetyEvent(SafetyEvent),
    Error(ErrorFrame),
    Bye(Bye),
}

impl Message {
    pub fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        Message::Error(ErrorFrame {
            code,
            message: message.into(),
            supported_versions: None,
        })
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Message::Hello(_) => "hello",
            Message::Snapshot(_) => "snapshot",
            Message::Command(_) => "command",
            Message::PhaseEvent(_) => "phase_event",
            Message::SafetyEvent(_) => "safety_event",
            Message::Error(_) => "error",
            Message::Bye(_) => "bye",
        }
    }
}

const TYPES: &[&str] = &[
    "hello",
    "snapshot",
    "command",
    "phase_event",
    "safety_event",
    "error",
    "bye",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("unknown message type `{0}`")]
    UnknownType(String),
}

impl ProtocolError {
    pub fn code(&self) -> ErrorCode {
        match self {
            ProtocolError::Malformed(_) => ErrorCode::Malformed,
            ProtocolError::UnknownType(_) => ErrorCode::UnknownType,
        }
    }
}

pub fn encode(msg: &Message) -> String {
    serde_json::to_string(msg).expect("protocol messages always serialize")
}

pub fn decode(frame: &str) -> Result<Message, ProtocolError> {
    match serde_json::from_str::<Message>(frame) {
        Ok(m) => Ok(m),
        Err(e) => {
            // Tell an unknown `type` apart from a broken frame.
            let value: serde_json::Value =
                serde_json::from_str(frame).map_err(|_| ProtocolError::Malformed(e.to_string()))?;
            match value.get("type").and_then(|t| t.as_str()) {
                Some(t) if !TYPES.contains(&t) => Err(ProtocolError::UnknownType(t.to_string())),
                _ => Err(ProtocolError::Malformed(e.to_string())),
            }
        }
    }
}

/// Server-side check of a client `hello`.
pub fn check_hello(
    hello: &Hello,
    mode: PerceptionMode,
    scenario: &str,
) -> Result<(), ErrorFrame> {
    if !SUPPORTED_VERSIONS.contains(&hello.version) {
        return Err(ErrorFrame {
            code: ErrorCode::UnsupportedVersion,
            message: format!("protocol version {} is not supported", hello.version),
            supported_versions: Some(SUPPORTED_VERSIONS.to_vec()),
        });
    }
    if hello.mode != mode {
        return Err(ErrorFrame {
            code: ErrorCode::ModeMismatch,
            message: format!("server runs `{mode}`, client asked for `{}`", hello.mode),
            supported_versions: None,
        });
    }
    if let Some(s) = &hello.scenario {
        if s != scenario {
            return Err(ErrorFrame {
                code: ErrorCode::ScenarioMismatch,
                message: format!("server runs scenario `{scenario}`, client asked for `{s}`"),
                supported_versions: None,
            });
        }
    }
    Ok(())
}

/// Counts consecutive bad frames on one connection.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct FaultCounter {
    consecutive: u32,
}

impl FaultCounter {
    /// Records a fault; true once the connection should be dropped.
    pub fn fault(&mut self) -> bool {
        self.consecutive += 1;
        self.consecutive >= MAX_CONSECUTIVE_FAULTS
    }

    pub fn ok(&mut self) {
        self.consecutive = 0;
    }

    pub fn count(&self) -> u32 {
        self.consecutive
    }
}
