//! Real-time teleoperation bridge: serves a live simulation over a WebSocket,
//! gates what the operator sees by perception mode, and records sessions so
//! they can be replayed.

pub mod client;
pub mod protocol;
pub mod record;
pub mod replay;
pub mod server;
pub mod session;

pub use protocol::{decode, encode, Message, PROTOCOL_VERSION};
pub use record::{SessionRecord, SessionStatus};
pub use server::{ReplayConfig, Server};
pub use session::{SessionConfig, SessionOutcome};
