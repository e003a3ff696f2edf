//! Drive the simulator from a browser over a websocket and record the
//! drive as a demonstration log.
//!
//! The server owns one [`TeleopSession`] and advances it on a fixed 20 Hz
//! tick. Incoming control frames only overwrite the latest control value, so
//! the dynamics do not depend on network timing.

mod protocol;
mod server;
mod session;

pub use protocol::{ClientMsg, ServerMsg, TrackGeometry};
pub use server::{serve, TeleopServer};
pub use session::{sidecar_path, TeleopSession, HOLD_TICKS, TICK_HZ};

/// Port used when none is given.
pub const DEFAULT_PORT: u16 = 8731;

#[derive(Debug, thiserror::Error)]
pub enum TeleopError {
    #[error(transparent)]
    Core(#[from] ildrive_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    /// Boxed: the websocket error is several hundred bytes.
    #[error("websocket error: {0}")]
    Ws(#[source] Box<tokio_tungstenite::tungstenite::Error>),
}

impl From<tokio_tungstenite::tungstenite::Error> for TeleopError {
    fn from(e: tokio_tungstenite::tungstenite::Error) -> Self {
        Self::Ws(Box::new(e))
    }
}

pub type Result<T, E = TeleopError> = std::result::Result<T, E>;
