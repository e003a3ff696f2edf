use ildrive_core::sim::{Obstacle, Point, Track};
use serde::{Deserialize, Serialize};

/// Frames a client may send.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMsg {
    Control {
        throttle: f32,
        brake: f32,
        steering: f32,
        #[serde(default)]
        recording: bool,
    },
    Reset,
}

/// Static geometry sent once per connection; the client renders locally.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackGeometry {
    pub centerline: Vec<Point>,
    pub half_width: f64,
    pub obstacles: Vec<Obstacle>,
}

impl TrackGeometry {
    pub fn of(track: &Track) -> Self {
        Self { centerline: track.points().to_vec(), half_width: track.half_width(), obstacles: track.obstacles().to_vec() }
    }
}

/// Frames the server sends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMsg {
    Hello {
        track: TrackGeometry,
        tick_hz: u32,
    },
    State {
        x: f64,
        y: f64,
        psi: f64,
        v: f64,
        reward: f64,
        distance: f64,
        step: usize,
        recording: bool,
        condition: String,
    },
    EpisodeEnd {
        #[serde(rename = "return")]
        ret: f64,
        steps: usize,
        collided: bool,
    },
    Error {
        reason: String,
    },
}

impl ServerMsg {
    pub fn error(reason: impl Into<String>) -> Self {
        ServerMsg::Error { reason: reason.into() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }
}
