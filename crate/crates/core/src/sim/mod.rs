//! 2D driving world: track geometry, kinematic bicycle, rendering and the
//! episode protocol.

mod car;
mod condition;
mod env;
mod render;
mod track;

pub use car::{CarState, VehicleParams};
pub use condition::{sample_condition, Condition, Preset};
pub use env::{EpisodeConfig, Env, StepOutcome};
pub use render::{apply_condition, render_base, render_observation, CAR, OBSTACLE, OFF_ROAD, ROAD, VIEW_METERS};
pub use track::{nearest_obstacle_distance, point_segment, Obstacle, Point, Projection, Track, TrackSpec};
