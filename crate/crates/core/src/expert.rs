//! Scripted demonstrator: pure-pursuit steering and proportional speed
//! control. It reads the true car pose and centerline, not the image.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{CarState, Track, VehicleParams};
use crate::types::Action;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpertConfig {
    /// Pure-pursuit lookahead along the centerline (m).
    pub lookahead: f64,
    pub target_speed_straight: f64,
    /// Metres; the target speed is divided by `1 + gain * |curvature|`.
    pub curvature_slowdown_gain: f64,
    pub speed_kp: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self { lookahead: 6.0, target_speed_straight: 18.0, curvature_slowdown_gain: 12.0, speed_kp: 0.5 }
    }
}

impl ExpertConfig {
    pub fn validate(&self, vehicle: &VehicleParams) -> Result<()> {
        if !(self.lookahead > 0.0) {
            return Err(Error::Config("expert lookahead must be positive".into()));
        }
        if !(self.target_speed_straight > 0.0 && self.target_speed_straight < vehicle.v_max) {
            return Err(Error::Config("expert target speed must lie in (0, v_max)".into()));
        }
        if self.curvature_slowdown_gain < 0.0 || !(self.speed_kp > 0.0) {
            return Err(Error::Config("expert gains must be non-negative".into()));
        }
        Ok(())
    }
}

pub fn target_speed(cfg: &ExpertConfig, curvature: f64) -> f64 {
    cfg.target_speed_straight / (1.0 + cfg.curvature_slowdown_gain * curvature.abs())
}

pub fn expert_action(car: &CarState, track: &Track, cfg: &ExpertConfig, vehicle: &VehicleParams) -> Result<Action> {
    let proj = track.project(car.position());
    if proj.distance > 2.0 * track.half_width() {
        return Err(Error::ExpertGaveUp(proj.distance));
    }
    let (goal, _) = track.pose_at(proj.s + cfg.lookahead);
    let (dx, dy) = (goal[0] - car.x, goal[1] - car.y);
    let (c, s) = (car.psi.cos(), car.psi.sin());
    let right = -dx * s + dy * c;
    let ld2 = dx * dx + dy * dy;
    // Pure pursuit: path curvature 2*y/ld^2 toward the goal point.
    let kappa = if ld2 > 0.0 { 2.0 * right / ld2 } else { 0.0 };
    let wheel = (kappa * vehicle.wheelbase).atan();
    let steering = (wheel / vehicle.max_steer).clamp(-1.0, 1.0);

    let v_target = target_speed(cfg, track.curvature_ahead(proj.s, cfg.lookahead));
    let throttle = (cfg.speed_kp * (v_target - car.v)).clamp(0.0, 1.0);
    let brake = (cfg.speed_kp * (car.v - v_target)).clamp(0.0, 1.0);
    Ok(Action::clamped(throttle as f32, brake as f32, steering as f32))
}
