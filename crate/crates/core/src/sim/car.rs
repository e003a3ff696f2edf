use serde::{Deserialize, Serialize};

use crate::types::Action;

/// Kinematic bicycle constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VehicleParams {
    pub wheelbase: f64,
    /// Front-wheel angle (rad) at full steering.
    pub max_steer: f64,
    pub accel: f64,
    pub brake: f64,
    pub drag: f64,
    pub v_max: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self { wheelbase: 2.5, max_steer: 0.5, accel: 4.0, brake: 8.0, drag: 0.1, v_max: 30.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CarState {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub v: f64,
}

impl CarState {
    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    /// One explicit Euler step; every update reads the pre-step state.
    pub fn step(&mut self, a: &Action, p: &VehicleParams, dt: f64) {
        let (psi, v) = (self.psi, self.v);
        let yaw_rate = v / p.wheelbase * (p.max_steer * a.steering as f64).tan();
        let accel = p.accel * a.throttle as f64 - p.brake * a.brake as f64 - p.drag * v;
        self.x += v * psi.cos() * dt;
        self.y += v * psi.sin() * dt;
        self.psi = psi + yaw_rate * dt;
        self.v = (v + accel * dt).clamp(0.0, p.v_max);
    }
}
