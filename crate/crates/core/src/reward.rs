//! Per-step reward from obstacle distance and speed.
//!
//! Both terms are normalized by an ideal value and saturate at 1; the reward
//! is zero whenever either normalized term drops below the cutoff, so a car
//! that stalls or scrapes an edge earns nothing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::RewardBreakdown;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Distance (m) at which the distance term saturates.
    pub d_theta: f64,
    /// Speed (m/s) at which the speed term saturates.
    pub v_theta: f64,
    pub lambda_d: f64,
    pub lambda_v: f64,
    pub cutoff: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { d_theta: 3.5, v_theta: 20.0, lambda_d: 0.5, lambda_v: 0.5, cutoff: 0.1 }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_theta > 0.0 && self.v_theta > 0.0) {
            return Err(Error::Config("d_theta and v_theta must be positive".into()));
        }
        if self.lambda_d < 0.0 || self.lambda_v < 0.0 || (self.lambda_d + self.lambda_v - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "reward weights {} + {} must be non-negative and sum to one",
                self.lambda_d, self.lambda_v
            )));
        }
        if !(0.0..=1.0).contains(&self.cutoff) {
            return Err(Error::Config(format!("cutoff {} outside [0,1]", self.cutoff)));
        }
        Ok(())
    }
}

pub fn compute_reward(d: f64, v: f64, cfg: &RewardConfig) -> Result<RewardBreakdown> {
    if !(d >= 0.0 && v >= 0.0) || !d.is_finite() || !v.is_finite() {
        return Err(Error::Domain(format!("reward needs finite d >= 0 and v >= 0, got d={d} v={v}")));
    }
    let r_distance = (d / cfg.d_theta).min(1.0);
    let r_speed = (v / cfg.v_theta).min(1.0);
    let r = if r_distance < cfg.cutoff || r_speed < cfg.cutoff {
        0.0
    } else {
        cfg.lambda_d * r_distance + cfg.lambda_v * r_speed
    };
    Ok(RewardBreakdown { r_distance, r_speed, r: r.clamp(0.0, 1.0) })
}
