//! Observation, action and transition records shared by every stage.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_IMAGE_SIZE: usize = 48;

/// What the policy sees: a grayscale top-down raster and the vehicle speed.
///
/// The image is reference counted so that replay buffers and demo sets can
/// share frames between consecutive transitions.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    image: Arc<[f32]>,
    height: usize,
    width: usize,
    speed: f32,
}

impl Observation {
    pub fn new(image: impl Into<Arc<[f32]>>, height: usize, width: usize, speed: f32) -> Result<Self> {
        let image = image.into();
        if image.len() != height * width {
            return Err(Error::validation(format!(
                "image has {} values, expected {height}x{width}",
                image.len()
            )));
        }
        if let Some(bad) = image.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::validation(format!("image value {bad} outside [0,1]")));
        }
        if !speed.is_finite() || speed < 0.0 {
            return Err(Error::validation(format!("speed {speed} must be finite and non-negative")));
        }
        Ok(Self { image, height, width, speed })
    }

    pub fn image(&self) -> &[f32] {
        &self.image
    }

    pub fn shared_image(&self) -> Arc<[f32]> {
        Arc::clone(&self.image)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn speed(&self) -> f32 {
        self.speed
    }

    /// Same frame, different speed. Used by the low-speed augmentation.
    pub fn with_speed(&self, speed: f32) -> Result<Self> {
        if !speed.is_finite() || speed < 0.0 {
            return Err(Error::validation(format!("speed {speed} must be finite and non-negative")));
        }
        Ok(Self { speed, ..self.clone() })
    }

    /// Bitwise equality of every float, which `PartialEq` does not give for NaN/-0.0.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.height == other.height
            && self.width == other.width
            && self.speed.to_bits() == other.speed.to_bits()
            && self.image.iter().zip(other.image.iter()).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Throttle and brake in [0,1], steering in [-1,1] with positive meaning right.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub throttle: f32,
    pub brake: f32,
    pub steering: f32,
}

impl Action {
    pub const DIM: usize = 3;

    pub fn new(throttle: f32, brake: f32, steering: f32) -> Result<Self> {
        let a = Self { throttle, brake, steering };
        a.validate()?;
        Ok(a)
    }

    /// Clamps each component into range; NaN maps to zero.
    pub fn clamped(throttle: f32, brake: f32, steering: f32) -> Self {
        fn c(v: f32, lo: f32, hi: f32) -> f32 {
            if v.is_nan() {
                0.0
            } else {
                v.clamp(lo, hi)
            }
        }
        Self {
            throttle: c(throttle, 0.0, 1.0),
            brake: c(brake, 0.0, 1.0),
            steering: c(steering, -1.0, 1.0),
        }
    }

    pub fn zero() -> Self {
        Self { throttle: 0.0, brake: 0.0, steering: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.throttle.is_finite()
            && self.brake.is_finite()
            && self.steering.is_finite()
            && (0.0..=1.0).contains(&self.throttle)
            && (0.0..=1.0).contains(&self.brake)
            && (-1.0..=1.0).contains(&self.steering);
        if ok {
            Ok(())
        } else {
            Err(Error::validation(format!("action {self:?} outside its ranges")))
        }
    }

    pub fn to_array(self) -> [f32; 3] {
        [self.throttle, self.brake, self.steering]
    }

    pub fn from_slice(v: &[f32]) -> Result<Self> {
        match v {
            [t, b, s] => Self::new(*t, *b, *s),
            _ => Err(Error::shape(format!("action needs 3 values, got {}", v.len()))),
        }
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        self.to_array()
            .iter()
            .zip(other.to_array().iter())
            .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub obs: Observation,
    pub action: Action,
    pub reward: f32,
    pub next_obs: Observation,
    pub done: bool,
}

impl Transition {
    pub fn new(obs: Observation, action: Action, reward: f32, next_obs: Observation, done: bool) -> Result<Self> {
        let t = Self { obs, action, reward, next_obs, done };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        self.action.validate()?;
        if !self.reward.is_finite() || !(0.0..=1.0).contains(&self.reward) {
            return Err(Error::validation(format!("reward {} outside [0,1]", self.reward)));
        }
        if self.obs.height() != self.next_obs.height() || self.obs.width() != self.next_obs.width() {
            return Err(Error::validation("obs and next_obs resolutions differ"));
        }
        Ok(())
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        self.obs.bit_eq(&other.obs)
            && self.action.bit_eq(&other.action)
            && self.reward.to_bits() == other.reward.to_bits()
            && self.next_obs.bit_eq(&other.next_obs)
            && self.done == other.done
    }
}

/// Per-step diagnostics from the environment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    /// Distance to the nearest obstacle or road edge, clamped at zero.
    pub distance_to_obstacle: f64,
    pub speed: f64,
    pub collided: bool,
    pub reward: RewardBreakdown,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_distance: f64,
    pub r_speed: f64,
    pub r: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(v: f32) -> Vec<f32> {
        vec![v; 4]
    }

    #[test]
    fn observation_invariants() {
        assert!(Observation::new(img(0.5), 2, 2, 0.0).is_ok());
        assert!(Observation::new(img(1.5), 2, 2, 0.0).is_err());
        assert!(Observation::new(img(f32::NAN), 2, 2, 0.0).is_err());
        assert!(Observation::new(img(0.5), 2, 2, -1.0).is_err());
        assert!(Observation::new(img(0.5), 3, 2, 1.0).is_err());
    }

    #[test]
    fn action_ranges() {
        assert!(Action::new(0.0, 1.0, -1.0).is_ok());
        assert!(Action::new(1.1, 0.0, 0.0).is_err());
        assert!(Action::new(0.0, -0.1, 0.0).is_err());
        assert!(Action::new(0.0, 0.0, f32::INFINITY).is_err());
        let c = Action::clamped(2.0, -3.0, f32::NAN);
        assert_eq!(c, Action::new(1.0, 0.0, 0.0).unwrap());
    }

    #[test]
    fn transition_reward_range() {
        let o = Observation::new(img(0.1), 2, 2, 1.0).unwrap();
        assert!(Transition::new(o.clone(), Action::zero(), 1.5, o.clone(), false).is_err());
        assert!(Transition::new(o.clone(), Action::zero(), 0.25, o, true).is_ok());
    }
}
