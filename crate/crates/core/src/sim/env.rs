use std::sync::Arc;

use rand::{Rng as _, SeedableRng};
use serde::{Deserialize, Serialize};

use super::car::{CarState, VehicleParams};
use super::condition::{sample_condition, Condition, Preset};
use super::render::render_observation;
use super::track::{nearest_obstacle_distance, Track};
use crate::error::{Error, Result};
use crate::reward::{compute_reward, RewardConfig};
use crate::seed::Rng;
use crate::types::{Action, Observation, StepInfo, DEFAULT_IMAGE_SIZE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub max_steps: usize,
    pub dt: f64,
    pub randomize_start: bool,
    pub randomize_condition: bool,
    pub seed: u64,
    pub image_size: usize,
    pub vehicle: VehicleParams,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            max_steps: 1000,
            dt: 0.05,
            randomize_start: true,
            randomize_condition: true,
            seed: 0,
            image_size: DEFAULT_IMAGE_SIZE,
            vehicle: VehicleParams::default(),
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_steps == 0 || !(self.dt > 0.0) || self.image_size < 8 {
            return Err(Error::Config("max_steps >= 1, dt > 0 and image_size >= 8 required".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub obs: Observation,
    pub info: StepInfo,
    pub done: bool,
}

/// One simulated car on one track.
#[derive(Clone, Debug)]
pub struct Env {
    track: Arc<Track>,
    cfg: EpisodeConfig,
    reward: RewardConfig,
    car: CarState,
    condition: Condition,
    steps: usize,
    active: bool,
    rng: Rng,
}

impl Env {
    pub fn new(track: Arc<Track>, cfg: EpisodeConfig, reward: RewardConfig) -> Result<Self> {
        cfg.validate()?;
        reward.validate()?;
        Ok(Self {
            track,
            cfg,
            reward,
            car: CarState { x: 0.0, y: 0.0, psi: 0.0, v: 0.0 },
            condition: Condition::neutral(),
            steps: 0,
            active: false,
            rng: Rng::seed_from_u64(0),
        })
    }

    pub fn track(&self) -> &Arc<Track> {
        &self.track
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.cfg
    }

    pub fn reward_config(&self) -> &RewardConfig {
        &self.reward
    }

    pub fn car(&self) -> &CarState {
        &self.car
    }

    pub fn condition(&self) -> &Condition {
        &self.condition
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn set_max_steps(&mut self, max_steps: usize) -> Result<()> {
        if max_steps == 0 {
            return Err(Error::Config("max_steps must be at least 1".into()));
        }
        self.cfg.max_steps = max_steps;
        Ok(())
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    pub fn reset(&mut self, seed: u64) -> Observation {
        self.reset_with(seed, None)
    }

    /// Like [`Env::reset`], but a given preset overrides condition sampling
    /// (its parameters are still drawn from the preset's ranges).
    pub fn reset_with(&mut self, seed: u64, preset: Option<Preset>) -> Observation {
        self.rng = Rng::seed_from_u64(seed);
        let s = if self.cfg.randomize_start { self.rng.random_range(0.0..self.track.perimeter()) } else { 0.0 };
        let (p, t) = self.track.pose_at(s);
        self.car = CarState { x: p[0], y: p[1], psi: t[1].atan2(t[0]), v: 0.0 };
        self.condition = match preset {
            Some(p) => Condition::sample_preset(p, &mut self.rng),
            None if self.cfg.randomize_condition => sample_condition(&mut self.rng),
            None => Condition::neutral(),
        };
        self.steps = 0;
        self.active = true;
        self.observe()
    }

    /// Puts the car at an arbitrary state and reopens the episode.
    pub fn place_car(&mut self, car: CarState) {
        self.car = car;
        self.active = true;
    }

    /// Renders the current state; consumes render noise from the episode rng.
    pub fn observe(&mut self) -> Observation {
        let n = self.cfg.image_size;
        let img = render_observation(&self.track, &self.car, &self.condition, n, &mut self.rng);
        Observation::new(img, n, n, self.car.v as f32).expect("renderer produces valid observations")
    }

    pub fn step(&mut self, action: &Action) -> Result<StepOutcome> {
        if !self.active {
            return Err(Error::State("step called on a finished or unstarted episode".into()));
        }
        action.validate()?;
        self.car.step(action, &self.cfg.vehicle, self.cfg.dt);
        if !(self.car.x.is_finite() && self.car.y.is_finite() && self.car.psi.is_finite()) {
            return Err(Error::Numeric("car state became non-finite".into()));
        }
        self.steps += 1;
        let raw = self.track.clearance(self.car.position());
        let d = raw.max(0.0);
        let collided = raw <= 0.0;
        let reward = compute_reward(d, self.car.v, &self.reward)?;
        let done = collided || self.steps >= self.cfg.max_steps;
        self.active = !done;
        let obs = self.observe();
        let info = StepInfo { distance_to_obstacle: d, speed: self.car.v, collided, reward };
        Ok(StepOutcome { obs, info, done })
    }

    pub fn distance_to_obstacle(&self) -> f64 {
        nearest_obstacle_distance(&self.track, self.car.position())
    }
}
