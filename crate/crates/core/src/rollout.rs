//! Anything that can drive the car, and the episode loop shared by demo
//! collection, replay pre-fill and evaluation.

use rand::Rng as _;
use serde::Serialize;

use crate::error::Result;
use crate::expert::{expert_action, ExpertConfig};
use crate::policy::ActorNet;
use crate::sim::{Env, Preset, StepOutcome};
use crate::types::{Action, Observation, Transition};

pub trait Driver {
    fn act(&mut self, env: &Env, obs: &Observation) -> Result<Action>;
}

impl Driver for ActorNet {
    fn act(&mut self, _env: &Env, obs: &Observation) -> Result<Action> {
        ActorNet::act(self, obs)
    }
}

impl Driver for &ActorNet {
    fn act(&mut self, _env: &Env, obs: &Observation) -> Result<Action> {
        ActorNet::act(self, obs)
    }
}

/// The scripted demonstrator as a [`Driver`]; reads privileged state.
#[derive(Clone, Copy, Debug, Default)]
pub struct Expert(pub ExpertConfig);

impl Driver for Expert {
    fn act(&mut self, env: &Env, _obs: &Observation) -> Result<Action> {
        expert_action(env.car(), env.track(), &self.0, &env.config().vehicle)
    }
}

/// Always the same action.
#[derive(Clone, Copy, Debug)]
pub struct Constant(pub Action);

impl Driver for Constant {
    fn act(&mut self, _env: &Env, _obs: &Observation) -> Result<Action> {
        Ok(self.0)
    }
}

/// Uniform random actions; the reference point for the imitation gate.
#[derive(Clone, Debug)]
pub struct RandomDriver(pub crate::seed::Rng);

impl Driver for RandomDriver {
    fn act(&mut self, _env: &Env, _obs: &Observation) -> Result<Action> {
        let r = &mut self.0;
        Ok(Action::clamped(r.random_range(0.0..=1.0), r.random_range(0.0..=1.0), r.random_range(-1.0..=1.0)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpisodeSummary {
    pub seed: u64,
    pub preset: Preset,
    pub steps: usize,
    /// Undiscounted sum of per-step rewards.
    pub ret: f64,
    pub collided: bool,
}

/// Runs one episode to termination, handing every transition to `sink`.
pub fn run_episode<D: Driver + ?Sized>(
    env: &mut Env,
    driver: &mut D,
    seed: u64,
    preset: Option<Preset>,
    mut sink: impl FnMut(Transition, &StepOutcome) -> Result<()>,
) -> Result<EpisodeSummary> {
    let mut obs = env.reset_with(seed, preset);
    let mut ret = 0.0;
    loop {
        let action = driver.act(env, &obs)?;
        let out = env.step(&action)?;
        ret += out.info.reward.r;
        let t = Transition { obs, action, reward: out.info.reward.r as f32, next_obs: out.obs.clone(), done: out.done };
        sink(t, &out)?;
        if out.done {
            return Ok(EpisodeSummary {
                seed,
                preset: env.condition().preset,
                steps: env.steps(),
                ret,
                collided: out.info.collided,
            });
        }
        obs = out.obs;
    }
}
