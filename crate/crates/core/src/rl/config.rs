use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriticLoss {
    Huber,
    Mse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RlConfig {
    pub gamma: f64,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub prefill_size: usize,
    pub pretrain_max_updates: usize,
    pub convergence_window: usize,
    pub convergence_rel_tol: f64,
    pub total_env_steps: usize,
    pub updates_per_step: usize,
    pub seed: u64,
    /// Pure DDPG from scratch: random init, no pre-fill, nothing frozen,
    /// Gaussian exploration noise. The baseline runs for
    /// `prefill_size + total_env_steps` environment steps, the same budget
    /// the modified pipeline spends.
    pub baseline: bool,
    pub baseline_noise_sigma: f64,
    /// Env steps between baseline update rounds. Baseline updates
    /// backpropagate through the convolutions and cost far more than the
    /// modified pipeline's trunk-only updates.
    pub baseline_update_every: usize,
    pub critic_loss: CriticLoss,
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Env steps between loss rows in the history.
    pub log_every: usize,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            tau: 0.005,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            batch_size: 64,
            replay_capacity: 50_000,
            prefill_size: 20_000,
            pretrain_max_updates: 10_000,
            convergence_window: 200,
            convergence_rel_tol: 0.01,
            total_env_steps: 100_000,
            updates_per_step: 1,
            seed: 0,
            baseline: false,
            baseline_noise_sigma: 0.1,
            baseline_update_every: 100,
            critic_loss: CriticLoss::Huber,
            eval_every: 5_000,
            eval_episodes: 5,
            log_every: 1_000,
        }
    }
}

impl RlConfig {
    /// Environment steps of the main loop: the baseline also gets the
    /// steps the modified pipeline spends on pre-filling.
    pub fn main_loop_steps(&self) -> usize {
        if self.baseline {
            self.prefill_size + self.total_env_steps
        } else {
            self.total_env_steps
        }
    }

    pub(crate) fn updates_due(&self, step: usize) -> bool {
        !self.baseline || step.is_multiple_of(self.baseline_update_every)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return fail("gamma must lie in (0, 1)");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return fail("tau must lie in (0, 1]");
        }
        if self.prefill_size > self.replay_capacity {
            return fail("prefill_size exceeds replay_capacity");
        }
        if self.batch_size == 0 || self.replay_capacity == 0 || self.convergence_window == 0 {
            return fail("batch_size, replay_capacity and convergence_window must be positive");
        }
        if !(self.actor_lr >= 0.0 && self.critic_lr >= 0.0) || self.convergence_rel_tol.is_nan() {
            return fail("learning rates must be non-negative");
        }
        if self.eval_every == 0 || self.log_every == 0 || self.eval_episodes == 0 || self.baseline_update_every == 0 {
            return fail("eval_every, eval_episodes, log_every and baseline_update_every must be positive");
        }
        if !(self.baseline_noise_sigma >= 0.0) {
            return fail("baseline_noise_sigma must be non-negative");
        }
        Ok(())
    }
}
