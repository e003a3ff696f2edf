use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::{CriticLoss, RlConfig};
use super::replay::{Entry, ReplayBuffer};
use crate::error::{Error, Result};
use crate::nn::{huber_loss, mse_loss, HuberConfig, Optimizer, Tensor};
use crate::policy::{action_batch, image_batch, speed_batch, ActorNet, CriticNet, TwoStage, ACTION_INPUT, SPEED_INPUT};
use crate::seed::Rng;
use crate::types::{Action, Observation};

/// Network inputs of a batch: cached backbone features when the backbone is
/// frozen and shared, raw images otherwise.
#[derive(Clone, Debug)]
pub enum BatchInputs {
    Features { obs: Tensor, next: Tensor },
    Images { obs: Tensor, next: Tensor },
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub inputs: BatchInputs,
    pub speed: Tensor,
    pub next_speed: Tensor,
    pub actions: Tensor,
    pub rewards: Vec<f32>,
    pub done: Vec<bool>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Uses cached features when `use_features` is set and every entry has
    /// them.
    pub fn from_entries(entries: &[&Entry], v_theta: f64, use_features: bool) -> Result<Self> {
        let obs: Vec<&Observation> = entries.iter().map(|e| &e.transition.obs).collect();
        let next: Vec<&Observation> = entries.iter().map(|e| &e.transition.next_obs).collect();
        let cached: Option<Vec<&(Arc<[f32]>, Arc<[f32]>)>> =
            if use_features { entries.iter().map(|e| e.features.as_ref()).collect() } else { None };
        let inputs = match cached {
            Some(f) => {
                let dim = f.first().map_or(0, |p| p.0.len());
                let a: Vec<&[f32]> = f.iter().map(|p| &p.0[..]).collect();
                let b: Vec<&[f32]> = f.iter().map(|p| &p.1[..]).collect();
                BatchInputs::Features { obs: Tensor::stack(&a, &[dim])?, next: Tensor::stack(&b, &[dim])? }
            }
            None => BatchInputs::Images { obs: image_batch(&obs)?, next: image_batch(&next)? },
        };
        let actions: Vec<Action> = entries.iter().map(|e| e.transition.action).collect();
        Ok(Self {
            inputs,
            speed: speed_batch(&obs, v_theta),
            next_speed: speed_batch(&next, v_theta),
            actions: action_batch(&actions),
            rewards: entries.iter().map(|e| e.transition.reward).collect(),
            done: entries.iter().map(|e| e.transition.done).collect(),
        })
    }
}

/// Online and target networks with their optimizers.
#[derive(Clone, Debug)]
pub struct DdpgNets {
    pub actor: ActorNet,
    pub critic: CriticNet,
    pub actor_target: ActorNet,
    pub critic_target: CriticNet,
    actor_opt: Optimizer,
    critic_opt: Optimizer,
    updates: u64,
    shared_frozen_backbone: bool,
}

fn same_frozen_backbone(a: &TwoStage, b: &TwoStage) -> bool {
    a.backbone_frozen()
        && b.backbone_frozen()
        && a.backbone.params().iter().zip(b.backbone.params()).all(|(x, y)| x.value.bit_eq(&y.value))
}

impl DdpgNets {
    /// Targets start as exact copies of the online networks.
    pub fn new(actor: ActorNet, critic: CriticNet) -> Self {
        let shared = same_frozen_backbone(&actor.net, &critic.net);
        Self {
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
            actor_opt: Optimizer::adam(),
            critic_opt: Optimizer::adam(),
            updates: 0,
            shared_frozen_backbone: shared,
        }
    }

    /// Number of completed [`ddpg_update`] calls.
    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// True when all four networks run the same frozen backbone, so one
    /// feature vector per observation serves every network.
    pub fn shares_frozen_backbone(&self) -> bool {
        self.shared_frozen_backbone
    }
}

/// Deterministic action with no exploration noise.
pub fn act_no_noise(actor: &ActorNet, obs: &Observation) -> Result<Action> {
    actor.act(obs)
}

/// `y = r + gamma * (1 - done) * Q'(s', mu'(s'))`; exactly `r` when done.
pub fn critic_targets(nets: &DdpgNets, batch: &Batch, gamma: f64) -> Result<Vec<f32>> {
    let q_next = match &batch.inputs {
        BatchInputs::Features { next, .. } => {
            let a = nets.actor_target.act_features(next, &batch.next_speed)?;
            nets.critic_target.q_features(next, &batch.next_speed, &a)?
        }
        BatchInputs::Images { next, .. } => {
            let fa = nets.actor_target.net.features(next)?;
            let a = nets.actor_target.act_features(&fa, &batch.next_speed)?;
            let fc = nets.critic_target.net.features(next)?;
            nets.critic_target.q_features(&fc, &batch.next_speed, &a)?
        }
    };
    let g = gamma as f32;
    Ok(batch
        .rewards
        .iter()
        .zip(&batch.done)
        .zip(q_next.data())
        .map(|((&r, &done), &q)| if done { r } else { r + g * q })
        .collect())
}

fn forward_stage(net: &mut TwoStage, inputs: &BatchInputs, sides: &[(&str, &Tensor)]) -> Result<Tensor> {
    match inputs {
        BatchInputs::Features { obs, .. } => net.forward_trunk(obs.clone(), sides),
        BatchInputs::Images { obs, .. } => {
            let through = !net.backbone_frozen();
            net.forward_train(obs, sides, through)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateLosses {
    pub critic: f64,
    pub actor: f64,
}

/// One critic step, one actor step, then soft updates of both targets.
pub fn ddpg_update(nets: &mut DdpgNets, batch: &Batch, cfg: &RlConfig) -> Result<UpdateLosses> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::Data("empty DDPG batch".into()));
    }
    if matches!(batch.inputs, BatchInputs::Features { .. }) && !nets.shared_frozen_backbone {
        return Err(Error::State("cached features need a frozen backbone shared by all networks".into()));
    }
    let y = Tensor::new(vec![n, 1], critic_targets(nets, batch, cfg.gamma)?)?;

    let sides = [(SPEED_INPUT, &batch.speed), (ACTION_INPUT, &batch.actions)];
    let q = forward_stage(&mut nets.critic.net, &batch.inputs, &sides)?;
    let (critic_loss, dq) = match cfg.critic_loss {
        CriticLoss::Huber => huber_loss(&q, &y, HuberConfig::default())?,
        CriticLoss::Mse => mse_loss(&q, &y)?,
    };
    if !critic_loss.is_finite() {
        return Err(Error::Numeric(format!("critic loss is {critic_loss}")));
    }
    let g = nets.critic.net.backward(&dq)?;
    nets.critic_opt.step(nets.critic.net.params_mut(), &g.params, cfg.critic_lr as f32)?;

    let mu = forward_stage(&mut nets.actor.net, &batch.inputs, &[(SPEED_INPUT, &batch.speed)])?;
    // Critic parameters are constants here: its backbone is not recorded and
    // its parameter gradients are dropped.
    let q_pi = match &batch.inputs {
        BatchInputs::Features { obs, .. } => {
            nets.critic.net.forward_trunk(obs.clone(), &[(SPEED_INPUT, &batch.speed), (ACTION_INPUT, &mu)])?
        }
        BatchInputs::Images { obs, .. } => {
            nets.critic.net.forward_train(obs, &[(SPEED_INPUT, &batch.speed), (ACTION_INPUT, &mu)], false)?
        }
    };
    let actor_loss = -q_pi.data().iter().map(|&v| v as f64).sum::<f64>() / n as f64;
    if !actor_loss.is_finite() {
        return Err(Error::Numeric(format!("actor loss is {actor_loss}")));
    }
    let mut gc = nets.critic.net.backward(&Tensor::filled(vec![n, 1], -1.0 / n as f32))?;
    let da = gc.inputs.remove(ACTION_INPUT).expect("critic reports its action gradient");
    let ga = nets.actor.net.backward(&da)?;
    nets.actor_opt.step(nets.actor.net.params_mut(), &ga.params, cfg.actor_lr as f32)?;

    soft_update(&mut nets.actor_target.net, &nets.actor.net, cfg.tau)?;
    soft_update(&mut nets.critic_target.net, &nets.critic.net, cfg.tau)?;
    nets.updates += 1;
    Ok(UpdateLosses { critic: critic_loss as f64, actor: actor_loss })
}

/// `target <- tau * online + (1 - tau) * target`, evaluated in f32 in that
/// order. Parameters frozen in both networks are left untouched so they stay
/// bitwise constant.
pub fn soft_update(target: &mut TwoStage, online: &TwoStage, tau: f64) -> Result<()> {
    let online = online.params();
    let targets = target.params_mut();
    if online.len() != targets.len() {
        return Err(Error::shape("soft update between networks of different layouts"));
    }
    let t = tau as f32;
    for (dst, src) in targets.into_iter().zip(online) {
        if dst.name != src.name || dst.value.shape() != src.value.shape() {
            return Err(Error::shape(format!("soft update: {} vs {}", dst.name, src.name)));
        }
        if dst.frozen && src.frozen || tau == 0.0 {
            continue;
        }
        if tau == 1.0 {
            dst.value.data_mut().copy_from_slice(src.value.data());
            continue;
        }
        for (d, s) in dst.value.data_mut().iter_mut().zip(src.value.data()) {
            *d = t * *s + (1.0 - t) * *d;
        }
    }
    Ok(())
}

/// Updates on uniform batches until both losses settle or the cap is hit.
/// Returns the number of updates performed.
pub fn pretrain_on_buffer(
    nets: &mut DdpgNets,
    buffer: &ReplayBuffer,
    cfg: &RlConfig,
    rng: &mut Rng,
    mut on_update: impl FnMut(&DdpgNets, UpdateLosses),
) -> Result<usize> {
    let w = cfg.convergence_window.max(1);
    let (mut critic, mut actor) = (Vec::new(), Vec::new());
    let use_features = nets.shares_frozen_backbone();
    for k in 1..=cfg.pretrain_max_updates {
        let entries = buffer.sample(cfg.batch_size, rng);
        let batch = Batch::from_entries(&entries, nets.actor.net.v_theta, use_features)?;
        let l = ddpg_update(nets, &batch, cfg).map_err(|e| Error::Numeric(format!("pretraining update {k}: {e}")))?;
        on_update(nets, l);
        critic.push(l.critic);
        actor.push(l.actor);
        if k >= 2 * w && settled(&critic, w, cfg.convergence_rel_tol) && settled(&actor, w, cfg.convergence_rel_tol) {
            return Ok(k);
        }
    }
    Ok(cfg.pretrain_max_updates)
}

/// Relative change between the last two windows of `losses`.
pub fn window_change(losses: &[f64], w: usize) -> f64 {
    let n = losses.len();
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let last = mean(&losses[n - w..]);
    let prev = mean(&losses[n - 2 * w..n - w]);
    (last - prev).abs() / prev.abs().max(1e-6)
}

fn settled(losses: &[f64], w: usize, tol: f64) -> bool {
    window_change(losses, w) < tol
}
