use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand_distr::{Distribution, Normal};
use serde::Serialize;

use super::config::RlConfig;
use super::ddpg::{ddpg_update, pretrain_on_buffer, Batch, DdpgNets, UpdateLosses};
use super::replay::{Entry, ReplayBuffer};
use crate::checkpoint::{Checkpoint, CheckpointMeta, Phase};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::policy::{action_from_row, image_batch, speed_batch, transfer_from_il, ActorNet, CriticNet, NetConfig};
use crate::seed::{Rng, SeedStream};
use crate::sim::Env;
use crate::types::{Action, Observation, Transition};

/// Hooks for inspecting a run; every method defaults to doing nothing.
pub trait RlObserver {
    /// Called for every action sent to the environment, with the network
    /// that chose it.
    fn env_action(&mut self, _actor: &ActorNet, _obs: &Observation, _action: &Action) {}
    fn before_update(&mut self, _nets: &DdpgNets, _buffer_len: usize) {}
    fn after_update(&mut self, _nets: &DdpgNets) {}
}

pub struct NoObserver;

impl RlObserver for NoObserver {}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HistoryRow {
    pub env_step: usize,
    pub critic_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub eval_return: Option<f64>,
}

pub fn history_csv(rows: &[HistoryRow]) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut s = String::from("env_step,critic_loss,actor_loss,eval_return\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.env_step, opt(r.critic_loss), opt(r.actor_loss), opt(r.eval_return));
    }
    s
}

pub fn write_history_csv(path: impl AsRef<Path>, rows: &[HistoryRow]) -> Result<()> {
    std::fs::write(path, history_csv(rows))?;
    Ok(())
}

pub struct RlOutcome {
    /// Best-evaluated actor, tagged phase "rl".
    pub checkpoint: Checkpoint,
    pub best_eval_return: f64,
    pub history: Vec<HistoryRow>,
    pub pretrain_updates: usize,
    pub nets: DdpgNets,
}

/// Drives the environment across episode boundaries, caching backbone
/// features of the current observation when the backbone is frozen.
struct Stepper {
    obs: Observation,
    feat: Option<Arc<[f32]>>,
    seeds: SeedStream,
    episode: u64,
}

fn features_of(actor: &ActorNet, obs: &Observation) -> Result<Arc<[f32]>> {
    Ok(actor.net.features(&image_batch(&[obs])?)?.into_data().into())
}

impl Stepper {
    fn start(env: &mut Env, seeds: SeedStream, cache: Option<&ActorNet>) -> Result<Self> {
        let obs = env.reset(seeds.derive("0"));
        let feat = cache.map(|a| features_of(a, &obs)).transpose()?;
        Ok(Self { obs, feat, seeds, episode: 0 })
    }

    /// Acts with `actor` (plus optional Gaussian noise), steps, and returns
    /// the buffer entry for the transition.
    fn step(
        &mut self,
        env: &mut Env,
        actor: &ActorNet,
        cache: bool,
        noise: Option<(&mut Rng, &Normal<f64>)>,
        observer: &mut dyn RlObserver,
    ) -> Result<Entry> {
        let mu = match &self.feat {
            Some(f) if cache => {
                let ft = crate::nn::Tensor::new(vec![1, f.len()], f.to_vec())?;
                action_from_row(actor.act_features(&ft, &speed_batch(&[&self.obs], actor.net.v_theta))?.row(0))
            }
            _ => actor.act(&self.obs)?,
        };
        let action = match noise {
            Some((rng, normal)) => Action::clamped(
                mu.throttle + normal.sample(rng) as f32,
                mu.brake + normal.sample(rng) as f32,
                mu.steering + normal.sample(rng) as f32,
            ),
            None => mu,
        };
        observer.env_action(actor, &self.obs, &action);
        let out = env.step(&action)?;
        let next_feat = if cache { Some(features_of(actor, &out.obs)?) } else { None };
        let transition = Transition::new(self.obs.clone(), action, out.info.reward.r as f32, out.obs.clone(), out.done)?;
        let features = match (&self.feat, &next_feat) {
            (Some(a), Some(b)) if cache => Some((a.clone(), b.clone())),
            _ => None,
        };
        if out.done {
            self.episode += 1;
            self.obs = env.reset(self.seeds.derive(&self.episode.to_string()));
            self.feat = if cache { Some(features_of(actor, &self.obs)?) } else { None };
        } else {
            self.obs = out.obs;
            self.feat = next_feat;
        }
        Ok(Entry { transition, features })
    }
}

/// Rolls out `policy` without noise until `size` transitions are stored.
pub fn prefill_replay(
    policy: &ActorNet,
    env: &mut Env,
    size: usize,
    capacity: usize,
    seed: u64,
    cache_features: bool,
    observer: &mut dyn RlObserver,
) -> Result<ReplayBuffer> {
    let mut buffer = ReplayBuffer::new(capacity.max(1));
    let seeds = SeedStream::new(seed).child("prefill");
    let mut stepper = Stepper::start(env, seeds, cache_features.then_some(policy))?;
    while buffer.len() < size {
        buffer.push(stepper.step(env, policy, cache_features, None, observer)?);
    }
    Ok(buffer)
}

/// The modified DDPG pipeline, or the from-scratch baseline when
/// `cfg.baseline` is set.
pub fn train_rl(
    il_ckpt: Option<&Checkpoint>,
    env: &mut Env,
    cfg: &RlConfig,
    net: &NetConfig,
    config_digest: &str,
    observer: &mut dyn RlObserver,
) -> Result<RlOutcome> {
    cfg.validate()?;
    let seeds = SeedStream::new(cfg.seed);
    let v_theta = env.reward_config().v_theta;
    let mut eval_env = env.clone();
    let eval_seed = seeds.derive("select");
    let eval_steps = env.config().max_steps;
    let mut update_rng = seeds.rng("replay");
    let mut history = Vec::new();

    let (mut nets, mut buffer, pretrain_updates, noise) = if cfg.baseline {
        let mut init = seeds.rng("init");
        let actor = ActorNet::random(net, v_theta, &mut init)?;
        let critic = CriticNet::random(net, v_theta, &mut init)?;
        let normal = Normal::new(0.0, cfg.baseline_noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
        (DdpgNets::new(actor, critic), ReplayBuffer::new(cfg.replay_capacity), 0, Some((seeds.rng("noise"), normal)))
    } else {
        let il = il_ckpt.ok_or_else(|| Error::validation("imitation checkpoint required unless baseline is set"))?;
        if il.meta.phase != Phase::Il {
            return Err(Error::validation("RL must start from a checkpoint with phase \"il\""));
        }
        let il_actor = ActorNet::from_checkpoint(il, net, v_theta)?;
        let (actor, critic) = transfer_from_il(il, net, v_theta, &mut seeds.rng("init"))?;
        let mut nets = DdpgNets::new(actor, critic);
        let cache = nets.shares_frozen_backbone();
        let buffer = prefill_replay(&il_actor, env, cfg.prefill_size, cfg.replay_capacity, cfg.seed, cache, observer)?;
        let mut last = None;
        let updates = pretrain_on_buffer(&mut nets, &buffer, cfg, &mut update_rng, |n, l| {
            last = Some(l);
            observer.after_update(n);
        })?;
        history.push(HistoryRow {
            env_step: 0,
            critic_loss: last.map(|l| l.critic),
            actor_loss: last.map(|l| l.actor),
            eval_return: None,
        });
        (nets, buffer, updates, None)
    };
    let cache = !cfg.baseline && nets.shares_frozen_backbone();

    let mut eval = |actor: &ActorNet| -> Result<f64> {
        let mut a = actor;
        Ok(evaluate(&mut a, &mut eval_env, cfg.eval_episodes, eval_steps, eval_seed, "select")?.mean_return)
    };
    let mut best = (eval(&nets.actor)?, nets.actor.clone());
    history.push(HistoryRow { env_step: 0, critic_loss: None, actor_loss: None, eval_return: Some(best.0) });

    let mut stepper = Stepper::start(env, seeds.child("episodes"), cache.then_some(&nets.actor))?;
    let mut noise = noise;
    let mut pending: Vec<UpdateLosses> = Vec::new();
    let steps = cfg.main_loop_steps();
    for step in 1..=steps {
        let entry = stepper.step(env, &nets.actor, cache, noise.as_mut().map(|(r, n)| (r, &*n)), observer)?;
        buffer.push(entry);
        if buffer.len() >= cfg.batch_size && cfg.updates_due(step) {
            for _ in 0..cfg.updates_per_step {
                observer.before_update(&nets, buffer.len());
                let entries = buffer.sample(cfg.batch_size, &mut update_rng);
                let batch = Batch::from_entries(&entries, v_theta, cache)?;
                let l = ddpg_update(&mut nets, &batch, cfg).map_err(|e| Error::Numeric(format!("env step {step}: {e}")))?;
                observer.after_update(&nets);
                pending.push(l);
            }
        }
        let log = step % cfg.log_every == 0;
        let evaluate_now = step % cfg.eval_every == 0 || step == steps;
        if log || evaluate_now {
            let n = pending.len() as f64;
            let mean = |f: fn(&UpdateLosses) -> f64| (n > 0.0).then(|| pending.iter().map(f).sum::<f64>() / n);
            let mut row =
                HistoryRow { env_step: step, critic_loss: mean(|l| l.critic), actor_loss: mean(|l| l.actor), eval_return: None };
            pending.clear();
            if evaluate_now {
                let r = eval(&nets.actor)?;
                row.eval_return = Some(r);
                if r > best.0 {
                    best = (r, nets.actor.clone());
                }
            }
            history.push(row);
        }
    }

    let meta = CheckpointMeta::new(Phase::Rl, cfg.seed, config_digest);
    Ok(RlOutcome {
        checkpoint: best.1.to_checkpoint(meta)?,
        best_eval_return: best.0,
        history,
        pretrain_updates,
        nets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reward::RewardConfig;
    use crate::rl::act_no_noise;
    use crate::sim::{EpisodeConfig, Track};
    use rand::SeedableRng;

    fn tiny() -> NetConfig {
        NetConfig { image_hw: 8, stem_channels: 2, residual_blocks: 1, feature_dim: 4, fc_widths: [8, 6], ..Default::default() }
    }

    fn env() -> Env {
        let cfg = EpisodeConfig { image_size: 8, max_steps: 40, ..Default::default() };
        Env::new(Arc::new(Track::default_circuit()), cfg, RewardConfig::default()).unwrap()
    }

    fn il_ckpt(seed: u64) -> Checkpoint {
        let mut rng = Rng::seed_from_u64(seed);
        let mut a = ActorNet::random(&tiny(), 20.0, &mut rng).unwrap();
        // Full throttle so rollouts move and rewards vary.
        a.net.trunk.param_mut("head.bias").unwrap().value.data_mut().copy_from_slice(&[4.0, -4.0, 0.0]);
        a.to_checkpoint(CheckpointMeta::new(Phase::Il, seed, "")).unwrap()
    }

    fn small_cfg() -> RlConfig {
        RlConfig {
            batch_size: 8,
            replay_capacity: 200,
            prefill_size: 60,
            pretrain_max_updates: 30,
            convergence_window: 5,
            total_env_steps: 50,
            eval_every: 25,
            eval_episodes: 1,
            log_every: 10,
            seed: 3,
            ..Default::default()
        }
    }

    #[derive(Default)]
    struct Recorder {
        actions: usize,
        updates: usize,
        actions_at_first_update: Option<usize>,
        mismatches: usize,
        noisy: usize,
        check_no_noise: bool,
    }

    impl RlObserver for Recorder {
        fn env_action(&mut self, actor: &ActorNet, obs: &Observation, action: &Action) {
            self.actions += 1;
            if !action.bit_eq(&act_no_noise(actor, obs).unwrap()) {
                if self.check_no_noise {
                    self.mismatches += 1;
                }
                self.noisy += 1;
            }
        }

        fn after_update(&mut self, _nets: &DdpgNets) {
            self.actions_at_first_update.get_or_insert(self.actions);
            self.updates += 1;
        }
    }

    #[test]
    fn prefill_fills_with_bounded_rewards_reproducibly() {
        let actor = ActorNet::from_checkpoint(&il_ckpt(1), &tiny(), 20.0).unwrap();
        let run = || prefill_replay(&actor, &mut env(), 90, 100, 4, true, &mut NoObserver).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(a.len(), 90);
        for i in 0..a.len() {
            let (x, y) = (a.get(i), b.get(i));
            assert!(x.transition.bit_eq(&y.transition));
            assert!((0.0..=1.0).contains(&x.transition.reward));
            let (f, g) = x.features.as_ref().unwrap();
            assert_eq!(f.len(), 4);
            assert_eq!(g.len(), 4);
        }
        assert!((0..a.len()).any(|i| a.get(i).transition.done), "40-step episodes must end inside 90 steps");
    }

    #[test]
    fn modified_run_honors_prefill_and_no_noise() {
        let mut rec = Recorder { check_no_noise: true, ..Default::default() };
        let cfg = small_cfg();
        let out = train_rl(Some(&il_ckpt(2)), &mut env(), &cfg, &tiny(), "d", &mut rec).unwrap();
        assert_eq!(rec.actions_at_first_update, Some(cfg.prefill_size));
        assert_eq!(rec.mismatches, 0);
        assert_eq!(rec.actions, cfg.prefill_size + cfg.total_env_steps);
        assert_eq!(rec.updates, out.pretrain_updates + cfg.total_env_steps);
        assert_eq!(out.checkpoint.meta.phase, Phase::Rl);
        assert_eq!(out.nets.updates() as usize, rec.updates);
        let evals: Vec<usize> = out.history.iter().filter(|h| h.eval_return.is_some()).map(|h| h.env_step).collect();
        assert_eq!(evals, vec![0, 25, 50]);
    }

    #[test]
    fn zero_steps_returns_the_pretrained_policy() {
        let cfg = RlConfig { total_env_steps: 0, ..small_cfg() };
        let out = train_rl(Some(&il_ckpt(3)), &mut env(), &cfg, &tiny(), "", &mut NoObserver).unwrap();
        let trained = out.nets.actor.to_checkpoint(out.checkpoint.meta.clone()).unwrap();
        assert!(out.checkpoint.bit_eq(&trained));
    }

    #[test]
    fn runs_are_reproducible() {
        let run = || train_rl(Some(&il_ckpt(4)), &mut env(), &small_cfg(), &tiny(), "", &mut NoObserver).unwrap();
        let (a, b) = (run(), run());
        assert!(a.checkpoint.bit_eq(&b.checkpoint));
        assert_eq!(history_csv(&a.history), history_csv(&b.history));
    }

    #[test]
    fn baseline_starts_immediately_with_noise() {
        let cfg = RlConfig { baseline: true, baseline_update_every: 4, ..small_cfg() };
        let mut rec = Recorder::default();
        let out = train_rl(None, &mut env(), &cfg, &tiny(), "", &mut rec).unwrap();
        assert_eq!(out.pretrain_updates, 0);
        assert_eq!(rec.actions, cfg.prefill_size + cfg.total_env_steps);
        assert_eq!(rec.actions_at_first_update, Some(cfg.batch_size));
        let due = (cfg.batch_size..=rec.actions).filter(|s| s % cfg.baseline_update_every == 0).count();
        assert_eq!(rec.updates, due);
        assert!(rec.noisy > 0);
        assert!(!out.nets.actor.net.backbone_frozen());
    }

    #[test]
    fn rejects_non_il_checkpoints() {
        let mut ck = il_ckpt(5);
        ck.meta.phase = Phase::Rl;
        assert!(train_rl(Some(&ck), &mut env(), &small_cfg(), &tiny(), "", &mut NoObserver).is_err());
        assert!(train_rl(None, &mut env(), &small_cfg(), &tiny(), "", &mut NoObserver).is_err());
    }

    #[test]
    fn history_csv_leaves_missing_values_blank() {
        let rows = [HistoryRow { env_step: 5, critic_loss: Some(0.5), actor_loss: None, eval_return: Some(2.0) }];
        assert_eq!(history_csv(&rows), "env_step,critic_loss,actor_loss,eval_return\n5,0.5,,2\n");
    }
}
