//! Independent oracles shared by the integration tests and the acceptance
//! report. Nothing here calls the code path it checks.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use ildrive_core::checkpoint::{Checkpoint, CheckpointMeta, Phase};
use ildrive_core::nn::{
    gradient_check, huber_loss, mse_loss, relative_error, BackwardFault, HuberConfig, LayerSpec, Network, Param, Tensor,
    TensorMap, Units,
};
use ildrive_core::policy::{is_head_param, transfer_from_il, ActorNet, NetConfig};
use ildrive_core::rl::{act_no_noise, train_rl, DdpgNets, RlConfig, RlObserver};
use ildrive_core::dataset::{augment_low_speed, collect_demos, Source};
use ildrive_core::expert::ExpertConfig;
use ildrive_core::reward::{compute_reward, RewardConfig};
use ildrive_core::rollout::Expert;
use ildrive_core::sim::{nearest_obstacle_distance, EpisodeConfig, Env, Obstacle, Track, TrackSpec};
use ildrive_core::{Action, Observation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Finite-difference step for gradient checks.
pub const GRAD_EPS: f64 = 1e-3;
pub const GRAD_TOL: f64 = 1e-3;
pub const GRAD_INSTANCES: u64 = 20;

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f32, hi: f32) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn randomize(net: &mut Network, rng: &mut ChaCha8Rng) {
    for p in net.params_mut() {
        p.value.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    }
}

struct Instance {
    net: Network,
    inputs: TensorMap,
}

/// A small network exercising one layer kind, with random weights and
/// inputs drawn from `seed`.
fn instance(kind: &str, seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let batch = rng.random_range(1..=3);
    let c_in = rng.random_range(1..=3);
    let c_out = rng.random_range(1..=3);
    let hw = rng.random_range(4..=7);
    let fc = |name: &str, i, o| LayerSpec::FullyConnected { name: name.into(), inputs: i, outputs: o };
    let conv = |i, o, stride| LayerSpec::Conv2d { name: "conv".into(), in_channels: i, out_channels: o, kernel: 3, stride };
    let (input_shape, specs, sides): (Vec<usize>, Vec<LayerSpec>, Vec<(&str, usize)>) = match kind {
        "conv2d" => (vec![hw, hw, c_in], vec![conv(c_in, c_out, rng.random_range(1..=2))], vec![]),
        "residual" => (vec![hw, hw, c_in], vec![LayerSpec::ResidualBlock { name: "res".into(), channels: c_in }], vec![]),
        "fully_connected" => (vec![5], vec![fc("fc", 5, 4)], vec![]),
        "relu" => (vec![5], vec![fc("fc", 5, 6), LayerSpec::Relu], vec![]),
        "sigmoid" => (vec![5], vec![fc("fc", 5, 4), LayerSpec::Sigmoid { units: Units::range(0, 2) }], vec![]),
        "tanh" => (vec![5], vec![fc("fc", 5, 4), LayerSpec::Tanh { units: Units::ALL }], vec![]),
        "global_avg_pool" => (vec![hw, hw, c_in], vec![conv(c_in, c_out, 1), LayerSpec::GlobalAvgPool], vec![]),
        "concat_input" => (
            vec![4],
            vec![fc("fc1", 4, 3), LayerSpec::ConcatInput { input: "side".into(), width: 2 }, fc("fc2", 5, 2)],
            vec![("side", 2)],
        ),
        other => panic!("unknown layer kind {other}"),
    };
    let mut net = Network::from_specs("x", input_shape.clone(), &specs).unwrap();
    randomize(&mut net, &mut rng);
    let mut shape = vec![batch];
    shape.extend(&input_shape);
    let mut inputs = BTreeMap::new();
    inputs.insert("x".to_string(), random_tensor(&mut rng, shape, -1.0, 1.0));
    for (name, w) in sides {
        inputs.insert(name.to_string(), random_tensor(&mut rng, vec![batch, w], -1.0, 1.0));
    }
    Instance { net, inputs }
}

pub const LAYER_KINDS: [&str; 8] =
    ["conv2d", "residual", "fully_connected", "relu", "sigmoid", "tanh", "global_avg_pool", "concat_input"];

/// Worst relative error over `GRAD_INSTANCES` random instances of one layer
/// kind. Instances with a ReLU input closer to its kink than ten steps are
/// redrawn, since finite differences are meaningless across the kink.
pub fn layer_worst_error(kind: &str) -> f64 {
    let mut worst: f64 = 0.0;
    let (mut kept, mut seed) = (0, 0u64);
    while kept < GRAD_INSTANCES {
        seed += 1;
        let inst = instance(kind, seed);
        if inst.net.relu_margin(&inst.inputs).unwrap() < 10.0 * GRAD_EPS {
            continue;
        }
        worst = worst.max(gradient_check(&inst.net, &inst.inputs, GRAD_EPS).unwrap());
        kept += 1;
    }
    worst
}

/// Gradient-check error with the first layer's input gradient negated.
/// Must be far above tolerance for the check to mean anything.
pub fn corrupted_backward_error(kind: &str) -> f64 {
    let mut inst = instance(kind, 1);
    inst.net.inject_backward_fault(Some(BackwardFault::FlipInputGrad(0)));
    gradient_check(&inst.net, &inst.inputs, GRAD_EPS).unwrap()
}

/// Element-wise loss gradients against central differences of the loss
/// value, in f64, over random instances straddling both Huber branches.
pub fn loss_worst_error(kind: &str) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..GRAD_INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let delta = rng.random_range(0.5..2.0);
        let cfg = HuberConfig::new(delta).unwrap();
        let n = rng.random_range(2..=12);
        let target: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let pred: Vec<f64> = target
            .iter()
            .map(|t| loop {
                let e: f64 = rng.random_range(-3.0 * delta..3.0 * delta);
                // Stay off the knee, where the loss is only once differentiable.
                if (e.abs() - delta).abs() > 10.0 * GRAD_EPS {
                    break t + e;
                }
            })
            .collect();
        let tgt = Tensor::new(vec![n, 1], target).unwrap();
        let eval = |p: &[f64]| -> (f64, Tensor<f64>) {
            let pt = Tensor::new(vec![n, 1], p.to_vec()).unwrap();
            match kind {
                "huber" => huber_loss(&pt, &tgt, cfg).unwrap(),
                "mse" => mse_loss(&pt, &tgt).unwrap(),
                other => panic!("unknown loss {other}"),
            }
        };
        let (_, grad) = eval(&pred);
        for i in 0..n {
            let mut p = pred.clone();
            p[i] += GRAD_EPS;
            let plus = eval(&p).0;
            p[i] -= 2.0 * GRAD_EPS;
            let minus = eval(&p).0;
            worst = worst.max(relative_error(grad.data()[i], (plus - minus) / (2.0 * GRAD_EPS)));
        }
    }
    worst
}

/// Hand-evaluated reward cases with default weights: (d, v, r_distance,
/// r_speed, r).
pub const REWARD_TABLE: [(f64, f64, f64, f64, f64); 12] = [
    (3.5, 20.0, 1.0, 1.0, 1.0),
    (1.75, 10.0, 0.5, 0.5, 0.5),
    (0.3, 20.0, 0.3 / 3.5, 1.0, 0.0),
    (7.0, 40.0, 1.0, 1.0, 1.0),
    (3.5, 1.0, 1.0, 0.05, 0.0),
    (0.0, 0.0, 0.0, 0.0, 0.0),
    (0.875, 2.5, 0.25, 0.125, 0.1875),
    (0.875, 1.9, 0.25, 0.095, 0.0),
    (3.5, 10.0, 1.0, 0.5, 0.75),
    (1.75, 30.0, 0.5, 1.0, 0.75),
    (10.0, 5.0, 1.0, 0.25, 0.625),
    (0.7, 4.0, 0.2, 0.2, 0.2),
];

/// Reference polyline distance by dense sampling: every segment of the
/// centerline is cut into pieces no longer than `step` and the nearest
/// sample wins.
pub struct DenseOracle {
    samples: Vec<[f64; 2]>,
    half_width: f64,
    obstacles: Vec<Obstacle>,
}

impl DenseOracle {
    pub fn new(track: &Track, step: f64) -> Self {
        let pts = track.points();
        let mut samples = Vec::new();
        for i in 0..pts.len() {
            let (a, b) = (pts[i], pts[(i + 1) % pts.len()]);
            let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
            let k = (len / step).ceil().max(1.0) as usize;
            for j in 0..k {
                let t = j as f64 / k as f64;
                samples.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
            }
        }
        Self { samples, half_width: track.half_width(), obstacles: track.obstacles().to_vec() }
    }

    /// Signed clearance; non-positive means contact.
    pub fn clearance(&self, p: [f64; 2]) -> f64 {
        let to_center =
            self.samples.iter().map(|s| (s[0] - p[0]).powi(2) + (s[1] - p[1]).powi(2)).fold(f64::INFINITY, f64::min);
        let mut d = self.half_width - to_center.sqrt();
        for o in &self.obstacles {
            d = d.min(((p[0] - o.center[0]).powi(2) + (p[1] - o.center[1]).powi(2)).sqrt() - o.radius);
        }
        d
    }

    pub fn distance(&self, p: [f64; 2]) -> f64 {
        self.clearance(p).max(0.0)
    }
}

/// The default circuit with three obstacles on the road.
pub fn obstacle_track() -> Track {
    let base = Track::default_circuit();
    let obstacles = [(30.0, 1.5, 0.8), (90.0, -2.0, 1.0), (150.0, 0.0, 0.6)]
        .iter()
        .map(|&(s, lateral, radius)| {
            let (p, t) = base.pose_at(s);
            // Right of travel is (-t.y, t.x) in the y-down frame.
            Obstacle { center: [p[0] - lateral * t[1], p[1] + lateral * t[0]], radius }
        })
        .collect();
    Track::new(TrackSpec { obstacles, ..base.spec().clone() }).unwrap()
}

/// Largest |implementation - oracle| over `n` random poses near the road.
pub fn distance_oracle_max_error(track: &Track, n: usize, seed: u64) -> f64 {
    let oracle = DenseOracle::new(track, 1e-3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let (p, t) = track.pose_at(rng.random_range(0.0..track.perimeter()));
        let off = rng.random_range(-1.3..1.3) * track.half_width();
        let q = [p[0] - off * t[1], p[1] + off * t[0]];
        worst = worst.max((nearest_obstacle_distance(track, q) - oracle.distance(q)).abs());
    }
    worst
}

/// Poses whose oracle clearance lies this close to zero are ambiguous at
/// the oracle's own resolution and are not scored.
const CONTACT_BAND: f64 = 1e-4;

pub struct TerminationAudit {
    pub episodes: u64,
    pub mismatches: u64,
    pub capped: u64,
    pub crashed: u64,
}

/// Runs constant-action episodes and checks each step's `done` against
/// "oracle says contact, or this is step 1000".
pub fn termination_audit(episodes: u64) -> TerminationAudit {
    let track = Arc::new(obstacle_track());
    // A coarser grid keeps thousands of queries cheap; its error near the
    // road edge is still far below the contact band.
    let oracle = DenseOracle::new(&track, 1e-2);
    let cfg = EpisodeConfig { image_size: 8, ..Default::default() };
    assert_eq!(cfg.max_steps, 1000);
    let mut env = Env::new(track, cfg, RewardConfig::default()).unwrap();
    let mut audit = TerminationAudit { episodes, mismatches: 0, capped: 0, crashed: 0 };
    for ep in 0..episodes {
        let mut rng = ChaCha8Rng::seed_from_u64(ep);
        // Parked cars can only time out; moving ones eventually leave the road.
        let action = if ep % 2 == 0 {
            Action::zero()
        } else {
            Action::new(rng.random_range(0.3..1.0), 0.0, rng.random_range(-1.0..1.0)).unwrap()
        };
        env.reset(ep);
        let mut step = 0;
        loop {
            let out = env.step(&action).unwrap();
            step += 1;
            let c = oracle.clearance(env.car().position());
            if c.abs() > CONTACT_BAND {
                let expected = c <= 0.0 || step == 1000;
                if out.done != expected || out.info.collided != (c <= 0.0) {
                    audit.mismatches += 1;
                }
            }
            if out.done {
                if out.info.collided {
                    audit.crashed += 1;
                } else {
                    audit.capped += 1;
                }
                break;
            }
            if step >= 1000 {
                audit.mismatches += 1;
                break;
            }
        }
    }
    audit
}

/// Counters for the changes DDPG receives on top of imitation learning.
/// Every field named `*_violations` must be zero.
#[derive(Debug, Default)]
pub struct InvariantReport {
    pub transfer_violations: usize,
    pub transferred_params: usize,
    pub frozen_violations: usize,
    pub frozen_params: usize,
    pub updates: u64,
    pub early_update_violations: usize,
    pub noise_violations: usize,
    pub env_actions: usize,
    pub soft_update_violations: usize,
    pub soft_updates_checked: usize,
}

#[derive(Default)]
struct Watcher {
    report: InvariantReport,
    prefill_size: usize,
    tau: f32,
    /// Target parameters after the previous update.
    last_targets: Option<Vec<Vec<f32>>>,
}

fn target_values(nets: &DdpgNets) -> Vec<Vec<f32>> {
    nets.actor_target.net.params().into_iter().chain(nets.critic_target.net.params()).map(|p| p.value.data().to_vec()).collect()
}

impl RlObserver for Watcher {
    fn env_action(&mut self, actor: &ActorNet, obs: &Observation, action: &Action) {
        self.report.env_actions += 1;
        if !act_no_noise(actor, obs).unwrap().bit_eq(action) {
            self.report.noise_violations += 1;
        }
    }

    fn before_update(&mut self, _nets: &DdpgNets, buffer_len: usize) {
        if buffer_len < self.prefill_size {
            self.report.early_update_violations += 1;
        }
    }

    fn after_update(&mut self, nets: &DdpgNets) {
        // Recompute every target from the previous target and the new online
        // weights; frozen parameters are shared constants on both sides.
        let online: Vec<&Param> = nets.actor.net.params().into_iter().chain(nets.critic.net.params()).collect();
        if let Some(prev) = &self.last_targets {
            let now = target_values(nets);
            let t = self.tau;
            for ((p, before), after) in online.iter().zip(prev).zip(&now) {
                let ok = p.value.data().iter().zip(before).zip(after).all(|((&s, &d), &a)| {
                    let expected = if p.frozen { d } else { t * s + (1.0 - t) * d };
                    expected.to_bits() == a.to_bits()
                });
                if !ok {
                    self.report.soft_update_violations += 1;
                }
            }
            self.report.soft_updates_checked += 1;
        }
        self.last_targets = Some(target_values(nets));
    }
}

/// Runs the modified pipeline from `il` and audits it end to end.
pub fn modification_invariants(il: &Checkpoint, net: &NetConfig, cfg: &RlConfig, env: &mut Env) -> InvariantReport {
    let v_theta = env.reward_config().v_theta;
    let mut report = InvariantReport::default();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (actor, critic) = transfer_from_il(il, net, v_theta, &mut rng).unwrap();
    for p in actor.net.params().into_iter().chain(critic.net.params()) {
        if is_head_param(&p.name) {
            continue;
        }
        report.transferred_params += 1;
        let src = il.get(&p.name).expect("IL checkpoint has every shared parameter");
        if src.shape != p.value.shape() || !src.values.iter().zip(p.value.data()).all(|(a, b)| a.to_bits() == b.to_bits())
        {
            report.transfer_violations += 1;
        }
    }

    let mut watcher = Watcher { prefill_size: cfg.prefill_size, tau: cfg.tau as f32, ..Default::default() };
    let out = train_rl(Some(il), env, cfg, net, "", &mut watcher).unwrap();
    let mut report = InvariantReport { transfer_violations: report.transfer_violations, transferred_params: report.transferred_params, ..watcher.report };
    report.updates = out.nets.updates();
    let nets = &out.nets;
    for stage in [&nets.actor.net, &nets.critic.net, &nets.actor_target.net, &nets.critic_target.net] {
        for p in stage.backbone.params() {
            report.frozen_params += 1;
            let src = il.get(&p.name).unwrap();
            if !p.frozen || !src.values.iter().zip(p.value.data()).all(|(a, b)| a.to_bits() == b.to_bits()) {
                report.frozen_violations += 1;
            }
        }
    }
    report
}

/// An IL-phase checkpoint for a random actor that drives off at full
/// throttle, so rollouts see varied rewards.
pub fn throttle_checkpoint(net: &NetConfig, seed: u64) -> Checkpoint {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = ActorNet::random(net, 20.0, &mut rng).unwrap();
    a.net.trunk.param_mut("head.bias").unwrap().value.data_mut().copy_from_slice(&[4.0, -4.0, 0.0]);
    a.to_checkpoint(CheckpointMeta::new(Phase::Il, seed, "")).unwrap()
}

/// A short but full-sized run: default network and image size, with
/// enough updates to exercise the frozen-layer check a thousand times.
pub fn invariant_setup() -> (NetConfig, RlConfig, Env) {
    let rl = RlConfig {
        prefill_size: 1_500,
        replay_capacity: 5_000,
        pretrain_max_updates: 300,
        convergence_window: 50,
        total_env_steps: 1_200,
        eval_every: 600,
        eval_episodes: 1,
        log_every: 200,
        seed: 5,
        ..Default::default()
    };
    let episode = EpisodeConfig { max_steps: 400, ..Default::default() };
    let env = Env::new(Arc::new(Track::default_circuit()), episode, RewardConfig::default()).unwrap();
    (NetConfig::default(), rl, env)
}

/// Inputs outside [0, 1] from `n` random (d, v) pairs spanning both
/// saturations and the cutoff region.
pub fn reward_range_violations(n: usize, seed: u64) -> usize {
    let cfg = RewardConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .filter(|_| {
            let (d, v) = (rng.random_range(0.0..3.0 * cfg.d_theta), rng.random_range(0.0..3.0 * cfg.v_theta));
            let r = compute_reward(d, v, &cfg).unwrap().r;
            !(0.0..=1.0).contains(&r)
        })
        .count()
}

fn huber_single(e: f64, delta: f64) -> f64 {
    let p = Tensor::new(vec![1, 1], vec![e]).unwrap();
    let t = Tensor::new(vec![1, 1], vec![0.0]).unwrap();
    huber_loss(&p, &t, HuberConfig::new(delta).unwrap()).unwrap().0
}

/// The worked examples: (description, got, expected).
pub fn huber_examples() -> Vec<(&'static str, f64, f64)> {
    vec![
        ("pred equals target", huber_single(0.0, 1.0), 0.0),
        ("|e| = 0.5, delta = 1", huber_single(0.5, 1.0), 0.125),
        ("|e| = 2, delta = 1", huber_single(-2.0, 1.0), 1.5),
        ("|e| = delta = 1", huber_single(1.0, 1.0), 0.5),
    ]
}

/// Largest jump of the loss across the knee, over several deltas, together
/// with the largest gap between the knee value and 0.5 * delta^2.
pub fn huber_knee_gap() -> f64 {
    let mut worst: f64 = 0.0;
    for delta in [0.1, 0.5, 1.0, 2.0, 7.5] {
        let at = huber_single(delta, delta);
        for e in [delta * (1.0 - 1e-12), delta * (1.0 + 1e-12), -delta] {
            worst = worst.max((huber_single(e, delta) - at).abs());
        }
        worst = worst.max((at - 0.5 * delta * delta).abs());
    }
    worst
}

pub struct AugmentAudit {
    pub input: usize,
    pub output: usize,
    pub violations: usize,
    pub mean_speed: f64,
}

/// Augments expert demonstrations and checks every added copy against its
/// original.
pub fn augmentation_audit(episodes: usize) -> AugmentAudit {
    let mut env = Env::new(
        Arc::new(Track::default_circuit()),
        EpisodeConfig { image_size: 16, ..Default::default() },
        RewardConfig::default(),
    )
    .unwrap();
    let demos = collect_demos(&mut Expert(ExpertConfig::default()), &mut env, episodes, 3, Source::Expert).unwrap().demos;
    let out = augment_low_speed(&demos, 9);
    let n = demos.len();
    let mut violations = 0;
    let mut speed_sum = 0.0;
    for (orig, aug) in demos.samples.iter().zip(&out.samples[n.min(out.len())..]) {
        let v = aug.obs.speed() as f64;
        speed_sum += v;
        let ok = (0.0..=3.0).contains(&v)
            && aug.action.throttle == 1.0
            && aug.action.brake == 0.0
            && aug.action.steering.to_bits() == orig.action.steering.to_bits()
            && aug.obs.image().iter().zip(orig.obs.image()).all(|(a, b)| a.to_bits() == b.to_bits())
            && aug.provenance.source == Source::Augmented;
        violations += usize::from(!ok);
    }
    let originals_kept = demos.samples.iter().zip(&out.samples).all(|(a, b)| a.obs.bit_eq(&b.obs) && a.action.bit_eq(&b.action));
    violations += usize::from(!originals_kept);
    AugmentAudit { input: n, output: out.len(), violations, mean_speed: speed_sum / n as f64 }
}
