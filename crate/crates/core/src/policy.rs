//! Actor and critic networks.
//!
//! Both share one topology up to the last fully connected stage:
//!
//! ```text
//! image -> stem (2 strided 3x3 convs) -> residual blocks -> strided projection conv
//!       -> global average pool -> [features | speed / v_theta] -> fc1 -> fc2 -> head
//! ```
//!
//! The actor head maps fc2 to (throttle, brake, steering) through sigmoid,
//! sigmoid and tanh. The critic head sees fc2 concatenated with the action.
//! Every parameter outside the heads has the same name and shape in both
//! networks, which is what makes imitation weights transferable.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointEntry, CheckpointMeta};
use crate::error::{Error, Result};
use crate::nn::{Gradients, LayerSpec, Network, Param, Tensor, TensorMap, Units};
use crate::types::{Action, Observation};

pub const IMAGE_INPUT: &str = "image";
pub const FEATURE_INPUT: &str = "features";
pub const SPEED_INPUT: &str = "speed";
pub const ACTION_INPUT: &str = "action";
pub const HEAD_PREFIX: &str = "head.";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub image_hw: usize,
    pub stem_channels: usize,
    pub residual_blocks: usize,
    pub feature_dim: usize,
    pub fc_widths: [usize; 2],
    pub action_dim: usize,
    /// Hidden width of the critic head; 0 makes the head a single linear unit
    /// on `[fc2, action]`.
    pub critic_head_hidden: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            image_hw: 48,
            stem_channels: 8,
            residual_blocks: 2,
            feature_dim: 32,
            fc_widths: [64, 32],
            action_dim: 3,
            critic_head_hidden: 32,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.residual_blocks == 0 {
            return Err(Error::Config("at least one residual block is required".into()));
        }
        if self.fc_widths.contains(&0) || self.stem_channels == 0 || self.feature_dim == 0 {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if self.action_dim != Action::DIM {
            return Err(Error::Config(format!("action_dim must be {}", Action::DIM)));
        }
        if self.image_hw < 8 {
            return Err(Error::Config("image must be at least 8x8".into()));
        }
        Ok(())
    }

    fn backbone_specs(&self) -> Vec<LayerSpec> {
        let c = self.stem_channels;
        let mut specs = vec![
            LayerSpec::Conv2d { name: "stem.conv1".into(), in_channels: 1, out_channels: c, kernel: 3, stride: 2 },
            LayerSpec::Relu,
            LayerSpec::Conv2d { name: "stem.conv2".into(), in_channels: c, out_channels: c, kernel: 3, stride: 2 },
            LayerSpec::Relu,
        ];
        for i in 1..=self.residual_blocks {
            specs.push(LayerSpec::ResidualBlock { name: format!("block{i}"), channels: c });
        }
        specs.push(LayerSpec::Conv2d {
            name: "proj".into(),
            in_channels: c,
            out_channels: self.feature_dim,
            kernel: 3,
            stride: 2,
        });
        specs.push(LayerSpec::Relu);
        specs.push(LayerSpec::GlobalAvgPool);
        specs
    }

    fn shared_fc_specs(&self) -> Vec<LayerSpec> {
        let [w1, w2] = self.fc_widths;
        vec![
            LayerSpec::ConcatInput { input: SPEED_INPUT.into(), width: 1 },
            LayerSpec::FullyConnected { name: "fc1".into(), inputs: self.feature_dim + 1, outputs: w1 },
            LayerSpec::Relu,
            LayerSpec::FullyConnected { name: "fc2".into(), inputs: w1, outputs: w2 },
            LayerSpec::Relu,
        ]
    }

    fn actor_trunk_specs(&self) -> Vec<LayerSpec> {
        let mut specs = self.shared_fc_specs();
        specs.push(LayerSpec::FullyConnected { name: "head".into(), inputs: self.fc_widths[1], outputs: 3 });
        specs.push(LayerSpec::Sigmoid { units: Units::range(0, 2) });
        specs.push(LayerSpec::Tanh { units: Units::range(2, 3) });
        specs
    }

    fn critic_trunk_specs(&self) -> Vec<LayerSpec> {
        let mut specs = self.shared_fc_specs();
        specs.push(LayerSpec::ConcatInput { input: ACTION_INPUT.into(), width: Action::DIM });
        let width = self.fc_widths[1] + Action::DIM;
        if self.critic_head_hidden == 0 {
            specs.push(LayerSpec::FullyConnected { name: "head".into(), inputs: width, outputs: 1 });
        } else {
            let h = self.critic_head_hidden;
            specs.push(LayerSpec::FullyConnected { name: "head.hidden".into(), inputs: width, outputs: h });
            specs.push(LayerSpec::Relu);
            specs.push(LayerSpec::FullyConnected { name: "head.out".into(), inputs: h, outputs: 1 });
        }
        specs
    }

    fn build_backbone(&self) -> Result<Network> {
        Network::from_specs(IMAGE_INPUT, vec![self.image_hw, self.image_hw, 1], &self.backbone_specs())
    }
}

pub fn is_head_param(name: &str) -> bool {
    name.starts_with(HEAD_PREFIX)
}

/// Stacks observation images into `[n, h, w, 1]`.
pub fn image_batch(obs: &[&Observation]) -> Result<Tensor> {
    let (h, w) = obs.first().map_or((0, 0), |o| (o.height(), o.width()));
    let rows: Vec<&[f32]> = obs.iter().map(|o| o.image()).collect();
    Tensor::stack(&rows, &[h, w, 1])
}

pub fn speed_batch(obs: &[&Observation], v_theta: f64) -> Tensor {
    let scale = (1.0 / v_theta) as f32;
    Tensor::new(vec![obs.len(), 1], obs.iter().map(|o| o.speed() * scale).collect()).expect("speed batch")
}

pub fn action_batch(actions: &[Action]) -> Tensor {
    Tensor::new(vec![actions.len(), Action::DIM], actions.iter().flat_map(|a| a.to_array()).collect())
        .expect("action batch")
}

fn inputs(pairs: Vec<(&str, Tensor)>) -> TensorMap {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// Backbone plus fully connected trunk, shared plumbing of actor and critic.
#[derive(Clone, Debug)]
pub struct TwoStage {
    pub backbone: Network,
    pub trunk: Network,
    pub v_theta: f64,
    /// Whether the last training forward recorded the backbone too.
    through_backbone: bool,
}

impl TwoStage {
    fn new(backbone: Network, trunk: Network, v_theta: f64) -> Self {
        Self { backbone, trunk, v_theta, through_backbone: false }
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut p = self.backbone.params();
        p.extend(self.trunk.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.backbone.params_mut();
        p.extend(self.trunk.params_mut());
        p
    }

    /// Recording forward pass from images. With `through_backbone` false the
    /// backbone runs in inference mode and gradients stop at its output.
    pub fn forward_train(&mut self, images: &Tensor, sides: &[(&str, &Tensor)], through_backbone: bool) -> Result<Tensor> {
        let img = inputs(vec![(IMAGE_INPUT, images.clone())]);
        let features = if through_backbone { self.backbone.forward(&img)? } else { self.backbone.infer(&img)? };
        self.through_backbone = through_backbone;
        self.forward_trunk(features, sides)
    }

    /// Recording forward pass of the trunk alone from precomputed features.
    pub fn forward_trunk(&mut self, features: Tensor, sides: &[(&str, &Tensor)]) -> Result<Tensor> {
        let mut m = inputs(vec![(FEATURE_INPUT, features)]);
        for (k, v) in sides {
            m.insert((*k).to_string(), (*v).clone());
        }
        self.trunk.forward(&m)
    }

    /// Backpropagates through the trunk and, if the last forward recorded
    /// it, the backbone. Input gradients are those of the trunk's inputs.
    pub fn backward(&mut self, dy: &Tensor) -> Result<Gradients> {
        let mut g = self.trunk.backward(dy)?;
        if std::mem::take(&mut self.through_backbone) {
            let df = g.inputs.remove(FEATURE_INPUT).expect("trunk reports its main input gradient");
            let gb = self.backbone.backward(&df)?;
            g.params.extend(gb.params);
            g.inputs.extend(gb.inputs);
        }
        Ok(g)
    }

    pub fn param_count(&self) -> usize {
        self.backbone.param_count() + self.trunk.param_count()
    }

    pub fn init_he<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.backbone.init_he(rng);
        self.trunk.init_he(rng);
    }

    pub fn freeze_backbone(&mut self, frozen: bool) {
        self.backbone.freeze_convs(frozen);
    }

    pub fn backbone_frozen(&self) -> bool {
        self.backbone.all_frozen()
    }

    pub fn features(&self, images: &Tensor) -> Result<Tensor> {
        self.backbone.infer(&inputs(vec![(IMAGE_INPUT, images.clone())]))
    }

    pub fn to_entries(&self) -> Vec<CheckpointEntry> {
        self.params()
            .into_iter()
            .map(|p| CheckpointEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                frozen: p.frozen,
                values: p.value.data().to_vec(),
            })
            .collect()
    }

    /// Copies every checkpoint entry accepted by `keep` into the matching
    /// parameter. Missing or mis-shaped parameters are reported together.
    fn load_entries(&mut self, ckpt: &Checkpoint, keep: impl Fn(&str) -> bool, copy_frozen: bool) -> Result<()> {
        let mut bad = Vec::new();
        let wanted: Vec<&CheckpointEntry> = ckpt.entries.iter().filter(|e| keep(&e.name)).collect();
        for e in &wanted {
            let target = self.backbone.param_mut(&e.name).or_else(|| self.trunk.param_mut(&e.name));
            match target {
                Some(p) if p.value.shape() == e.shape.as_slice() => {
                    p.value.data_mut().copy_from_slice(&e.values);
                    if copy_frozen {
                        p.frozen = e.frozen;
                    }
                }
                _ => bad.push(e.name.clone()),
            }
        }
        for p in self.params() {
            if keep(&p.name) && !wanted.iter().any(|e| e.name == p.name) {
                bad.push(p.name.clone());
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            bad.sort();
            bad.dedup();
            Err(Error::Transfer(bad))
        }
    }
}

/// Deterministic policy network.
#[derive(Clone, Debug)]
pub struct ActorNet {
    pub net: TwoStage,
}

impl ActorNet {
    /// Zero-initialized actor; call [`TwoStage::init_he`] for random weights.
    pub fn build(cfg: &NetConfig, v_theta: f64) -> Result<Self> {
        cfg.validate()?;
        let backbone = cfg.build_backbone()?;
        let trunk = Network::from_specs(FEATURE_INPUT, vec![cfg.feature_dim], &cfg.actor_trunk_specs())?;
        Ok(Self { net: TwoStage::new(backbone, trunk, v_theta) })
    }

    pub fn random<R: Rng + ?Sized>(cfg: &NetConfig, v_theta: f64, rng: &mut R) -> Result<Self> {
        let mut a = Self::build(cfg, v_theta)?;
        a.net.init_he(rng);
        Ok(a)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, cfg: &NetConfig, v_theta: f64) -> Result<Self> {
        let mut a = Self::build(cfg, v_theta)?;
        a.net.load_entries(ckpt, |_| true, true)?;
        Ok(a)
    }

    pub fn to_checkpoint(&self, meta: CheckpointMeta) -> Result<Checkpoint> {
        Checkpoint::new(self.net.to_entries(), meta)
    }

    /// Actions from precomputed backbone features, `[n, 3]`.
    pub fn act_features(&self, features: &Tensor, speed: &Tensor) -> Result<Tensor> {
        self.net
            .trunk
            .infer(&inputs(vec![(FEATURE_INPUT, features.clone()), (SPEED_INPUT, speed.clone())]))
    }

    pub fn act_batch(&self, obs: &[&Observation]) -> Result<Tensor> {
        let feats = self.net.features(&image_batch(obs)?)?;
        self.act_features(&feats, &speed_batch(obs, self.net.v_theta))
    }

    pub fn act(&self, obs: &Observation) -> Result<Action> {
        let y = self.act_batch(&[obs])?;
        Ok(action_from_row(y.row(0)))
    }
}

/// Clamps away the last ulp a saturated sigmoid/tanh might overshoot by.
pub fn action_from_row(row: &[f32]) -> Action {
    Action::clamped(row[0], row[1], row[2])
}

/// Action-value network.
#[derive(Clone, Debug)]
pub struct CriticNet {
    pub net: TwoStage,
}

impl CriticNet {
    pub fn build(cfg: &NetConfig, v_theta: f64) -> Result<Self> {
        cfg.validate()?;
        let backbone = cfg.build_backbone()?;
        let trunk = Network::from_specs(FEATURE_INPUT, vec![cfg.feature_dim], &cfg.critic_trunk_specs())?;
        Ok(Self { net: TwoStage::new(backbone, trunk, v_theta) })
    }

    pub fn random<R: Rng + ?Sized>(cfg: &NetConfig, v_theta: f64, rng: &mut R) -> Result<Self> {
        let mut c = Self::build(cfg, v_theta)?;
        c.net.init_he(rng);
        Ok(c)
    }

    pub fn q_features(&self, features: &Tensor, speed: &Tensor, actions: &Tensor) -> Result<Tensor> {
        self.net.trunk.infer(&inputs(vec![
            (FEATURE_INPUT, features.clone()),
            (SPEED_INPUT, speed.clone()),
            (ACTION_INPUT, actions.clone()),
        ]))
    }

    pub fn q(&self, obs: &Observation, action: Action) -> Result<f32> {
        let feats = self.net.features(&image_batch(&[obs])?)?;
        let q = self.q_features(&feats, &speed_batch(&[obs], self.net.v_theta), &action_batch(&[action]))?;
        Ok(q.data()[0])
    }
}

/// Builds the reinforcement-learning actor and critic from an imitation
/// checkpoint: everything but the heads is copied, both heads are freshly
/// initialized from `rng`, and all convolutional parameters are frozen.
pub fn transfer_from_il<R: Rng + ?Sized>(
    il: &Checkpoint,
    cfg: &NetConfig,
    v_theta: f64,
    rng: &mut R,
) -> Result<(ActorNet, CriticNet)> {
    let mut actor = ActorNet::random(cfg, v_theta, rng)?;
    let mut critic = CriticNet::random(cfg, v_theta, rng)?;
    let shared = |n: &str| !is_head_param(n);
    let mut bad = Vec::new();
    for net in [&mut actor.net, &mut critic.net] {
        if let Err(Error::Transfer(names)) = net.load_entries(il, shared, false) {
            bad.extend(names);
        }
        net.freeze_backbone(true);
    }
    if !bad.is_empty() {
        bad.sort();
        bad.dedup();
        return Err(Error::Transfer(bad));
    }
    Ok((actor, critic))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::Phase;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn obs(seed: u64, speed: f32) -> Observation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img: Vec<f32> = (0..48 * 48).map(|_| rng.random_range(0.0..1.0)).collect();
        Observation::new(img, 48, 48, speed).unwrap()
    }

    fn meta() -> CheckpointMeta {
        CheckpointMeta { phase: Phase::Il, seed: 1, created_at: 0, config_digest: String::new() }
    }

    #[test]
    fn parameter_counts_follow_layer_formulas() {
        let cfg = NetConfig::default();
        let a = ActorNet::build(&cfg, 20.0).unwrap();
        let c = CriticNet::build(&cfg, 20.0).unwrap();
        let conv = |i: usize, o: usize| 9 * i * o + o;
        let fc = |i: usize, o: usize| i * o + o;
        let backbone = conv(1, 8) + conv(8, 8) + 2 * 2 * conv(8, 8) + conv(8, 32);
        let shared = backbone + fc(33, 64) + fc(64, 32);
        assert_eq!(a.net.param_count(), shared + fc(32, 3));
        assert_eq!(c.net.param_count(), shared + fc(35, 32) + fc(32, 1));
        assert_eq!(c.net.param_count() - a.net.param_count(), fc(35, 32) + fc(32, 1) - fc(32, 3));

        let linear = NetConfig { critic_head_hidden: 0, ..cfg };
        let c = CriticNet::build(&linear, 20.0).unwrap();
        assert_eq!(c.net.param_count(), shared + fc(35, 1));

        let shared_a: Vec<_> = a.net.params().into_iter().filter(|p| !is_head_param(&p.name)).collect();
        let shared_c: Vec<_> = c.net.params().into_iter().filter(|p| !is_head_param(&p.name)).collect();
        assert_eq!(shared_a.len(), shared_c.len());
        for (x, y) in shared_a.iter().zip(&shared_c) {
            assert_eq!(x.name, y.name);
            assert_eq!(x.value.shape(), y.value.shape());
        }
    }

    #[test]
    fn zero_actor_outputs_midpoint() {
        let a = ActorNet::build(&NetConfig::default(), 20.0).unwrap();
        let act = a.act(&obs(3, 7.0)).unwrap();
        assert_eq!(act, Action::new(0.5, 0.5, 0.0).unwrap());
        let c = CriticNet::build(&NetConfig::default(), 20.0).unwrap();
        assert_eq!(c.q(&obs(3, 7.0), act).unwrap(), 0.0);
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = NetConfig { residual_blocks: 0, ..NetConfig::default() };
        assert!(matches!(ActorNet::build(&cfg, 20.0), Err(Error::Config(_))));
        let cfg = NetConfig { fc_widths: [0, 4], ..NetConfig::default() };
        assert!(ActorNet::build(&cfg, 20.0).is_err());
    }

    #[test]
    fn random_actor_is_deterministic_and_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = ActorNet::random(&NetConfig::default(), 20.0, &mut rng).unwrap();
        for s in 0..5 {
            let o = obs(s, s as f32 * 4.0);
            let x = a.act(&o).unwrap();
            assert!(x.bit_eq(&a.act(&o).unwrap()));
            x.validate().unwrap();
        }
    }

    #[test]
    fn speed_input_is_live() {
        let mut a = ActorNet::build(&NetConfig::default(), 20.0).unwrap();
        // Route normalized speed straight into the throttle logit.
        let fc1 = a.net.trunk.param_mut("fc1.weight").unwrap();
        fc1.value.data_mut()[32] = 1.0;
        a.net.trunk.param_mut("fc2.weight").unwrap().value.data_mut()[0] = 1.0;
        a.net.trunk.param_mut("head.weight").unwrap().value.data_mut()[0] = 1.0;
        let o = obs(1, 0.0);
        let slow = a.act(&o).unwrap();
        let fast = a.act(&o.with_speed(20.0).unwrap()).unwrap();
        assert_eq!(slow.throttle, 0.5);
        assert!(fast.throttle > slow.throttle);
    }

    #[test]
    fn critic_action_path_is_live() {
        let cfg = NetConfig { critic_head_hidden: 0, ..NetConfig::default() };
        let mut c = CriticNet::build(&cfg, 20.0).unwrap();
        let w = c.net.trunk.param_mut("head.weight").unwrap();
        w.value.data_mut()[32] = 1.0;
        w.value.data_mut()[34] = -2.0;
        let o = obs(2, 5.0);
        let q1 = c.q(&o, Action::new(0.2, 0.0, 0.5).unwrap()).unwrap();
        let q2 = c.q(&o, Action::new(0.9, 0.0, 0.5).unwrap()).unwrap();
        assert!((q2 - q1 - 0.7).abs() < 1e-6);
    }

    #[test]
    fn transfer_copies_shared_layers_and_freezes_convs() {
        let cfg = NetConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let il = ActorNet::random(&cfg, 20.0, &mut rng).unwrap();
        let ckpt = il.to_checkpoint(meta()).unwrap();
        let (actor, critic) = transfer_from_il(&ckpt, &cfg, 20.0, &mut rng).unwrap();
        for net in [&actor.net, &critic.net] {
            for p in net.params() {
                if is_head_param(&p.name) {
                    assert!(!p.frozen);
                    continue;
                }
                let e = ckpt.get(&p.name).unwrap();
                assert!(p.value.data().iter().zip(&e.values).all(|(a, b)| a.to_bits() == b.to_bits()));
                let is_conv = !p.name.starts_with("fc");
                assert_eq!(p.frozen, is_conv, "{}", p.name);
            }
        }
        let fresh = actor.net.trunk.param("head.weight").unwrap();
        assert_ne!(fresh.value.data(), ckpt.get("head.weight").unwrap().values.as_slice());
    }

    #[test]
    fn transfer_reports_mismatched_layers() {
        let small = NetConfig { fc_widths: [16, 32], ..NetConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ckpt = ActorNet::random(&small, 20.0, &mut rng).unwrap().to_checkpoint(meta()).unwrap();
        match transfer_from_il(&ckpt, &NetConfig::default(), 20.0, &mut rng) {
            Err(Error::Transfer(names)) => {
                assert!(names.contains(&"fc1.weight".to_string()));
                assert!(names.contains(&"fc2.weight".to_string()));
                assert!(!names.iter().any(|n| n.starts_with("stem")));
            }
            other => panic!("expected transfer error, got {other:?}"),
        }
    }

    #[test]
    fn checkpoint_round_trip_restores_actor() {
        let cfg = NetConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = ActorNet::random(&cfg, 20.0, &mut rng).unwrap();
        let b = ActorNet::from_checkpoint(&a.to_checkpoint(meta()).unwrap(), &cfg, 20.0).unwrap();
        let o = obs(5, 11.0);
        assert!(a.act(&o).unwrap().bit_eq(&b.act(&o).unwrap()));
    }
}
