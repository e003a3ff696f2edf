//! Behaviour cloning with a Huber loss on the squashed action outputs.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointMeta, Phase};
use crate::dataset::{DemoSample, DemoSet};
use crate::error::{Error, Result};
use crate::nn::{huber_loss, HuberConfig, Optimizer, Tensor};
use crate::policy::{action_batch, image_batch, speed_batch, ActorNet, NetConfig, SPEED_INPUT};
use crate::seed::SeedStream;

const EVAL_BATCH: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IlConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub huber: HuberConfig,
    pub seed: u64,
}

impl Default for IlConfig {
    fn default() -> Self {
        Self { epochs: 10, batch_size: 64, lr: 1e-3, huber: HuberConfig::default(), seed: 0 }
    }
}

impl IlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(Error::Config("IL epochs, batch_size and lr must be positive".into()));
        }
        HuberConfig::new(self.huber.delta).map(|_| ())
    }
}

/// Losses after `epoch` passes over the training set; epoch 0 is the
/// untrained network.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: Option<f64>,
}

fn batch_tensors(samples: &[&DemoSample], v_theta: f64) -> Result<(Tensor, Tensor, Tensor)> {
    let obs: Vec<_> = samples.iter().map(|s| &s.obs).collect();
    let actions: Vec<_> = samples.iter().map(|s| s.action).collect();
    Ok((image_batch(&obs)?, speed_batch(&obs, v_theta), action_batch(&actions)))
}

/// Mean per-element Huber loss of `actor` over `set`.
pub fn eval_test_loss(actor: &ActorNet, set: &DemoSet, huber: HuberConfig) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty demo set".into()));
    }
    let mut total = 0.0;
    for chunk in set.samples.chunks(EVAL_BATCH) {
        let refs: Vec<_> = chunk.iter().collect();
        let (img, speed, target) = batch_tensors(&refs, actor.net.v_theta)?;
        let feats = actor.net.features(&img)?;
        let pred = actor.act_features(&feats, &speed)?;
        let (loss, _) = huber_loss(&pred, &target, huber)?;
        total += loss as f64 * chunk.len() as f64;
    }
    Ok(total / set.len() as f64)
}

pub fn eval_checkpoint_loss(
    ckpt: &Checkpoint,
    net: &NetConfig,
    v_theta: f64,
    set: &DemoSet,
    huber: HuberConfig,
) -> Result<f64> {
    eval_test_loss(&ActorNet::from_checkpoint(ckpt, net, v_theta)?, set, huber)
}

pub struct IlOutcome {
    pub actor: ActorNet,
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
}

/// Trains a freshly initialized actor to reproduce the demonstrated actions.
pub fn train_il(
    train: &DemoSet,
    test: &DemoSet,
    cfg: &IlConfig,
    net: &NetConfig,
    v_theta: f64,
    config_digest: &str,
) -> Result<IlOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let seeds = SeedStream::new(cfg.seed);
    let mut actor = ActorNet::random(net, v_theta, &mut seeds.rng("init"))?;
    let mut shuffle = seeds.rng("shuffle");
    let mut opt = Optimizer::adam();
    let test_loss = |a: &ActorNet| if test.is_empty() { Ok(None) } else { eval_test_loss(a, test, cfg.huber).map(Some) };

    let mut history =
        vec![EpochRecord { epoch: 0, train_loss: eval_test_loss(&actor, train, cfg.huber)?, test_loss: test_loss(&actor)? }];
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<_> = idx.iter().map(|&i| &train.samples[i]).collect();
            let (img, speed, target) = batch_tensors(&batch, v_theta)?;
            let pred = actor.net.forward_train(&img, &[(SPEED_INPUT, &speed)], true)?;
            let (loss, grad) = huber_loss(&pred, &target, cfg.huber)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("IL loss became {loss} in epoch {epoch}")));
            }
            total += loss as f64 * idx.len() as f64;
            let g = actor.net.backward(&grad)?;
            opt.step(actor.net.params_mut(), &g.params, cfg.lr as f32)
                .map_err(|e| Error::Numeric(format!("epoch {epoch}: {e}")))?;
        }
        history.push(EpochRecord { epoch, train_loss: total / train.len() as f64, test_loss: test_loss(&actor)? });
    }
    let checkpoint = actor.to_checkpoint(CheckpointMeta::new(Phase::Il, cfg.seed, config_digest))?;
    Ok(IlOutcome { actor, checkpoint, history })
}

pub fn write_history_csv(path: impl AsRef<Path>, history: &[EpochRecord]) -> Result<()> {
    let mut out = String::from("epoch,train_loss,test_loss\n");
    for r in history {
        let test = r.test_loss.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{}\n", r.epoch, r.train_loss, test));
    }
    std::fs::File::create(path.as_ref())?.write_all(out.as_bytes())?;
    Ok(())
}
