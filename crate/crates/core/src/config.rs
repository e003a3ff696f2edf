//! One JSON file configuring a whole experiment.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::expert::ExpertConfig;
use crate::il::IlConfig;
use crate::policy::NetConfig;
use crate::reward::RewardConfig;
use crate::rl::RlConfig;
use crate::sim::{Env, EpisodeConfig, Track};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Track JSON; `None` selects the built-in circuit.
    pub track: Option<PathBuf>,
    pub reward: RewardConfig,
    pub net: NetConfig,
    pub il: IlConfig,
    pub rl: RlConfig,
    pub expert: ExpertConfig,
    pub episode: EpisodeConfig,
    pub out_dir: PathBuf,
    /// Global seed; [`ExperimentConfig::with_seed`] pushes it into every
    /// component.
    pub seed: u64,
    /// Episodes recorded by `record`.
    pub demo_episodes: usize,
    pub test_fraction: f64,
    pub eval_episodes: usize,
    /// Seeds for `compare`; each is a paired evaluation of every policy.
    pub compare_seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            track: None,
            reward: RewardConfig::default(),
            net: NetConfig::default(),
            il: IlConfig::default(),
            rl: RlConfig::default(),
            expert: ExpertConfig::default(),
            episode: EpisodeConfig::default(),
            out_dir: PathBuf::from("runs"),
            seed: 0,
            demo_episodes: 8,
            test_fraction: 0.2,
            eval_episodes: 5,
            compare_seeds: vec![101, 102, 103],
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.as_ref().display()))))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.as_ref().display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Sets the global seed and every component seed derived from it.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.il.seed = seed;
        self.rl.seed = seed;
        self.episode.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.reward.validate()?;
        self.net.validate()?;
        self.il.validate()?;
        self.rl.validate()?;
        self.episode.validate()?;
        self.expert.validate(&self.episode.vehicle)?;
        if self.net.image_hw != self.episode.image_size {
            return Err(Error::Config(format!(
                "net.image_hw ({}) must equal episode.image_size ({})",
                self.net.image_hw, self.episode.image_size
            )));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config("test_fraction must lie in (0, 1)".into()));
        }
        if self.demo_episodes == 0 || self.eval_episodes == 0 {
            return Err(Error::Config("demo_episodes and eval_episodes must be positive".into()));
        }
        if self.compare_seeds.is_empty() {
            return Err(Error::Config("compare_seeds must not be empty".into()));
        }
        Ok(())
    }

    pub fn load_track(&self) -> Result<Track> {
        match &self.track {
            Some(p) => Track::from_json_file(p),
            None => Ok(Track::default_circuit()),
        }
    }

    pub fn build_env(&self) -> Result<Env> {
        Env::new(Arc::new(self.load_track()?), self.episode.clone(), self.reward)
    }

    /// SHA-256 over the serialized config and, when set, the track file
    /// bytes. Stamped into every checkpoint the experiment produces. The
    /// output directory says where results go, not what they are, so it is
    /// left out.
    pub fn digest(&self) -> Result<String> {
        let mut h = Sha256::new();
        let content = Self { out_dir: PathBuf::new(), ..self.clone() };
        h.update(content.to_json().as_bytes());
        if let Some(p) = &self.track {
            h.update(std::fs::read(p)?);
        }
        Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let back: ExperimentConfig = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_files_fill_in_defaults() {
        let c: ExperimentConfig = serde_json::from_str(r#"{"seed": 9, "rl": {"tau": 0.01}}"#).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.rl.tau, 0.01);
        assert_eq!(c.rl.gamma, RlConfig::default().gamma);
    }

    #[test]
    fn unknown_top_level_keys_are_rejected() {
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"seeed": 1}"#).is_err());
    }

    #[test]
    fn seed_reaches_every_component() {
        let c = ExperimentConfig::default().with_seed(42);
        assert_eq!((c.il.seed, c.rl.seed, c.episode.seed), (42, 42, 42));
    }

    #[test]
    fn digest_tracks_content() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig::default().with_seed(1);
        assert_eq!(a.digest().unwrap(), ExperimentConfig::default().digest().unwrap());
        assert_ne!(a.digest().unwrap(), b.digest().unwrap());
        assert_eq!(a.digest().unwrap().len(), 64);
        let moved = ExperimentConfig { out_dir: "elsewhere".into(), ..ExperimentConfig::default() };
        assert_eq!(moved.digest().unwrap(), a.digest().unwrap());
    }

    #[test]
    fn image_size_mismatch_is_rejected() {
        let mut c = ExperimentConfig::default();
        c.episode.image_size = 32;
        assert!(c.validate().is_err());
    }
}
