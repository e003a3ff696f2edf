//! Demonstration sets: collection, low-speed augmentation and splitting.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rollout::{run_episode, Driver, EpisodeSummary};
use crate::seed::SeedStream;
use crate::sim::{Env, Preset};
use crate::types::{Action, Observation, Transition};

/// Upper bound (m/s) of the augmented launch speeds.
pub const LOW_SPEED_MAX: f32 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Expert,
    Teleop,
    Augmented,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Provenance {
    /// Unknown for logs read back from disk.
    pub preset: Option<Preset>,
    pub episode: usize,
    pub source: Source,
}

#[derive(Clone, Debug)]
pub struct DemoSample {
    pub obs: Observation,
    pub action: Action,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, Default)]
pub struct DemoSet {
    pub samples: Vec<DemoSample>,
}

impl DemoSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn episodes(&self) -> BTreeSet<usize> {
        self.samples.iter().map(|s| s.provenance.episode).collect()
    }

    /// Rebuilds episode ids from `done` flags: a new episode starts after
    /// every terminating transition.
    pub fn from_transitions(transitions: &[Transition], source: Source) -> Self {
        let mut episode = 0;
        let samples = transitions
            .iter()
            .map(|t| {
                let s = DemoSample {
                    obs: t.obs.clone(),
                    action: t.action,
                    provenance: Provenance { preset: None, episode, source },
                };
                if t.done {
                    episode += 1;
                }
                s
            })
            .collect();
        Self { samples }
    }
}

/// Everything a collection run produces.
#[derive(Clone, Debug, Default)]
pub struct Collected {
    pub demos: DemoSet,
    pub transitions: Vec<Transition>,
    pub episodes: Vec<EpisodeSummary>,
}

/// Runs `episodes` episodes with presets cycled round-robin and records
/// every (observation, action) pair.
pub fn collect_demos<D: Driver + ?Sized>(
    driver: &mut D,
    env: &mut Env,
    episodes: usize,
    seed: u64,
    source: Source,
) -> Result<Collected> {
    let seeds = SeedStream::new(seed).child("demos");
    let mut out = Collected::default();
    for ep in 0..episodes {
        let preset = Preset::ALL[ep % Preset::ALL.len()];
        let ep_seed = seeds.derive(&ep.to_string());
        let summary = run_episode(env, driver, ep_seed, Some(preset), |t, _| {
            out.demos.samples.push(DemoSample {
                obs: t.obs.clone(),
                action: t.action,
                provenance: Provenance { preset: Some(preset), episode: ep, source },
            });
            out.transitions.push(t);
            Ok(())
        })?;
        out.episodes.push(summary);
    }
    Ok(out)
}

/// Appends one launch-from-rest copy per sample: speed drawn from
/// U[0, 3] m/s, full throttle, no brake, steering and image untouched.
pub fn augment_low_speed(demos: &DemoSet, seed: u64) -> DemoSet {
    let mut rng = SeedStream::new(seed).rng("augment");
    let mut samples = demos.samples.clone();
    for s in &demos.samples {
        let speed = rng.random_range(0.0..=LOW_SPEED_MAX);
        samples.push(DemoSample {
            obs: s.obs.with_speed(speed).expect("speed in range"),
            action: Action { throttle: 1.0, brake: 0.0, steering: s.action.steering },
            provenance: Provenance { source: Source::Augmented, ..s.provenance },
        });
    }
    DemoSet { samples }
}

/// Splits by episode id so no episode straddles the two halves.
pub fn split(demos: &DemoSet, test_fraction: f64, seed: u64) -> Result<(DemoSet, DemoSet)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Split(format!("test_fraction {test_fraction} outside (0, 1)")));
    }
    let mut ids: Vec<usize> = demos.episodes().into_iter().collect();
    if ids.len() < 2 {
        return Err(Error::Split(format!("need at least 2 episodes, have {}", ids.len())));
    }
    ids.shuffle(&mut SeedStream::new(seed).rng("split"));
    let n_test = ((ids.len() as f64 * test_fraction).round() as usize).clamp(1, ids.len() - 1);
    let test_ids: BTreeSet<usize> = ids[..n_test].iter().copied().collect();
    let (mut train, mut test) = (DemoSet::default(), DemoSet::default());
    for s in &demos.samples {
        if test_ids.contains(&s.provenance.episode) {
            test.samples.push(s.clone());
        } else {
            train.samples.push(s.clone());
        }
    }
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(episode: usize, speed: f32, a: Action) -> DemoSample {
        DemoSample {
            obs: Observation::new(vec![0.25; 16], 4, 4, speed).unwrap(),
            action: a,
            provenance: Provenance { preset: Some(Preset::Rain), episode, source: Source::Expert },
        }
    }

    #[test]
    fn augmentation_rewrites_only_speed_and_pedals() {
        let a = Action::new(0.2, 0.5, -0.3).unwrap();
        let set = DemoSet { samples: vec![sample(0, 15.0, a)] };
        let out = augment_low_speed(&set, 1);
        assert_eq!(out.len(), 2);
        let aug = &out.samples[1];
        assert!((0.0..=3.0).contains(&aug.obs.speed()));
        assert_eq!(aug.action, Action::new(1.0, 0.0, -0.3).unwrap());
        assert_eq!(aug.obs.image(), set.samples[0].obs.image());
        assert_eq!(aug.provenance.source, Source::Augmented);
        assert_eq!(aug.provenance.episode, 0);
        assert!(out.samples[0].obs.bit_eq(&set.samples[0].obs));
    }

    #[test]
    fn augmented_speed_moments() {
        let set = DemoSet { samples: (0..10_000).map(|i| sample(i, 9.0, Action::zero())).collect() };
        let out = augment_low_speed(&set, 4);
        let speeds: Vec<f32> = out.samples[10_000..].iter().map(|s| s.obs.speed()).collect();
        assert!(speeds.iter().all(|v| (0.0..=3.0).contains(v)));
        let mean = speeds.iter().map(|&v| v as f64).sum::<f64>() / speeds.len() as f64;
        assert!((mean - 1.5).abs() < 0.1, "{mean}");
    }

    #[test]
    fn split_by_episode() {
        let set = DemoSet { samples: (0..50).map(|i| sample(i / 5, 1.0, Action::zero())).collect() };
        let (train, test) = split(&set, 0.2, 3).unwrap();
        assert_eq!(train.episodes().len(), 8);
        assert_eq!(test.episodes().len(), 2);
        assert!(train.episodes().is_disjoint(&test.episodes()));
        assert_eq!(train.len() + test.len(), 50);
        let (train2, _) = split(&set, 0.2, 3).unwrap();
        assert_eq!(train.episodes(), train2.episodes());
    }

    #[test]
    fn split_errors() {
        let one = DemoSet { samples: vec![sample(0, 1.0, Action::zero())] };
        assert!(matches!(split(&one, 0.2, 0), Err(Error::Split(_))));
        assert!(matches!(split(&DemoSet::default(), 0.2, 0), Err(Error::Split(_))));
        let two = DemoSet { samples: vec![sample(0, 1.0, Action::zero()), sample(1, 1.0, Action::zero())] };
        assert!(split(&two, 1.0, 0).is_err());
        assert!(split(&two, 0.5, 0).is_ok());
    }

    #[test]
    fn episodes_from_done_flags() {
        let o = Observation::new(vec![0.0; 4], 2, 2, 0.0).unwrap();
        let t = |done| Transition { obs: o.clone(), action: Action::zero(), reward: 0.0, next_obs: o.clone(), done };
        let set = DemoSet::from_transitions(&[t(false), t(true), t(false), t(true), t(false)], Source::Teleop);
        let ids: Vec<usize> = set.samples.iter().map(|s| s.provenance.episode).collect();
        assert_eq!(ids, vec![0, 0, 1, 1, 2]);
    }
}
