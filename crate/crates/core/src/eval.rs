//! Evaluation protocol: randomized start and condition per episode, at most
//! `max_steps` steps, collision ends the episode, undiscounted returns.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::rollout::{run_episode, Driver};
use crate::seed::SeedStream;
use crate::sim::{Env, Preset};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpisodeRecord {
    pub seed: u64,
    pub episode: usize,
    pub condition: Preset,
    pub steps: usize,
    pub ret: f64,
    pub collided: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub policy_tag: String,
    pub episodes: Vec<EpisodeRecord>,
    pub mean_return: f64,
}

impl EvalReport {
    pub fn csv_rows(&self, out: &mut String) {
        for e in &self.episodes {
            let _ = writeln!(out, "{},{},{},{},{},{}", self.policy_tag, e.seed, e.episode, e.condition, e.steps, e.ret);
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        self.csv_rows(&mut s);
        s
    }
}

pub const CSV_HEADER: &str = "policy_tag,seed,episode,condition,steps,return\n";

/// Episode `i` of an evaluation seeded with `seed` uses this reset seed.
pub fn episode_seed(seed: u64, i: usize) -> u64 {
    SeedStream::new(seed).child("eval").derive(&i.to_string())
}

pub fn evaluate<D: Driver + ?Sized>(
    driver: &mut D,
    env: &mut Env,
    n_episodes: usize,
    max_steps: usize,
    seed: u64,
    tag: &str,
) -> Result<EvalReport> {
    let saved = env.config().max_steps;
    env.set_max_steps(max_steps)?;
    let result = (0..n_episodes)
        .map(|i| {
            let s = run_episode(env, driver, episode_seed(seed, i), None, |_, _| Ok(()))?;
            Ok(EpisodeRecord { seed, episode: i, condition: s.preset, steps: s.steps, ret: s.ret, collided: s.collided })
        })
        .collect::<Result<Vec<_>>>();
    env.set_max_steps(saved)?;
    let episodes = result?;
    let mean_return =
        if episodes.is_empty() { 0.0 } else { episodes.iter().map(|e| e.ret).sum::<f64>() / episodes.len() as f64 };
    Ok(EvalReport { policy_tag: tag.to_string(), episodes, mean_return })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub policy_tag: String,
    /// Mean return for each seed, in seed order.
    pub per_seed: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation across seeds (0 for a single seed).
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Comparison {
    pub seeds: Vec<u64>,
    pub rows: Vec<ComparisonRow>,
    pub reports: Vec<EvalReport>,
}

impl Comparison {
    pub fn row(&self, tag: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.policy_tag == tag)
    }

    /// Per-episode CSV over every policy and seed.
    pub fn episodes_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        for r in &self.reports {
            r.csv_rows(&mut s);
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("policy_tag,mean_return,std_return,seeds\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.policy_tag, r.mean, r.std, r.per_seed.len());
        }
        s
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        std::fs::write(dir.as_ref().join("compare-episodes.csv"), self.episodes_csv())?;
        std::fs::write(dir.as_ref().join("compare-summary.csv"), self.summary_csv())?;
        Ok(())
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    (mean, std)
}

/// Evaluates every policy on the same seeds (paired comparison).
pub fn compare(
    policies: &mut [(String, Box<dyn Driver + '_>)],
    env: &mut Env,
    n_episodes: usize,
    max_steps: usize,
    seeds: &[u64],
) -> Result<Comparison> {
    if policies.len() < 2 {
        return Err(Error::validation("compare needs at least two policies"));
    }
    if seeds.is_empty() {
        return Err(Error::validation("compare needs at least one seed"));
    }
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for (tag, driver) in policies.iter_mut() {
        let mut per_seed = Vec::new();
        for &seed in seeds {
            let r = evaluate(driver.as_mut(), env, n_episodes, max_steps, seed, tag)?;
            per_seed.push(r.mean_return);
            reports.push(r);
        }
        let (mean, std) = mean_std(&per_seed);
        rows.push(ComparisonRow { policy_tag: tag.clone(), per_seed, mean, std });
    }
    Ok(Comparison { seeds: seeds.to_vec(), rows, reports })
}
