//! The full comparison study: for each seed, record expert demonstrations,
//! clone them, fine-tune with DDPG, train the from-scratch baseline on the
//! same number of environment steps, then evaluate all of them (plus a
//! random-weights actor) on shared episode seeds.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Result;
use ildrive_core::config::ExperimentConfig;
use ildrive_core::eval::Comparison;

use crate::commands::{self, Context};

/// Mean evaluation returns for one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedOutcome {
    pub seed: u64,
    pub il: f64,
    pub il_rl: f64,
    pub baseline: f64,
    pub random: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StudyReport {
    pub seeds: Vec<SeedOutcome>,
}

impl StudyReport {
    fn mean(&self, f: impl Fn(&SeedOutcome) -> f64) -> f64 {
        self.seeds.iter().map(f).sum::<f64>() / self.seeds.len().max(1) as f64
    }

    pub fn il(&self) -> f64 {
        self.mean(|s| s.il)
    }

    pub fn il_rl(&self) -> f64 {
        self.mean(|s| s.il_rl)
    }

    pub fn baseline(&self) -> f64 {
        self.mean(|s| s.baseline)
    }

    pub fn random(&self) -> f64 {
        self.mean(|s| s.random)
    }

    pub fn seconds(&self) -> f64 {
        self.seeds.iter().map(|s| s.seconds).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("seed,il,il_rl,baseline,random,seconds\n");
        for o in &self.seeds {
            s += &format!("{},{},{},{},{},{:.1}\n", o.seed, o.il, o.il_rl, o.baseline, o.random, o.seconds);
        }
        s
    }
}

fn row(cmp: &Comparison, tag: &str) -> f64 {
    cmp.row(tag).map_or(f64::NAN, |r| r.mean)
}

/// Runs the whole pipeline for one seed under `<root>/seed-<n>`.
pub fn run_seed(base: &ExperimentConfig, seed: u64, root: &Path) -> Result<SeedOutcome> {
    let start = Instant::now();
    let mut cfg = base.clone().with_seed(seed);
    cfg.out_dir = root.join(format!("seed-{seed}"));
    cfg.compare_seeds = vec![seed];
    let ctx = Context::new(cfg.clone())?;
    commands::record_expert(&ctx)?;
    let il = commands::train_il(&ctx, None)?;
    let il_rl = commands::train_rl(&ctx, Some(&il))?;
    let mut baseline_cfg = cfg;
    baseline_cfg.rl.baseline = true;
    let baseline = commands::train_rl(&Context::new(baseline_cfg)?, None)?;
    let random = PathBuf::from("random");
    let cmp = commands::compare(&ctx, &[il, il_rl, baseline, random])?;
    Ok(SeedOutcome {
        seed,
        il: row(&cmp, "il"),
        il_rl: row(&cmp, "rl"),
        baseline: row(&cmp, "baseline"),
        random: row(&cmp, "random"),
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Runs every seed in turn and writes `study.csv` under `root`.
pub fn run_study(base: &ExperimentConfig, seeds: &[u64], root: &Path) -> Result<StudyReport> {
    let mut report = StudyReport::default();
    for &seed in seeds {
        let o = run_seed(base, seed, root)?;
        eprintln!(
            "seed {seed}: il {:.1} il+rl {:.1} baseline {:.1} random {:.1} ({:.0} s)",
            o.il, o.il_rl, o.baseline, o.random, o.seconds
        );
        report.seeds.push(o);
    }
    std::fs::write(root.join("study.csv"), report.to_csv())?;
    Ok(report)
}
