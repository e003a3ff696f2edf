//! The `ildrive` command line: record demonstrations, clone them, fine-tune
//! with DDPG, and evaluate.
//!
//! [`run`] is the whole program; `main` only forwards the exit code. Every
//! command resolves one [`ExperimentConfig`] from `--config` plus flag
//! overrides and writes it to `resolved-config.json` in the output
//! directory before doing any work.

pub mod commands;
pub mod reproduce;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ildrive_core::config::ExperimentConfig;

pub use commands::Context;

#[derive(Debug, Parser)]
#[command(name = "ildrive", version, about = "Imitation-pretrained DDPG for image-based driving")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// Experiment config JSON; missing keys take their defaults.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Global seed; overrides the config file.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory; overrides the config file.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Track JSON; overrides the config file.
    #[arg(long, value_name = "PATH")]
    pub track: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RecordMode {
    Expert,
    Teleop,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Record demonstrations to <out>/demos.drvlog.
    Record {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "expert")]
        mode: RecordMode,
        /// Episodes to record in expert mode.
        #[arg(long, value_name = "N")]
        episodes: Option<usize>,
        /// Websocket port in teleop mode.
        #[arg(long, value_name = "N")]
        port: Option<u16>,
    },
    /// Behaviour-clone a demonstration log into <out>/il.ckpt.
    TrainIl {
        #[command(flatten)]
        common: Common,
        /// Demonstration log; defaults to <out>/demos.drvlog.
        #[arg(long, value_name = "PATH")]
        demos: Option<PathBuf>,
    },
    /// Fine-tune with DDPG into <out>/rl.ckpt, or train the from-scratch
    /// baseline into <out>/baseline.ckpt.
    TrainRl {
        #[command(flatten)]
        common: Common,
        /// Imitation checkpoint; defaults to <out>/il.ckpt.
        #[arg(long, value_name = "PATH")]
        il: Option<PathBuf>,
        /// Pure DDPG from random weights with exploration noise.
        #[arg(long)]
        baseline: bool,
    },
    /// Evaluate one policy checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        policy: PathBuf,
        #[arg(long, value_name = "N")]
        episodes: Option<usize>,
    },
    /// Paired evaluation of several policies over the config's compare seeds.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to include, or `random` for a random-weights actor.
        /// Defaults to whichever of il, rl and baseline exist in <out>.
        #[arg(long, value_name = "PATH")]
        policy: Vec<PathBuf>,
        #[arg(long, value_name = "N")]
        episodes: Option<usize>,
    },
    /// Serve the teleoperation websocket, recording to <out>/teleop.drvlog.
    ServeTeleop {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "N")]
        port: Option<u16>,
    },
}

/// Loads `--config` (or the defaults) and applies flag overrides.
pub fn resolve_config(common: &Common) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => {
            anyhow::ensure!(p.exists(), "config file {} does not exist", p.display());
            ExperimentConfig::load(p)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    if let Some(track) = &common.track {
        cfg.track = Some(track.clone());
    }
    if let Some(t) = &cfg.track {
        anyhow::ensure!(t.exists(), "track file {} does not exist", t.display());
    }
    Ok(cfg)
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Record { common, mode, episodes, port } => {
            let mut cfg = resolve_config(&common)?;
            if let Some(n) = episodes {
                cfg.demo_episodes = n;
            }
            let ctx = Context::new(cfg)?;
            match mode {
                RecordMode::Expert => commands::record_expert(&ctx).map(|_| ()),
                RecordMode::Teleop => commands::serve_teleop(&ctx, port, "demos.drvlog"),
            }
        }
        Command::TrainIl { common, demos } => {
            let ctx = Context::new(resolve_config(&common)?)?;
            commands::train_il(&ctx, demos.as_deref()).map(|_| ())
        }
        Command::TrainRl { common, il, baseline } => {
            let mut cfg = resolve_config(&common)?;
            cfg.rl.baseline |= baseline;
            let ctx = Context::new(cfg)?;
            commands::train_rl(&ctx, il.as_deref()).map(|_| ())
        }
        Command::Eval { common, policy, episodes } => {
            let mut cfg = resolve_config(&common)?;
            if let Some(n) = episodes {
                cfg.eval_episodes = n;
            }
            let ctx = Context::new(cfg)?;
            commands::eval(&ctx, &policy).map(|_| ())
        }
        Command::Compare { common, policy, episodes } => {
            let mut cfg = resolve_config(&common)?;
            if let Some(n) = episodes {
                cfg.eval_episodes = n;
            }
            let ctx = Context::new(cfg)?;
            commands::compare(&ctx, &policy).map(|_| ())
        }
        Command::ServeTeleop { common, port } => {
            let ctx = Context::new(resolve_config(&common)?)?;
            commands::serve_teleop(&ctx, port, "teleop.drvlog")
        }
    }
}

/// Runs one command line and returns the process exit code: 0 on success,
/// 2 for usage errors, 1 for anything that fails at run time.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
