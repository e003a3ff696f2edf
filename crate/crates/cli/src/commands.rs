//! One function per subcommand, callable without going through argv.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{ensure, Context as _, Result};
use ildrive_core::checkpoint::Checkpoint;
use ildrive_core::config::ExperimentConfig;
use ildrive_core::dataset::{augment_low_speed, collect_demos, split, DemoSet, Source};
use ildrive_core::demolog::{read_demo_log, write_demo_log};
use ildrive_core::eval::{compare as compare_policies, evaluate, Comparison, EvalReport};
use ildrive_core::il::{self, train_il as fit_il};
use ildrive_core::policy::ActorNet;
use ildrive_core::rl::{self, train_rl as fit_rl, RlObserver};
use ildrive_core::rollout::{Driver, Expert};
use ildrive_core::seed::SeedStream;
use ildrive_core::sim::Env;

/// A validated config with its output directory prepared.
pub struct Context {
    pub cfg: ExperimentConfig,
    pub digest: String,
}

impl Context {
    /// Validates `cfg`, creates the output directory and writes
    /// `resolved-config.json` into it.
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        std::fs::create_dir_all(&cfg.out_dir)
            .with_context(|| format!("creating output directory {}", cfg.out_dir.display()))?;
        std::fs::write(cfg.out_dir.join("resolved-config.json"), cfg.to_json() + "\n")?;
        let digest = cfg.digest()?;
        Ok(Self { cfg, digest })
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.cfg.out_dir.join(name)
    }

    pub fn env(&self) -> Result<Env> {
        Ok(self.cfg.build_env()?)
    }
}

fn require(path: &Path, what: &str) -> Result<()> {
    ensure!(path.is_file(), "{what} {} does not exist", path.display());
    Ok(())
}

/// Drives the scripted expert for `demo_episodes` episodes, cycling the
/// condition presets, and writes `demos.drvlog` plus a per-episode CSV.
pub fn record_expert(ctx: &Context) -> Result<PathBuf> {
    let cfg = &ctx.cfg;
    let mut env = ctx.env()?;
    let got = collect_demos(&mut Expert(cfg.expert), &mut env, cfg.demo_episodes, cfg.seed, Source::Expert)?;
    let path = ctx.out("demos.drvlog");
    write_demo_log(&got.transitions, &path)?;
    let mut csv = String::from("episode,seed,condition,steps,return,collided\n");
    for (i, e) in got.episodes.iter().enumerate() {
        let _ = writeln!(csv, "{i},{},{},{},{},{}", e.seed, e.preset, e.steps, e.ret, e.collided);
    }
    std::fs::write(ctx.out("record-episodes.csv"), csv)?;
    let mean = got.episodes.iter().map(|e| e.ret).sum::<f64>() / got.episodes.len() as f64;
    eprintln!("recorded {} transitions over {} episodes (mean return {mean:.1}) to {}", got.transitions.len(), got.episodes.len(), path.display());
    Ok(path)
}

/// Splits the log by episode, adds low-speed launch copies to the training
/// half, and clones the demonstrator. Writes `il.ckpt` and `il-history.csv`.
pub fn train_il(ctx: &Context, demos: Option<&Path>) -> Result<PathBuf> {
    let cfg = &ctx.cfg;
    let demos = demos.map(Path::to_path_buf).unwrap_or_else(|| ctx.out("demos.drvlog"));
    require(&demos, "demonstration log")?;
    let transitions = read_demo_log(&demos).with_context(|| format!("reading {}", demos.display()))?;
    let all = DemoSet::from_transitions(&transitions, Source::Expert);
    let (train, test) = split(&all, cfg.test_fraction, cfg.seed)?;
    let train = augment_low_speed(&train, cfg.seed);
    eprintln!("imitation: {} training samples (augmented), {} test samples", train.len(), test.len());
    let out = fit_il(&train, &test, &cfg.il, &cfg.net, cfg.reward.v_theta, &ctx.digest)?;
    let path = ctx.out("il.ckpt");
    out.checkpoint.save(&path)?;
    il::write_history_csv(ctx.out("il-history.csv"), &out.history)?;
    if let Some(last) = out.history.last() {
        eprintln!("imitation: epoch {} train loss {:.5} test loss {:?}", last.epoch, last.train_loss, last.test_loss);
    }
    Ok(path)
}

/// Prints a line every `every` environment steps.
struct Progress {
    steps: usize,
    every: usize,
}

impl RlObserver for Progress {
    fn env_action(&mut self, _: &ActorNet, _: &ildrive_core::Observation, _: &ildrive_core::Action) {
        self.steps += 1;
        if self.steps.is_multiple_of(self.every) {
            eprintln!("rl: {} environment steps", self.steps);
        }
    }
}

/// Fine-tunes from the imitation checkpoint, or trains the baseline when
/// `rl.baseline` is set. Writes `rl.ckpt`/`rl-history.csv` or
/// `baseline.ckpt`/`baseline-history.csv`.
pub fn train_rl(ctx: &Context, il: Option<&Path>) -> Result<PathBuf> {
    let cfg = &ctx.cfg;
    let ckpt = if cfg.rl.baseline {
        None
    } else {
        let p = il.map(Path::to_path_buf).unwrap_or_else(|| ctx.out("il.ckpt"));
        require(&p, "imitation checkpoint")?;
        Some(Checkpoint::load(&p).with_context(|| format!("loading {}", p.display()))?)
    };
    let mut env = ctx.env()?;
    let mut progress = Progress { steps: 0, every: 10_000 };
    let out = fit_rl(ckpt.as_ref(), &mut env, &cfg.rl, &cfg.net, &ctx.digest, &mut progress)?;
    let stem = if cfg.rl.baseline { "baseline" } else { "rl" };
    let path = ctx.out(&format!("{stem}.ckpt"));
    out.checkpoint.save(&path)?;
    rl::write_history_csv(ctx.out(&format!("{stem}-history.csv")), &out.history)?;
    eprintln!("{stem}: best evaluation return {:.1}, {} pre-training updates", out.best_eval_return, out.pretrain_updates);
    Ok(path)
}

/// A checkpoint path, or `random` for a random-weights actor seeded from
/// the global seed.
pub fn load_policy(ctx: &Context, spec: &Path) -> Result<(String, ActorNet)> {
    let cfg = &ctx.cfg;
    if spec.as_os_str() == "random" {
        let mut rng = SeedStream::new(cfg.seed).rng("random-policy");
        return Ok(("random".into(), ActorNet::random(&cfg.net, cfg.reward.v_theta, &mut rng)?));
    }
    require(spec, "policy checkpoint")?;
    let ckpt = Checkpoint::load(spec).with_context(|| format!("loading {}", spec.display()))?;
    let tag = spec.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "policy".into());
    Ok((tag, ActorNet::from_checkpoint(&ckpt, &cfg.net, cfg.reward.v_theta)?))
}

/// Evaluates one policy with the global seed; writes `eval-<tag>.csv`.
pub fn eval(ctx: &Context, policy: &Path) -> Result<EvalReport> {
    let (tag, mut actor) = load_policy(ctx, policy)?;
    let mut env = ctx.env()?;
    let steps = env.config().max_steps;
    let report = evaluate(&mut actor, &mut env, ctx.cfg.eval_episodes, steps, ctx.cfg.seed, &tag)?;
    std::fs::write(ctx.out(&format!("eval-{tag}.csv")), report.to_csv())?;
    println!("{tag}: mean return {:.2} over {} episodes", report.mean_return, report.episodes.len());
    Ok(report)
}

/// Paired comparison over `compare_seeds`; writes `compare-episodes.csv`
/// and `compare-summary.csv`.
pub fn compare(ctx: &Context, policies: &[PathBuf]) -> Result<Comparison> {
    let specs: Vec<PathBuf> = if policies.is_empty() {
        ["il", "rl", "baseline"].iter().map(|s| ctx.out(&format!("{s}.ckpt"))).filter(|p| p.is_file()).collect()
    } else {
        policies.to_vec()
    };
    ensure!(specs.len() >= 2, "compare needs at least two policies, found {}", specs.len());
    let mut drivers: Vec<(String, Box<dyn Driver>)> = Vec::new();
    for s in &specs {
        let (tag, actor) = load_policy(ctx, s)?;
        drivers.push((tag, Box::new(actor)));
    }
    let mut env = ctx.env()?;
    let steps = env.config().max_steps;
    let cmp = compare_policies(&mut drivers, &mut env, ctx.cfg.eval_episodes, steps, &ctx.cfg.compare_seeds)?;
    cmp.write(&ctx.cfg.out_dir)?;
    for r in &cmp.rows {
        println!("{}: mean {:.2} std {:.2} over {} seeds", r.policy_tag, r.mean, r.std, r.per_seed.len());
    }
    Ok(cmp)
}

/// Blocks serving the teleoperation websocket until Ctrl-C.
pub fn serve_teleop(ctx: &Context, port: Option<u16>, file: &str) -> Result<()> {
    let env = ctx.env()?;
    ildrive_teleop::serve(env, port.unwrap_or(ildrive_teleop::DEFAULT_PORT), Some(ctx.out(file)))?;
    Ok(())
}
