use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ildrive_core::demolog::write_demo_log;
use ildrive_core::seed::SeedStream;
use ildrive_core::sim::Env;
use ildrive_core::{Action, Observation, Transition};

use crate::protocol::{ClientMsg, ServerMsg, TrackGeometry};
use crate::Result;

pub const TICK_HZ: u32 = 20;

/// Ticks the last control keeps being applied after the driver disconnects.
pub const HOLD_TICKS: u32 = 10;

/// Per-step `(d, v, r)` rows written next to a recording, so rewards can be
/// recomputed offline.
pub fn sidecar_path(log: &Path) -> PathBuf {
    log.with_extension("dvr.csv")
}

struct Recorder {
    path: PathBuf,
    transitions: Vec<Transition>,
    rows: Vec<(f64, f64, f64)>,
}

impl Recorder {
    /// Rewrites both files so they are always complete on disk.
    fn flush(&self) -> Result<()> {
        write_demo_log(&self.transitions, &self.path)?;
        let mut csv = String::from("d,v,r\n");
        for (d, v, r) in &self.rows {
            let _ = writeln!(csv, "{d},{v},{r}");
        }
        std::fs::write(sidecar_path(&self.path), csv)?;
        Ok(())
    }
}

/// One driver, one environment, one tick at a time.
pub struct TeleopSession {
    env: Env,
    seeds: SeedStream,
    episodes_started: u64,
    obs: Option<Observation>,
    control: Action,
    recording_requested: bool,
    /// Fixed for the whole current episode.
    recording: bool,
    connected: bool,
    hold_left: u32,
    episode_return: f64,
    pending: Vec<(Transition, (f64, f64, f64))>,
    recorder: Option<Recorder>,
}

impl TeleopSession {
    /// `out` is the `.drvlog` that recorded episodes go to; without it,
    /// recording requests are ignored.
    pub fn new(env: Env, out: Option<PathBuf>) -> Self {
        let seeds = SeedStream::new(env.config().seed).child("teleop");
        Self {
            env,
            seeds,
            episodes_started: 0,
            obs: None,
            control: Action::zero(),
            recording_requested: false,
            recording: false,
            connected: false,
            hold_left: 0,
            episode_return: 0.0,
            pending: Vec::new(),
            recorder: out.map(|path| Recorder { path, transitions: Vec::new(), rows: Vec::new() }),
        }
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    pub fn control(&self) -> Action {
        self.control
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn recorded_transitions(&self) -> usize {
        self.recorder.as_ref().map_or(0, |r| r.transitions.len())
    }

    /// Registers a driver and returns the greeting.
    pub fn connect(&mut self) -> ServerMsg {
        self.connected = true;
        self.hold_left = 0;
        if self.obs.is_none() {
            self.start_episode();
        }
        ServerMsg::Hello { track: TrackGeometry::of(self.env.track()), tick_hz: TICK_HZ }
    }

    pub fn disconnect(&mut self) {
        if self.connected {
            self.connected = false;
            self.hold_left = HOLD_TICKS;
        }
    }

    /// Applies one client frame. Only errors produce a reply.
    pub fn handle_message(&mut self, text: &str) -> Result<Option<ServerMsg>> {
        let msg = match serde_json::from_str::<ClientMsg>(text) {
            Ok(m) => m,
            Err(e) => return Ok(Some(ServerMsg::error(format!("bad message: {e}")))),
        };
        match msg {
            ClientMsg::Control { throttle, brake, steering, recording } => {
                self.control = Action::clamped(throttle, brake, steering);
                self.recording_requested = recording;
            }
            ClientMsg::Reset => {
                self.finish_episode(true)?;
                self.start_episode();
            }
        }
        Ok(None)
    }

    /// One simulation step with the latest control, or nothing when no
    /// driver is connected and the hold period is over.
    pub fn tick(&mut self) -> Result<Vec<ServerMsg>> {
        if !self.connected {
            if self.hold_left == 0 {
                return Ok(Vec::new());
            }
            self.hold_left -= 1;
        }
        if self.obs.is_none() {
            self.start_episode();
        }
        let obs = self.obs.take().expect("episode is running");
        let action = self.control;
        if !self.connected && self.hold_left == 0 {
            self.control = Action::zero();
        }
        let out = self.env.step(&action)?;
        let info = out.info;
        self.episode_return += info.reward.r;
        if self.recording {
            let t = Transition::new(obs, action, info.reward.r as f32, out.obs.clone(), out.done)?;
            self.pending.push((t, (info.distance_to_obstacle, info.speed, info.reward.r)));
        }
        let car = *self.env.car();
        let mut msgs = vec![ServerMsg::State {
            x: car.x,
            y: car.y,
            psi: car.psi,
            v: car.v,
            reward: info.reward.r,
            distance: info.distance_to_obstacle,
            step: self.env.steps(),
            recording: self.recording,
            condition: self.env.condition().preset.name().to_string(),
        }];
        if out.done {
            msgs.push(ServerMsg::EpisodeEnd { ret: self.episode_return, steps: self.env.steps(), collided: info.collided });
            self.finish_episode(false)?;
            self.start_episode();
        } else {
            self.obs = Some(out.obs);
        }
        Ok(msgs)
    }

    fn start_episode(&mut self) {
        let seed = self.seeds.derive(&self.episodes_started.to_string());
        self.episodes_started += 1;
        self.obs = Some(self.env.reset(seed));
        self.recording = self.recording_requested && self.recorder.is_some();
        self.episode_return = 0.0;
    }

    /// Moves the episode's transitions to disk. A forced end marks the last
    /// transition terminal so the log keeps its episode boundaries.
    fn finish_episode(&mut self, forced: bool) -> Result<()> {
        let pending = std::mem::take(&mut self.pending);
        let Some(rec) = self.recorder.as_mut() else { return Ok(()) };
        if pending.is_empty() {
            return Ok(());
        }
        let n = pending.len();
        for (i, (mut t, row)) in pending.into_iter().enumerate() {
            if forced && i + 1 == n {
                t.done = true;
            }
            rec.transitions.push(t);
            rec.rows.push(row);
        }
        rec.flush()
    }
}
