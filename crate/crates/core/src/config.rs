//! Flat `key = value` run configuration.

use std::collections::HashSet;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::drive::DriveConfig;
use crate::env::World;
use crate::error::{Error, Result};
use crate::learner::{LearnerConfig, Simulation, TargetMode};
use crate::state::{WorldState, N_INTERNAL};
use crate::telemetry::RunMeta;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub world: World,
    pub drive: DriveConfig,
    pub learner: LearnerConfig,
    pub initial_levels: [f64; N_INTERNAL],
    pub initial_position: [f64; 2],
    pub seed: u64,
    pub iterations: u64,
    pub out_dir: PathBuf,
    pub plot_stride: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            world: World::default(),
            drive: DriveConfig::default(),
            learner: LearnerConfig::default(),
            initial_levels: [0.1; N_INTERNAL],
            initial_position: [0.5, 0.5],
            seed: 0,
            iterations: 14000,
            out_dir: PathBuf::from("runs"),
            plot_stride: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Origin {
    Experiment,
    Implementation,
}

impl Origin {
    fn comment(self) -> &'static str {
        match self {
            Origin::Experiment => "experiment default",
            Origin::Implementation => "implementation choice",
        }
    }
}

use Origin::{Experiment as E, Implementation as I};

/// Every key in dump order, with where its default comes from.
const KEYS: &[(&str, Origin)] = &[
    ("side", E),
    ("resource1_x", I),
    ("resource1_y", I),
    ("resource2_x", I),
    ("resource2_y", I),
    ("resource_radius", E),
    ("vision_range", E),
    ("c1", E),
    ("c2", E),
    ("c3", E),
    ("c4", E),
    ("setpoint1", E),
    ("setpoint2", E),
    ("setpoint3", E),
    ("setpoint4", E),
    ("dt", E),
    ("level_floor", I),
    ("walk_fatigue_max", E),
    ("sleep_eligible_min", E),
    ("sleep_forced_min", E),
    ("consume_level_max", E),
    ("sleep_min_steps", E),
    ("initial_level1", I),
    ("initial_level2", I),
    ("initial_level3", I),
    ("initial_level4", I),
    ("initial_x", I),
    ("initial_y", I),
    ("epsilon_reg", I),
    ("drive_mask", I),
    ("epsilon_explore", E),
    ("gamma", E),
    ("tau", E),
    ("target_mode", I),
    ("grad_clip", I),
    ("learning_rate", E),
    ("hidden_units", E),
    ("dropout_rate", E),
    ("seed", I),
    ("iterations", E),
    ("out_dir", I),
    ("plot_stride", I),
];

/// Keys that do not change what each step computes; a checkpoint stays
/// resumable across them.
const UNHASHED: [&str; 4] = ["seed", "iterations", "out_dir", "plot_stride"];

fn parse<T: FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse {v:?}"))
}

fn parse_mask(v: &str) -> std::result::Result<[bool; N_INTERNAL], String> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    if parts.len() != N_INTERNAL {
        return Err(format!("expected {N_INTERNAL} comma-separated flags, got {v:?}"));
    }
    let mut mask = [false; N_INTERNAL];
    for (m, p) in mask.iter_mut().zip(parts) {
        *m = match p {
            "1" => true,
            "0" => false,
            _ => return Err(format!("mask flags must be 0 or 1, got {p:?}")),
        };
    }
    Ok(mask)
}

fn fmt_mask(mask: &[bool; N_INTERNAL]) -> String {
    mask.iter().map(|m| if *m { "1" } else { "0" }).collect::<Vec<_>>().join(",")
}

fn indexed(key: &str, prefix: &str) -> Option<usize> {
    key.strip_prefix(prefix)?.parse::<usize>().ok().filter(|i| (1..=N_INTERNAL).contains(i)).map(|i| i - 1)
}

impl RunConfig {
    fn get(&self, key: &str) -> String {
        fn s(v: impl Display) -> String {
            v.to_string()
        }
        let w = &self.world;
        if let Some(i) = indexed(key, "c") {
            return s(w.body.c[i]);
        }
        if let Some(i) = indexed(key, "setpoint") {
            return s(w.body.setpoint.0[i]);
        }
        if let Some(i) = indexed(key, "initial_level") {
            return s(self.initial_levels[i]);
        }
        match key {
            "side" => s(w.arena.side),
            "resource1_x" => s(w.arena.resources[0].center[0]),
            "resource1_y" => s(w.arena.resources[0].center[1]),
            "resource2_x" => s(w.arena.resources[1].center[0]),
            "resource2_y" => s(w.arena.resources[1].center[1]),
            "resource_radius" => s(w.arena.resources[0].radius),
            "vision_range" => s(w.arena.vision_range),
            "dt" => s(w.body.dt),
            "level_floor" => s(w.body.level_floor),
            "walk_fatigue_max" => s(w.thresholds.walk_fatigue_max),
            "sleep_eligible_min" => s(w.thresholds.sleep_eligible_min),
            "sleep_forced_min" => s(w.thresholds.sleep_forced_min),
            "consume_level_max" => s(w.thresholds.consume_level_max),
            "sleep_min_steps" => s(w.thresholds.sleep_min_steps),
            "initial_x" => s(self.initial_position[0]),
            "initial_y" => s(self.initial_position[1]),
            "epsilon_reg" => s(self.drive.epsilon_reg),
            "drive_mask" => fmt_mask(&self.drive.mask),
            "epsilon_explore" => s(self.learner.epsilon_explore),
            "gamma" => s(self.learner.gamma),
            "tau" => s(self.learner.tau),
            "target_mode" => s(self.learner.target_mode.name()),
            "grad_clip" => s(self.learner.grad_clip.unwrap_or(0.0)),
            "learning_rate" => s(self.learner.learning_rate),
            "hidden_units" => s(self.learner.hidden_units),
            "dropout_rate" => s(self.learner.dropout_rate),
            "seed" => s(self.seed),
            "iterations" => s(self.iterations),
            "out_dir" => s(self.out_dir.display()),
            "plot_stride" => s(self.plot_stride),
            _ => unreachable!("unknown key {key}"),
        }
    }

    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let w = &mut self.world;
        if let Some(i) = indexed(key, "c") {
            w.body.c[i] = parse(v)?;
            return Ok(());
        }
        if let Some(i) = indexed(key, "setpoint") {
            w.body.setpoint.0[i] = parse(v)?;
            return Ok(());
        }
        if let Some(i) = indexed(key, "initial_level") {
            self.initial_levels[i] = parse(v)?;
            return Ok(());
        }
        match key {
            "side" => w.arena.side = parse(v)?,
            "resource1_x" => w.arena.resources[0].center[0] = parse(v)?,
            "resource1_y" => w.arena.resources[0].center[1] = parse(v)?,
            "resource2_x" => w.arena.resources[1].center[0] = parse(v)?,
            "resource2_y" => w.arena.resources[1].center[1] = parse(v)?,
            "resource_radius" => {
                let r = parse(v)?;
                w.arena.resources.iter_mut().for_each(|s| s.radius = r);
            }
            "vision_range" => w.arena.vision_range = parse(v)?,
            "dt" => w.body.dt = parse(v)?,
            "level_floor" => w.body.level_floor = parse(v)?,
            "walk_fatigue_max" => w.thresholds.walk_fatigue_max = parse(v)?,
            "sleep_eligible_min" => w.thresholds.sleep_eligible_min = parse(v)?,
            "sleep_forced_min" => w.thresholds.sleep_forced_min = parse(v)?,
            "consume_level_max" => w.thresholds.consume_level_max = parse(v)?,
            "sleep_min_steps" => w.thresholds.sleep_min_steps = parse(v)?,
            "initial_x" => self.initial_position[0] = parse(v)?,
            "initial_y" => self.initial_position[1] = parse(v)?,
            "epsilon_reg" => self.drive.epsilon_reg = parse(v)?,
            "drive_mask" => self.drive.mask = parse_mask(v)?,
            "epsilon_explore" => self.learner.epsilon_explore = parse(v)?,
            "gamma" => self.learner.gamma = parse(v)?,
            "tau" => self.learner.tau = parse(v)?,
            "target_mode" => {
                self.learner.target_mode =
                    TargetMode::parse(v).ok_or_else(|| format!("expected none or semi_gradient, got {v:?}"))?
            }
            "grad_clip" => {
                let c: f64 = parse(v)?;
                self.learner.grad_clip = if c == 0.0 { None } else { Some(c) };
            }
            "learning_rate" => self.learner.learning_rate = parse(v)?,
            "hidden_units" => self.learner.hidden_units = parse(v)?,
            "dropout_rate" => self.learner.dropout_rate = parse(v)?,
            "seed" => self.seed = parse(v)?,
            "iterations" => self.iterations = parse(v)?,
            "out_dir" => {
                if v.is_empty() {
                    return Err("output directory must not be empty".into());
                }
                self.out_dir = PathBuf::from(v)
            }
            "plot_stride" => {
                self.plot_stride = parse(v)?;
                if self.plot_stride == 0 {
                    return Err("plot_stride must be at least 1".into());
                }
            }
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Parses a config text; keys not mentioned keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(Error::Config { line, key: content.to_string(), message: "expected `key = value`".into() });
            };
            let (key, value) = (key.trim(), value.trim());
            let err = |message: String| Error::Config { line, key: key.to_string(), message };
            if !KEYS.iter().any(|(k, _)| *k == key) {
                return Err(err("unknown key".into()));
            }
            if !seen.insert(key.to_string()) {
                return Err(err("duplicate key".into()));
            }
            cfg.set(key, value).map_err(err)?;
            cfg.validate_key(key).map_err(|e| err(e.to_string()))?;
        }
        cfg.validate().map_err(|e| Error::Config { line: 0, key: "(whole file)".into(), message: e.to_string() })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Single-key checks that can fail before the rest of the file is read.
    fn validate_key(&self, key: &str) -> Result<()> {
        match key {
            "dt" if !(self.world.body.dt > 0.0) => Err(Error::contract("dt must be positive")),
            "epsilon_reg" => self.drive.validate(),
            "epsilon_explore" | "gamma" | "tau" | "learning_rate" | "hidden_units" | "dropout_rate" | "grad_clip" => {
                self.learner.validate()
            }
            _ => Ok(()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.drive.validate()?;
        self.learner.validate()?;
        let state = self.initial_state()?;
        if !self.world.arena.contains(state.position) {
            return Err(Error::contract("initial position lies outside the arena"));
        }
        Ok(())
    }

    pub fn initial_state(&self) -> Result<WorldState> {
        if self.initial_levels.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::contract("initial levels must be finite and nonnegative"));
        }
        Ok(WorldState::from_levels(self.initial_levels, self.initial_position, &self.world.body.setpoint))
    }

    /// Every key with its value and a comment saying where the default comes from.
    pub fn dump(&self) -> String {
        let mut out = String::from("# ctcs-hrrl run configuration\n");
        for (key, origin) in KEYS {
            out.push_str(&format!("# {}\n{key} = {}\n", origin.comment(), self.get(key)));
        }
        out
    }

    /// Hex SHA-256 over every key that affects the computation.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for (key, _) in KEYS.iter().filter(|(k, _)| !UNHASHED.contains(k)) {
            hasher.update(format!("{key} = {}\n", self.get(key)).as_bytes());
        }
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn meta(&self, seed: u64) -> RunMeta {
        RunMeta::new(seed, self.hash())
    }

    pub fn simulation(&self, seed: u64) -> Result<Simulation> {
        Simulation::new(self.world, self.drive, self.learner, self.initial_state()?, self.meta(seed))
    }
}
