//! State, control and action vocabulary shared by the environment and the learner.
//!
//! The agent state `zeta` is the concatenation of four internal deviations
//! (resource 1, resource 2, muscular fatigue, sleep fatigue) and a planar
//! position. Deviations are stored relative to the homeostatic set point;
//! raw levels are derived on demand.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_INTERNAL: usize = 4;
pub const N_EXTERNAL: usize = 2;
pub const STATE_DIM: usize = N_INTERNAL + N_EXTERNAL;

/// Index of the muscular fatigue component.
pub const MUSCULAR: usize = 2;
/// Index of the sleep fatigue component.
pub const SLEEP: usize = 3;

/// Homeostatic set points for (resource 1, resource 2, muscular fatigue, sleep fatigue).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetPoint(pub [f64; N_INTERNAL]);

impl Default for SetPoint {
    fn default() -> Self {
        SetPoint([1.0, 2.0, 0.0, 0.0])
    }
}

impl SetPoint {
    pub fn values(&self) -> &[f64; N_INTERNAL] {
        &self.0
    }
}

/// `levels - setpoint`, componentwise.
pub fn deviation_from_levels(levels: &[f64], setpoint: &SetPoint) -> Result<[f64; N_INTERNAL]> {
    if levels.len() != N_INTERNAL {
        return Err(Error::contract(format!(
            "expected {N_INTERNAL} internal levels, got {}",
            levels.len()
        )));
    }
    let mut delta = [0.0; N_INTERNAL];
    for (i, d) in delta.iter_mut().enumerate() {
        *d = levels[i] - setpoint.0[i];
    }
    Ok(delta)
}

/// Full agent state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub delta: [f64; N_INTERNAL],
    pub position: [f64; N_EXTERNAL],
    pub clock: f64,
    pub sleep_steps_remaining: u32,
}

impl WorldState {
    pub fn from_levels(
        levels: [f64; N_INTERNAL],
        position: [f64; N_EXTERNAL],
        setpoint: &SetPoint,
    ) -> Self {
        let mut delta = levels;
        for (d, x) in delta.iter_mut().zip(setpoint.0) {
            *d -= x;
        }
        WorldState {
            delta,
            position,
            clock: 0.0,
            sleep_steps_remaining: 0,
        }
    }

    pub fn levels(&self, setpoint: &SetPoint) -> [f64; N_INTERNAL] {
        let mut levels = self.delta;
        for (l, x) in levels.iter_mut().zip(setpoint.0) {
            *l += x;
        }
        levels
    }

    pub fn level(&self, i: usize, setpoint: &SetPoint) -> f64 {
        self.delta[i] + setpoint.0[i]
    }

    /// The network-facing state vector `[delta, position]`.
    pub fn zeta(&self) -> [f64; STATE_DIM] {
        let mut z = [0.0; STATE_DIM];
        z[..N_INTERNAL].copy_from_slice(&self.delta);
        z[N_INTERNAL..].copy_from_slice(&self.position);
        z
    }

    pub fn is_sleeping(&self) -> bool {
        self.sleep_steps_remaining > 0
    }
}

/// Instantaneous effect of an action on `(delta_1, delta_2, f_m, f_s, x, y)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Control(pub [f64; STATE_DIM]);

impl Control {
    pub const ZERO: Control = Control([0.0; STATE_DIM]);

    pub fn values(&self) -> &[f64; STATE_DIM] {
        &self.0
    }

    pub fn displacement(&self) -> [f64; N_EXTERNAL] {
        [self.0[4], self.0[5]]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Resource {
    First,
    Second,
}

impl Resource {
    pub const ALL: [Resource; 2] = [Resource::First, Resource::Second];

    /// Zero-based index into the internal state and the arena's resource list.
    pub fn index(self) -> usize {
        match self {
            Resource::First => 0,
            Resource::Second => 1,
        }
    }
}

/// The ten discrete actions. Declaration order is the tie-breaking order used
/// by greedy action selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActionId {
    WalkLeft,
    WalkRight,
    WalkDown,
    WalkUp,
    GoToResource(Resource),
    Consume(Resource),
    Sleep,
    Idle,
}

impl ActionId {
    pub const ALL: [ActionId; 10] = [
        ActionId::WalkLeft,
        ActionId::WalkRight,
        ActionId::WalkDown,
        ActionId::WalkUp,
        ActionId::GoToResource(Resource::First),
        ActionId::GoToResource(Resource::Second),
        ActionId::Consume(Resource::First),
        ActionId::Consume(Resource::Second),
        ActionId::Sleep,
        ActionId::Idle,
    ];

    pub fn is_walk(self) -> bool {
        matches!(
            self,
            ActionId::WalkLeft | ActionId::WalkRight | ActionId::WalkDown | ActionId::WalkUp
        )
    }

    /// Walking and directed approach both move the body.
    pub fn is_locomotion(self) -> bool {
        self.is_walk() || matches!(self, ActionId::GoToResource(_))
    }

    pub fn name(self) -> &'static str {
        match self {
            ActionId::WalkLeft => "walk_left",
            ActionId::WalkRight => "walk_right",
            ActionId::WalkDown => "walk_down",
            ActionId::WalkUp => "walk_up",
            ActionId::GoToResource(Resource::First) => "goto_r1",
            ActionId::GoToResource(Resource::Second) => "goto_r2",
            ActionId::Consume(Resource::First) => "consume_r1",
            ActionId::Consume(Resource::Second) => "consume_r2",
            ActionId::Sleep => "sleep",
            ActionId::Idle => "idle",
        }
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActionId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ActionId::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::contract(format!("unknown action `{s}`")))
    }
}

/// A discrete action with its nominal control and minimum duration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionSpec {
    pub id: ActionId,
    pub control: Control,
    pub min_duration_steps: u32,
}

pub const WALK_STEP: f64 = 0.1;
pub const WALK_FATIGUE: f64 = 0.01;
pub const CONSUME_RATE: f64 = 0.1;
pub const SLEEP_RECOVERY: f64 = -0.001;
pub const SLEEP_MIN_STEPS: u32 = 1000;

impl ActionSpec {
    /// Nominal control of each action. `GoToResource` carries no displacement
    /// here; the environment fills in the directed sub-step it actually applies.
    pub fn of(id: ActionId) -> Self {
        let c = match id {
            ActionId::WalkLeft => [0.0, 0.0, WALK_FATIGUE, 0.0, -WALK_STEP, 0.0],
            ActionId::WalkRight => [0.0, 0.0, WALK_FATIGUE, 0.0, WALK_STEP, 0.0],
            ActionId::WalkDown => [0.0, 0.0, WALK_FATIGUE, 0.0, 0.0, -WALK_STEP],
            ActionId::WalkUp => [0.0, 0.0, WALK_FATIGUE, 0.0, 0.0, WALK_STEP],
            ActionId::GoToResource(_) => [0.0, 0.0, WALK_FATIGUE, 0.0, 0.0, 0.0],
            ActionId::Consume(Resource::First) => [CONSUME_RATE, 0.0, 0.0, 0.0, 0.0, 0.0],
            ActionId::Consume(Resource::Second) => [0.0, CONSUME_RATE, 0.0, 0.0, 0.0, 0.0],
            ActionId::Sleep => [0.0, 0.0, 0.0, SLEEP_RECOVERY, 0.0, 0.0],
            ActionId::Idle => [0.0; STATE_DIM],
        };
        ActionSpec {
            id,
            control: Control(c),
            min_duration_steps: if id == ActionId::Sleep { SLEEP_MIN_STEPS } else { 1 },
        }
    }

    pub fn all() -> [ActionSpec; 10] {
        ActionId::ALL.map(ActionSpec::of)
    }
}
