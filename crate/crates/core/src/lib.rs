//! Continuous-time homeostatic reinforcement learning.
//!
//! An embodied agent keeps two resource levels near their set points in a
//! square arena while muscular and sleep fatigue gate what it may do. It
//! learns a model of its own dynamics and a deviation function, and acts by
//! minimizing the Hamilton-Jacobi-Bellman criterion built from both.

pub mod cli;
pub mod config;
pub mod drive;
pub mod env;
pub mod error;
pub mod learner;
pub mod neural;
pub mod par;
pub mod state;
pub mod telemetry;
pub mod toy;
pub mod verify;

pub use config::RunConfig;
pub use drive::{drive, DriveConfig};
pub use env::World;
pub use error::{Error, Result};
pub use learner::{Checkpoint, Learner, LearnerConfig, Simulation, TargetMode};
pub use par::Execution;
pub use state::{ActionId, Control, Resource, SetPoint, WorldState};
pub use telemetry::{EpisodeLog, RunMeta, RunSummary, StepRecord};
