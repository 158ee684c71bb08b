//! Model-based learner: epsilon-greedy action selection through the HJB
//! criterion, regression of the transition model on observed steps, and the
//! HJB-residual update of the deviation function with a slowly tracking target.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::drive::{drive, reward_discrete, DriveConfig};
use crate::env::World;
use crate::error::{Error, Result};
use crate::neural::{clip_global_norm, Adam, Approximator, Mode, DROPOUT_RATE, HIDDEN_UNITS};
use crate::state::{ActionId, Control, WorldState, N_INTERNAL, STATE_DIM};
use crate::telemetry::{EpisodeLog, RunMeta, StepRecord};

/// Where the target copy of the deviation function enters the `L_J` residual.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetMode {
    /// Every term uses the online network; only the `ln(gamma) J` term is differentiated.
    None,
    /// The input-gradient term uses the target network; the target tracks the
    /// online network with rate `tau`.
    SemiGradient,
}

impl TargetMode {
    pub fn name(self) -> &'static str {
        match self {
            TargetMode::None => "none",
            TargetMode::SemiGradient => "semi_gradient",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(TargetMode::None),
            "semi_gradient" => Some(TargetMode::SemiGradient),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub epsilon_explore: f64,
    pub gamma: f64,
    pub tau: f64,
    pub target_mode: TargetMode,
    /// Global-norm gradient clipping; `None` disables it.
    pub grad_clip: Option<f64>,
    pub learning_rate: f64,
    pub hidden_units: usize,
    pub dropout_rate: f64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            epsilon_explore: 0.3,
            gamma: 0.99,
            tau: 0.001,
            target_mode: TargetMode::SemiGradient,
            grad_clip: Some(10.0),
            learning_rate: 0.001,
            hidden_units: HIDDEN_UNITS,
            dropout_rate: DROPOUT_RATE,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon_explore) {
            return Err(Error::contract("epsilon_explore must lie in [0, 1]"));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::contract("gamma must lie in (0, 1)"));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::contract("tau must lie in (0, 1]"));
        }
        if !(self.learning_rate > 0.0) || self.hidden_units == 0 {
            return Err(Error::contract("learning rate and hidden units must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::contract("dropout rate must lie in [0, 1)"));
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return Err(Error::contract("grad_clip must be positive when enabled"));
        }
        Ok(())
    }
}

/// Predicts `zeta_dot` for a state and control.
pub trait TransitionModel {
    fn rate(&self, zeta: &[f64; STATE_DIM], control: &Control) -> [f64; STATE_DIM];
}

/// Scalar deviation function with its input gradient.
pub trait DeviationModel {
    fn value_and_gradient(&self, zeta: &[f64; STATE_DIM]) -> (f64, [f64; STATE_DIM]);
}

/// `f_hat(zeta, u)`: 12 inputs, 6 outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionNet(Approximator);

/// `J_hat(zeta)`: 6 inputs, 1 output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviationNet(Approximator);

fn transition_input(zeta: &[f64; STATE_DIM], control: &Control) -> [f64; 2 * STATE_DIM] {
    let mut x = [0.0; 2 * STATE_DIM];
    x[..STATE_DIM].copy_from_slice(zeta);
    x[STATE_DIM..].copy_from_slice(control.values());
    x
}

fn to_state_vec(v: &[f64]) -> [f64; STATE_DIM] {
    let mut out = [0.0; STATE_DIM];
    out.copy_from_slice(v);
    out
}

impl TransitionNet {
    pub fn new(net: Approximator) -> Result<Self> {
        if net.input_dim() != 2 * STATE_DIM || net.output_dim() != STATE_DIM {
            return Err(Error::contract("transition network must map 12 inputs to 6 outputs"));
        }
        Ok(TransitionNet(net))
    }

    pub fn net(&self) -> &Approximator {
        &self.0
    }

    pub fn net_mut(&mut self) -> &mut Approximator {
        &mut self.0
    }
}

impl TransitionModel for TransitionNet {
    fn rate(&self, zeta: &[f64; STATE_DIM], control: &Control) -> [f64; STATE_DIM] {
        let out = self.0.eval(&transition_input(zeta, control)).expect("shape checked at construction");
        to_state_vec(&out)
    }
}

impl DeviationNet {
    pub fn new(net: Approximator) -> Result<Self> {
        if net.input_dim() != STATE_DIM || net.output_dim() != 1 {
            return Err(Error::contract("deviation network must map 6 inputs to 1 output"));
        }
        Ok(DeviationNet(net))
    }

    pub fn net(&self) -> &Approximator {
        &self.0
    }

    pub fn net_mut(&mut self) -> &mut Approximator {
        &mut self.0
    }
}

impl DeviationModel for DeviationNet {
    fn value_and_gradient(&self, zeta: &[f64; STATE_DIM]) -> (f64, [f64; STATE_DIM]) {
        let (v, g) = self.0.value_and_grad_input(zeta).expect("shape checked at construction");
        (v, to_state_vec(&g))
    }
}

fn internal(zeta: &[f64; STATE_DIM]) -> [f64; N_INTERNAL] {
    let mut d = [0.0; N_INTERNAL];
    d.copy_from_slice(&zeta[..N_INTERNAL]);
    d
}

fn dot(a: &[f64; STATE_DIM], b: &[f64; STATE_DIM]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `d(delta + f(zeta, u) dt) + dJ/dzeta . f(zeta, u)`.
pub fn hjb_action_value<M: TransitionModel + ?Sized>(
    zeta: &[f64; STATE_DIM],
    control: &Control,
    model: &M,
    grad_j: &[f64; STATE_DIM],
    drive_cfg: &DriveConfig,
    dt: f64,
) -> f64 {
    let rate = model.rate(zeta, control);
    let mut next = internal(zeta);
    for (d, r) in next.iter_mut().zip(&rate) {
        *d += r * dt;
    }
    drive(&next, drive_cfg) + dot(grad_j, &rate)
}

/// Index of the smallest value; ties go to the earliest candidate.
pub fn argmin(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        match best {
            Some(b) if !(*v < values[b]) => {}
            _ => best = Some(i),
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Selection {
    pub action: ActionId,
    pub control: Control,
    pub explored: bool,
}

/// Epsilon-greedy selection over `candidates` (action, applied control).
#[allow(clippy::too_many_arguments)]
pub fn select_action<M, D, R>(
    zeta: &[f64; STATE_DIM],
    candidates: &[(ActionId, Control)],
    model: &M,
    deviation: &D,
    epsilon: f64,
    drive_cfg: &DriveConfig,
    dt: f64,
    rng: &mut R,
) -> Result<Selection>
where
    M: TransitionModel + ?Sized,
    D: DeviationModel + ?Sized,
    R: Rng + ?Sized,
{
    if candidates.is_empty() {
        return Err(Error::contract("no admissible action to select from"));
    }
    if rng.random::<f64>() < epsilon {
        let (action, control) = candidates[rng.random_range(0..candidates.len())];
        return Ok(Selection { action, control, explored: true });
    }
    let (_, grad_j) = deviation.value_and_gradient(zeta);
    let values: Vec<f64> = candidates
        .iter()
        .map(|(_, u)| hjb_action_value(zeta, u, model, &grad_j, drive_cfg, dt))
        .collect();
    let (action, control) = candidates[argmin(&values).expect("candidates nonempty")];
    Ok(Selection { action, control, explored: false })
}

/// `-ln(gamma) J(zeta) - min_a [d(zeta, u_a) + dJ/dzeta . f(zeta, u_a)]`.
pub fn hjb_residual<M, D>(
    zeta: &[f64; STATE_DIM],
    controls: &[Control],
    model: &M,
    deviation: &D,
    gamma: f64,
    drive_cfg: &DriveConfig,
    dt: f64,
) -> f64
where
    M: TransitionModel + ?Sized,
    D: DeviationModel + ?Sized,
{
    let (j, grad_j) = deviation.value_and_gradient(zeta);
    let best = controls
        .iter()
        .map(|u| hjb_action_value(zeta, u, model, &grad_j, drive_cfg, dt))
        .fold(f64::INFINITY, f64::min);
    -gamma.ln() * j - best
}

/// Derives independent stream seeds from one master seed.
fn sub_seeds<const N: usize>(master: u64) -> [u64; N] {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    std::array::from_fn(|_| rng.random())
}

/// Approximators, optimizer states and the exploration stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Learner {
    pub f_hat: TransitionNet,
    pub j_hat: DeviationNet,
    pub j_target: DeviationNet,
    adam_f: Adam,
    adam_j: Adam,
    rng: ChaCha8Rng,
    iteration: u64,
    clipped_updates: u64,
}

impl Learner {
    pub fn new(cfg: &LearnerConfig, seed: u64) -> Self {
        let [f_seed, j_seed, target_seed, explore_seed] = sub_seeds::<4>(seed);
        let h = cfg.hidden_units;
        let f = Approximator::new(&[2 * STATE_DIM, h, h, STATE_DIM], cfg.dropout_rate, f_seed);
        let j = Approximator::new(&[STATE_DIM, h, h, 1], cfg.dropout_rate, j_seed);
        let mut target = j.clone();
        target.reseed_dropout(target_seed);
        Learner {
            adam_f: Adam::new(f.num_params(), cfg.learning_rate),
            adam_j: Adam::new(j.num_params(), cfg.learning_rate),
            f_hat: TransitionNet(f),
            j_hat: DeviationNet(j),
            j_target: DeviationNet(target),
            rng: ChaCha8Rng::seed_from_u64(explore_seed),
            iteration: 0,
            clipped_updates: 0,
        }
    }

    /// Iterations completed so far.
    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn clipped_updates(&self) -> u64 {
        self.clipped_updates
    }

    pub fn adam_f(&self) -> &Adam {
        &self.adam_f
    }

    pub fn adam_j(&self) -> &Adam {
        &self.adam_j
    }

    /// HJB score of one control in `state`, dropout disabled.
    pub fn hjb_action_value(&self, state: &WorldState, control: &Control, drive_cfg: &DriveConfig, dt: f64) -> f64 {
        let zeta = state.zeta();
        let (_, grad_j) = self.j_hat.value_and_gradient(&zeta);
        hjb_action_value(&zeta, control, &self.f_hat, &grad_j, drive_cfg, dt)
    }

    pub fn select_action(
        &mut self,
        state: &WorldState,
        candidates: &[(ActionId, Control)],
        cfg: &LearnerConfig,
        drive_cfg: &DriveConfig,
        dt: f64,
    ) -> Result<Selection> {
        select_action(
            &state.zeta(),
            candidates,
            &self.f_hat,
            &self.j_hat,
            cfg.epsilon_explore,
            drive_cfg,
            dt,
            &mut self.rng,
        )
    }

    fn clip(&mut self, grads: &mut [f64], cfg: &LearnerConfig) {
        if let Some(max) = cfg.grad_clip {
            if clip_global_norm(grads, max) > max {
                self.clipped_updates += 1;
            }
        }
    }

    /// One Adam step on `L_f = |zeta' - zeta - f_hat(zeta, u) dt|^2`; returns
    /// the loss before the step.
    pub fn update_transition(
        &mut self,
        zeta: &[f64; STATE_DIM],
        control: &Control,
        zeta_next: &[f64; STATE_DIM],
        cfg: &LearnerConfig,
        dt: f64,
    ) -> Result<f64> {
        let net = self.f_hat.net_mut();
        let trace = net.forward(&transition_input(zeta, control), Mode::Train)?;
        let mut loss = 0.0;
        let mut upstream = [0.0; STATE_DIM];
        for i in 0..STATE_DIM {
            let r = zeta_next[i] - zeta[i] - trace.output[i] * dt;
            loss += r * r;
            upstream[i] = -2.0 * dt * r;
        }
        let mut grads = net.grad_params(&trace, &upstream)?;
        self.clip(&mut grads, cfg);
        self.adam_f.step(self.f_hat.net_mut().params_mut(), &grads)?;
        Ok(loss)
    }

    /// Residual `d(zeta') + dJ/dzeta . f_hat(zeta, u) + ln(gamma) J(zeta)` and
    /// which network supplies the gradient term, without updating anything.
    pub fn deviation_residual(
        &self,
        zeta: &[f64; STATE_DIM],
        control: &Control,
        zeta_next: &[f64; STATE_DIM],
        j_value: f64,
        cfg: &LearnerConfig,
        drive_cfg: &DriveConfig,
    ) -> f64 {
        let grad_source = match cfg.target_mode {
            TargetMode::SemiGradient => &self.j_target,
            TargetMode::None => &self.j_hat,
        };
        let (_, grad_j) = grad_source.value_and_gradient(zeta);
        let rate = self.f_hat.rate(zeta, control);
        drive(&internal(zeta_next), drive_cfg) + dot(&grad_j, &rate) + cfg.gamma.ln() * j_value
    }

    /// One Adam step on `L_J`, differentiating only through `ln(gamma) J(zeta)`,
    /// then the soft target update. Returns the loss before the step.
    pub fn update_deviation(
        &mut self,
        zeta: &[f64; STATE_DIM],
        control: &Control,
        zeta_next: &[f64; STATE_DIM],
        cfg: &LearnerConfig,
        drive_cfg: &DriveConfig,
    ) -> Result<f64> {
        let trace = self.j_hat.net_mut().forward(zeta, Mode::Train)?;
        let residual = self.deviation_residual(zeta, control, zeta_next, trace.output[0], cfg, drive_cfg);
        let upstream = [2.0 * residual * cfg.gamma.ln()];
        let mut grads = self.j_hat.net().grad_params(&trace, &upstream)?;
        self.clip(&mut grads, cfg);
        self.adam_j.step(self.j_hat.net_mut().params_mut(), &grads)?;
        if cfg.target_mode == TargetMode::SemiGradient {
            self.j_target.net_mut().soft_update(self.j_hat.net(), cfg.tau)?;
        }
        Ok(residual * residual)
    }
}

/// Receives each step record as it is produced.
pub trait StepSink {
    fn on_step(&mut self, record: &StepRecord) -> std::io::Result<()>;
}

/// Everything needed to resume a run bit-identically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub seed: u64,
    pub config_hash: String,
    pub learner: Learner,
    pub state: WorldState,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(s).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if c.format_version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {}", c.format_version)));
        }
        Ok(c)
    }
}

/// One agent in one world.
#[derive(Clone, Debug)]
pub struct Simulation {
    pub world: World,
    pub drive: DriveConfig,
    pub cfg: LearnerConfig,
    pub learner: Learner,
    pub state: WorldState,
    pub meta: RunMeta,
}

impl Simulation {
    pub fn new(world: World, drive: DriveConfig, cfg: LearnerConfig, initial: WorldState, meta: RunMeta) -> Result<Self> {
        world.validate()?;
        drive.validate()?;
        cfg.validate()?;
        if !world.arena.contains(initial.position) {
            return Err(Error::contract("initial position lies outside the arena"));
        }
        Ok(Simulation {
            learner: Learner::new(&cfg, meta.seed),
            world,
            drive,
            cfg,
            state: initial,
            meta,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            seed: self.meta.seed,
            config_hash: self.meta.config_hash.clone(),
            learner: self.learner.clone(),
            state: self.state,
        }
    }

    pub fn restore(&mut self, c: Checkpoint) -> Result<()> {
        if c.config_hash != self.meta.config_hash || c.seed != self.meta.seed {
            return Err(Error::Checkpoint("checkpoint was written under a different config or seed".into()));
        }
        self.learner = c.learner;
        self.state = c.state;
        Ok(())
    }

    /// select -> step -> update f_hat -> update J_hat.
    pub fn advance(&mut self) -> Result<StepRecord> {
        let dt = self.world.body.dt;
        let candidates: Vec<(ActionId, Control)> = self
            .world
            .admissible_actions(&self.state)
            .into_iter()
            .map(|a| (a, self.world.applied_control(&self.state, a)))
            .collect();
        let sel = self.learner.select_action(&self.state, &candidates, &self.cfg, &self.drive, dt)?;
        let next = self.world.step(&self.state, sel.action)?;
        let (zeta, zeta_next) = (self.state.zeta(), next.zeta());
        let loss_f = self.learner.update_transition(&zeta, &sel.control, &zeta_next, &self.cfg, dt)?;
        let loss_j = self.learner.update_deviation(&zeta, &sel.control, &zeta_next, &self.cfg, &self.drive)?;
        self.learner.iteration += 1;

        let sp = &self.world.body.setpoint;
        let levels = next.levels(sp);
        let record = StepRecord {
            step: self.learner.iteration,
            clock: next.clock,
            level1: levels[0],
            level2: levels[1],
            f_m: levels[2],
            f_s: levels[3],
            drive: drive(&next.delta, &self.drive),
            reward: reward_discrete(&self.state.delta, &next.delta, dt, &self.drive),
            loss_f,
            loss_j,
            action: sel.action,
            explored: sel.explored,
            pos_x: next.position[0],
            pos_y: next.position[1],
        };
        self.state = next;
        Ok(record)
    }

    /// Runs `iterations` steps, appending to a log that continues from the
    /// learner's current iteration count.
    pub fn run(&mut self, iterations: u64, mut sink: Option<&mut dyn StepSink>) -> Result<EpisodeLog> {
        let mut log = EpisodeLog::starting_at(self.meta.clone(), self.learner.iteration + 1);
        for _ in 0..iterations {
            let before = self.checkpoint();
            let record = self.advance()?;
            if let Some(s) = sink.as_deref_mut() {
                if let Err(e) = s.on_step(&record) {
                    return Err(Error::RunAborted {
                        iteration: before.learner.iteration,
                        checkpoint: Box::new(before),
                        source: e,
                    });
                }
            }
            log.record(record)?;
        }
        Ok(log)
    }
}
