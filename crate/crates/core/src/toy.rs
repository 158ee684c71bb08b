//! One-dimensional two-action world with known dynamics, used as a ground
//! truth for the HJB residual. A single level `l` evolves as `(c + u) l`; the
//! agent either rests (`u = 0`) or consumes (`u = 1`).

use crate::drive::DriveConfig;
use crate::learner::{hjb_residual, DeviationModel, TransitionModel};
use crate::par::Execution;
use crate::state::{Control, STATE_DIM};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ToyWorld {
    pub c: f64,
    pub consume_rate: f64,
    pub setpoint: f64,
    pub gamma: f64,
    pub dt: f64,
    pub domain: (f64, f64),
}

impl Default for ToyWorld {
    fn default() -> Self {
        ToyWorld { c: -0.5, consume_rate: 1.0, setpoint: 1.0, gamma: 0.9, dt: 0.01, domain: (0.05, 3.0) }
    }
}

impl ToyWorld {
    pub fn controls(&self) -> [Control; 2] {
        let mut consume = Control::ZERO;
        consume.0[0] = self.consume_rate;
        [Control::ZERO, consume]
    }

    pub fn drive_config(&self) -> DriveConfig {
        DriveConfig { epsilon_reg: 1e-6, mask: [true, false, false, false] }
    }

    fn rate(&self, level: f64, u: f64) -> f64 {
        (self.c + u) * level
    }

    fn drive(&self, level: f64) -> f64 {
        let d = level - self.setpoint;
        (self.drive_config().epsilon_reg + d * d).sqrt()
    }

    pub fn zeta(&self, level: f64) -> [f64; STATE_DIM] {
        let mut z = [0.0; STATE_DIM];
        z[0] = level - self.setpoint;
        z
    }

    /// Value iteration on a uniform grid of spacing `h`.
    pub fn solve(&self, h: f64) -> GridDeviation {
        let (lo, hi) = self.domain;
        let n = ((hi - lo) / h).round() as usize + 1;
        let levels: Vec<f64> = (0..n).map(|i| lo + i as f64 * h).collect();
        let discount = self.gamma.powf(self.dt);
        let mut grid = GridDeviation { lo, h, values: vec![0.0; n], setpoint: self.setpoint };
        let stage: Vec<f64> = levels.iter().map(|l| self.drive(*l) * self.dt).collect();
        let successors: Vec<[f64; 2]> = levels
            .iter()
            .map(|l| [0.0, self.consume_rate].map(|u| l + self.rate(*l, u) * self.dt))
            .collect();
        // Sup-norm change of 1e-10 bounds the remaining error by 1e-10 / (1 - discount).
        let tol = 1e-10;
        loop {
            let next: Vec<f64> = (0..n)
                .map(|i| {
                    let best = successors[i].iter().map(|s| grid.interpolate(*s)).fold(f64::INFINITY, f64::min);
                    stage[i] + discount * best
                })
                .collect();
            let change = next.iter().zip(&grid.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            grid.values = next;
            if change <= tol {
                return grid;
            }
        }
    }

    /// `|HJB residual|` of `deviation` at each level, under the exact dynamics.
    pub fn residuals<D: DeviationModel + Sync>(&self, deviation: &D, levels: &[f64], exec: Execution) -> Vec<f64> {
        let controls = self.controls();
        let drive_cfg = self.drive_config();
        exec.map(levels, |l| {
            hjb_residual(&self.zeta(*l), &controls, self, deviation, self.gamma, &drive_cfg, self.dt).abs()
        })
    }
}

impl TransitionModel for ToyWorld {
    fn rate(&self, zeta: &[f64; STATE_DIM], control: &Control) -> [f64; STATE_DIM] {
        let mut r = [0.0; STATE_DIM];
        r[0] = ToyWorld::rate(self, zeta[0] + self.setpoint, control.0[0]);
        r
    }
}

/// Deviation function tabulated on a grid, linearly interpolated and clamped
/// at the domain ends.
#[derive(Clone, Debug, PartialEq)]
pub struct GridDeviation {
    lo: f64,
    h: f64,
    values: Vec<f64>,
    setpoint: f64,
}

impl GridDeviation {
    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn interpolate(&self, level: f64) -> f64 {
        let n = self.values.len();
        let x = ((level - self.lo) / self.h).clamp(0.0, (n - 1) as f64);
        let i = (x.floor() as usize).min(n - 2);
        let w = x - i as f64;
        self.values[i] * (1.0 - w) + self.values[i + 1] * w
    }
}

impl DeviationModel for GridDeviation {
    fn value_and_gradient(&self, zeta: &[f64; STATE_DIM]) -> (f64, [f64; STATE_DIM]) {
        let l = zeta[0] + self.setpoint;
        let mut g = [0.0; STATE_DIM];
        g[0] = (self.interpolate(l + self.h) - self.interpolate(l - self.h)) / (2.0 * self.h);
        (self.interpolate(l), g)
    }
}

/// `n` levels spread evenly over `[0.2, 0.8]` and `[1.3, 2.5]`, away from
/// the set point where the optimal policy switches and `J*` has a kink.
pub fn sample_levels(n: usize) -> Vec<f64> {
    let below = n / 2;
    let above = n - below;
    let spread = |a: f64, b: f64, k: usize| (0..k).map(move |i| a + (b - a) * (i as f64 + 0.5) / k as f64);
    spread(0.2, 0.8, below).chain(spread(1.3, 2.5, above)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ToyOracleReport {
    /// Largest residual on the base grid.
    pub max_residual: f64,
    /// Largest residual change when both grid spacing and time step are halved.
    pub discretization_error: f64,
}

impl ToyOracleReport {
    pub fn ratio(&self) -> f64 {
        self.max_residual / self.discretization_error
    }
}

/// Residual of value-iterated `J*` at base resolution, against its own
/// change under refinement.
pub fn toy_oracle(world: &ToyWorld, h: f64, samples: usize, exec: Execution) -> ToyOracleReport {
    let levels = sample_levels(samples);
    let coarse = world.residuals(&world.solve(h), &levels, exec);
    let fine_world = ToyWorld { dt: world.dt / 2.0, ..*world };
    let fine = fine_world.residuals(&fine_world.solve(h / 2.0), &levels, exec);
    ToyOracleReport {
        max_residual: coarse.iter().copied().fold(0.0, f64::max),
        discretization_error: coarse.iter().zip(&fine).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
    }
}
