//! Randomized property suites with fixed internal seeds. Each suite returns
//! one [`SuiteReport`] per property it checks.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::drive::{lemma1_check, sign_property, ConsumptionScenario, DiscountedFunctional, DriveConfig, SignProperty};
use crate::error::Result;
use crate::neural::Approximator;
use crate::par::Execution;
use crate::state::STATE_DIM;
use crate::telemetry::audit_constraints;
use crate::toy::{toy_oracle, ToyWorld};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteReport {
    pub property: String,
    pub trials: u64,
    pub violations: u64,
    pub max_residual: f64,
    pub counterexample: Option<String>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Lemma1,
    Signs,
    Gradients,
    Constraints,
    HjbToy,
    All,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Lemma1 => "lemma1",
            Suite::Signs => "signs",
            Suite::Gradients => "gradients",
            Suite::Constraints => "constraints",
            Suite::HjbToy => "hjb-toy",
            Suite::All => "all",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        [Suite::Lemma1, Suite::Signs, Suite::Gradients, Suite::Constraints, Suite::HjbToy, Suite::All]
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| format!("unknown suite {s:?}"))
    }
}

pub fn run_suite(suite: Suite, exec: Execution) -> Result<Vec<SuiteReport>> {
    Ok(match suite {
        Suite::Lemma1 => lemma1_suite(&Lemma1Params::default(), exec)?,
        Suite::Signs => signs_suite(1000, exec)?,
        Suite::Gradients => gradients_suite(exec)?,
        Suite::Constraints => constraints_suite(exec)?,
        Suite::HjbToy => vec![hjb_toy_suite(exec)],
        Suite::All => {
            let mut all = Vec::new();
            for s in [Suite::Lemma1, Suite::Signs, Suite::Gradients, Suite::Constraints, Suite::HjbToy] {
                all.extend(run_suite(s, exec)?);
            }
            all
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lemma1Params {
    pub trajectories: usize,
    pub gamma: f64,
    pub step: f64,
    pub seed: u64,
}

impl Default for Lemma1Params {
    fn default() -> Self {
        Lemma1Params { trajectories: 100, gamma: 0.99, step: 1e-3, seed: 11 }
    }
}

/// Residual bound in units of the step.
pub const LEMMA1_STEP_MULTIPLE: f64 = 10.0;
/// Required residual shrinkage when the step is halved.
pub const LEMMA1_REFINEMENT_RATIO: f64 = 0.6;

/// Tail weight `gamma^T` left out of the truncated integrals.
pub const LEMMA1_TRUNCATION: f64 = 1e-7;

/// Continuous piecewise-linear drive through random knots.
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewiseLinear {
    knots: Vec<(f64, f64)>,
}

impl PiecewiseLinear {
    pub fn random(rng: &mut impl Rng, horizon: f64) -> Self {
        let mut knots = vec![(0.0, rng.random_range(0.001..3.0))];
        let mut t = 0.0;
        while t < horizon {
            t += rng.random_range(1.0..50.0);
            knots.push((t, rng.random_range(0.001..3.0)));
        }
        PiecewiseLinear { knots }
    }

    pub fn at(&self, t: f64) -> f64 {
        let i = self.knots.partition_point(|k| k.0 <= t).clamp(1, self.knots.len() - 1);
        let ((t0, y0), (t1, y1)) = (self.knots[i - 1], self.knots[i]);
        y0 + (y1 - y0) * ((t - t0) / (t1 - t0)).clamp(0.0, 1.0)
    }

    /// `at(k * step)` for `k < n`, walking the knots once.
    pub fn samples(&self, step: f64, n: usize) -> Vec<f64> {
        let mut i = 1;
        (0..n)
            .map(|k| {
                let t = k as f64 * step;
                while i + 1 < self.knots.len() && self.knots[i].0 <= t {
                    i += 1;
                }
                let ((t0, y0), (t1, y1)) = (self.knots[i - 1], self.knots[i]);
                y0 + (y1 - y0) * ((t - t0) / (t1 - t0)).clamp(0.0, 1.0)
            })
            .collect()
    }
}

fn lemma1_residual(traj: &PiecewiseLinear, gamma: f64, step: f64) -> Result<f64> {
    let f = DiscountedFunctional::covering(gamma, step, LEMMA1_TRUNCATION);
    lemma1_check(&traj.samples(step, f.horizon_steps + 1), &f).map(f64::abs)
}

pub fn lemma1_suite(p: &Lemma1Params, exec: Execution) -> Result<Vec<SuiteReport>> {
    let horizon = DiscountedFunctional::covering(p.gamma, p.step, LEMMA1_TRUNCATION).horizon_steps as f64 * p.step;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let trajectories: Vec<PiecewiseLinear> =
        (0..p.trajectories).map(|_| PiecewiseLinear::random(&mut rng, horizon)).collect();
    let results = exec.map(&trajectories, |t| -> Result<(f64, f64)> {
        Ok((lemma1_residual(t, p.gamma, p.step)?, lemma1_residual(t, p.gamma, p.step / 2.0)?))
    });
    let results: Vec<(f64, f64)> = results.into_iter().collect::<Result<_>>()?;

    let bound = LEMMA1_STEP_MULTIPLE * p.step;
    let mut identity = SuiteReport {
        property: "lemma1_identity".into(),
        trials: p.trajectories as u64,
        violations: 0,
        max_residual: 0.0,
        counterexample: None,
    };
    for (i, (r, _)) in results.iter().enumerate() {
        identity.max_residual = identity.max_residual.max(*r);
        if *r > bound {
            identity.violations += 1;
            identity.counterexample.get_or_insert_with(|| format!("trajectory {i}: residual {r:e} > {bound:e}"));
        }
    }
    let coarse = results.iter().map(|r| r.0).fold(0.0, f64::max);
    let fine = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let ratio = fine / coarse;
    let refinement = SuiteReport {
        property: "lemma1_refinement".into(),
        trials: 1,
        violations: u64::from(!(ratio <= LEMMA1_REFINEMENT_RATIO)),
        max_residual: ratio,
        counterexample: (!(ratio <= LEMMA1_REFINEMENT_RATIO))
            .then(|| format!("max residual {fine:e} at half step vs {coarse:e}")),
    };
    Ok(vec![identity, refinement])
}

/// Scenarios within this distance of a case boundary are redrawn.
pub const SIGN_BOUNDARY_EXCLUSION: f64 = 1e-3;

fn random_scenario(rng: &mut impl Rng) -> ConsumptionScenario {
    let n = rng.random_range(2..=4);
    let delta0 = (0..n)
        .map(|_| {
            let mag = rng.random_range(0.01..=5.0);
            if rng.random::<bool>() {
                mag
            } else {
                -mag
            }
        })
        .collect();
    ConsumptionScenario::new(delta0, rng.random_range(0.01..=1.0), rng.random_range(0.0..=2.0))
}

fn near_boundary(p: SignProperty, s: &ConsumptionScenario) -> bool {
    let near = |x: f64| x.abs() < SIGN_BOUNDARY_EXCLUSION;
    match p {
        SignProperty::Deprivation => near(s.delta0[0]),
        SignProperty::CrossNeed => near(s.delta0[1]) || near(s.consumed_deviation()),
        SignProperty::Dose => near(s.consumed_deviation()),
    }
}

pub fn signs_suite(trials: usize, exec: Execution) -> Result<Vec<SuiteReport>> {
    let cfg = DriveConfig::default();
    let reports = exec.map(&SignProperty::ALL, |p| -> Result<SuiteReport> {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + *p as u64);
        let mut report = SuiteReport {
            property: p.name().into(),
            trials: trials as u64,
            violations: 0,
            max_residual: 0.0,
            counterexample: None,
        };
        let mut done = 0;
        while done < trials {
            let s = random_scenario(&mut rng);
            if near_boundary(*p, &s) {
                continue;
            }
            done += 1;
            let r = sign_property(*p, &s, &cfg)?;
            report.max_residual = report.max_residual.max(r.excursion());
            if !r.holds {
                report.violations += 1;
                report.counterexample.get_or_insert_with(|| format!("{s:?}: derivative {:e}", r.derivative));
            }
        }
        Ok(report)
    });
    reports.into_iter().collect()
}

/// Finite-difference step for the gradient oracle.
pub const GRADIENT_FD_STEP: f64 = 1e-5;
pub const GRADIENT_TOL_FULL: f64 = 1e-4;
pub const GRADIENT_TOL_TOY: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn weighted_output(net: &Approximator, input: &[f64], upstream: &[f64]) -> f64 {
    net.eval(input).expect("shape").iter().zip(upstream).map(|(o, u)| o * u).sum()
}

/// Largest relative error of backprop against central differences on
/// `upstream . output`, for the selected parameter indices and every input.
pub fn gradient_errors(net: &Approximator, input: &[f64], upstream: &[f64], param_idx: &[usize]) -> Result<(f64, f64)> {
    let trace = net.trace(input)?;
    let analytic_p = net.grad_params(&trace, upstream)?;
    let analytic_x = net.input_gradient(&trace, upstream)?;
    let h = GRADIENT_FD_STEP;
    let mut worst_p: f64 = 0.0;
    for &i in param_idx {
        let mut plus = net.clone();
        plus.params_mut()[i] += h;
        let mut minus = net.clone();
        minus.params_mut()[i] -= h;
        let numeric = (weighted_output(&plus, input, upstream) - weighted_output(&minus, input, upstream)) / (2.0 * h);
        worst_p = worst_p.max(relative_error(analytic_p[i], numeric));
    }
    let mut worst_x: f64 = 0.0;
    for i in 0..input.len() {
        let mut xp = input.to_vec();
        xp[i] += h;
        let mut xm = input.to_vec();
        xm[i] -= h;
        let numeric = (weighted_output(net, &xp, upstream) - weighted_output(net, &xm, upstream)) / (2.0 * h);
        worst_x = worst_x.max(relative_error(analytic_x[i], numeric));
    }
    Ok((worst_p, worst_x))
}

struct GradientCase {
    name: &'static str,
    sizes: Vec<usize>,
    sampled_params: Option<usize>,
    tolerance: f64,
    trials: usize,
}

pub fn gradients_suite(exec: Execution) -> Result<Vec<SuiteReport>> {
    let cases = [
        GradientCase { name: "gradients_toy", sizes: vec![3, 4, 4, 2], sampled_params: None, tolerance: GRADIENT_TOL_TOY, trials: 20 },
        GradientCase { name: "gradients_toy_scalar", sizes: vec![2, 3, 1], sampled_params: None, tolerance: GRADIENT_TOL_TOY, trials: 20 },
        GradientCase {
            name: "gradients_transition",
            sizes: vec![2 * STATE_DIM, 128, 128, STATE_DIM],
            sampled_params: Some(100),
            tolerance: GRADIENT_TOL_FULL,
            trials: 3,
        },
        GradientCase {
            name: "gradients_deviation",
            sizes: vec![STATE_DIM, 128, 128, 1],
            sampled_params: Some(100),
            tolerance: GRADIENT_TOL_FULL,
            trials: 3,
        },
    ];
    let mut reports = Vec::new();
    for (ci, case) in cases.iter().enumerate() {
        let outcomes = exec.map_range(case.trials, |t| -> Result<(f64, f64)> {
            let seed = 1000 * ci as u64 + t as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut net = Approximator::new(&case.sizes, 0.0, seed);
            // Nonzero biases so their gradients are exercised away from the initial point.
            net.params_mut().iter_mut().for_each(|p| *p += rng.random_range(-0.1..0.1));
            let input: Vec<f64> = (0..case.sizes[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
            let upstream: Vec<f64> = (0..*case.sizes.last().unwrap()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let idx: Vec<usize> = match case.sampled_params {
                Some(k) => (0..k).map(|_| rng.random_range(0..net.num_params())).collect(),
                None => (0..net.num_params()).collect(),
            };
            gradient_errors(&net, &input, &upstream, &idx)
        });
        let outcomes: Vec<(f64, f64)> = outcomes.into_iter().collect::<Result<_>>()?;
        for (suffix, pick) in [("params", 0usize), ("input", 1)] {
            let errs: Vec<f64> = outcomes.iter().map(|o| if pick == 0 { o.0 } else { o.1 }).collect();
            let worst = errs.iter().copied().fold(0.0, f64::max);
            let bad = errs.iter().position(|e| !(*e <= case.tolerance));
            reports.push(SuiteReport {
                property: format!("{}_{suffix}", case.name),
                trials: case.trials as u64,
                violations: errs.iter().filter(|e| !(**e <= case.tolerance)).count() as u64,
                max_residual: worst,
                counterexample: bad.map(|t| format!("trial {t}: relative error {:e} > {:e}", errs[t], case.tolerance)),
            });
        }
    }
    Ok(reports)
}

/// Fatigue starts just under both gates so walking caps and forced sleep bind early.
pub fn stress_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.initial_levels[2] = 5.99;
    cfg.initial_levels[3] = 9.99;
    cfg.iterations = 5000;
    cfg
}

pub fn constraints_suite(exec: Execution) -> Result<Vec<SuiteReport>> {
    let runs = [("constraints_default", RunConfig::default(), 0u64), ("constraints_stress", stress_config(), 1)];
    let reports = exec.map(&runs, |(name, cfg, seed)| -> Result<SuiteReport> {
        let mut sim = cfg.simulation(*seed)?;
        let initial = sim.state;
        let log = sim.run(cfg.iterations, None)?;
        let audit = audit_constraints(&log, &initial, &cfg.world);
        Ok(SuiteReport {
            property: (*name).into(),
            trials: log.len() as u64,
            violations: audit.total(),
            max_residual: audit.total() as f64,
            counterexample: (audit.total() > 0).then(|| format!("{audit:?}")),
        })
    });
    reports.into_iter().collect()
}

pub const HJB_TOY_FACTOR: f64 = 5.0;

pub fn hjb_toy_suite(exec: Execution) -> SuiteReport {
    let r = toy_oracle(&ToyWorld::default(), 1e-3, 100, exec);
    let ok = r.max_residual <= HJB_TOY_FACTOR * r.discretization_error;
    SuiteReport {
        property: "hjb_toy".into(),
        trials: 100,
        violations: u64::from(!ok),
        max_residual: r.max_residual,
        counterexample: (!ok).then(|| {
            format!("max residual {:e} vs discretization error {:e}", r.max_residual, r.discretization_error)
        }),
    }
}
