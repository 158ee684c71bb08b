//! Drive, reward and the discounted functionals built on them.
//!
//! The drive is the regularized Euclidean norm of the (masked) deviation
//! vector. The reward is minus its time derivative. Under a policy, the
//! discounted integral of the reward `V` and of the drive `J` are tied by
//! `V = d(delta_0) + ln(gamma) * J`, which [`lemma1_check`] measures on
//! sampled trajectories.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::N_INTERNAL;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriveConfig {
    /// Regularizer inside the square root; keeps the drive smooth at the set point.
    pub epsilon_reg: f64,
    /// Which deviation components enter the drive.
    pub mask: [bool; N_INTERNAL],
}

impl Default for DriveConfig {
    fn default() -> Self {
        DriveConfig {
            epsilon_reg: 1e-6,
            mask: [true, true, false, false],
        }
    }
}

impl DriveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_reg > 0.0 && self.epsilon_reg.is_finite()) {
            return Err(Error::contract("epsilon_reg must be a positive finite number"));
        }
        Ok(())
    }
}

/// `sqrt(eps + sum_{i in mask} delta_i^2)`.
pub fn drive(delta: &[f64; N_INTERNAL], cfg: &DriveConfig) -> f64 {
    let sq: f64 = delta
        .iter()
        .zip(cfg.mask)
        .filter(|(_, on)| *on)
        .map(|(d, _)| d * d)
        .sum();
    (cfg.epsilon_reg + sq).sqrt()
}

/// Gradient of [`drive`] with respect to `delta`.
pub fn drive_gradient(delta: &[f64; N_INTERNAL], cfg: &DriveConfig) -> [f64; N_INTERNAL] {
    let d = drive(delta, cfg);
    let mut g = [0.0; N_INTERNAL];
    for i in 0..N_INTERNAL {
        if cfg.mask[i] {
            g[i] = delta[i] / d;
        }
    }
    g
}

/// Finite-difference reward over one step: `-(d(next) - d(prev)) / step`.
pub fn reward_discrete(
    delta_prev: &[f64; N_INTERNAL],
    delta_next: &[f64; N_INTERNAL],
    step: f64,
    cfg: &DriveConfig,
) -> f64 {
    -(drive(delta_next, cfg) - drive(delta_prev, cfg)) / step
}

/// Constant consumption of the first need at rate `m`, starting from `delta0`
/// and observed at time `t`, with body self-regulation neglected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsumptionScenario {
    pub delta0: Vec<f64>,
    pub m: f64,
    pub t: f64,
}

impl ConsumptionScenario {
    pub fn new(delta0: Vec<f64>, m: f64, t: f64) -> Self {
        ConsumptionScenario { delta0, m, t }
    }

    /// `delta_{0,1} + t m`: the consumed need's deviation at time `t`.
    pub fn consumed_deviation(&self) -> f64 {
        self.delta0[0] + self.t * self.m
    }

    fn others_sq(&self) -> f64 {
        self.delta0[1..].iter().map(|d| d * d).sum()
    }

    fn check(&self) -> Result<()> {
        if self.delta0.len() < 2 {
            return Err(Error::contract("scenario needs at least two deviation components"));
        }
        if !(self.m.is_finite() && self.t.is_finite() && self.delta0.iter().all(|d| d.is_finite())) {
            return Err(Error::contract("scenario components must be finite"));
        }
        Ok(())
    }
}

/// Drive at time `t`: `sqrt(eps + t^2 m^2 + 2 t m delta_{0,1} + delta_0^T delta_0)`.
///
/// Evaluated as `(delta_{0,1} + tm)^2 + rest`, which is the same polynomial
/// without the cancellation near the set point.
pub fn scenario_drive(s: &ConsumptionScenario, cfg: &DriveConfig) -> f64 {
    let c = s.consumed_deviation();
    (cfg.epsilon_reg + c * c + s.others_sq()).sqrt()
}

/// Reward at time `t`: `-(delta_{0,1} + tm) m / d(t)`.
pub fn scenario_reward(s: &ConsumptionScenario, cfg: &DriveConfig) -> f64 {
    -s.consumed_deviation() * s.m / scenario_drive(s, cfg)
}

/// Tolerance for the sign properties.
pub const SIGN_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SignProperty {
    /// Derivative of the reward with respect to the consumed need's initial deprivation.
    Deprivation,
    /// Derivative of the reward with respect to the other need's initial deviation.
    CrossNeed,
    /// Derivative of the drive with respect to the consumed amount `tm`.
    Dose,
}

impl SignProperty {
    pub const ALL: [SignProperty; 3] = [
        SignProperty::Deprivation,
        SignProperty::CrossNeed,
        SignProperty::Dose,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SignProperty::Deprivation => "sign_deprivation",
            SignProperty::CrossNeed => "sign_cross_need",
            SignProperty::Dose => "sign_dose",
        }
    }
}

/// Which sign the derivative is required to have.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Expected {
    NonPositive,
    NonNegative,
    /// On the case boundary of the dose property both branches apply.
    Zero,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignReport {
    pub property: SignProperty,
    /// `None` when the scenario sits exactly on a case boundary.
    pub expected: Option<Expected>,
    pub derivative: f64,
    pub holds: bool,
}

impl SignReport {
    pub fn skipped(&self) -> bool {
        self.expected.is_none()
    }

    /// How far the derivative strays into the forbidden sign (0 when it holds).
    pub fn excursion(&self) -> f64 {
        match self.expected {
            Some(Expected::NonPositive) => self.derivative.max(0.0),
            Some(Expected::NonNegative) => (-self.derivative).max(0.0),
            Some(Expected::Zero) => self.derivative.abs(),
            None => 0.0,
        }
    }
}

fn fd_step(x: f64) -> f64 {
    1e-6 * x.abs().max(1.0)
}

fn central<F: Fn(f64) -> f64>(f: F, x: f64) -> f64 {
    let h = fd_step(x);
    (f(x + h) - f(x - h)) / (2.0 * h)
}

fn judge(property: SignProperty, expected: Option<Expected>, derivative: f64) -> SignReport {
    let holds = match expected {
        Some(Expected::NonPositive) => derivative <= SIGN_TOLERANCE,
        Some(Expected::NonNegative) => derivative >= -SIGN_TOLERANCE,
        Some(Expected::Zero) => derivative.abs() <= SIGN_TOLERANCE,
        None => true,
    };
    SignReport {
        property,
        expected,
        derivative,
        holds,
    }
}

fn split(value: f64, below: Expected, above: Expected) -> Option<Expected> {
    if value < 0.0 {
        Some(below)
    } else if value > 0.0 {
        Some(above)
    } else {
        None
    }
}

/// `d r / d |delta_{0,1}|`: non-positive past the set point, non-negative below it.
pub fn sign_property_deprivation(s: &ConsumptionScenario, cfg: &DriveConfig) -> Result<SignReport> {
    s.check()?;
    let d01 = s.delta0[0];
    let sign = d01.signum();
    let reward_at = |mag: f64| {
        let mut p = s.clone();
        p.delta0[0] = sign * mag;
        scenario_reward(&p, cfg)
    };
    let expected = split(d01, Expected::NonNegative, Expected::NonPositive);
    let derivative = if expected.is_some() { central(reward_at, d01.abs()) } else { 0.0 };
    Ok(judge(SignProperty::Deprivation, expected, derivative))
}

/// `d r / d |delta_{0,2}|`: non-positive while the consumed need is still
/// below its set point at time `t`, non-negative once it has overshot.
pub fn sign_property_cross_need(s: &ConsumptionScenario, cfg: &DriveConfig) -> Result<SignReport> {
    s.check()?;
    let d02 = s.delta0[1];
    let sign = d02.signum();
    let reward_at = |mag: f64| {
        let mut p = s.clone();
        p.delta0[1] = sign * mag;
        scenario_reward(&p, cfg)
    };
    let expected = if d02 == 0.0 {
        None
    } else {
        split(s.consumed_deviation(), Expected::NonPositive, Expected::NonNegative)
    };
    let derivative = if expected.is_some() { central(reward_at, d02.abs()) } else { 0.0 };
    Ok(judge(SignProperty::CrossNeed, expected, derivative))
}

/// `d d(t) / d(tm)`: the drive falls with dose below the set point and rises past it.
pub fn sign_property_dose(s: &ConsumptionScenario, cfg: &DriveConfig) -> Result<SignReport> {
    s.check()?;
    let dose = s.t * s.m;
    let drive_at = |x: f64| {
        let c = s.delta0[0] + x;
        (cfg.epsilon_reg + c * c + s.others_sq()).sqrt()
    };
    let expected = split(s.consumed_deviation(), Expected::NonPositive, Expected::NonNegative)
        .or(Some(Expected::Zero));
    Ok(judge(SignProperty::Dose, expected, central(drive_at, dose)))
}

pub fn sign_property(p: SignProperty, s: &ConsumptionScenario, cfg: &DriveConfig) -> Result<SignReport> {
    match p {
        SignProperty::Deprivation => sign_property_deprivation(s, cfg),
        SignProperty::CrossNeed => sign_property_cross_need(s, cfg),
        SignProperty::Dose => sign_property_dose(s, cfg),
    }
}

/// Closed forms of the three derivatives, for cross-checking the
/// finite-difference reports. With `c = delta_{0,1} + tm`,
/// `q = eps + sum_{i>=2} delta_{0,i}^2` and `D = c^2 + q`:
/// `dr/dc = -m q / D^{3/2}`, `dr/d|delta_{0,2}| = m c |delta_{0,2}| / D^{3/2}`,
/// `dd/d(tm) = c / sqrt(D)`.
pub fn sign_derivative_closed_form(p: SignProperty, s: &ConsumptionScenario, cfg: &DriveConfig) -> f64 {
    let c = s.consumed_deviation();
    let q = cfg.epsilon_reg + s.others_sq();
    let big_d = c * c + q;
    match p {
        SignProperty::Deprivation => s.delta0[0].signum() * (-s.m * q / big_d.powf(1.5)),
        SignProperty::CrossNeed => s.m * c * s.delta0[1].abs() / big_d.powf(1.5),
        SignProperty::Dose => c / big_d.sqrt(),
    }
}

/// Truncation level below which the discounted tail is considered negligible.
pub const MAX_TRUNCATION: f64 = 1e-6;

/// Discretization of a discounted integral over a finite horizon.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscountedFunctional {
    pub gamma: f64,
    pub horizon_steps: usize,
    pub step: f64,
}

impl DiscountedFunctional {
    /// Smallest horizon whose discounted tail weight `gamma^T` is below `truncation`.
    pub fn covering(gamma: f64, step: f64, truncation: f64) -> Self {
        let t = truncation.ln() / gamma.ln();
        DiscountedFunctional {
            gamma,
            horizon_steps: (t / step).ceil() as usize,
            step,
        }
    }

    /// `gamma^(horizon * step)`.
    pub fn truncation(&self) -> f64 {
        (self.gamma.ln() * self.horizon_steps as f64 * self.step).exp()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::contract(format!("gamma {} outside (0, 1)", self.gamma)));
        }
        if !(self.step > 0.0) || self.horizon_steps == 0 {
            return Err(Error::contract("step and horizon must be positive"));
        }
        if self.truncation() >= MAX_TRUNCATION {
            return Err(Error::contract(format!(
                "horizon too short: gamma^T = {:.3e} >= {MAX_TRUNCATION:e}",
                self.truncation()
            )));
        }
        Ok(())
    }
}

/// Quadrature terms of the value/deviation identity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IdentityTerms {
    /// Discounted integral of the finite-difference reward.
    pub value: f64,
    /// Discounted integral of the drive.
    pub deviation: f64,
    pub initial_drive: f64,
    /// `value - initial_drive - ln(gamma) * deviation`.
    pub residual: f64,
}

/// Left-endpoint quadrature of both discounted integrals over `drive_samples`,
/// which must hold at least `horizon_steps + 1` uniformly spaced samples.
pub fn identity_terms(drive_samples: &[f64], f: &DiscountedFunctional) -> Result<IdentityTerms> {
    f.validate()?;
    if drive_samples.len() < f.horizon_steps + 1 {
        return Err(Error::contract(format!(
            "need {} drive samples, got {}",
            f.horizon_steps + 1,
            drive_samples.len()
        )));
    }
    let per_step = f.gamma.powf(f.step);
    let mut weight = 1.0;
    let mut value = 0.0;
    let mut deviation = 0.0;
    for w in drive_samples[..=f.horizon_steps].windows(2) {
        // reward * step = -(d_{k+1} - d_k)
        value += weight * (w[0] - w[1]);
        deviation += weight * w[0] * f.step;
        weight *= per_step;
    }
    let initial_drive = drive_samples[0];
    Ok(IdentityTerms {
        value,
        deviation,
        initial_drive,
        residual: value - initial_drive - f.gamma.ln() * deviation,
    })
}

/// Residual of `V = d(delta_0) + ln(gamma) J` on a sampled drive trajectory.
pub fn lemma1_check(drive_samples: &[f64], f: &DiscountedFunctional) -> Result<f64> {
    identity_terms(drive_samples, f).map(|t| t.residual)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> DriveConfig {
        DriveConfig::default()
    }

    #[test]
    fn drive_examples() {
        assert!((drive(&[0.0; 4], &cfg()) - 1e-3).abs() < 1e-15);
        assert!((drive(&[3.0, 4.0, 0.0, 0.0], &cfg()) - 5.0).abs() < 1e-6);
        assert!((drive(&[0.0, 0.0, 7.0, 9.0], &cfg()) - 1e-3).abs() < 1e-15);
        let all = DriveConfig { mask: [true; 4], ..cfg() };
        assert!((drive(&[0.0, 0.0, 3.0, 4.0], &all) - 5.0).abs() < 1e-6);
    }

    #[test]
    fn drive_gradient_matches_finite_differences() {
        let delta = [-0.7, 1.3, 0.4, -2.0];
        let g = drive_gradient(&delta, &cfg());
        for i in 0..4 {
            let fd = central(
                |x| {
                    let mut d = delta;
                    d[i] = x;
                    drive(&d, &cfg())
                },
                delta[i],
            );
            assert!((g[i] - fd).abs() < 1e-8, "component {i}: {} vs {fd}", g[i]);
        }
    }

    #[test]
    fn reward_examples() {
        let a = [0.3, -0.2, 0.0, 0.0];
        assert_eq!(reward_discrete(&a, &a, 0.01, &cfg()), 0.0);

        // d(prev) = 5.0, d(next) = 4.9 with a negligible regularizer.
        let exact = DriveConfig { epsilon_reg: 1e-300, ..cfg() };
        let r = reward_discrete(&[3.0, 4.0, 0.0, 0.0], &[4.9, 0.0, 0.0, 0.0], 0.01, &exact);
        assert!((r - 10.0).abs() < 1e-9, "{r}");

        let r = reward_discrete(&[0.1, 0.0, 0.0, 0.0], &[0.2, 0.0, 0.0, 0.0], 0.01, &cfg());
        assert!(r < 0.0);
    }

    #[test]
    fn scenario_examples() {
        let s = ConsumptionScenario::new(vec![-1.0, 0.0], 1.0, 1.0);
        assert!((scenario_drive(&s, &cfg()) - 1e-3).abs() < 1e-12);

        let s = ConsumptionScenario::new(vec![-1.0, 0.0], 0.5, 0.0);
        assert!((scenario_reward(&s, &cfg()) - 0.5).abs() < 1e-6);

        let s = ConsumptionScenario::new(vec![1.0, 0.0], 0.5, 0.0);
        assert!((scenario_reward(&s, &cfg()) + 0.5).abs() < 1e-6);
    }

    #[test]
    fn scenario_drive_matches_expanded_polynomial() {
        let s = ConsumptionScenario::new(vec![-0.8, 0.3, 1.1], 0.37, 1.6);
        let (t, m) = (s.t, s.m);
        let dot: f64 = s.delta0.iter().map(|d| d * d).sum();
        let expanded = (cfg().epsilon_reg + t * t * m * m + 2.0 * t * m * s.delta0[0] + dot).sqrt();
        assert!((scenario_drive(&s, &cfg()) - expanded).abs() < 1e-14);
    }

    #[test]
    fn deprivation_examples() {
        let r = sign_property_deprivation(&ConsumptionScenario::new(vec![-0.8, 0.3], 0.1, 1.0), &cfg()).unwrap();
        assert_eq!(r.expected, Some(Expected::NonNegative));
        assert!(r.holds && r.derivative >= -SIGN_TOLERANCE);

        let r = sign_property_deprivation(&ConsumptionScenario::new(vec![0.5, 0.3], 0.1, 1.0), &cfg()).unwrap();
        assert_eq!(r.expected, Some(Expected::NonPositive));
        assert!(r.holds && r.derivative <= SIGN_TOLERANCE);

        let r = sign_property_deprivation(&ConsumptionScenario::new(vec![0.0, 0.3], 0.1, 1.0), &cfg()).unwrap();
        assert!(r.skipped() && r.holds);
    }

    #[test]
    fn cross_need_examples() {
        let r = sign_property_cross_need(&ConsumptionScenario::new(vec![-1.0, 0.5], 0.1, 1.0), &cfg()).unwrap();
        assert_eq!(r.expected, Some(Expected::NonPositive));
        assert!(r.holds && r.derivative < 0.0);

        let r = sign_property_cross_need(&ConsumptionScenario::new(vec![-0.05, 0.5], 1.0, 1.0), &cfg()).unwrap();
        assert_eq!(r.expected, Some(Expected::NonNegative));
        assert!(r.holds && r.derivative > 0.0);

        let r = sign_property_cross_need(&ConsumptionScenario::new(vec![-1.0, 0.0], 0.1, 1.0), &cfg()).unwrap();
        assert!(r.skipped());
    }

    #[test]
    fn dose_examples() {
        let r = sign_property_dose(&ConsumptionScenario::new(vec![-1.0, 0.0], 0.5, 1.0), &cfg()).unwrap();
        assert_eq!(r.expected, Some(Expected::NonPositive));
        assert!(r.holds && r.derivative < 0.0);

        let r = sign_property_dose(&ConsumptionScenario::new(vec![-1.0, 0.0], 1.5, 1.0), &cfg()).unwrap();
        assert_eq!(r.expected, Some(Expected::NonNegative));
        assert!(r.holds && r.derivative > 0.0);

        // Exactly at the set point: the drive is at its minimum.
        let r = sign_property_dose(&ConsumptionScenario::new(vec![-1.0, 0.0], 1.0, 1.0), &cfg()).unwrap();
        assert_eq!(r.expected, Some(Expected::Zero));
        assert!(r.derivative.abs() < 1e-3, "{}", r.derivative);
    }

    #[test]
    fn finite_differences_agree_with_closed_forms() {
        let scenarios = [
            ConsumptionScenario::new(vec![-0.8, 0.3], 0.1, 1.0),
            ConsumptionScenario::new(vec![0.5, -0.3, 2.0], 0.7, 0.4),
            ConsumptionScenario::new(vec![-3.1, 4.2], 0.02, 1.9),
        ];
        for s in &scenarios {
            for p in SignProperty::ALL {
                let fd = sign_property(p, s, &cfg()).unwrap().derivative;
                let cf = sign_derivative_closed_form(p, s, &cfg());
                let rel = (fd - cf).abs() / cf.abs().max(1e-12);
                assert!(rel < 1e-6, "{p:?} {s:?}: fd {fd} vs closed {cf}");
            }
        }
    }

    #[test]
    fn scenario_rejects_short_vectors() {
        let s = ConsumptionScenario::new(vec![1.0], 0.1, 1.0);
        assert!(sign_property_dose(&s, &cfg()).is_err());
    }

    #[test]
    fn functional_covering_and_validation() {
        let f = DiscountedFunctional::covering(0.99, 1e-3, 1e-6);
        assert!(f.truncation() < 1e-6);
        assert!(f.validate().is_ok());
        let short = DiscountedFunctional { horizon_steps: 1000, ..f };
        assert!(matches!(short.validate(), Err(Error::Contract(_))));
        let bad = DiscountedFunctional { gamma: 1.0, ..f };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn constant_drive_identity() {
        let f = DiscountedFunctional::covering(0.99, 1e-3, 1e-9);
        let c = 1.7;
        let samples = vec![c; f.horizon_steps + 1];
        let t = identity_terms(&samples, &f).unwrap();
        assert_eq!(t.value, 0.0);
        // J = -c / ln(gamma) up to the left-endpoint bias of the Riemann sum.
        let j_exact = -c / 0.99f64.ln();
        assert!((t.deviation - j_exact).abs() / j_exact < 1e-3);
        // The residual is the quadrature bias -c * ln(gamma) * step / 2 plus truncation.
        let bias = -c * 0.99f64.ln() * f.step / 2.0;
        assert!((t.residual - bias).abs() < 1e-8 * c + c * f.truncation() * 2.0, "{} vs {bias}", t.residual);
        assert!(t.residual.abs() <= 10.0 * f.step);
    }

    #[test]
    fn lemma1_rejects_short_samples() {
        let f = DiscountedFunctional::covering(0.99, 1e-2, 1e-7);
        assert!(lemma1_check(&[1.0; 10], &f).is_err());
    }

    #[test]
    fn linear_decay_residual_shrinks_linearly() {
        let residual = |step: f64| {
            let f = DiscountedFunctional::covering(0.99, step, 1e-9);
            let samples: Vec<f64> = (0..=f.horizon_steps)
                .map(|k| (1.0 - k as f64 * step).max(0.0))
                .collect();
            lemma1_check(&samples, &f).unwrap()
        };
        let coarse = residual(1e-3);
        let fine = residual(5e-4);
        assert!(coarse.abs() <= 10.0 * 1e-3, "{coarse}");
        assert!(fine.abs() <= 0.6 * coarse.abs(), "{fine} vs {coarse}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn delta4() -> impl Strategy<Value = [f64; 4]> {
            proptest::array::uniform4(-50.0f64..50.0)
        }

        proptest! {
            #[test]
            fn drive_is_bounded_below(d in delta4()) {
                prop_assert!(drive(&d, &cfg()) >= cfg().epsilon_reg.sqrt());
            }

            #[test]
            fn drive_ignores_signs(d in delta4(), i in 0usize..4) {
                let mut flipped = d;
                flipped[i] = -flipped[i];
                prop_assert_eq!(drive(&d, &cfg()), drive(&flipped, &cfg()));
            }

            #[test]
            fn reward_is_antisymmetric(a in delta4(), b in delta4(), step in 1e-4f64..1.0) {
                prop_assert_eq!(
                    reward_discrete(&a, &b, step, &cfg()),
                    -reward_discrete(&b, &a, step, &cfg())
                );
            }

            #[test]
            fn consuming_deprived_resource_rewards(
                d01 in -5.0f64..-0.01, d02 in -5.0f64..5.0, m in 0.01f64..1.0, frac in 0.0f64..1.0,
            ) {
                // Choose t so the consumed need is still at or below its set point.
                let t = frac * (-d01) / m;
                let s = ConsumptionScenario::new(vec![d01, d02], m, t);
                prop_assume!(s.consumed_deviation() < 0.0);
                prop_assert!(scenario_reward(&s, &cfg()) > 0.0);
            }

            #[test]
            fn overshoot_is_punished(
                d01 in 0.0f64..5.0, d02 in -5.0f64..5.0, m in 0.01f64..1.0, t in 0.0f64..2.0,
            ) {
                let s = ConsumptionScenario::new(vec![d01, d02], m, t);
                prop_assume!(s.consumed_deviation() > 0.0);
                prop_assert!(scenario_reward(&s, &cfg()) < 0.0);
            }
        }
    }
}
