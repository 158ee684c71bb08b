//! Ground-truth world: a square arena with two resource sites, the body's
//! self-regulation dynamics, action admissibility, and the Euler stepper.
//!
//! The learner only observes states produced by [`World::step`]; it never
//! evaluates [`body_dynamics`] itself.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::{
    ActionId, ActionSpec, Control, Resource, SetPoint, WorldState, MUSCULAR, N_INTERNAL, SLEEP,
    STATE_DIM, WALK_FATIGUE, WALK_STEP,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResourceSite {
    pub center: [f64; 2],
    pub radius: f64,
}

impl ResourceSite {
    pub fn distance(&self, p: [f64; 2]) -> f64 {
        (p[0] - self.center[0]).hypot(p[1] - self.center[1])
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        self.distance(p) <= self.radius
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arena {
    /// Side length of the square `[0, side]^2`.
    pub side: f64,
    pub resources: [ResourceSite; 2],
    /// Resources farther than this are invisible to directed approach.
    pub vision_range: f64,
}

impl Default for Arena {
    fn default() -> Self {
        Arena {
            side: 1.0,
            resources: [
                ResourceSite { center: [0.25, 0.75], radius: 0.3 },
                ResourceSite { center: [0.75, 0.25], radius: 0.3 },
            ],
            vision_range: 4.0,
        }
    }
}

impl Arena {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        (0.0..=self.side).contains(&p[0]) && (0.0..=self.side).contains(&p[1])
    }

    pub fn site(&self, r: Resource) -> &ResourceSite {
        &self.resources[r.index()]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.side > 0.0 && self.vision_range > 0.0) {
            return Err(Error::contract("arena side and vision range must be positive"));
        }
        // Circles may overhang the walls; only their centers must be reachable.
        for (i, s) in self.resources.iter().enumerate() {
            if !(s.radius > 0.0) || !self.contains(s.center) {
                return Err(Error::contract(format!("resource {} center lies outside the arena", i + 1)));
            }
        }
        if self.resources[0].center == self.resources[1].center {
            return Err(Error::contract("resources must have distinct centers"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyParams {
    /// Self-regulation rates for the four internal levels.
    pub c: [f64; N_INTERNAL],
    pub setpoint: SetPoint,
    pub dt: f64,
    /// Levels are floored here after each step so multiplicative dynamics never stall at 0.
    pub level_floor: f64,
}

impl Default for BodyParams {
    fn default() -> Self {
        BodyParams {
            c: [-0.05, -0.05, -0.008, 0.0005],
            setpoint: SetPoint::default(),
            dt: 0.01,
            level_floor: 1e-3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub walk_fatigue_max: f64,
    pub sleep_eligible_min: f64,
    pub sleep_forced_min: f64,
    pub consume_level_max: f64,
    pub sleep_min_steps: u32,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            walk_fatigue_max: 6.0,
            sleep_eligible_min: 1.0,
            sleep_forced_min: 10.0,
            consume_level_max: 8.0,
            sleep_min_steps: 1000,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        let all_positive = [
            self.walk_fatigue_max,
            self.sleep_eligible_min,
            self.sleep_forced_min,
            self.consume_level_max,
        ]
        .iter()
        .all(|v| *v > 0.0);
        if !all_positive || self.sleep_min_steps == 0 {
            return Err(Error::contract("thresholds must be positive"));
        }
        if self.sleep_forced_min <= self.sleep_eligible_min {
            return Err(Error::contract("forced-sleep threshold must exceed the eligibility threshold"));
        }
        Ok(())
    }
}

/// `delta_dot_i = (c_i + u_i) (delta_i + x*_i)` for the internal rows and
/// `(u_5, u_6)` for position.
pub fn body_dynamics(state: &WorldState, control: &Control, params: &BodyParams) -> [f64; STATE_DIM] {
    let u = control.values();
    let mut rate = [0.0; STATE_DIM];
    for i in 0..N_INTERNAL {
        rate[i] = (params.c[i] + u[i]) * (state.delta[i] + params.setpoint.0[i]);
    }
    rate[4] = u[4];
    rate[5] = u[5];
    rate
}

/// Arena, body and thresholds bundled: everything needed to advance a state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub arena: Arena,
    pub body: BodyParams,
    pub thresholds: Thresholds,
}

impl World {
    pub fn validate(&self) -> Result<()> {
        self.arena.validate()?;
        self.thresholds.validate()?;
        if !(self.body.dt > 0.0 && self.body.level_floor >= 0.0) {
            return Err(Error::contract("dt must be positive and the level floor nonnegative"));
        }
        Ok(())
    }

    pub fn level(&self, state: &WorldState, i: usize) -> f64 {
        state.level(i, &self.body.setpoint)
    }

    fn sleep_forced(&self, state: &WorldState) -> bool {
        state.is_sleeping() || self.level(state, SLEEP) >= self.thresholds.sleep_forced_min
    }

    /// Whether `action` may be taken in `state`.
    pub fn is_admissible(&self, state: &WorldState, action: ActionId) -> bool {
        if self.sleep_forced(state) {
            return action == ActionId::Sleep;
        }
        let rested = self.level(state, MUSCULAR) <= self.thresholds.walk_fatigue_max;
        match action {
            ActionId::Idle => true,
            ActionId::Sleep => self.level(state, SLEEP) >= self.thresholds.sleep_eligible_min,
            ActionId::Consume(r) => {
                self.arena.site(r).contains(state.position)
                    && self.level(state, r.index()) <= self.thresholds.consume_level_max
            }
            ActionId::GoToResource(r) => {
                rested && self.arena.site(r).distance(state.position) <= self.arena.vision_range
            }
            walk => {
                let d = ActionSpec::of(walk).control.displacement();
                rested && self.arena.contains([state.position[0] + d[0], state.position[1] + d[1]])
            }
        }
    }

    /// Admissible actions in canonical order. Never empty: either `Sleep` or
    /// `Idle` is always present.
    pub fn admissible_actions(&self, state: &WorldState) -> Vec<ActionId> {
        ActionId::ALL
            .into_iter()
            .filter(|a| self.is_admissible(state, *a))
            .collect()
    }

    /// The control actually applied this step. For directed approach this is a
    /// walking-sized sub-step toward the resource center, shortened so it never
    /// overshoots the center.
    pub fn applied_control(&self, state: &WorldState, action: ActionId) -> Control {
        let mut control = ActionSpec::of(action).control;
        if let ActionId::GoToResource(r) = action {
            let c = self.arena.site(r).center;
            let (dx, dy) = (c[0] - state.position[0], c[1] - state.position[1]);
            let dist = dx.hypot(dy);
            let scale = if dist > WALK_STEP { WALK_STEP / dist } else { 1.0 };
            control.0[2] = WALK_FATIGUE;
            control.0[4] = dx * scale;
            control.0[5] = dy * scale;
        }
        control
    }

    /// One Euler step. Internal rows integrate `f * dt`; position moves by the
    /// control's full displacement per elementary action.
    pub fn step(&self, state: &WorldState, action: ActionId) -> Result<WorldState> {
        if !self.is_admissible(state, action) {
            return Err(Error::contract(format!("action {action} is not admissible in {state:?}")));
        }
        let control = self.applied_control(state, action);
        let rate = body_dynamics(state, &control, &self.body);
        let mut next = *state;
        for i in 0..N_INTERNAL {
            let level = state.level(i, &self.body.setpoint) + rate[i] * self.body.dt;
            next.delta[i] = level.max(self.body.level_floor) - self.body.setpoint.0[i];
        }
        let d = control.displacement();
        next.position = [state.position[0] + d[0], state.position[1] + d[1]];
        if action.is_locomotion() && !self.arena.contains(next.position) {
            // Rounding in the directed sub-step can graze the boundary.
            next.position[0] = next.position[0].clamp(0.0, self.arena.side);
            next.position[1] = next.position[1].clamp(0.0, self.arena.side);
        }
        next.clock = state.clock + self.body.dt;
        next.sleep_steps_remaining = if action == ActionId::Sleep {
            let remaining = if state.is_sleeping() {
                state.sleep_steps_remaining
            } else {
                self.thresholds.sleep_min_steps
            };
            remaining - 1
        } else {
            0
        };
        Ok(next)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world() -> World {
        World::default()
    }

    fn state_at(levels: [f64; 4], position: [f64; 2]) -> WorldState {
        WorldState::from_levels(levels, position, &SetPoint::default())
    }

    #[test]
    fn defaults_are_valid() {
        assert!(world().validate().is_ok());
        let mut w = world();
        w.arena.resources[1].center = w.arena.resources[0].center;
        assert!(w.validate().is_err());
        w = world();
        w.arena.resources[0].center = [1.2, 0.5];
        assert!(w.validate().is_err());
    }

    #[test]
    fn dynamics_at_set_point() {
        let s = state_at([1.0, 2.0, 0.0, 0.0], [0.5, 0.5]);
        let r = body_dynamics(&s, &Control::ZERO, &BodyParams::default());
        let expected = [-0.05, -0.10, 0.0, 0.0, 0.0, 0.0];
        for i in 0..6 {
            assert!((r[i] - expected[i]).abs() < 1e-15, "row {i}: {}", r[i]);
        }
    }

    #[test]
    fn dynamics_while_consuming() {
        let s = state_at([0.1, 0.1, 0.1, 0.1], [0.25, 0.75]);
        let u = ActionSpec::of(ActionId::Consume(Resource::First)).control;
        let r = body_dynamics(&s, &u, &BodyParams::default());
        assert!((r[0] - 0.005).abs() < 1e-15);
    }

    #[test]
    fn idle_does_not_move() {
        let s = state_at([0.3, 1.7, 2.0, 0.4], [0.31, 0.62]);
        let r = body_dynamics(&s, &ActionSpec::of(ActionId::Idle).control, &BodyParams::default());
        assert_eq!([r[4], r[5]], [0.0, 0.0]);
    }

    #[test]
    fn muscular_fatigue_blocks_walking() {
        let s = state_at([0.5, 0.5, 7.0, 0.5], [0.5, 0.5]);
        let adm = world().admissible_actions(&s);
        assert!(adm.iter().all(|a| !a.is_locomotion()));
        assert!(adm.contains(&ActionId::Idle));
        assert!(!adm.contains(&ActionId::Sleep));
    }

    #[test]
    fn high_sleep_fatigue_forces_sleep() {
        let s = state_at([0.5, 0.5, 0.1, 10.5], [0.5, 0.5]);
        assert_eq!(world().admissible_actions(&s), vec![ActionId::Sleep]);
    }

    #[test]
    fn consume_inside_circle() {
        let s = state_at([0.1, 0.1, 0.1, 0.1], [0.25, 0.75]);
        let adm = world().admissible_actions(&s);
        assert!(adm.contains(&ActionId::Consume(Resource::First)));
        assert!(!adm.contains(&ActionId::Consume(Resource::Second)));

        let sated = state_at([8.5, 0.1, 0.1, 0.1], [0.25, 0.75]);
        assert!(!world().admissible_actions(&sated).contains(&ActionId::Consume(Resource::First)));
    }

    #[test]
    fn walls_are_inadmissible_not_clamped() {
        let s = state_at([0.1, 0.1, 0.1, 0.1], [0.05, 0.95]);
        let adm = world().admissible_actions(&s);
        assert!(!adm.contains(&ActionId::WalkLeft));
        assert!(!adm.contains(&ActionId::WalkUp));
        assert!(adm.contains(&ActionId::WalkRight));
        assert!(adm.contains(&ActionId::WalkDown));
        assert!(matches!(world().step(&s, ActionId::WalkLeft), Err(Error::Contract(_))));
    }

    #[test]
    fn walk_right_moves_a_full_elementary_distance() {
        let s = state_at([0.1, 0.1, 0.1, 0.1], [0.5, 0.5]);
        let n = world().step(&s, ActionId::WalkRight).unwrap();
        assert!((n.position[0] - 0.6).abs() < 1e-15 && n.position[1] == 0.5);
        // f_m level 0.1 grows at (c_3 + 0.01) * 0.1 per unit time.
        let fm = n.level(MUSCULAR, &SetPoint::default());
        assert!((fm - (0.1 + (-0.008 + 0.01) * 0.1 * 0.01)).abs() < 1e-15);
        assert!((n.clock - 0.01).abs() < 1e-15);
    }

    #[test]
    fn sleep_recovers_and_persists() {
        let w = world();
        let s = state_at([0.5, 0.5, 0.1, 2.0], [0.5, 0.5]);
        let mut n = w.step(&s, ActionId::Sleep).unwrap();
        // rate (0.0005 - 0.001) * 2 = -0.001 per unit time.
        let fs = n.level(SLEEP, &SetPoint::default());
        assert!((fs - (2.0 - 0.001 * 0.01)).abs() < 1e-14);
        assert_eq!(n.sleep_steps_remaining, 999);
        let mut steps = 1;
        while n.is_sleeping() {
            assert_eq!(w.admissible_actions(&n), vec![ActionId::Sleep]);
            n = w.step(&n, ActionId::Sleep).unwrap();
            steps += 1;
        }
        assert_eq!(steps, 1000);
        assert!(w.is_admissible(&n, ActionId::Idle));
    }

    #[test]
    fn idle_erodes_homeostasis() {
        let s = state_at([1.0, 2.0, 0.0, 0.0], [0.5, 0.5]);
        let n = world().step(&s, ActionId::Idle).unwrap();
        let l = n.levels(&SetPoint::default());
        assert!((l[0] - (1.0 - 0.05 * 0.01)).abs() < 1e-15);
        assert!((l[1] - (2.0 - 0.10 * 0.01)).abs() < 1e-15);
        // Fatigue at exactly 0 is floored.
        assert_eq!(l[2], 1e-3);
    }

    #[test]
    fn go_to_resource_steps_toward_center() {
        let w = world();
        let s = state_at([0.1, 0.1, 0.1, 0.1], [0.75, 0.75]);
        let n = w.step(&s, ActionId::GoToResource(Resource::First)).unwrap();
        assert!((n.position[0] - 0.65).abs() < 1e-12 && (n.position[1] - 0.75).abs() < 1e-12);
        let mut p = n;
        for _ in 0..10 {
            p = w.step(&p, ActionId::GoToResource(Resource::First)).unwrap();
        }
        assert_eq!(p.position, [0.25, 0.75]);
    }

    #[test]
    fn consuming_both_resources_cannot_raise_their_product() {
        // Consuming one resource grows it at rate c + 0.1 while the other decays
        // at c, so the product of the two resource levels never increases.
        let w = world();
        let sp = SetPoint::default();
        let mut s = state_at([0.1, 0.1, 0.1, 0.1], [0.25, 0.75]);
        let product = |s: &WorldState| s.level(0, &sp) * s.level(1, &sp);
        let mut last = product(&s);
        for _ in 0..2000 {
            s = w.step(&s, ActionId::Consume(Resource::First)).unwrap();
            let p = product(&s);
            assert!(p <= last);
            last = p;
        }
        assert!(s.level(0, &sp) > 0.1 && s.level(1, &sp) < 0.1);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn any_state() -> impl Strategy<Value = WorldState> {
            (
                proptest::array::uniform4(0.001f64..12.0),
                proptest::array::uniform2(0.0f64..=1.0),
                0u32..3,
            )
                .prop_map(|(levels, pos, sleeping)| {
                    let mut s = WorldState::from_levels(levels, pos, &SetPoint::default());
                    s.sleep_steps_remaining = if sleeping == 0 { 17 } else { 0 };
                    s
                })
        }

        proptest! {
            #[test]
            fn admissible_set_is_sound(s in any_state()) {
                let w = World::default();
                let adm = w.admissible_actions(&s);
                prop_assert!(!adm.is_empty());
                let fm = s.level(MUSCULAR, &w.body.setpoint);
                let fs = s.level(SLEEP, &w.body.setpoint);
                if s.is_sleeping() || fs >= 10.0 {
                    prop_assert_eq!(&adm, &vec![ActionId::Sleep]);
                }
                for a in adm {
                    if a.is_locomotion() { prop_assert!(fm <= 6.0); }
                    let n = w.step(&s, a).unwrap();
                    prop_assert!(w.arena.contains(n.position));
                }
            }

            #[test]
            fn step_is_pure(s in any_state(), i in 0usize..10) {
                let w = World::default();
                let a = ActionId::ALL[i];
                if w.is_admissible(&s, a) {
                    let x = w.step(&s, a).unwrap();
                    let y = w.step(&s, a).unwrap();
                    prop_assert_eq!(x, y);
                }
            }

            #[test]
            fn idle_decay_is_exponential(l1 in 0.01f64..8.0, l2 in 0.01f64..8.0) {
                let w = World::default();
                let s = WorldState::from_levels([l1, l2, 0.1, 0.1], [0.5, 0.5], &w.body.setpoint);
                let n = w.step(&s, ActionId::Idle).unwrap();
                let sp = &w.body.setpoint;
                prop_assert!((n.level(0, sp) - l1 * (1.0 - 0.05 * 0.01)).abs() < 1e-14);
                prop_assert!((n.level(1, sp) - l2 * (1.0 - 0.05 * 0.01)).abs() < 1e-14);
            }

            #[test]
            fn consuming_increases_level(l in 0.01f64..8.0, k in 0usize..2) {
                let w = World::default();
                let r = Resource::ALL[k];
                let mut levels = [0.5, 0.5, 0.1, 0.1];
                levels[k] = l;
                let s = WorldState::from_levels(levels, w.arena.site(r).center, &w.body.setpoint);
                let n = w.step(&s, ActionId::Consume(r)).unwrap();
                prop_assert!(n.level(k, &w.body.setpoint) > l);
            }
        }
    }
}
