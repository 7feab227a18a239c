//! World-frame agent state, the rotation-invariant ego observation, the
//! discrete action space and unicycle stepping.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Length of the ego self-state vector `[d_g, v_pref, psi, r]`.
pub const SELF_DIM: usize = 4;
/// Length of one neighbor observation vector.
pub const NEIGHBOR_DIM: usize = 7;
/// Largest heading change of any action.
pub const MAX_TURN: f64 = PI / 6.0;

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let r = (PI - angle).rem_euclid(2.0 * PI);
    PI - r
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentStatus {
    Active,
    AtGoal,
    Collided,
    TimedOut,
}

impl AgentStatus {
    pub fn is_active(self) -> bool {
        self == AgentStatus::Active
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AgentStatus::Active => "active",
            AgentStatus::AtGoal => "at_goal",
            AgentStatus::Collided => "collided",
            AgentStatus::TimedOut => "timed_out",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "active" => AgentStatus::Active,
            "at_goal" => AgentStatus::AtGoal,
            "collided" => AgentStatus::Collided,
            "timed_out" => AgentStatus::TimedOut,
            _ => return None,
        })
    }
}

/// Full world-frame state of one agent: observable part (position, velocity,
/// radius) plus hidden part (goal, preferred speed, heading).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub px: f64,
    pub py: f64,
    pub vx: f64,
    pub vy: f64,
    pub heading: f64,
    pub radius: f64,
    pub gx: f64,
    pub gy: f64,
    pub v_pref: f64,
    pub status: AgentStatus,
}

impl AgentState {
    /// An active agent at rest, facing its goal.
    pub fn new(start: (f64, f64), goal: (f64, f64), radius: f64, v_pref: f64) -> Self {
        let heading = (goal.1 - start.1).atan2(goal.0 - start.0);
        AgentState {
            px: start.0,
            py: start.1,
            vx: 0.0,
            vy: 0.0,
            heading,
            radius,
            gx: goal.0,
            gy: goal.1,
            v_pref,
            status: AgentStatus::Active,
        }
    }

    pub fn with_heading(mut self, heading: f64) -> Self {
        self.heading = wrap_angle(heading);
        self
    }

    pub fn with_velocity(mut self, vx: f64, vy: f64) -> Self {
        self.vx = vx;
        self.vy = vy;
        self
    }

    pub fn dist_to_goal(&self) -> f64 {
        (self.gx - self.px).hypot(self.gy - self.py)
    }

    pub fn speed(&self) -> f64 {
        self.vx.hypot(self.vy)
    }

    pub fn center_distance(&self, other: &AgentState) -> f64 {
        (other.px - self.px).hypot(other.py - self.py)
    }
}

/// Ego-frame self observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgoSelfState {
    pub dist_to_goal: f64,
    pub v_pref: f64,
    pub heading: f64,
    pub radius: f64,
}

impl EgoSelfState {
    pub fn to_array(&self) -> [f64; SELF_DIM] {
        [self.dist_to_goal, self.v_pref, self.heading, self.radius]
    }
}

/// Ego-frame observation of one other agent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgoNeighborState {
    pub px: f64,
    pub py: f64,
    pub vx: f64,
    pub vy: f64,
    pub radius: f64,
    pub dist: f64,
    pub combined_radius: f64,
}

impl EgoNeighborState {
    pub fn to_array(&self) -> [f64; NEIGHBOR_DIM] {
        [
            self.px,
            self.py,
            self.vx,
            self.vy,
            self.radius,
            self.dist,
            self.combined_radius,
        ]
    }

    pub fn from_array(v: [f64; NEIGHBOR_DIM]) -> Self {
        EgoNeighborState {
            px: v[0],
            py: v[1],
            vx: v[2],
            vy: v[3],
            radius: v[4],
            dist: v[5],
            combined_radius: v[6],
        }
    }
}

/// Angle of the ego frame's x-axis in the world frame: toward the goal, or
/// along the current heading when the agent sits exactly on its goal.
pub fn ego_frame_angle(agent: &AgentState) -> f64 {
    let dx = agent.gx - agent.px;
    let dy = agent.gy - agent.py;
    if dx == 0.0 && dy == 0.0 {
        agent.heading
    } else {
        dy.atan2(dx)
    }
}

/// Expresses `agent` and `others` in the agent's goal-aligned frame.
pub fn to_ego_frame(
    agent: &AgentState,
    others: &[AgentState],
) -> (EgoSelfState, Vec<EgoNeighborState>) {
    let theta = ego_frame_angle(agent);
    let (sin, cos) = theta.sin_cos();
    let rotate = |x: f64, y: f64| (cos * x + sin * y, -sin * x + cos * y);

    let me = EgoSelfState {
        dist_to_goal: agent.dist_to_goal(),
        v_pref: agent.v_pref,
        heading: wrap_angle(agent.heading - theta),
        radius: agent.radius,
    };
    let neighbors = others
        .iter()
        .map(|o| {
            let (px, py) = rotate(o.px - agent.px, o.py - agent.py);
            let (vx, vy) = rotate(o.vx, o.vy);
            EgoNeighborState {
                px,
                py,
                vx,
                vy,
                radius: o.radius,
                dist: px.hypot(py),
                combined_radius: o.radius + agent.radius,
            }
        })
        .collect();
    (me, neighbors)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Action {
    pub speed: f64,
    pub heading_change: f64,
}

impl Action {
    pub const fn new(speed: f64, heading_change: f64) -> Self {
        Action {
            speed,
            heading_change,
        }
    }
}

/// Which discretization to build. The text of the method lists twelve
/// (speed, turn) pairs but reports eleven; the default drops the zero-speed,
/// zero-turn no-op.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSet {
    #[default]
    Eleven,
    Twelve,
}

impl ActionSet {
    pub fn len(self) -> usize {
        match self {
            ActionSet::Eleven => 11,
            ActionSet::Twelve => 12,
        }
    }

    pub fn from_len(n: usize) -> Option<Self> {
        match n {
            11 => Some(ActionSet::Eleven),
            12 => Some(ActionSet::Twelve),
            _ => None,
        }
    }
}

/// Ordered discrete actions for one preferred speed: full-speed block, then
/// half-speed, then zero-speed.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSpace {
    actions: Vec<Action>,
    v_pref: f64,
}

/// Number of full-speed actions at the front of every action space.
pub const FULL_SPEED_BLOCK: usize = 6;

impl ActionSpace {
    pub fn new(v_pref: f64) -> Result<Self> {
        Self::with_set(v_pref, ActionSet::Eleven)
    }

    pub fn with_set(v_pref: f64, set: ActionSet) -> Result<Self> {
        if !(v_pref > 0.0) || !v_pref.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "v_pref must be positive, got {v_pref}"
            )));
        }
        let mut actions = Vec::with_capacity(set.len());
        for k in 0..FULL_SPEED_BLOCK {
            let turn = -MAX_TURN + k as f64 * (2.0 * MAX_TURN) / (FULL_SPEED_BLOCK - 1) as f64;
            actions.push(Action::new(v_pref, turn));
        }
        for turn in [-MAX_TURN, 0.0, MAX_TURN] {
            actions.push(Action::new(0.5 * v_pref, turn));
        }
        let zero_turns: &[f64] = match set {
            ActionSet::Eleven => &[-MAX_TURN, MAX_TURN],
            ActionSet::Twelve => &[-MAX_TURN, 0.0, MAX_TURN],
        };
        actions.extend(zero_turns.iter().map(|&t| Action::new(0.0, t)));
        Ok(ActionSpace { actions, v_pref })
    }

    pub fn v_pref(&self) -> f64 {
        self.v_pref
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<Action> {
        self.actions.get(index).copied()
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn iter(&self) -> impl Iterator<Item = Action> + '_ {
        self.actions.iter().copied()
    }

    pub fn is_full_speed(&self, index: usize) -> bool {
        index < FULL_SPEED_BLOCK
    }
}

/// Builds the default eleven-action space.
pub fn build_action_space(v_pref: f64) -> Result<ActionSpace> {
    ActionSpace::new(v_pref)
}

/// Turn-then-translate unicycle update.
pub fn kinematic_step(state: &AgentState, action: Action, dt: f64) -> AgentState {
    let heading = wrap_angle(state.heading + action.heading_change);
    let (sin, cos) = heading.sin_cos();
    let vx = action.speed * cos;
    let vy = action.speed * sin;
    AgentState {
        px: state.px + dt * vx,
        py: state.py + dt * vy,
        vx,
        vy,
        heading,
        ..*state
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EPS: f64 = 1e-12;

    #[test]
    fn wrap_is_half_open() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < EPS);
        assert!((wrap_angle(0.1) - 0.1).abs() < EPS);
    }

    #[test]
    fn eleven_actions_unit_speed() {
        let space = build_action_space(1.0).unwrap();
        assert_eq!(space.len(), 11);
        assert!(space.actions()[..6].iter().all(|a| a.speed == 1.0));
        let expected = [
            -PI / 6.0,
            -PI / 10.0,
            -PI / 30.0,
            PI / 30.0,
            PI / 10.0,
            PI / 6.0,
        ];
        for (a, e) in space.actions()[..6].iter().zip(expected) {
            assert!((a.heading_change - e).abs() < EPS);
        }
        assert!(space.actions()[6..9].contains(&Action::new(0.5, 0.0)));
        assert!(space.actions()[9..]
            .iter()
            .all(|a| a.speed == 0.0 && a.heading_change != 0.0));
    }

    #[test]
    fn speeds_scale_with_v_pref() {
        let space = build_action_space(2.0).unwrap();
        assert!(space.iter().all(|a| [2.0, 1.0, 0.0].contains(&a.speed)));
        let unit = build_action_space(1.0).unwrap();
        for (a, b) in space.iter().zip(unit.iter()) {
            assert_eq!(a.speed, 2.0 * b.speed);
            assert_eq!(a.heading_change, b.heading_change);
        }
    }

    #[test]
    fn twelve_action_variant_keeps_noop() {
        let space = ActionSpace::with_set(1.0, ActionSet::Twelve).unwrap();
        assert_eq!(space.len(), 12);
        assert!(space.actions().contains(&Action::new(0.0, 0.0)));
    }

    #[test]
    fn rejects_non_positive_v_pref() {
        assert!(matches!(
            build_action_space(0.0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(build_action_space(-1.0).is_err());
        assert!(build_action_space(f64::NAN).is_err());
    }

    #[test]
    fn ego_frame_aligned_with_world() {
        let me = AgentState::new((0.0, 0.0), (5.0, 0.0), 0.3, 1.0).with_heading(0.0);
        let other = AgentState::new((1.0, 0.0), (-4.0, 0.0), 0.3, 1.0).with_velocity(-1.0, 0.0);
        let (s, n) = to_ego_frame(&me, &[other]);
        assert_eq!(s.to_array(), [5.0, 1.0, 0.0, 0.3]);
        let arr = n[0].to_array();
        let expected = [1.0, 0.0, -1.0, 0.0, 0.3, 1.0, 0.6];
        for (a, e) in arr.iter().zip(expected) {
            assert!((a - e).abs() < EPS, "{arr:?}");
        }
        assert_eq!(n[0].combined_radius, other.radius + me.radius);
    }

    #[test]
    fn ego_heading_relative_to_goal_direction() {
        // Oracle: rotate world by -pi/2 by hand, (x, y) -> (y, -x).
        let me = AgentState::new((0.0, 0.0), (0.0, 5.0), 0.3, 1.0).with_heading(PI / 2.0);
        let other = AgentState::new((1.0, 2.0), (0.0, 0.0), 0.4, 1.0).with_velocity(0.5, -0.25);
        let (s, n) = to_ego_frame(&me, &[other]);
        assert!(s.heading.abs() < EPS);
        assert!((s.dist_to_goal - 5.0).abs() < EPS);
        let hand = [2.0, -1.0, -0.25, -0.5];
        let got = [n[0].px, n[0].py, n[0].vx, n[0].vy];
        for (g, h) in got.iter().zip(hand) {
            assert!((g - h).abs() < EPS, "{got:?}");
        }
    }

    #[test]
    fn degenerate_frame_uses_heading() {
        let me = AgentState::new((1.0, 1.0), (1.0, 1.0), 0.3, 1.0).with_heading(0.7);
        let (s, _) = to_ego_frame(&me, &[]);
        assert_eq!(s.dist_to_goal, 0.0);
        assert_eq!(s.heading, 0.0);
    }

    #[test]
    fn straight_step() {
        let s = AgentState::new((0.0, 0.0), (5.0, 0.0), 0.3, 1.0).with_heading(0.0);
        let n = kinematic_step(&s, Action::new(1.0, 0.0), 0.2);
        assert!((n.px - 0.2).abs() < EPS && n.py.abs() < EPS);
    }

    #[test]
    fn rotate_in_place() {
        let s = AgentState::new((1.0, 2.0), (5.0, 2.0), 0.3, 1.0).with_heading(0.0);
        let n = kinematic_step(&s, Action::new(0.0, PI / 6.0), 0.2);
        assert_eq!((n.px, n.py), (1.0, 2.0));
        assert!((n.heading - PI / 6.0).abs() < EPS);
    }

    #[test]
    fn turn_then_translate() {
        let s = AgentState::new((0.0, 0.0), (5.0, 0.0), 0.3, 1.0).with_heading(0.0);
        let n = kinematic_step(&s, Action::new(1.0, PI / 6.0), 0.2);
        // cos(pi/6) = sqrt(3)/2, sin(pi/6) = 1/2
        assert!((n.px - 0.2 * 3f64.sqrt() / 2.0).abs() < EPS);
        assert!((n.py - 0.1).abs() < EPS);
    }

    #[test]
    fn repeated_turns_stay_wrapped() {
        let mut s = AgentState::new((0.0, 0.0), (5.0, 0.0), 0.3, 1.0).with_heading(0.0);
        for _ in 0..1000 {
            s = kinematic_step(&s, Action::new(1.0, PI / 6.0), 0.2);
            assert!(s.heading > -PI && s.heading <= PI);
            assert!(s.speed() <= s.v_pref + 1e-9);
        }
    }
}
