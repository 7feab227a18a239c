use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::agent::{ego_frame_angle, to_ego_frame, AgentState, EgoNeighborState};

use super::Observation;

/// Order in which neighbors are fed to the LSTM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderingStrategy {
    /// Decreasing distance: the nearest agent is fed last.
    #[default]
    ClosestLast,
    ClosestFirst,
    /// Decreasing time to collision, never-colliding agents first.
    TimeToCollision,
}

impl OrderingStrategy {
    pub const ALL: [OrderingStrategy; 3] = [
        OrderingStrategy::ClosestLast,
        OrderingStrategy::ClosestFirst,
        OrderingStrategy::TimeToCollision,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OrderingStrategy::ClosestLast => "closest_last",
            OrderingStrategy::ClosestFirst => "closest_first",
            OrderingStrategy::TimeToCollision => "time_to_collision",
        }
    }
}

impl fmt::Display for OrderingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OrderingStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OrderingStrategy::ALL
            .into_iter()
            .find(|o| o.as_str() == s)
            .ok_or_else(|| format!("unknown ordering {s:?}"))
    }
}

/// Smallest `t >= 0` with `|p + v t| <= radius`; zero when already
/// overlapping and infinite when the discs never touch.
pub fn time_to_collision(p: (f64, f64), v: (f64, f64), radius: f64) -> f64 {
    let c = p.0 * p.0 + p.1 * p.1 - radius * radius;
    if c <= 0.0 {
        return 0.0;
    }
    let a = v.0 * v.0 + v.1 * v.1;
    let b = p.0 * v.0 + p.1 * v.1;
    if a == 0.0 || b >= 0.0 {
        return f64::INFINITY;
    }
    let disc = b * b - a * c;
    if disc < 0.0 {
        return f64::INFINITY;
    }
    // Smaller root of a t^2 + 2 b t + c, in the cancellation-free form.
    c / (-b + disc.sqrt())
}

fn by_distance_desc(a: &EgoNeighborState, b: &EgoNeighborState) -> Ordering {
    b.dist.total_cmp(&a.dist).then(a.px.total_cmp(&b.px))
}

/// Sorts ego-frame neighbors. `self_velocity` is the ego agent's velocity
/// in the same frame, needed for time to collision.
pub fn order_neighbors(
    strategy: OrderingStrategy,
    self_velocity: (f64, f64),
    neighbors: &[EgoNeighborState],
) -> Vec<EgoNeighborState> {
    let mut out = neighbors.to_vec();
    match strategy {
        OrderingStrategy::ClosestLast => out.sort_by(by_distance_desc),
        OrderingStrategy::ClosestFirst => {
            out.sort_by(by_distance_desc);
            out.reverse();
        }
        OrderingStrategy::TimeToCollision => {
            let ttc = |n: &EgoNeighborState| {
                time_to_collision(
                    (n.px, n.py),
                    (n.vx - self_velocity.0, n.vy - self_velocity.1),
                    n.combined_radius,
                )
            };
            out.sort_by(|a, b| {
                ttc(b)
                    .total_cmp(&ttc(a))
                    .then_with(|| by_distance_desc(a, b))
            });
        }
    }
    out
}

impl Observation {
    /// Ego-frame observation of `agent` among `others`, neighbors ordered.
    pub fn observe(agent: &AgentState, others: &[AgentState], strategy: OrderingStrategy) -> Self {
        let (me, neighbors) = to_ego_frame(agent, others);
        let theta = ego_frame_angle(agent);
        let (sin, cos) = theta.sin_cos();
        let own_velocity = (
            cos * agent.vx + sin * agent.vy,
            -sin * agent.vx + cos * agent.vy,
        );
        let ordered = order_neighbors(strategy, own_velocity, &neighbors);
        Observation {
            self_state: me.to_array(),
            neighbors: ordered.iter().map(EgoNeighborState::to_array).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(px: f64, py: f64) -> EgoNeighborState {
        EgoNeighborState {
            px,
            py,
            vx: 0.0,
            vy: 0.0,
            radius: 0.3,
            dist: px.hypot(py),
            combined_radius: 0.6,
        }
    }

    #[test]
    fn ttc_fixtures() {
        assert_eq!(time_to_collision((2.0, 0.0), (-1.0, 0.0), 1.0), 1.0);
        assert_eq!(
            time_to_collision((2.0, 0.0), (1.0, 0.0), 1.0),
            f64::INFINITY
        );
        assert_eq!(time_to_collision((0.5, 0.0), (1.0, 0.0), 1.0), 0.0);
        assert_eq!(
            time_to_collision((2.0, 0.0), (0.0, 0.0), 1.0),
            f64::INFINITY
        );
        // passes wide: closest approach 2 > 1
        assert_eq!(
            time_to_collision((2.0, 2.0), (-1.0, 0.0), 1.0),
            f64::INFINITY
        );
    }

    #[test]
    fn ttc_matches_fine_stepping() {
        // Oracle: march the relative motion at dt = 1e-4 until contact.
        let p = (3.0, 0.7);
        let v = (-1.3, -0.2);
        let r = 0.9;
        let mut t = 0.0f64;
        while (p.0 + v.0 * t).hypot(p.1 + v.1 * t) > r {
            t += 1e-4;
        }
        assert!((time_to_collision(p, v, r) - t).abs() < 2e-4);
    }

    #[test]
    fn closest_last_and_first() {
        let n = [at(3.0, 0.0), at(1.0, 0.0), at(2.0, 0.0)];
        let last: Vec<f64> = order_neighbors(OrderingStrategy::ClosestLast, (0.0, 0.0), &n)
            .iter()
            .map(|x| x.dist)
            .collect();
        assert_eq!(last, vec![3.0, 2.0, 1.0]);
        let first: Vec<f64> = order_neighbors(OrderingStrategy::ClosestFirst, (0.0, 0.0), &n)
            .iter()
            .map(|x| x.dist)
            .collect();
        assert_eq!(first, vec![1.0, 2.0, 3.0]);
        assert!(order_neighbors(OrderingStrategy::TimeToCollision, (0.0, 0.0), &[]).is_empty());
    }

    #[test]
    fn ttc_ordering_puts_infinite_first() {
        // Both at distance 2.6. The first approaches (TTC = (2.6-0.6)/1 = 2 s),
        // the second recedes.
        let mut approaching = at(2.6, 0.0);
        approaching.vx = -1.0;
        let mut receding = at(0.0, 2.6);
        receding.vy = 1.0;
        let out = order_neighbors(
            OrderingStrategy::TimeToCollision,
            (0.0, 0.0),
            &[approaching, receding],
        );
        assert_eq!(out[0], receding);
        assert_eq!(out[1], approaching);
        let ttc = time_to_collision((2.6, 0.0), (-1.0, 0.0), 0.6);
        assert!((ttc - 2.0).abs() < 1e-12);
    }

    #[test]
    fn px_breaks_ties() {
        let a = at(-1.0, 0.0);
        let b = at(1.0, 0.0);
        for s in OrderingStrategy::ALL {
            let one = order_neighbors(s, (0.0, 0.0), &[a, b]);
            let two = order_neighbors(s, (0.0, 0.0), &[b, a]);
            assert_eq!(one, two, "{s}");
        }
        let out = order_neighbors(OrderingStrategy::ClosestLast, (0.0, 0.0), &[b, a]);
        assert_eq!(out[0].px, -1.0);
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in OrderingStrategy::ALL {
            assert_eq!(s.as_str().parse::<OrderingStrategy>().unwrap(), s);
        }
        assert!("nearest".parse::<OrderingStrategy>().is_err());
    }
}
