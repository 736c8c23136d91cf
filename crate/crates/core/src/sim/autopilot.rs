use serde::{Deserialize, Serialize};

use super::geometry::{dist, sub, wrap_angle, Point};
use super::lights::LightColor;
use super::town::LaneGraph;
use super::world::{AgentState, WorldState};

/// Scripted driver: IDM for speed, pure pursuit for steering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutopilotParams {
    /// Desired time headway, s.
    pub time_headway: f64,
    /// Jam distance, m.
    pub min_gap: f64,
    /// Maximum acceleration, m/s².
    pub max_accel: f64,
    /// Comfortable deceleration, m/s².
    pub comfort_decel: f64,
    /// Hard lower bound on the commanded acceleration, m/s².
    pub max_brake: f64,
    /// Deceleration used when slowing ahead of a slower lane.
    pub anticipation_decel: f64,
    /// A car that would need more than this to stop at a freshly red light proceeds.
    pub dilemma_decel: f64,
    pub leader_range: f64,
    /// How far ahead along the route a stop line is looked for.
    pub signal_range: f64,
    pub lookahead_min: f64,
    pub lookahead_gain: f64,
    pub max_steer_deg: f64,
    pub wheelbase_ratio: f64,
    pub v_max: f64,
}

impl Default for AutopilotParams {
    fn default() -> Self {
        Self {
            time_headway: 1.5,
            min_gap: 2.0,
            max_accel: 1.5,
            comfort_decel: 3.0,
            max_brake: 9.0,
            anticipation_decel: 1.5,
            dilemma_decel: 4.0,
            leader_range: 50.0,
            signal_range: 100.0,
            lookahead_min: 4.0,
            lookahead_gain: 1.2,
            max_steer_deg: 35.0,
            wheelbase_ratio: 0.6,
            v_max: 20.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Controls {
    /// Normalized steering in [−1, 1]; ±1 is ±`max_steer_deg` at the front wheel. Positive turns left.
    pub steer: f64,
    /// Longitudinal acceleration, m/s².
    pub accel: f64,
}

/// Cumulative start of each route lane, measured from the agent's position.
struct RouteView<'a> {
    graph: &'a LaneGraph,
    route: &'a [usize],
    /// Arc length from the agent to the start of route lane k (negative for k = 0).
    starts: Vec<f64>,
}

impl<'a> RouteView<'a> {
    fn new(graph: &'a LaneGraph, agent: &'a AgentState) -> Self {
        let mut starts = Vec::with_capacity(agent.route.len());
        let mut acc = -agent.offset;
        for &l in &agent.route {
            starts.push(acc);
            acc += graph.lane(l).length();
        }
        Self { graph, route: &agent.route, starts }
    }

    fn end(&self) -> f64 {
        let k = self.route.len() - 1;
        self.starts[k] + self.graph.lane(self.route[k]).length()
    }

    /// Point at distance `d` ahead along the route (clamped to its end).
    fn point_ahead(&self, d: f64) -> Point {
        let d = d.min(self.end());
        let k = self.starts.partition_point(|&s| s <= d).max(1) - 1;
        self.graph.lane(self.route[k]).centerline.pose_at(d - self.starts[k]).0
    }
}

/// IDM acceleration towards a leader `gap` meters ahead (bumper to bumper)
/// moving at `leader_speed`, or on a free road when `gap` is `None`.
pub fn idm_accel(p: &AutopilotParams, v: f64, v0: f64, leader: Option<(f64, f64)>) -> f64 {
    let free = 1.0 - (v / v0).powi(4);
    let interaction = match leader {
        None => 0.0,
        Some((gap, _)) if gap <= 0.01 => return -p.max_brake,
        Some((gap, vl)) => {
            let dv = v - vl;
            let s_star = p.min_gap + (v * p.time_headway + v * dv / (2.0 * (p.max_accel * p.comfort_decel).sqrt())).max(0.0);
            (s_star / gap).powi(2)
        }
    };
    (p.max_accel * (free - interaction)).clamp(-p.max_brake, p.max_accel)
}

/// Front-wheel angle (radians) of pure pursuit towards `target`.
pub fn pure_pursuit_angle(pos: Point, heading: f64, target: Point, wheelbase: f64) -> f64 {
    let d = sub(target, pos);
    let ld = dist(target, pos).max(1e-6);
    let alpha = wrap_angle(d[1].atan2(d[0]) - heading);
    (2.0 * wheelbase * alpha.sin() / ld).atan()
}

/// Controls the autopilot would apply to agent `idx` in `world`.
pub fn autopilot_controls(world: &WorldState, graph: &LaneGraph, p: &AutopilotParams, idx: usize) -> Controls {
    let agent = &world.agents[idx];
    let view = RouteView::new(graph, agent);
    let v = agent.speed;

    // Lateral.
    let ld = p.lookahead_min.max(p.lookahead_gain * v);
    let target = view.point_ahead(ld);
    let wheelbase = p.wheelbase_ratio * agent.length;
    let delta = pure_pursuit_angle(agent.position(), agent.heading, target, wheelbase);
    let steer = (delta / p.max_steer_deg.to_radians()).clamp(-1.0, 1.0);

    // Desired speed: the current limit, lowered ahead of slower lanes so the
    // car arrives at their limit braking gently.
    let mut v0 = graph.lane(agent.route[0]).speed_limit;
    for (k, &l) in agent.route.iter().enumerate().skip(1) {
        let d = (view.starts[k] - agent.length / 2.0).max(0.0);
        let limit = graph.lane(l).speed_limit;
        v0 = v0.min((limit * limit + 2.0 * p.anticipation_decel * d).sqrt());
    }

    // Leaders: nearest car ahead on the route, and a red stop line.
    let mut leaders: Vec<(f64, f64)> = Vec::new();
    let mut nearest: Option<(f64, &AgentState)> = None;
    for other in &world.agents {
        if other.id == agent.id {
            continue;
        }
        let Some(k) = agent.route.iter().position(|&l| l == other.lane) else {
            continue;
        };
        let ahead = view.starts[k] + other.offset;
        if ahead > 0.0 && ahead <= p.leader_range && nearest.map_or(true, |(a, _)| ahead < a) {
            nearest = Some((ahead, other));
        }
    }
    if let Some((ahead, other)) = nearest {
        leaders.push((ahead - (agent.length + other.length) / 2.0, other.speed));
    }
    if let Some((k, light)) = agent
        .route
        .iter()
        .enumerate()
        .find_map(|(k, &l)| graph.light_for(l).map(|light| (k, light)))
    {
        let stop = view.starts[k] + graph.lane(agent.route[k]).length();
        let gap = stop - agent.length / 2.0;
        if stop <= p.signal_range && gap > 0.0 && light.state(world.time) == LightColor::Red {
            let needed = v * v / (2.0 * gap);
            if needed <= p.dilemma_decel {
                leaders.push((gap, 0.0));
            }
        }
    }

    let accel = leaders
        .iter()
        .map(|&l| idm_accel(p, v, v0, Some(l)))
        .fold(idm_accel(p, v, v0, None), f64::min);
    Controls { steer, accel }
}
