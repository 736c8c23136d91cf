use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::autopilot::{autopilot_controls, AutopilotParams};
use super::geometry::{rect_corners, unit, wrap_angle, Point};
use super::town::{LaneGraph, LaneKind, TownConfig};
use crate::error::{Error, Result};

/// Fixed simulation step, seconds.
pub const DT: f64 = 0.1;
/// Routes are topped up to at least this many lanes.
pub const MIN_ROUTE_LANES: usize = 4;
/// Minimum bumper-to-bumper gap at spawn, meters.
pub const SPAWN_GAP: f64 = 5.0;
pub const MAX_AGENT_LENGTH: f64 = 5.0;
const LENGTH_RANGE: (f64, f64) = (4.2, MAX_AGENT_LENGTH);
const WIDTH_RANGE: (f64, f64) = (1.8, 2.1);

/// Everything needed to build a town and populate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub town: TownConfig,
    pub n_agents: usize,
    pub autopilot: AutopilotParams,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { town: TownConfig::default(), n_agents: 40, autopilot: AutopilotParams::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    /// Radians in [−π, π), counter-clockwise from +x.
    pub heading: f64,
    pub speed: f64,
    pub length: f64,
    pub width: f64,
    pub lane: usize,
    /// Arc length along the current lane.
    pub offset: f64,
    /// Lane ids ahead, starting with the current lane.
    pub route: Vec<usize>,
}

impl AgentState {
    pub fn position(&self) -> Point {
        [self.x, self.y]
    }

    pub fn footprint(&self) -> [Point; 4] {
        rect_corners(self.position(), self.heading, self.length, self.width)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub step: u64,
    /// Always `step × DT`.
    pub time: f64,
    /// Ego first.
    pub agents: Vec<AgentState>,
    pub rng: ChaCha8Rng,
}

impl WorldState {
    pub fn ego(&self) -> &AgentState {
        &self.agents[0]
    }

    /// Byte-stable JSON encoding, used for determinism checks and replay files.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("world state serializes")
    }
}

fn extend_route(route: &mut Vec<usize>, graph: &LaneGraph, rng: &mut ChaCha8Rng) {
    while route.len() < MIN_ROUTE_LANES {
        let last = *route.last().unwrap();
        let succ = &graph.lane(last).successors;
        route.push(succ[rng.gen_range(0..succ.len())]);
    }
}

/// Candidate spawn positions: every 10 m along road lanes, clear of lane ends.
fn spawn_slots(graph: &LaneGraph) -> Vec<(usize, f64)> {
    let spacing = SPAWN_GAP + MAX_AGENT_LENGTH;
    let mut slots = Vec::new();
    for lane in graph.lanes.iter().filter(|l| l.kind == LaneKind::Road) {
        let mut off = spacing / 2.0;
        while off + spacing / 2.0 <= lane.length() {
            slots.push((lane.id, off));
            off += spacing;
        }
    }
    slots
}

/// Places `n` agents on distinct road slots with random sizes and routes.
pub fn spawn_agents(graph: &LaneGraph, n: usize, seed: u64) -> Result<WorldState> {
    if n == 0 {
        return Err(Error::Config("at least one agent (the ego) is required".into()));
    }
    let mut slots = spawn_slots(graph);
    if slots.len() < n {
        return Err(Error::Sim(format!(
            "town holds {} agents at a {SPAWN_GAP} m bumper gap, {n} requested",
            slots.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    slots.shuffle(&mut rng);
    let mut agents = Vec::with_capacity(n);
    for (id, &(lane, offset)) in slots[..n].iter().enumerate() {
        let (pos, heading) = graph.lane(lane).centerline.pose_at(offset);
        let mut route = vec![lane];
        extend_route(&mut route, graph, &mut rng);
        agents.push(AgentState {
            id,
            x: pos[0],
            y: pos[1],
            heading: wrap_angle(heading),
            speed: 0.0,
            length: rng.gen_range(LENGTH_RANGE.0..=LENGTH_RANGE.1),
            width: rng.gen_range(WIDTH_RANGE.0..=WIDTH_RANGE.1),
            lane,
            offset,
            route,
        });
    }
    Ok(WorldState { step: 0, time: 0.0, agents, rng })
}

/// Builds the town and spawns its agents in one go.
pub fn init_world(cfg: &SimConfig, seed: u64) -> Result<(LaneGraph, WorldState)> {
    let graph = super::town::build_town(&cfg.town, seed)?;
    let world = spawn_agents(&graph, cfg.n_agents, seed.wrapping_add(0x5EED))?;
    Ok((graph, world))
}

/// Re-derives the lane and offset of an agent after it has moved, popping
/// finished lanes from the front of its route.
fn reproject(agent: &mut AgentState, graph: &LaneGraph, travelled: f64) {
    let back = 1.0;
    let ahead = travelled + 2.0;
    let mut best: Option<(f64, usize, f64)> = None;
    let mut base = 0.0;
    for (k, &lane_id) in agent.route.iter().enumerate() {
        let line = &graph.lane(lane_id).centerline;
        let (lo, hi) = (agent.offset - back - base, agent.offset + ahead - base);
        if hi < 0.0 {
            break;
        }
        if lo <= line.length() {
            let pr = line.project(agent.position(), lo, hi);
            let d = pr.lateral.abs();
            if best.map_or(true, |(bd, _, _)| d < bd) {
                best = Some((d, k, pr.s));
            }
        }
        base += line.length();
    }
    let (_, k, s) = best.expect("route covers the agent");
    agent.route.drain(..k);
    let mut s = s;
    // A foot point exactly at a lane end belongs to the successor.
    while agent.route.len() > 1 && s >= graph.lane(agent.route[0]).length() {
        s -= graph.lane(agent.route[0]).length();
        agent.route.remove(0);
    }
    agent.lane = agent.route[0];
    agent.offset = s.clamp(0.0, graph.lane(agent.lane).length());
}

/// Advances every agent by one step of `DT` under its autopilot.
/// Controls are computed from the pre-step state of all agents.
pub fn step(world: &WorldState, graph: &LaneGraph, params: &AutopilotParams) -> WorldState {
    let controls: Vec<_> = (0..world.agents.len())
        .map(|i| autopilot_controls(world, graph, params, i))
        .collect();
    let mut next = world.clone();
    for (agent, c) in next.agents.iter_mut().zip(controls) {
        let v = agent.speed;
        let delta = c.steer * params.max_steer_deg.to_radians();
        let wheelbase = params.wheelbase_ratio * agent.length;
        let d = unit(agent.heading);
        agent.x += v * d[0] * DT;
        agent.y += v * d[1] * DT;
        agent.heading = wrap_angle(agent.heading + v / wheelbase * delta.tan() * DT);
        agent.speed = (v + c.accel * DT).clamp(0.0, params.v_max);
        reproject(agent, graph, v * DT);
        extend_route(&mut agent.route, graph, &mut next.rng);
        assert!(
            agent.x.is_finite() && agent.y.is_finite() && agent.heading.is_finite() && agent.speed.is_finite(),
            "non-finite state for agent {}",
            agent.id
        );
    }
    next.step = world.step + 1;
    next.time = next.step as f64 * DT;
    next
}

/// Lateral distance of the agent from its current lane centerline.
pub fn lateral_deviation(agent: &AgentState, graph: &LaneGraph) -> f64 {
    let line = &graph.lane(agent.lane).centerline;
    line.project(agent.position(), agent.offset - 0.5, agent.offset + 0.5).lateral.abs()
}
