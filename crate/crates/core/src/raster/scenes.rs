//! Hand-placed scenes with known content, used for golden images and previews.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::render::{render_input, BevImage};
use super::spec::BevSpec;
use crate::error::Result;
use crate::sim::geometry::wrap_angle;
use crate::sim::{build_town, AgentState, LaneGraph, LaneKind, TownConfig, WorldState, DT};

pub const SCENE_NAMES: [&str; 5] = ["straight_road", "red_light", "green_light", "curved_route", "history_fade"];

pub struct Scene {
    pub name: &'static str,
    pub graph: LaneGraph,
    /// Oldest first; the last entry is the current state.
    pub history: Vec<WorldState>,
}

impl Scene {
    pub fn render(&self, spec: &BevSpec) -> Result<BevImage> {
        let refs: Vec<&WorldState> = self.history.iter().collect();
        render_input(&refs, 0, &self.graph, spec)
    }
}

/// Agent placed on `lane` at `offset`, following the first successor at every fork
/// unless `route` overrides the lanes after the first.
pub fn place(graph: &LaneGraph, id: usize, lane: usize, offset: f64, speed: f64, route: &[usize]) -> AgentState {
    let (pos, heading) = graph.lane(lane).centerline.pose_at(offset);
    let mut full = vec![lane];
    full.extend_from_slice(route);
    while full.len() < 4 {
        let last = *full.last().unwrap();
        full.push(graph.lane(last).successors[0]);
    }
    AgentState {
        id,
        x: pos[0],
        y: pos[1],
        heading: wrap_angle(heading),
        speed,
        length: 4.6,
        width: 1.9,
        lane,
        offset,
        route: full,
    }
}

/// Constant-speed history along each agent's current lane, oldest first.
fn history(graph: &LaneGraph, agents: &[AgentState]) -> Vec<WorldState> {
    (0..=10)
        .map(|k| {
            let back = (10 - k) as f64 * DT;
            let agents = agents
                .iter()
                .map(|a| {
                    let off = a.offset - a.speed * back;
                    place(graph, a.id, a.lane, off, a.speed, &a.route[1..])
                })
                .collect();
            WorldState {
                step: 100 + k as u64,
                time: (100 + k) as f64 * DT,
                agents,
                rng: ChaCha8Rng::seed_from_u64(0),
            }
        })
        .collect()
}

fn town() -> LaneGraph {
    build_town(&TownConfig { rows: 1, cols: 1, block_length: 200.0, ..Default::default() }, 0).expect("scene town")
}

/// Incoming road lane heading east (approaching the intersection from the west).
fn eastbound_approach(g: &LaneGraph) -> usize {
    *g.light_bindings
        .keys()
        .find(|&&l| {
            let line = &g.lane(l).centerline;
            line.end()[0] - line.start()[0] > 1.0
        })
        .unwrap()
}

fn successor_of_kind(g: &LaneGraph, lane: usize, kind: LaneKind) -> usize {
    *g.lane(lane).successors.iter().find(|&&s| g.lane(s).kind == kind).unwrap()
}

pub fn scene(name: &str) -> Option<Scene> {
    let mut g = town();
    let app = eastbound_approach(&g);
    let len = g.lane(app).length();
    let straight = successor_of_kind(&g, app, LaneKind::Straight);
    let left = successor_of_kind(&g, app, LaneKind::LeftTurn);
    let agents = match name {
        "straight_road" => {
            g.force_all_green();
            vec![place(&g, 0, app, len - 60.0, 8.0, &[straight])]
        }
        "red_light" | "green_light" => {
            if name == "red_light" {
                g.force_all_red();
            } else {
                g.force_all_green();
            }
            vec![
                place(&g, 0, app, len - 16.0, 5.0, &[straight]),
                place(&g, 1, app, len - 4.0, 0.0, &[straight]),
            ]
        }
        "curved_route" => {
            g.force_all_green();
            let mid = g.lane(left).length() * 0.6;
            vec![place(&g, 0, left, mid, 5.0, &[])]
        }
        "history_fade" => {
            g.force_all_green();
            // A car on the opposite lane of the same street, coming the other way.
            let opposite = g
                .lanes
                .iter()
                .find(|l| {
                    l.kind == LaneKind::Road
                        && g.lane(l.successors[0]).kind == LaneKind::Turnaround
                        && (l.centerline.end()[0] - l.centerline.start()[0]) < -1.0
                })
                .unwrap()
                .id;
            let olen = g.lane(opposite).length();
            vec![
                place(&g, 0, app, len - 50.0, 10.0, &[straight]),
                place(&g, 1, app, len - 35.0, 6.0, &[straight]),
                place(&g, 2, opposite, olen - 40.0, 9.0, &[]),
            ]
        }
        _ => return None,
    };
    let history = history(&g, &agents);
    let name = SCENE_NAMES.iter().find(|n| **n == name).copied()?;
    Some(Scene { name, graph: g, history })
}

pub fn all_scenes() -> Vec<Scene> {
    SCENE_NAMES.iter().map(|n| scene(n).expect("known scene")).collect()
}
