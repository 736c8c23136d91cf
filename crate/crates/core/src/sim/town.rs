use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::geometry::{add, dist, right_of, scale, sub, Point, Polyline};
use super::lights::TrafficLight;
use crate::error::{Error, Result};

pub const GRAPH_FORMAT_VERSION: u32 = 1;
/// Sampling step for arcs, meters.
const ARC_STEP: f64 = 0.5;

/// Parameters of the synthetic grid town.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TownConfig {
    pub rows: usize,
    pub cols: usize,
    /// Distance between neighbouring intersection centers, meters.
    pub block_length: f64,
    pub lane_width: f64,
    /// Radius of right turns; left turns use this plus one lane width.
    pub turning_radius: f64,
    pub road_speed: f64,
    pub right_turn_speed: f64,
    pub left_turn_speed: f64,
    pub turnaround_speed: f64,
    pub green_s: f64,
    pub red_s: f64,
}

impl Default for TownConfig {
    fn default() -> Self {
        Self {
            rows: 2,
            cols: 2,
            block_length: 100.0,
            lane_width: 3.5,
            turning_radius: 10.0,
            road_speed: 11.0,
            right_turn_speed: 4.5,
            left_turn_speed: 5.5,
            turnaround_speed: 4.5,
            green_s: 13.0,
            red_s: 17.0,
        }
    }
}

impl TownConfig {
    /// Distance from an intersection center to its stop lines.
    pub fn setback(&self) -> f64 {
        self.turning_radius + self.lane_width / 2.0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.rows < 1 || self.cols < 1 {
            return bad(format!("grid must be at least 1x1, got {}x{}", self.rows, self.cols));
        }
        if !(2.5..=4.5).contains(&self.lane_width) {
            return bad(format!("lane width {} outside [2.5, 4.5] m", self.lane_width));
        }
        if self.block_length < 2.0 * self.turning_radius {
            return bad(format!(
                "block length {} m is shorter than twice the turning radius {} m; turns would overlap",
                self.block_length, self.turning_radius
            ));
        }
        if self.block_length < 60.0 {
            return bad(format!("block length {} m is below the 60 m minimum", self.block_length));
        }
        if self.turning_radius < 5.0 || self.lane_width >= 2.0 * self.turning_radius {
            return bad(format!("turning radius {} m too tight", self.turning_radius));
        }
        if self.block_length < 2.0 * self.setback() + 20.0 {
            return bad(format!(
                "block length {} m leaves less than 20 m of straight road between intersections",
                self.block_length
            ));
        }
        let speeds = [self.road_speed, self.right_turn_speed, self.left_turn_speed, self.turnaround_speed];
        if speeds.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad("speed limits must be positive".into());
        }
        if !(self.green_s > 0.0 && self.red_s > 0.0) {
            return bad("light durations must be positive".into());
        }
        if self.green_s > self.red_s {
            return bad(format!(
                "green {} s longer than red {} s would give crossing streets green at once",
                self.green_s, self.red_s
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaneKind {
    /// Straight road between two intersections or on a boundary arm.
    Road,
    Straight,
    RightTurn,
    LeftTurn,
    /// Loop at the end of a boundary arm that sends traffic back.
    Turnaround,
}

impl LaneKind {
    pub fn is_connector(self) -> bool {
        matches!(self, LaneKind::Straight | LaneKind::RightTurn | LaneKind::LeftTurn)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub id: usize,
    pub kind: LaneKind,
    pub centerline: Polyline,
    pub width: f64,
    pub speed_limit: f64,
    pub successors: Vec<usize>,
}

impl Lane {
    pub fn length(&self) -> f64 {
        self.centerline.length()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopLine {
    pub lane: usize,
    /// Longitudinal offset on the lane, meters.
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intersection {
    pub id: usize,
    pub center: Point,
    pub polygon: Vec<Point>,
    pub stop_lines: Vec<StopLine>,
}

/// Directed lane graph of the town together with its signals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneGraph {
    pub version: u32,
    pub config: TownConfig,
    pub seed: u64,
    pub lanes: Vec<Lane>,
    pub intersections: Vec<Intersection>,
    pub lights: Vec<TrafficLight>,
    /// Approach lane id → governing light id.
    pub light_bindings: BTreeMap<usize, usize>,
}

const DIRS: [Point; 4] = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]];
const EAST: usize = 0;
const NORTH: usize = 1;

fn opposite(d: usize) -> usize {
    (d + 2) % 4
}

fn dir_index(v: Point) -> usize {
    DIRS.iter().position(|d| dist(*d, v) < 1e-9).unwrap()
}

struct Builder {
    cfg: TownConfig,
    lanes: Vec<Lane>,
}

impl Builder {
    fn push(&mut self, kind: LaneKind, points: Vec<Point>) -> usize {
        let speed_limit = match kind {
            LaneKind::Road | LaneKind::Straight => self.cfg.road_speed,
            LaneKind::RightTurn => self.cfg.right_turn_speed,
            LaneKind::LeftTurn => self.cfg.left_turn_speed,
            LaneKind::Turnaround => self.cfg.turnaround_speed,
        };
        let id = self.lanes.len();
        self.lanes.push(Lane {
            id,
            kind,
            centerline: Polyline::new(points),
            width: self.cfg.lane_width,
            speed_limit,
            successors: Vec::new(),
        });
        id
    }

    fn link(&mut self, from: usize, to: usize) {
        self.lanes[from].successors.push(to);
    }
}

/// Straight segment sampled every meter or so, endpoints exact.
fn segment(a: Point, b: Point) -> Vec<Point> {
    let n = (dist(a, b) / 1.0).ceil().max(1.0) as usize;
    (0..=n)
        .map(|i| {
            let t = i as f64 / n as f64;
            add(a, scale(sub(b, a), t))
        })
        .collect()
}

fn append(path: &mut Vec<Point>, more: Vec<Point>) {
    let skip = usize::from(path.last().is_some_and(|p| dist(*p, more[0]) < 1e-9));
    path.extend(more.into_iter().skip(skip));
}

/// Balloon loop from `start` (heading `d`) back to the lane one width to the
/// left, heading the other way: right arc, wide left arc, right arc.
fn turnaround(start: Point, d: Point, w: f64, r: f64) -> Vec<Point> {
    let left = [-d[1], d[0]];
    let to_world = |p: Point| add(start, add(scale(d, p[0]), scale(left, p[1])));
    let alpha = ((w + 2.0 * r) / (4.0 * r)).acos();
    let c1 = [0.0, -r];
    let c2 = [2.0 * r * alpha.sin(), w / 2.0];
    let c3 = [0.0, w + r];
    let mut local = Polyline::arc(c1, r, FRAC_PI_2, -alpha, ARC_STEP);
    append(&mut local, Polyline::arc(c2, r, 1.5 * PI - alpha, PI + 2.0 * alpha, ARC_STEP));
    append(&mut local, Polyline::arc(c3, r, -FRAC_PI_2 + alpha, -alpha, ARC_STEP));
    let n = local.len();
    // Pin the endpoints so successor continuity is exact.
    local[0] = [0.0, 0.0];
    local[n - 1] = [0.0, w];
    local.into_iter().map(to_world).collect()
}

/// Builds a rows×cols grid of signalized four-way intersections. The seed
/// only drives the light phase offsets.
pub fn build_town(config: &TownConfig, seed: u64) -> Result<LaneGraph> {
    config.validate()?;
    let (rows, cols) = (config.rows, config.cols);
    let b = config.block_length;
    let w = config.lane_width;
    let s = config.setback();
    let centers: Vec<Point> = (0..rows * cols)
        .map(|i| [(i % cols) as f64 * b, (i / cols) as f64 * b])
        .collect();
    let neighbor = |i: usize, d: usize| -> Option<usize> {
        let (r, c) = ((i / cols) as isize, (i % cols) as isize);
        let (dc, dr) = (DIRS[d][0] as isize, DIRS[d][1] as isize);
        let (nr, nc) = (r + dr, c + dc);
        (nr >= 0 && nc >= 0 && (nr as usize) < rows && (nc as usize) < cols).then(|| nr as usize * cols + nc as usize)
    };

    let mut bld = Builder { cfg: config.clone(), lanes: Vec::new() };
    // out_lane[i][d]: lane leaving intersection i towards direction d.
    // in_lane[i][d]: lane arriving at intersection i from direction d.
    let mut out_lane = vec![[usize::MAX; 4]; rows * cols];
    let mut in_lane = vec![[usize::MAX; 4]; rows * cols];
    let mut turnarounds = Vec::new();

    for i in 0..rows * cols {
        let ci = centers[i];
        for d in 0..4 {
            let dv = DIRS[d];
            let off = scale(right_of(dv), w / 2.0);
            match neighbor(i, d) {
                Some(j) => {
                    if d != EAST && d != NORTH {
                        continue;
                    }
                    let cj = centers[j];
                    let fwd = bld.push(
                        LaneKind::Road,
                        segment(add(add(ci, scale(dv, s)), off), add(sub(cj, scale(dv, s)), off)),
                    );
                    out_lane[i][d] = fwd;
                    in_lane[j][opposite(d)] = fwd;
                    let back = bld.push(
                        LaneKind::Road,
                        segment(sub(sub(cj, scale(dv, s)), off), sub(add(ci, scale(dv, s)), off)),
                    );
                    out_lane[j][opposite(d)] = back;
                    in_lane[i][d] = back;
                }
                None => {
                    let arm_end = add(ci, scale(dv, b / 2.0));
                    let out = bld.push(LaneKind::Road, segment(add(add(ci, scale(dv, s)), off), add(arm_end, off)));
                    let loop_pts = turnaround(add(arm_end, off), dv, w, config.turning_radius);
                    let ta = bld.push(LaneKind::Turnaround, loop_pts);
                    let inc = bld.push(LaneKind::Road, segment(sub(arm_end, off), sub(add(ci, scale(dv, s)), off)));
                    out_lane[i][d] = out;
                    in_lane[i][d] = inc;
                    turnarounds.push((out, ta, inc));
                }
            }
        }
    }
    for (out, ta, inc) in turnarounds {
        bld.link(out, ta);
        bld.link(ta, inc);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let period = config.green_s + config.red_s;
    let mut lights = Vec::new();
    let mut light_bindings = BTreeMap::new();
    let mut intersections = Vec::new();

    for i in 0..rows * cols {
        let ci = centers[i];
        let ns_offset = rng.gen_range(0.0..period);
        let ns = lights.len();
        lights.push(TrafficLight::new(ns, config.green_s, config.red_s, ns_offset));
        lights.push(TrafficLight::new(ns + 1, config.green_s, config.red_s, (ns_offset + period / 2.0) % period));
        let mut stop_lines = Vec::new();
        for a in 0..4 {
            let inc = in_lane[i][a];
            let travel = DIRS[opposite(a)];
            let r = right_of(travel);
            let entry = bld.lanes[inc].centerline.end();
            // Straight through.
            let straight_out = out_lane[i][opposite(a)];
            let exit = bld.lanes[straight_out].centerline.start();
            let st = bld.push(LaneKind::Straight, segment(entry, exit));
            // Right turn, clockwise around the near corner.
            let right_out = out_lane[i][dir_index(r)];
            let c = add(sub(ci, scale(travel, s)), scale(r, s));
            let start_angle = (-r[1]).atan2(-r[0]);
            let mut pts = Polyline::arc(c, s - w / 2.0, start_angle, -FRAC_PI_2, ARC_STEP);
            pts[0] = entry;
            *pts.last_mut().unwrap() = bld.lanes[right_out].centerline.start();
            let rt = bld.push(LaneKind::RightTurn, pts);
            // Left turn, counter-clockwise around the far corner.
            let left_out = out_lane[i][dir_index([-r[0], -r[1]])];
            let c = sub(sub(ci, scale(travel, s)), scale(r, s));
            let start_angle = r[1].atan2(r[0]);
            let mut pts = Polyline::arc(c, s + w / 2.0, start_angle, FRAC_PI_2, ARC_STEP);
            pts[0] = entry;
            *pts.last_mut().unwrap() = bld.lanes[left_out].centerline.start();
            let lt = bld.push(LaneKind::LeftTurn, pts);

            for (conn, out) in [(st, straight_out), (rt, right_out), (lt, left_out)] {
                bld.link(inc, conn);
                bld.link(conn, out);
            }
            let light = if travel[0] == 0.0 { ns } else { ns + 1 };
            light_bindings.insert(inc, light);
            stop_lines.push(StopLine { lane: inc, offset: bld.lanes[inc].length() });
        }
        intersections.push(Intersection {
            id: i,
            center: ci,
            polygon: vec![
                [ci[0] - s, ci[1] - s],
                [ci[0] + s, ci[1] - s],
                [ci[0] + s, ci[1] + s],
                [ci[0] - s, ci[1] + s],
            ],
            stop_lines,
        });
    }

    let graph = LaneGraph {
        version: GRAPH_FORMAT_VERSION,
        config: config.clone(),
        seed,
        lanes: bld.lanes,
        intersections,
        lights,
        light_bindings,
    };
    graph.validate()?;
    Ok(graph)
}

impl LaneGraph {
    pub fn lane(&self, id: usize) -> &Lane {
        &self.lanes[id]
    }

    pub fn count(&self, kind: LaneKind) -> usize {
        self.lanes.iter().filter(|l| l.kind == kind).count()
    }

    /// Light governing the stop line at the end of `lane`, if any.
    pub fn light_for(&self, lane: usize) -> Option<&TrafficLight> {
        self.light_bindings.get(&lane).map(|&l| &self.lights[l])
    }

    /// Overrides every light to stay red (used to test stop-line compliance).
    pub fn force_all_red(&mut self) {
        self.lights.iter_mut().for_each(|l| l.forced = Some(super::lights::LightColor::Red));
    }

    pub fn force_all_green(&mut self) {
        self.lights.iter_mut().for_each(|l| l.forced = Some(super::lights::LightColor::Green));
    }

    /// Checks the structural invariants of the graph.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Sim(m));
        for lane in &self.lanes {
            let pts = lane.centerline.points();
            if pts.len() < 2 {
                return bad(format!("lane {} has fewer than 2 points", lane.id));
            }
            if let Some(k) = pts.windows(2).position(|p| dist(p[0], p[1]) < 0.05) {
                return bad(format!("lane {} has points {k} and {} closer than 5 cm", lane.id, k + 1));
            }
            if lane.successors.is_empty() {
                return bad(format!("lane {} is a dead end", lane.id));
            }
            for &succ in &lane.successors {
                let gap = dist(lane.centerline.end(), self.lanes[succ].centerline.start());
                if gap > 0.1 {
                    return bad(format!("lane {} ends {gap:.3} m away from successor {succ}", lane.id));
                }
            }
        }
        for x in &self.intersections {
            for sl in &x.stop_lines {
                let len = self.lanes[sl.lane].length();
                if !(0.0..=len).contains(&sl.offset) {
                    return bad(format!("stop line off lane {}", sl.lane));
                }
            }
        }
        Ok(())
    }

    /// Versioned JSON document of the graph (config included).
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("lane graph serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let graph: LaneGraph = serde_json::from_str(text)?;
        if graph.version != GRAPH_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "lane graph format version {} (expected {GRAPH_FORMAT_VERSION})",
                graph.version
            )));
        }
        graph.validate()?;
        Ok(graph)
    }
}
