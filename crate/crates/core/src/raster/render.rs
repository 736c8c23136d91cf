use super::fill::{scan_polygon, stroke_quads, Px};
use super::spec::{BevSpec, Rgb};
use crate::error::{Error, Result};
use crate::sim::geometry::{dist, rect_corners, Point};
use crate::sim::{AgentState, LaneGraph, LaneKind, LightColor, WorldState};

/// RGB bird's-eye view, row-major, row 0 farthest ahead of the ego.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BevImage {
    pub size: usize,
    pub data: Vec<u8>,
}

/// Single-channel mask with values in {0, 255}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub size: usize,
    pub data: Vec<u8>,
}

impl BevImage {
    pub fn new(size: usize, background: Rgb) -> Self {
        let mut data = Vec::with_capacity(size * size * 3);
        for _ in 0..size * size {
            data.extend_from_slice(&background);
        }
        Self { size, data }
    }

    pub fn pixel(&self, col: usize, row: usize) -> Rgb {
        let i = (row * self.size + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    fn fill(&mut self, poly: &[Px], color: Rgb) {
        let size = self.size;
        let data = &mut self.data;
        scan_polygon(poly, size, size, |r, c0, c1| {
            for px in data[(r * size + c0) * 3..(r * size + c1) * 3].chunks_exact_mut(3) {
                px.copy_from_slice(&color);
            }
        });
    }

    /// Distinct colors present in the image, sorted.
    pub fn palette(&self) -> Vec<Rgb> {
        let mut v: Vec<Rgb> = self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]]).collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

impl BinaryMask {
    pub fn new(size: usize) -> Self {
        Self { size, data: vec![0; size * size] }
    }

    pub fn get(&self, col: usize, row: usize) -> bool {
        self.data[row * self.size + col] != 0
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    fn fill(&mut self, poly: &[Px]) {
        let size = self.size;
        let data = &mut self.data;
        scan_polygon(poly, size, size, |r, c0, c1| data[r * size + c0..r * size + c1].fill(255));
    }
}

/// Reference frame of the rendering: the ego pose at the current step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgoFrame {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    cos: f64,
    sin: f64,
    mpp: f64,
    anchor: (f64, f64),
}

impl EgoFrame {
    pub fn new(x: f64, y: f64, heading: f64, spec: &BevSpec) -> Self {
        Self {
            x,
            y,
            heading,
            cos: heading.cos(),
            sin: heading.sin(),
            mpp: spec.meters_per_pixel(),
            anchor: spec.anchor_px(),
        }
    }

    pub fn of_agent(agent: &AgentState, spec: &BevSpec) -> Self {
        Self::new(agent.x, agent.y, agent.heading, spec)
    }

    /// Continuous pixel coordinates (column, row) of a world point.
    pub fn to_px(&self, p: Point) -> Px {
        let (dx, dy) = (p[0] - self.x, p[1] - self.y);
        let forward = dx * self.cos + dy * self.sin;
        let left = -dx * self.sin + dy * self.cos;
        [self.anchor.0 - left / self.mpp, self.anchor.1 - forward / self.mpp]
    }
}

/// Integer pixel containing a world point, or `None` when out of view.
pub fn world_to_pixel(p: Point, frame: &EgoFrame, spec: &BevSpec) -> Option<(usize, usize)> {
    let [c, r] = frame.to_px(p);
    let n = spec.image_size as f64;
    if (0.0..n).contains(&c) && (0.0..n).contains(&r) {
        Some((c.floor() as usize, r.floor() as usize))
    } else {
        None
    }
}

fn footprint_px(agent: &AgentState, frame: &EgoFrame) -> [Px; 4] {
    rect_corners(agent.position(), agent.heading, agent.length, agent.width).map(|p| frame.to_px(p))
}

/// Route polyline from the ego position forward, and the light state that colors it.
fn route_ahead(ego: &AgentState, graph: &LaneGraph, lookahead: f64, time: f64) -> (Vec<Point>, LightColor) {
    let mut pts = vec![ego.position()];
    let mut remaining = lookahead;
    let mut from = ego.offset;
    let mut color = None;
    for &lane_id in &ego.route {
        let line = &graph.lane(lane_id).centerline;
        let cum = line.cumulative();
        if remaining > 0.0 {
            let to = (from + remaining).min(line.length());
            for (p, &s) in line.points().iter().zip(cum) {
                if s > from && s < to {
                    pts.push(*p);
                }
            }
            pts.push(line.pose_at(to).0);
            remaining -= to - from;
        }
        if color.is_none() {
            color = graph.light_for(lane_id).map(|l| l.state(time));
        }
        from = 0.0;
        if remaining <= 0.0 && color.is_some() {
            break;
        }
    }
    (pts, color.unwrap_or(LightColor::Green))
}

fn lane_near(points: &[Point], center: Point, radius: f64) -> bool {
    points.iter().any(|p| dist(*p, center) < radius)
}

fn check_spacing(states: &[&WorldState]) -> Result<()> {
    for w in states.windows(2) {
        if w[1].step != w[0].step + 1 {
            return Err(Error::Render(format!(
                "states must be consecutive steps, got {} then {}",
                w[0].step, w[1].step
            )));
        }
    }
    Ok(())
}

/// Renders the input image from the current state and its history.
/// `history` is ordered oldest first and ends with the current state.
pub fn render_input(history: &[&WorldState], ego_id: usize, graph: &LaneGraph, spec: &BevSpec) -> Result<BevImage> {
    if history.len() != spec.history_len + 1 {
        return Err(Error::Render(format!(
            "input rendering needs {} states (current + {} past), got {}",
            spec.history_len + 1,
            spec.history_len,
            history.len()
        )));
    }
    check_spacing(history)?;
    let now = history[history.len() - 1];
    let ego = now
        .agents
        .iter()
        .find(|a| a.id == ego_id)
        .ok_or_else(|| Error::Render(format!("no agent with id {ego_id}")))?;
    let frame = EgoFrame::of_agent(ego, spec);
    let colors = &spec.colors;
    let mpp = spec.meters_per_pixel();
    let mut img = BevImage::new(spec.image_size, colors.background);
    // Anything farther than the view diagonal plus a block cannot show up.
    let cull = spec.fov * 1.5 + 10.0;

    for lane in &graph.lanes {
        let pts = lane.centerline.points();
        if !lane_near(pts, ego.position(), cull + lane.length()) {
            continue;
        }
        let px: Vec<Px> = pts.iter().map(|p| frame.to_px(*p)).collect();
        for q in stroke_quads(&px, lane.width / mpp) {
            img.fill(&q, colors.drivable);
        }
    }
    for lane in graph.lanes.iter().filter(|l| l.kind == LaneKind::Road) {
        let pts = lane.centerline.points();
        if !lane_near(pts, ego.position(), cull + lane.length()) {
            continue;
        }
        // Left edge: the divider between the two directions of a street.
        let edge: Vec<Px> = pts
            .windows(2)
            .flat_map(|w| {
                let d = [w[1][0] - w[0][0], w[1][1] - w[0][1]];
                let l = d[0].hypot(d[1]);
                let n = [-d[1] / l * lane.width / 2.0, d[0] / l * lane.width / 2.0];
                [[w[0][0] + n[0], w[0][1] + n[1]], [w[1][0] + n[0], w[1][1] + n[1]]]
            })
            .map(|p| frame.to_px(p))
            .collect();
        for q in stroke_quads(&edge, spec.lane_line_px) {
            img.fill(&q, colors.lane_line);
        }
    }
    let (route, light) = route_ahead(ego, graph, spec.route_lookahead, now.time);
    let route_color = match light {
        LightColor::Green => colors.route_green,
        LightColor::Red => colors.route_red,
    };
    let route_px: Vec<Px> = route.iter().map(|p| frame.to_px(*p)).collect();
    for q in stroke_quads(&route_px, spec.route_px) {
        img.fill(&q, route_color);
    }

    let n = history.len();
    for (layer_ego, base) in [(false, colors.other), (true, colors.ego)] {
        for (i, state) in history.iter().enumerate() {
            let age = n - 1 - i;
            let color = base.map(|c| spec.fade(c, age));
            for a in state.agents.iter().filter(|a| (a.id == ego_id) == layer_ego) {
                img.fill(&footprint_px(a, &frame), color);
            }
        }
    }
    Ok(img)
}

/// Union of the footprints of `subset` (agent ids) over the future states,
/// drawn in the frame of the current ego pose.
pub fn render_future_mask(future: &[&WorldState], subset: &[usize], frame: &EgoFrame, spec: &BevSpec) -> Result<BinaryMask> {
    if future.len() != spec.future_len {
        return Err(Error::Render(format!(
            "future mask needs exactly {} states, got {}",
            spec.future_len,
            future.len()
        )));
    }
    check_spacing(future)?;
    let mut mask = BinaryMask::new(spec.image_size);
    for state in future {
        for a in state.agents.iter().filter(|a| subset.contains(&a.id)) {
            mask.fill(&footprint_px(a, frame));
        }
    }
    Ok(mask)
}

/// Ids of every agent except `ego_id`.
pub fn others(state: &WorldState, ego_id: usize) -> Vec<usize> {
    state.agents.iter().map(|a| a.id).filter(|&id| id != ego_id).collect()
}
