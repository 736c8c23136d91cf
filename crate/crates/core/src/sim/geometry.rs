use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub type Point = [f64; 2];

pub fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

pub fn add(a: Point, b: Point) -> Point {
    [a[0] + b[0], a[1] + b[1]]
}

pub fn scale(a: Point, k: f64) -> Point {
    [a[0] * k, a[1] * k]
}

pub fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

pub fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

pub fn norm(a: Point) -> f64 {
    a[0].hypot(a[1])
}

pub fn dist(a: Point, b: Point) -> f64 {
    norm(sub(a, b))
}

pub fn unit(heading: f64) -> Point {
    [heading.cos(), heading.sin()]
}

/// Rotates `d` by −90°, giving the right-hand normal of a travel direction.
pub fn right_of(d: Point) -> Point {
    [d[1], -d[0]]
}

/// Wraps an angle into [−π, π).
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r >= PI {
        r -= 2.0 * PI;
    }
    r
}

/// A centerline with precomputed cumulative arc length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<Point>", into = "Vec<Point>")]
pub struct Polyline {
    points: Vec<Point>,
    cum: Vec<f64>,
}

impl From<Vec<Point>> for Polyline {
    fn from(points: Vec<Point>) -> Self {
        Self::new(points)
    }
}

impl From<Polyline> for Vec<Point> {
    fn from(p: Polyline) -> Self {
        p.points
    }
}

/// Closest point of a polyline to a query point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Arc length of the foot point.
    pub s: f64,
    /// Signed lateral offset, positive to the left of the travel direction.
    pub lateral: f64,
}

impl Polyline {
    pub fn new(points: Vec<Point>) -> Self {
        let mut cum = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        for (i, p) in points.iter().enumerate() {
            if i > 0 {
                acc += dist(points[i - 1], *p);
            }
            cum.push(acc);
        }
        Self { points, cum }
    }

    /// Samples a circular arc; `sweep` > 0 turns left (counter-clockwise).
    pub fn arc(center: Point, radius: f64, start_angle: f64, sweep: f64, max_step: f64) -> Vec<Point> {
        let n = ((radius * sweep.abs()) / max_step).ceil().max(1.0) as usize;
        (0..=n)
            .map(|i| {
                let a = start_angle + sweep * i as f64 / n as f64;
                [center[0] + radius * a.cos(), center[1] + radius * a.sin()]
            })
            .collect()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    /// Arc length at each vertex.
    pub fn cumulative(&self) -> &[f64] {
        &self.cum
    }

    pub fn length(&self) -> f64 {
        *self.cum.last().unwrap_or(&0.0)
    }

    pub fn start(&self) -> Point {
        self.points[0]
    }

    pub fn end(&self) -> Point {
        *self.points.last().unwrap()
    }

    fn segment_at(&self, s: f64) -> usize {
        let k = self.cum.partition_point(|&c| c <= s);
        k.clamp(1, self.points.len() - 1) - 1
    }

    /// Position and heading at arc length `s`, clamped to the polyline; beyond
    /// the ends the first/last segment is extrapolated.
    pub fn pose_at(&self, s: f64) -> (Point, f64) {
        let i = self.segment_at(s);
        let (a, b) = (self.points[i], self.points[i + 1]);
        let seg = sub(b, a);
        let len = norm(seg);
        let t = (s - self.cum[i]) / len;
        (add(a, scale(seg, t)), seg[1].atan2(seg[0]))
    }

    /// Projects `p` onto the part of the polyline with arc length in `[lo, hi]`.
    pub fn project(&self, p: Point, lo: f64, hi: f64) -> Projection {
        let lo = lo.max(0.0);
        let hi = hi.min(self.length());
        let (first, last) = (self.segment_at(lo), self.segment_at(hi));
        let mut best = Projection { s: lo, lateral: f64::INFINITY };
        let mut best_d = f64::INFINITY;
        for i in first..=last {
            let (a, b) = (self.points[i], self.points[i + 1]);
            let seg = sub(b, a);
            let len2 = dot(seg, seg);
            let t = (dot(sub(p, a), seg) / len2).clamp(0.0, 1.0);
            let s = (self.cum[i] + t * len2.sqrt()).clamp(lo, hi);
            let (foot, _) = self.pose_at(s);
            let d = dist(p, foot);
            if d < best_d {
                best_d = d;
                let side = cross(seg, sub(p, a));
                best = Projection { s, lateral: d.copysign(if side == 0.0 { 1.0 } else { side }) };
            }
        }
        best
    }
}

/// Corners of an oriented rectangle centered on `center`, in order
/// front-left, front-right, rear-right, rear-left.
pub fn rect_corners(center: Point, heading: f64, length: f64, width: f64) -> [Point; 4] {
    let f = scale(unit(heading), length / 2.0);
    let l = scale([-heading.sin(), heading.cos()], width / 2.0);
    [
        add(add(center, f), l),
        sub(add(center, f), l),
        sub(sub(center, f), l),
        add(sub(center, f), l),
    ]
}
