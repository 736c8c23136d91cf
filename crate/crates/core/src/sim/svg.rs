use std::fmt::Write;

use super::town::{LaneGraph, LaneKind};
use super::world::WorldState;

/// Debug drawing of the lane graph, optionally with agent footprints.
/// World +y points up in the drawing.
pub fn graph_svg(graph: &LaneGraph, world: Option<&WorldState>) -> String {
    let pts = graph.lanes.iter().flat_map(|l| l.centerline.points().iter().copied());
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for p in pts {
        x0 = x0.min(p[0]);
        y0 = y0.min(p[1]);
        x1 = x1.max(p[0]);
        y1 = y1.max(p[1]);
    }
    let m = 10.0;
    let (w, h) = (x1 - x0 + 2.0 * m, y1 - y0 + 2.0 * m);
    let tx = |x: f64| x - x0 + m;
    let ty = |y: f64| y1 - y + m;
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{:.0}" viewBox="0 0 {w:.2} {h:.2}">"#,
        w * 2.0,
        h * 2.0
    )
    .unwrap();
    writeln!(s, r##"<rect width="100%" height="100%" fill="#202020"/>"##).unwrap();
    for x in &graph.intersections {
        let poly: Vec<String> = x.polygon.iter().map(|p| format!("{:.2},{:.2}", tx(p[0]), ty(p[1]))).collect();
        writeln!(s, r##"<polygon points="{}" fill="#404040"/>"##, poly.join(" ")).unwrap();
    }
    for lane in &graph.lanes {
        let color = match lane.kind {
            LaneKind::Road => "#d0d0d0",
            LaneKind::Straight => "#80b0ff",
            LaneKind::RightTurn => "#80ff80",
            LaneKind::LeftTurn => "#ffb060",
            LaneKind::Turnaround => "#c080ff",
        };
        let p: Vec<String> = lane
            .centerline
            .points()
            .iter()
            .map(|p| format!("{:.2},{:.2}", tx(p[0]), ty(p[1])))
            .collect();
        writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="0.4"><title>lane {}</title></polyline>"#,
            p.join(" "),
            lane.id
        )
        .unwrap();
    }
    for (&lane, &light) in &graph.light_bindings {
        let e = graph.lane(lane).centerline.end();
        writeln!(s, r##"<circle cx="{:.2}" cy="{:.2}" r="0.8" fill="#ff4040"><title>light {light}</title></circle>"##, tx(e[0]), ty(e[1])).unwrap();
    }
    if let Some(world) = world {
        for a in &world.agents {
            let fp: Vec<String> = a.footprint().iter().map(|p| format!("{:.2},{:.2}", tx(p[0]), ty(p[1]))).collect();
            let fill = if a.id == 0 { "#3050ff" } else { "#ffe000" };
            writeln!(s, r#"<polygon points="{}" fill="{fill}"/>"#, fp.join(" ")).unwrap();
        }
    }
    s.push_str("</svg>\n");
    s
}
