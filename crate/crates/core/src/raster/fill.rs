//! Integer scanline rasterization. Vertices are snapped to 1/256 px and all
//! coverage decisions are exact integer comparisons against pixel centers.

const SUB: i64 = 256;
/// Coordinates are clamped to this many pixels before snapping.
const CLAMP_PX: f64 = 1.0e6;

pub type Px = [f64; 2];

fn snap(v: f64) -> i64 {
    (v.clamp(-CLAMP_PX, CLAMP_PX) * SUB as f64).round() as i64
}

fn floor_div(a: i128, b: i128) -> i128 {
    let q = a / b;
    if (a % b != 0) && ((a < 0) != (b < 0)) {
        q - 1
    } else {
        q
    }
}

/// Calls `span(row, col_start, col_end)` (end exclusive) for every run of
/// pixels whose center lies inside `poly` under the even-odd rule.
pub fn scan_polygon(poly: &[Px], width: usize, height: usize, mut span: impl FnMut(usize, usize, usize)) {
    if poly.len() < 3 {
        return;
    }
    let pts: Vec<(i64, i64)> = poly.iter().map(|p| (snap(p[0]), snap(p[1]))).collect();
    let y_min = pts.iter().map(|p| p.1).min().unwrap();
    let y_max = pts.iter().map(|p| p.1).max().unwrap();
    // Rows whose center (r·SUB + SUB/2) falls in [y_min, y_max].
    let r0 = floor_div((y_min - SUB / 2) as i128 + SUB as i128 - 1, SUB as i128).max(0);
    let r1 = floor_div((y_max - SUB / 2) as i128, SUB as i128).min(height as i128 - 1);
    let mut xs: Vec<i128> = Vec::with_capacity(8);
    for r in r0..=r1 {
        let yc = (r * SUB as i128 + SUB as i128 / 2) as i64;
        xs.clear();
        for i in 0..pts.len() {
            let (x0, y0) = pts[i];
            let (x1, y1) = pts[(i + 1) % pts.len()];
            if (y0 <= yc && yc < y1) || (y1 <= yc && yc < y0) {
                let num = (yc - y0) as i128 * (x1 - x0) as i128;
                xs.push(x0 as i128 + floor_div(num, (y1 - y0) as i128));
            }
        }
        xs.sort_unstable();
        for pair in xs.chunks_exact(2) {
            // Columns whose center c·SUB + SUB/2 lies in [x_l, x_r).
            let c0 = floor_div(pair[0] - SUB as i128 / 2 + SUB as i128 - 1, SUB as i128).max(0);
            let c1 = floor_div(pair[1] - SUB as i128 / 2 - 1, SUB as i128).min(width as i128 - 1);
            if c0 <= c1 {
                span(r as usize, c0 as usize, c1 as usize + 1);
            }
        }
    }
}

/// Quads covering a polyline stroked with the given width; segment ends are
/// extended by up to one pixel so joints leave no gaps.
pub fn stroke_quads(points: &[Px], width: f64) -> Vec<[Px; 4]> {
    let hw = width / 2.0;
    let ext = hw.min(1.0);
    let mut quads = Vec::with_capacity(points.len());
    for seg in points.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let d = [b[0] - a[0], b[1] - a[1]];
        let len = d[0].hypot(d[1]);
        if len < 1e-9 {
            continue;
        }
        let u = [d[0] / len, d[1] / len];
        let n = [-u[1] * hw, u[0] * hw];
        let a2 = [a[0] - u[0] * ext, a[1] - u[1] * ext];
        let b2 = [b[0] + u[0] * ext, b[1] + u[1] * ext];
        quads.push([
            [a2[0] + n[0], a2[1] + n[1]],
            [b2[0] + n[0], b2[1] + n[1]],
            [b2[0] - n[0], b2[1] - n[1]],
            [a2[0] - n[0], a2[1] - n[1]],
        ]);
    }
    quads
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cover(poly: &[Px], size: usize) -> Vec<(usize, usize)> {
        let mut v = Vec::new();
        scan_polygon(poly, size, size, |r, c0, c1| v.extend((c0..c1).map(|c| (r, c))));
        v
    }

    #[test]
    fn axis_aligned_square_covers_centers_only() {
        // Square spanning [2, 5) in both axes covers centers 2.5, 3.5, 4.5.
        let sq = [[2.0, 2.0], [5.0, 2.0], [5.0, 5.0], [2.0, 5.0]];
        let c = cover(&sq, 10);
        assert_eq!(c.len(), 9);
        assert!(c.iter().all(|&(r, c)| (2..5).contains(&r) && (2..5).contains(&c)));
    }

    #[test]
    fn adjacent_squares_do_not_overlap() {
        let a = [[0.0, 0.0], [3.3, 0.0], [3.3, 4.0], [0.0, 4.0]];
        let b = [[3.3, 0.0], [7.0, 0.0], [7.0, 4.0], [3.3, 4.0]];
        let (ca, cb) = (cover(&a, 10), cover(&b, 10));
        assert!(ca.iter().all(|p| !cb.contains(p)));
        assert_eq!(ca.len() + cb.len(), 28);
    }

    #[test]
    fn clipped_to_canvas() {
        let big = [[-50.0, -50.0], [60.0, -50.0], [60.0, 60.0], [-50.0, 60.0]];
        assert_eq!(cover(&big, 8).len(), 64);
        let off = [[20.0, 20.0], [30.0, 20.0], [30.0, 30.0]];
        assert!(cover(&off, 8).is_empty());
    }

    #[test]
    fn winding_order_is_irrelevant() {
        let tri = [[1.2, 0.7], [7.9, 3.3], [2.4, 8.8]];
        let rev = [tri[2], tri[1], tri[0]];
        assert_eq!(cover(&tri, 10), cover(&rev, 10));
    }
}
