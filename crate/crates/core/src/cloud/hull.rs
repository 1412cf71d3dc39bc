use alloc::vec::Vec;

use nalgebra::Vector2;

type P2 = Vector2<f64>;

fn cross(o: &P2, a: &P2, b: &P2) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Convex hull by Andrew's monotone chain, counter-clockwise, without
/// collinear vertices. Returns fewer than three vertices when the input is
/// degenerate (all points collinear or coincident).
pub fn convex_hull_2d(points: &[P2]) -> Vec<P2> {
    let mut pts: Vec<P2> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<P2> = Vec::with_capacity(2 * pts.len());
    for p in &pts {
        while hull.len() >= 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(*p);
    }
    let lower = hull.len() + 1;
    for p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(*p);
    }
    hull.pop();
    hull
}

/// Whether `p` is inside or on the boundary (within `tol`) of a CCW convex polygon.
pub fn point_in_convex_polygon(poly: &[P2], p: &P2, tol: f64) -> bool {
    let n = poly.len();
    (0..n).all(|i| {
        let a = &poly[i];
        let b = &poly[(i + 1) % n];
        let edge = b - a;
        cross(a, b, p) / edge.norm() >= -tol
    })
}
