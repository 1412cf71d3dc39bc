use alloc::vec::Vec;

#[allow(unused_imports)] // float methods under no_std
use nalgebra::{ComplexField, Vector2};

use super::hull::convex_hull_2d;
use super::{Label, PointCloud, Supervoxel};
use crate::geom::Vec3;
use crate::spatial::GridIndex;

/// Roof selection thresholds; both comparisons are strict.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoofThresholds {
    pub min_planarity: f64,
    pub max_verticality: f64,
}

impl Default for RoofThresholds {
    fn default() -> Self {
        Self { min_planarity: 0.5, max_verticality: 0.3 }
    }
}

pub fn classify_roofs(supervoxels: &[Supervoxel]) -> Vec<Supervoxel> {
    classify_roofs_with(supervoxels, &RoofThresholds::default())
}

/// Keeps exactly the regions with `planarity > 0.5` and `verticality < 0.3`
/// (or the given thresholds).
pub fn classify_roofs_with(supervoxels: &[Supervoxel], t: &RoofThresholds) -> Vec<Supervoxel> {
    supervoxels
        .iter()
        .filter(|s| s.planarity > t.min_planarity && s.verticality < t.max_verticality)
        .cloned()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FacadeConfig {
    /// Spacing of columns along hull edges.
    pub edge_spacing: f64,
    /// Vertical spacing of points within a column.
    pub vertical_spacing: f64,
    /// Outward offset applied to the roof hull before sampling.
    pub hull_dilation: f64,
}

impl Default for FacadeConfig {
    fn default() -> Self {
        Self { edge_spacing: 0.5, vertical_spacing: 0.5, hull_dilation: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FacadeCompletion {
    /// Synthetic wall points, all labeled [`Label::Facade`].
    pub facades: PointCloud,
    /// Roof regions skipped because their footprint is collinear.
    pub collinear_roofs: usize,
}

/// Extrudes each roof's xy convex hull down to the ground.
///
/// Hull edges are sampled every `edge_spacing` starting at each vertex; each
/// sample becomes a column from the roof elevation (interpolated between the
/// edge's end vertices) down to `ground_elevation(x, y)` every
/// `vertical_spacing`. A roof at ground level yields one point per column.
pub fn complete_facades(
    cloud: &PointCloud,
    roofs: &[Supervoxel],
    ground_elevation: impl Fn(f64, f64) -> f64,
    cfg: &FacadeConfig,
) -> FacadeCompletion {
    let pts = cloud.points();
    let mut out = Vec::new();
    let mut collinear_roofs = 0;
    for roof in roofs {
        let xy: Vec<Vector2<f64>> = roof.members.iter().map(|&m| pts[m].xy()).collect();
        let hull = convex_hull_2d(&xy);
        if hull.len() < 3 {
            collinear_roofs += 1;
            continue;
        }
        // Hull vertices are member points; recover their elevations.
        let heights: Vec<f64> = hull
            .iter()
            .map(|h| {
                roof.members
                    .iter()
                    .filter(|&&m| pts[m].xy() == *h)
                    .map(|&m| pts[m].z)
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let hull = dilate(&hull, cfg.hull_dilation);
        let n = hull.len();
        for k in 0..n {
            let (a, b) = (hull[k], hull[(k + 1) % n]);
            let (za, zb) = (heights[k], heights[(k + 1) % n]);
            let length = (b - a).norm();
            if length <= 0.0 {
                continue;
            }
            let samples = (length / cfg.edge_spacing - 1e-9).ceil().max(1.0) as usize;
            for s in 0..samples {
                let f = (s as f64 * cfg.edge_spacing / length).min(1.0);
                let p = a + (b - a) * f;
                let top = za + (zb - za) * f;
                let bottom = ground_elevation(p.x, p.y);
                let span = (top - bottom).max(0.0);
                let count = (span / cfg.vertical_spacing + 1e-9).floor() as usize + 1;
                for c in 0..count {
                    out.push(Vec3::new(p.x, p.y, top - c as f64 * cfg.vertical_spacing));
                }
            }
        }
    }
    FacadeCompletion { facades: PointCloud::uniform(out, Label::Facade), collinear_roofs }
}

/// Offsets a CCW convex polygon outward by `d` (mitred corners).
fn dilate(poly: &[Vector2<f64>], d: f64) -> Vec<Vector2<f64>> {
    if d == 0.0 {
        return poly.to_vec();
    }
    let n = poly.len();
    let outward = |i: usize| {
        let e = poly[(i + 1) % n] - poly[i];
        Vector2::new(e.y, -e.x).normalize()
    };
    (0..n)
        .map(|i| {
            let prev = outward((i + n - 1) % n);
            let next = outward(i);
            poly[i] + (prev + next) * (d / (1.0 + prev.dot(&next)))
        })
        .collect()
}

/// Ground elevation from labeled ground points: the z of the nearest ground
/// point in xy within `max_distance`.
#[derive(Debug, Clone)]
pub struct GroundLookup {
    flat: Vec<Vec3>,
    heights: Vec<f64>,
    grid: GridIndex,
    max_distance: f64,
}

impl GroundLookup {
    pub fn new(ground: &[Vec3], max_distance: f64) -> Self {
        let flat: Vec<Vec3> = ground.iter().map(|p| Vec3::new(p.x, p.y, 0.0)).collect();
        let heights = ground.iter().map(|p| p.z).collect();
        let grid = GridIndex::new(&flat, max_distance.max(1e-3));
        Self { flat, heights, grid, max_distance }
    }

    pub fn elevation(&self, x: f64, y: f64) -> Option<f64> {
        self.grid
            .nearest(&self.flat, &Vec3::new(x, y, 0.0), self.max_distance)
            .map(|(i, _)| self.heights[i])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::point_in_convex_polygon;
    use alloc::vec;

    fn sv(members: Vec<usize>, planarity: f64, verticality: f64) -> Supervoxel {
        Supervoxel { members, centroid: Vec3::zeros(), normal: Vec3::z(), planarity, verticality }
    }

    #[test]
    fn roof_thresholds() {
        let svs = vec![sv(vec![0], 0.9, 0.02), sv(vec![1], 0.8, 0.95), sv(vec![2], 0.5, 0.0)];
        let roofs = classify_roofs(&svs);
        assert_eq!(roofs.len(), 1);
        assert_eq!(roofs[0].members, vec![0]);
    }

    fn square_roof(side: f64, z: f64, step: f64) -> (PointCloud, Supervoxel) {
        let n = (side / step).round() as usize + 1;
        let pts: Vec<Vec3> = (0..n)
            .flat_map(|i| (0..n).map(move |j| Vec3::new(i as f64 * step, j as f64 * step, z)))
            .collect();
        let members = (0..pts.len()).collect();
        (PointCloud::new(pts), sv(members, 0.9, 0.0))
    }

    #[test]
    fn square_roof_count() {
        let (cloud, roof) = square_roof(10.0, 20.0, 0.5);
        let out = complete_facades(&cloud, &[roof], |_, _| 0.0, &FacadeConfig::default());
        assert_eq!(out.facades.len(), 80 * 41);
        assert_eq!(out.collinear_roofs, 0);
    }

    #[test]
    fn roof_at_ground_gives_single_points() {
        let (cloud, roof) = square_roof(10.0, 0.0, 0.5);
        let out = complete_facades(&cloud, &[roof], |_, _| 0.0, &FacadeConfig::default());
        assert_eq!(out.facades.len(), 80);
    }

    #[test]
    fn l_shaped_roof_is_bridged() {
        // L-shape: 10x10 square minus its upper-right 5x5 quadrant.
        let pts: Vec<Vec3> = (0..=20)
            .flat_map(|i| (0..=20).map(move |j| (i as f64 * 0.5, j as f64 * 0.5)))
            .filter(|&(x, y)| !(x > 5.0 && y > 5.0))
            .map(|(x, y)| Vec3::new(x, y, 6.0))
            .collect();
        let members: Vec<usize> = (0..pts.len()).collect();
        let cloud = PointCloud::new(pts.clone());
        let out = complete_facades(&cloud, &[sv(members, 0.9, 0.0)], |_, _| 0.0, &FacadeConfig::default());
        let xy: Vec<Vector2<f64>> = pts.iter().map(|p| p.xy()).collect();
        let hull = convex_hull_2d(&xy);
        // The re-entrant corner (5, 5) is not a hull vertex; the diagonal
        // from (10, 5) to (5, 10) bridges it.
        assert_eq!(hull.len(), 5);
        assert!(!hull.contains(&Vector2::new(5.0, 5.0)));
        let on_diagonal = out.facades.points().iter().any(|p| (p.x + p.y - 15.0).abs() < 1e-9 && p.x > 5.0 && p.x < 10.0);
        assert!(on_diagonal);
        for p in out.facades.points() {
            assert!(point_in_convex_polygon(&hull, &p.xy(), 1e-6));
            assert!(p.z >= 0.0 && p.z <= 6.0);
        }
    }

    #[test]
    fn collinear_roof_is_skipped() {
        let pts: Vec<Vec3> = (0..10).map(|i| Vec3::new(i as f64, 0.0, 3.0)).collect();
        let cloud = PointCloud::new(pts);
        let out = complete_facades(&cloud, &[sv((0..10).collect(), 0.9, 0.0)], |_, _| 0.0, &FacadeConfig::default());
        assert_eq!(out.collinear_roofs, 1);
        assert!(out.facades.is_empty());
    }

    #[test]
    fn dilation_moves_square_edges_out() {
        let (cloud, roof) = square_roof(10.0, 3.0, 0.5);
        let cfg = FacadeConfig { hull_dilation: 0.25, ..Default::default() };
        let out = complete_facades(&cloud, &[roof], |_, _| 0.0, &cfg);
        let (lo, hi) = out.facades.bounds().unwrap();
        assert!((lo.x + 0.25).abs() < 1e-12 && (hi.x - 10.25).abs() < 1e-12);
        assert!((lo.y + 0.25).abs() < 1e-12 && (hi.y - 10.25).abs() < 1e-12);
    }

    #[test]
    fn ground_lookup_nearest_within_range() {
        let g = GroundLookup::new(&[Vec3::new(0.0, 0.0, 1.0), Vec3::new(10.0, 0.0, 2.0)], 5.0);
        assert_eq!(g.elevation(1.0, 1.0), Some(1.0));
        assert_eq!(g.elevation(9.0, 0.0), Some(2.0));
        assert_eq!(g.elevation(5.0, 20.0), None);
    }
}
