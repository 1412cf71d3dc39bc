//! Submap alignment: point-to-plane ICP against ALS, loop detection by
//! footprint overlap and keypoint-based loop matching.

use alloc::boxed::Box;
use alloc::vec::Vec;

#[allow(unused_imports)] // float methods under no_std
use nalgebra::{ComplexField, Matrix6, Vector2, Vector6};

use crate::cloud::{eigen_features, CloudError, Label, PointCloud};
use crate::geom::{RigidTransform, Rotation3, Vec3};
use crate::solver::AerialMeasurement;
use crate::spatial::GridIndex;

mod keypoints;

pub use keypoints::{
    binary_shape_context, fit_rigid, iss_keypoints, match_loop_pair, ransac_rigid, Descriptor, LoopMatchConfig,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RegistrationError {
    #[error("no correspondences within the search distance")]
    NoCorrespondences,
    #[error("ICP did not converge (inliers {:.2}, rms {:.3} m)", .0.inlier_fraction, .0.rms)]
    NotConverged(Box<RegistrationResult>),
    #[error("target cloud has no normals")]
    MissingNormals,
    #[error("cloud is empty")]
    EmptyCloud,
    #[error(transparent)]
    Cloud(#[from] CloudError),
}

/// Axis-aligned rectangle in the xy plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footprint {
    pub min: Vector2<f64>,
    pub max: Vector2<f64>,
}

impl Footprint {
    pub fn of_points(points: &[Vec3]) -> Option<Self> {
        let first = points.first()?.xy();
        let (min, max) = points.iter().fold((first, first), |(lo, hi), p| (lo.inf(&p.xy()), hi.sup(&p.xy())));
        Some(Self { min, max })
    }

    pub fn area(&self) -> f64 {
        let d = self.max - self.min;
        d.x.max(0.0) * d.y.max(0.0)
    }

    pub fn intersection_area(&self, other: &Footprint) -> f64 {
        Footprint { min: self.min.sup(&other.min), max: self.max.inf(&other.max) }.area()
    }

    /// Intersection over union; 0 when both are empty.
    pub fn iou(&self, other: &Footprint) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union > 0.0 {
            inter / union
        } else {
            0.0
        }
    }

    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }
}

/// Consecutive MLS frames merged into the map frame and tied to one state.
#[derive(Debug, Clone, PartialEq)]
pub struct Submap {
    pub id: usize,
    /// Points in the map frame, as placed by `anchor_pose`.
    pub cloud: PointCloud,
    pub anchor: usize,
    /// Estimate of the anchor state's pose used when aggregating.
    pub anchor_pose: RigidTransform,
    pub footprint: Footprint,
    /// Start and end of the covered stretch, in metres travelled.
    pub travel: (f64, f64),
}

impl Submap {
    pub fn new(
        id: usize,
        cloud: PointCloud,
        anchor: usize,
        anchor_pose: RigidTransform,
        travel: (f64, f64),
    ) -> Result<Self, RegistrationError> {
        let footprint = Footprint::of_points(cloud.points()).ok_or(RegistrationError::EmptyCloud)?;
        Ok(Self { id, cloud, anchor, anchor_pose, footprint, travel })
    }

    /// Points expressed in the anchor frame.
    pub fn local_cloud(&self) -> PointCloud {
        self.cloud.transformed(&self.anchor_pose.inverse())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpConfig {
    pub max_correspondence_distance: f64,
    /// Maximum angle between source and target normals, in degrees.
    pub normal_gate_deg: f64,
    pub max_iterations: usize,
    pub step_tolerance: f64,
    pub min_inlier_fraction: f64,
    pub max_rms: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            max_correspondence_distance: 1.0,
            normal_gate_deg: 30.0,
            max_iterations: 50,
            step_tolerance: 1e-4,
            min_inlier_fraction: 0.4,
            max_rms: 0.3,
        }
    }
}

/// Inlier rms before and after one accepted step, on that step's
/// correspondences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpStep {
    pub rms_before: f64,
    pub rms_after: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    /// Maps source coordinates into the target frame.
    pub transform: RigidTransform,
    pub rms: f64,
    pub inlier_fraction: f64,
    pub converged: bool,
    pub iterations: usize,
    pub steps: Vec<IcpStep>,
}

struct TargetClass {
    points: Vec<Vec3>,
    normals: Vec<Vec3>,
    grid: GridIndex,
}

/// Target cloud prepared for repeated nearest-neighbour queries.
///
/// A labeled target is split into ground and non-ground points; labeled
/// source points only match their own class.
pub struct IcpTarget {
    classes: Vec<TargetClass>,
    split: bool,
}

impl IcpTarget {
    pub fn new(target: &PointCloud, cell: f64) -> Result<Self, RegistrationError> {
        let normals = target.normals().ok_or(RegistrationError::MissingNormals)?;
        if target.is_empty() {
            return Err(RegistrationError::EmptyCloud);
        }
        let pts = target.points();
        let build = |idx: Vec<usize>| {
            let points: Vec<Vec3> = idx.iter().map(|&i| pts[i]).collect();
            let normals = idx.iter().map(|&i| normals[i]).collect();
            let grid = GridIndex::new(&points, cell);
            TargetClass { points, normals, grid }
        };
        match target.labels() {
            Some(labels) => {
                let (ground, other): (Vec<usize>, Vec<usize>) =
                    (0..pts.len()).partition(|&i| labels[i] == Label::Ground);
                Ok(Self { classes: alloc::vec![build(ground), build(other)], split: true })
            }
            None => Ok(Self { classes: alloc::vec![build((0..pts.len()).collect())], split: false }),
        }
    }

    pub fn len(&self) -> usize {
        self.classes.iter().map(|c| c.points.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn nearest(&self, q: &Vec3, label: Option<Label>, max_dist: f64) -> Option<(Vec3, Vec3)> {
        let pick = |c: &TargetClass| c.grid.nearest(&c.points, q, max_dist).map(|(i, d2)| (d2, c.points[i], c.normals[i]));
        let hit = match (self.split, label) {
            (true, Some(l)) => pick(&self.classes[usize::from(l != Label::Ground)]),
            _ => self
                .classes
                .iter()
                .filter_map(pick)
                .fold(None, |best: Option<(f64, Vec3, Vec3)>, h| match best {
                    Some(b) if b.0 <= h.0 => Some(b),
                    _ => Some(h),
                }),
        };
        hit.map(|(_, p, n)| (p, n))
    }
}

struct Pair {
    source: Vec3,
    target: Vec3,
    normal: Vec3,
}

fn correspondences(source: &PointCloud, target: &IcpTarget, t: &RigidTransform, cfg: &IcpConfig) -> Vec<Pair> {
    let cos_gate = cfg.normal_gate_deg.to_radians().cos();
    let labels = source.labels();
    let normals = source.normals();
    let mut out = Vec::new();
    for (k, p) in source.points().iter().enumerate() {
        let q = t.transform_point(p);
        let Some((tp, tn)) = target.nearest(&q, labels.map(|l| l[k]), cfg.max_correspondence_distance) else {
            continue;
        };
        if let Some(ns) = normals {
            // Normals are unsigned.
            if t.rotation.rotate(&ns[k]).dot(&tn).abs() < cos_gate {
                continue;
            }
        }
        out.push(Pair { source: *p, target: tp, normal: tn });
    }
    out
}

fn plane_rms(pairs: &[Pair], t: &RigidTransform) -> f64 {
    let sum: f64 = pairs.iter().map(|c| c.normal.dot(&(t.transform_point(&c.source) - c.target)).powi(2)).sum();
    (sum / pairs.len() as f64).sqrt()
}

/// Gauss-Newton step about the centroid `c` of the transformed source;
/// returns the updated transform and the step norm.
fn plane_step(pairs: &[Pair], t: &RigidTransform) -> (RigidTransform, f64) {
    let moved: Vec<Vec3> = pairs.iter().map(|c| t.transform_point(&c.source)).collect();
    let centroid = moved.iter().fold(Vec3::zeros(), |a, p| a + p) / moved.len() as f64;
    let mut h = Matrix6::<f64>::zeros();
    let mut g = Vector6::<f64>::zeros();
    for (c, p) in pairs.iter().zip(&moved) {
        let arm = (p - centroid).cross(&c.normal);
        let j = Vector6::new(arm.x, arm.y, arm.z, c.normal.x, c.normal.y, c.normal.z);
        let r = c.normal.dot(&(p - c.target));
        h += j * j.transpose();
        g += j * r;
    }
    // Tiny damping keeps unobservable directions at zero.
    let damping = 1e-9 * h.trace().max(1e-12);
    for d in 0..6 {
        h[(d, d)] += damping;
    }
    let delta = match h.cholesky() {
        Some(ch) => -ch.solve(&g),
        None => Vector6::zeros(),
    };
    let omega = Vec3::new(delta[0], delta[1], delta[2]);
    let v = Vec3::new(delta[3], delta[4], delta[5]);
    let rot = Rotation3::exp(&omega);
    let rotation = Rotation3::project(&(rot.matrix() * t.rotation.matrix()));
    let translation = rot.rotate(&(t.translation - centroid)) + centroid + v;
    (RigidTransform::new(rotation, translation), delta.norm())
}

/// Point-to-plane ICP of `source` onto `target`, starting from `initial`.
///
/// Source normals, when present, gate correspondences by angle. A step that
/// would raise the rms on its own correspondences is rejected and ends the
/// iteration.
pub fn icp_point_to_plane(
    source: &PointCloud,
    target: &PointCloud,
    initial: &RigidTransform,
    cfg: &IcpConfig,
) -> Result<RegistrationResult, RegistrationError> {
    let prepared = IcpTarget::new(target, cfg.max_correspondence_distance.max(0.25))?;
    icp_with_target(source, &prepared, initial, cfg)
}

pub fn icp_with_target(
    source: &PointCloud,
    target: &IcpTarget,
    initial: &RigidTransform,
    cfg: &IcpConfig,
) -> Result<RegistrationResult, RegistrationError> {
    if source.is_empty() || target.is_empty() {
        return Err(RegistrationError::EmptyCloud);
    }
    let mut t = *initial;
    let mut steps = Vec::new();
    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        let pairs = correspondences(source, target, &t, cfg);
        if pairs.is_empty() {
            if iterations == 0 {
                return Err(RegistrationError::NoCorrespondences);
            }
            break;
        }
        iterations += 1;
        let rms_before = plane_rms(&pairs, &t);
        let (next, norm) = plane_step(&pairs, &t);
        let rms_after = plane_rms(&pairs, &next);
        if rms_after > rms_before {
            break;
        }
        steps.push(IcpStep { rms_before, rms_after });
        t = next;
        if norm < cfg.step_tolerance {
            break;
        }
    }
    let pairs = correspondences(source, target, &t, cfg);
    if pairs.is_empty() {
        return Err(RegistrationError::NoCorrespondences);
    }
    let rms = plane_rms(&pairs, &t);
    let inlier_fraction = pairs.len() as f64 / source.len() as f64;
    let converged = inlier_fraction >= cfg.min_inlier_fraction && rms < cfg.max_rms;
    let result = RegistrationResult { transform: t, rms, inlier_fraction, converged, iterations, steps };
    if converged {
        Ok(result)
    } else {
        Err(RegistrationError::NotConverged(Box::new(result)))
    }
}

/// ALS ground and façade points with normals, ready as an ICP target.
pub fn aerial_target(als: &PointCloud, normal_radius: f64, cell: f64) -> Result<IcpTarget, RegistrationError> {
    let labels = als.labels().ok_or(RegistrationError::Cloud(CloudError::AttributeLength { expected: als.len(), got: 0 }))?;
    let keep: Vec<usize> = (0..als.len()).filter(|&i| matches!(labels[i], Label::Ground | Label::Facade)).collect();
    if keep.is_empty() {
        return Err(RegistrationError::EmptyCloud);
    }
    let mut sub = als.select(&keep);
    if sub.normals().is_none() {
        sub = eigen_features(&sub, normal_radius)?;
    }
    IcpTarget::new(&sub, cell)
}

/// Registers a submap to the ALS target starting from its current anchor
/// pose. A converged alignment yields the corrected anchor pose.
pub fn make_aerial_factor(submap: &Submap, target: &IcpTarget, cfg: &IcpConfig) -> Option<AerialMeasurement> {
    let local = submap.local_cloud();
    let result = icp_with_target(&local, target, &submap.anchor_pose, cfg).ok()?;
    Some(AerialMeasurement { state: submap.anchor, pose: result.transform, inlier_fraction: result.inlier_fraction })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopDetectionConfig {
    pub min_index_gap: usize,
    pub min_iou: f64,
}

impl Default for LoopDetectionConfig {
    fn default() -> Self {
        Self { min_index_gap: 3, min_iou: 0.3 }
    }
}

/// Candidate pairs `(i, j, iou)` with `i < j` (slice positions), at least
/// `min_index_gap` apart and overlapping by `min_iou`.
pub fn detect_loops(submaps: &[Submap], cfg: &LoopDetectionConfig) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for i in 0..submaps.len() {
        for j in i + cfg.min_index_gap.max(1)..submaps.len() {
            let iou = submaps[i].footprint.iou(&submaps[j].footprint);
            if iou >= cfg.min_iou {
                out.push((i, j, iou));
            }
        }
    }
    out
}
