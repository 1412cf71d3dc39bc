//! Point-cloud container and the aerial/ground feature-extraction pipeline:
//! eigen features, ground seeding with RANSAC, supervoxels, roof selection
//! and façade completion from roof hulls.

use alloc::vec::Vec;

use nalgebra::SymmetricEigen;

use crate::geom::{Mat3, RigidTransform, Vec3};

mod downsample;
mod facade;
mod features;
mod ground;
mod hull;
mod supervoxel;

pub use downsample::voxel_downsample;
pub use facade::{
    classify_roofs, classify_roofs_with, complete_facades, FacadeCompletion, FacadeConfig,
    GroundLookup, RoofThresholds,
};
pub use features::eigen_features;
pub use ground::{segment_ground, segment_ground_with, GroundConfig, GroundSegmentation, Plane};
pub use hull::{convex_hull_2d, point_in_convex_polygon};
pub use supervoxel::{
    oversegment, supervoxel_segment, supervoxel_segment_with, Supervoxel, SupervoxelConfig,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CloudError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("degenerate scan: only {seeds} ground seed points (need 50)")]
    DegenerateScan { seeds: usize },
    #[error("attribute has {got} entries for {expected} points")]
    AttributeLength { expected: usize, got: usize },
    #[error("{0} must be positive")]
    NonPositive(&'static str),
}

/// Semantic class of a point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Ground,
    Roof,
    Facade,
    Other,
}

/// Points with optional per-point attributes. Every attribute that is present
/// has exactly one entry per point.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec3>,
    labels: Option<Vec<Label>>,
    normals: Option<Vec<Vec3>>,
    planarity: Option<Vec<f64>>,
    verticality: Option<Vec<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        Self { points, ..Default::default() }
    }

    pub fn labeled(points: Vec<Vec3>, labels: Vec<Label>) -> Result<Self, CloudError> {
        let mut c = Self::new(points);
        c.set_labels(labels)?;
        Ok(c)
    }

    /// Every point gets `label`.
    pub fn uniform(points: Vec<Vec3>, label: Label) -> Self {
        let n = points.len();
        Self { points, labels: Some(alloc::vec![label; n]), ..Default::default() }
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn labels(&self) -> Option<&[Label]> {
        self.labels.as_deref()
    }

    pub fn normals(&self) -> Option<&[Vec3]> {
        self.normals.as_deref()
    }

    pub fn planarity(&self) -> Option<&[f64]> {
        self.planarity.as_deref()
    }

    pub fn verticality(&self) -> Option<&[f64]> {
        self.verticality.as_deref()
    }

    pub fn has_features(&self) -> bool {
        self.normals.is_some() && self.planarity.is_some() && self.verticality.is_some()
    }

    fn check_len(&self, got: usize) -> Result<(), CloudError> {
        if got != self.points.len() {
            return Err(CloudError::AttributeLength { expected: self.points.len(), got });
        }
        Ok(())
    }

    pub fn set_labels(&mut self, labels: Vec<Label>) -> Result<(), CloudError> {
        self.check_len(labels.len())?;
        self.labels = Some(labels);
        Ok(())
    }

    pub fn clear_labels(&mut self) {
        self.labels = None;
    }

    pub fn set_normals(&mut self, normals: Vec<Vec3>) -> Result<(), CloudError> {
        self.check_len(normals.len())?;
        self.normals = Some(normals);
        Ok(())
    }

    /// Sets normals and the shape features; both features are clamped to [0, 1].
    pub fn set_features(
        &mut self,
        normals: Vec<Vec3>,
        planarity: Vec<f64>,
        verticality: Vec<f64>,
    ) -> Result<(), CloudError> {
        self.check_len(normals.len())?;
        self.check_len(planarity.len())?;
        self.check_len(verticality.len())?;
        self.normals = Some(normals);
        self.planarity = Some(planarity.into_iter().map(|v| v.clamp(0.0, 1.0)).collect());
        self.verticality = Some(verticality.into_iter().map(|v| v.clamp(0.0, 1.0)).collect());
        Ok(())
    }

    /// Indices of points carrying `label`.
    pub fn indices_with(&self, label: Label) -> Vec<usize> {
        match &self.labels {
            Some(l) => (0..l.len()).filter(|&i| l[i] == label).collect(),
            None => Vec::new(),
        }
    }

    /// Subset in the given index order, attributes included.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        fn pick<T: Copy>(v: &Option<Vec<T>>, idx: &[usize]) -> Option<Vec<T>> {
            v.as_ref().map(|v| idx.iter().map(|&i| v[i]).collect())
        }
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            labels: pick(&self.labels, indices),
            normals: pick(&self.normals, indices),
            planarity: pick(&self.planarity, indices),
            verticality: pick(&self.verticality, indices),
        }
    }

    /// Applies `t` to points and rotates normals. Verticality is dropped since
    /// it is frame dependent.
    pub fn transformed(&self, t: &RigidTransform) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| t.transform_point(p)).collect(),
            labels: self.labels.clone(),
            normals: self.normals.as_ref().map(|n| n.iter().map(|v| t.rotation.rotate(v)).collect()),
            planarity: None,
            verticality: None,
        }
    }

    /// Concatenates `other`; an attribute survives only if both sides have it.
    pub fn append(&mut self, other: &PointCloud) {
        fn join<T: Copy>(a: &mut Option<Vec<T>>, b: &Option<Vec<T>>, a_empty: bool) {
            match (a.as_mut(), b) {
                (Some(a), Some(b)) => a.extend_from_slice(b),
                (None, Some(b)) if a_empty => *a = Some(b.clone()),
                _ => *a = None,
            }
        }
        let empty = self.points.is_empty();
        join(&mut self.labels, &other.labels, empty);
        join(&mut self.normals, &other.normals, empty);
        join(&mut self.planarity, &other.planarity, empty);
        join(&mut self.verticality, &other.verticality, empty);
        self.points.extend_from_slice(&other.points);
    }

    /// Axis-aligned bounds `(min, max)`, or `None` when empty.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.points.first()?;
        Some(self.points.iter().fold((first, first), |(lo, hi), p| (lo.inf(p), hi.sup(p))))
    }
}

/// Mean and covariance of the selected points.
pub(crate) fn covariance(points: &[Vec3], indices: &[usize]) -> (Vec3, Mat3) {
    let n = indices.len() as f64;
    let mean = indices.iter().fold(Vec3::zeros(), |acc, &i| acc + points[i]) / n;
    let mut cov = Mat3::zeros();
    for &i in indices {
        let d = points[i] - mean;
        cov += d * d.transpose();
    }
    (mean, cov / n)
}

/// Eigenvalues in descending order with matching eigenvectors (columns).
pub(crate) fn sorted_eigen(cov: &Mat3) -> ([f64; 3], [Vec3; 3]) {
    let eig = SymmetricEigen::new(*cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap_or(core::cmp::Ordering::Equal));
    let vals = order.map(|k| eig.eigenvalues[k].max(0.0));
    let vecs = order.map(|k| eig.eigenvectors.column(k).into_owned());
    (vals, vecs)
}

/// Flips `n` so its z component is non-negative.
pub(crate) fn orient_up(n: Vec3) -> Vec3 {
    if n.z < 0.0 {
        -n
    } else {
        n
    }
}
