//! Trajectory and retrieval metrics.

use alloc::vec::Vec;

#[allow(unused_imports)] // float methods under no_std
use nalgebra::ComplexField;

use crate::geom::{RigidTransform, Vec3};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("embedding dimension {got} does not match {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedding {0} is not unit norm")]
    NotUnitNorm(usize),
    #[error("{what}: {got} entries, expected {expected}")]
    LengthMismatch { what: &'static str, expected: usize, got: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error("checkpoint {pair} refers to frame {frame} of {count}")]
    FrameOutOfRange { pair: usize, frame: usize, count: usize },
    #[error("non-finite value in checkpoint {0}")]
    NonFinite(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorStats {
    pub mean: f64,
    pub rmse: f64,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl ErrorStats {
    pub fn from_errors(errors: &[f64]) -> Result<Self, MetricsError> {
        if errors.is_empty() {
            return Err(MetricsError::Empty);
        }
        let n = errors.len() as f64;
        Ok(Self {
            mean: errors.iter().sum::<f64>() / n,
            rmse: (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt(),
            min: errors.iter().copied().fold(f64::INFINITY, f64::min),
            max: errors.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            count: errors.len(),
        })
    }
}

/// An MLS point (in its frame's sensor coordinates) and its surveyed ALS
/// counterpart in the map frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckpointPair {
    pub id: usize,
    pub frame: usize,
    pub mls_point: Vec3,
    pub als_point: Vec3,
}

pub fn checkpoint_errors(pairs: &[CheckpointPair], trajectory: &[RigidTransform]) -> Result<ErrorStats, MetricsError> {
    let mut errors = Vec::with_capacity(pairs.len());
    for (k, p) in pairs.iter().enumerate() {
        if !(p.mls_point.iter().all(|v| v.is_finite()) && p.als_point.iter().all(|v| v.is_finite())) {
            return Err(MetricsError::NonFinite(k));
        }
        let pose = trajectory
            .get(p.frame)
            .ok_or(MetricsError::FrameOutOfRange { pair: k, frame: p.frame, count: trajectory.len() })?;
        errors.push((pose.transform_point(&p.mls_point) - p.als_point).norm());
    }
    ErrorStats::from_errors(&errors)
}

/// Absolute translation error of `estimate` against `truth`, pose by pose.
pub fn absolute_trajectory_error(estimate: &[RigidTransform], truth: &[RigidTransform]) -> Result<ErrorStats, MetricsError> {
    if estimate.len() != truth.len() {
        return Err(MetricsError::LengthMismatch { what: "trajectory", expected: truth.len(), got: estimate.len() });
    }
    let errors: Vec<f64> = estimate.iter().zip(truth).map(|(e, t)| (e.translation - t.translation).norm()).collect();
    ErrorStats::from_errors(&errors)
}

/// Rotation error in degrees (sum of absolute fixed-axis XYZ angles of
/// `R_gt^-1 R_e`) and translation error in metres.
pub fn rre_rte(gt: &RigidTransform, est: &RigidTransform) -> (f64, f64) {
    let r = (gt.rotation.inverse() * est.rotation).euler_xyz();
    let rre = (r.x.abs() + r.y.abs() + r.z.abs()).to_degrees();
    (rre, (gt.translation - est.translation).norm())
}

/// Unit-norm embeddings with positions.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    ids: Vec<usize>,
    dim: usize,
    /// Row-major, `dim` values per entry.
    values: Vec<f64>,
    positions: Vec<Vec3>,
}

impl EmbeddingSet {
    pub fn new(ids: Vec<usize>, vectors: &[Vec<f64>], positions: Vec<Vec3>) -> Result<Self, MetricsError> {
        let n = ids.len();
        for (what, got) in [("vectors", vectors.len()), ("positions", positions.len())] {
            if got != n {
                return Err(MetricsError::LengthMismatch { what, expected: n, got });
            }
        }
        let dim = vectors.first().map_or(0, |v| v.len());
        let mut values = Vec::with_capacity(n * dim);
        for (k, v) in vectors.iter().enumerate() {
            if v.len() != dim {
                return Err(MetricsError::DimensionMismatch { expected: dim, got: v.len() });
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !((norm - 1.0).abs() <= 1e-6) {
                return Err(MetricsError::NotUnitNorm(k));
            }
            values.extend_from_slice(v);
        }
        Ok(Self { ids, dim, values, positions })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn vector(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }
}

/// Fraction of queries with a database hit within `radius` among the top-K
/// by inner product, for each K. Ties in score go to the lower index.
pub fn recall_at_k(
    queries: &EmbeddingSet,
    database: &EmbeddingSet,
    ks: &[usize],
    radius: f64,
) -> Result<Vec<f64>, MetricsError> {
    if queries.dim != database.dim && !queries.is_empty() && !database.is_empty() {
        return Err(MetricsError::DimensionMismatch { expected: database.dim, got: queries.dim });
    }
    if queries.is_empty() {
        return Err(MetricsError::Empty);
    }
    let k_max = ks.iter().copied().max().unwrap_or(0).min(database.len());
    let mut hits = alloc::vec![0usize; ks.len()];
    let mut scored: Vec<(f64, usize)> = Vec::with_capacity(database.len());
    for q in 0..queries.len() {
        let qv = queries.vector(q);
        scored.clear();
        scored.extend((0..database.len()).map(|d| (qv.iter().zip(database.vector(d)).map(|(a, b)| a * b).sum::<f64>(), d)));
        let order = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
        if k_max > 0 && k_max < scored.len() {
            scored.select_nth_unstable_by(k_max - 1, order);
        }
        let top = &mut scored[..k_max];
        top.sort_unstable_by(order);
        // Rank of the first entry within the radius.
        let first = top.iter().position(|&(_, d)| (database.positions[d] - queries.positions[q]).norm() <= radius);
        if let Some(rank) = first {
            for (h, &k) in hits.iter_mut().zip(ks) {
                if rank < k {
                    *h += 1;
                }
            }
        }
    }
    Ok(hits.into_iter().map(|h| h as f64 / queries.len() as f64).collect())
}
