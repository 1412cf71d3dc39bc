use alloc::vec::Vec;

#[allow(unused_imports)] // float methods under no_std
use nalgebra::ComplexField;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{covariance, eigen_features, sorted_eigen, CloudError, PointCloud};
use crate::geom::Vec3;

/// Plane `normal · p + offset = 0` with its inlier set.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub normal: Vec3,
    pub offset: f64,
    pub inliers: Vec<usize>,
}

impl Plane {
    pub fn distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) + self.offset
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundConfig {
    /// Neighbourhood radius for features when the scan has none.
    pub feature_radius: f64,
    /// Fraction of points taken from each end of the feature rankings.
    pub seed_fraction: f64,
    /// Seeds must also be below this verticality.
    pub max_seed_verticality: f64,
    pub min_seeds: usize,
    pub inlier_threshold: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for GroundConfig {
    fn default() -> Self {
        Self {
            feature_radius: 1.0,
            seed_fraction: 0.1,
            max_seed_verticality: 0.3,
            min_seeds: 50,
            inlier_threshold: 0.15,
            iterations: 200,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundSegmentation {
    pub plane: Plane,
    /// Scan points within the inlier threshold of the final plane.
    pub ground: Vec<usize>,
}

pub fn segment_ground(scan: &PointCloud) -> Result<GroundSegmentation, CloudError> {
    segment_ground_with(scan, &GroundConfig::default())
}

/// Seeds the ground from the most planar and least vertical points, fits a
/// plane with seed-restricted RANSAC and labels every scan point near it.
pub fn segment_ground_with(
    scan: &PointCloud,
    cfg: &GroundConfig,
) -> Result<GroundSegmentation, CloudError> {
    if scan.is_empty() {
        return Err(CloudError::EmptyCloud);
    }
    let featured;
    let scan = if scan.has_features() {
        scan
    } else {
        featured = eigen_features(scan, cfg.feature_radius)?;
        &featured
    };
    let pts = scan.points();
    let planarity = scan.planarity().expect("features");
    let verticality = scan.verticality().expect("features");

    let take = ((pts.len() as f64 * cfg.seed_fraction).ceil() as usize).clamp(1, pts.len());
    let top_planarity = ranked_value(planarity, pts.len() - take);
    let low_verticality = ranked_value(verticality, take - 1);
    let seeds: Vec<usize> = (0..pts.len())
        .filter(|&i| {
            planarity[i] >= top_planarity
                && verticality[i] <= low_verticality
                && verticality[i] < cfg.max_seed_verticality
        })
        .collect();
    if seeds.len() < cfg.min_seeds {
        return Err(CloudError::DegenerateScan { seeds: seeds.len() });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(usize, Vec3, f64)> = None;
    for _ in 0..cfg.iterations {
        let a = pts[seeds[rng.random_range(0..seeds.len())]];
        let b = pts[seeds[rng.random_range(0..seeds.len())]];
        let c = pts[seeds[rng.random_range(0..seeds.len())]];
        let n = (b - a).cross(&(c - a));
        let norm = n.norm();
        if norm < 1e-9 {
            continue;
        }
        let n = n / norm;
        let d = -n.dot(&a);
        let count = seeds
            .iter()
            .filter(|&&i| (n.dot(&pts[i]) + d).abs() < cfg.inlier_threshold)
            .count();
        if best.as_ref().is_none_or(|&(bc, _, _)| count > bc) {
            best = Some((count, n, d));
        }
    }
    let (_, n, d) = best.ok_or(CloudError::DegenerateScan { seeds: seeds.len() })?;

    // Least-squares refit on the seed inliers.
    let inliers: Vec<usize> = seeds
        .iter()
        .copied()
        .filter(|&i| (n.dot(&pts[i]) + d).abs() < cfg.inlier_threshold)
        .collect();
    let (centroid, cov) = covariance(pts, &inliers);
    let (_, vecs) = sorted_eigen(&cov);
    let mut normal = vecs[2].normalize();
    if normal.z < 0.0 {
        normal = -normal;
    }
    let offset = -normal.dot(&centroid);
    let ground: Vec<usize> = (0..pts.len())
        .filter(|&i| (normal.dot(&pts[i]) + offset).abs() < cfg.inlier_threshold)
        .collect();
    Ok(GroundSegmentation { plane: Plane { normal, offset, inliers }, ground })
}

/// Value at rank `k` in ascending order.
fn ranked_value(values: &[f64], k: usize) -> f64 {
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    sorted[k.min(sorted.len() - 1)]
}
