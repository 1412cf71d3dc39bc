use alloc::vec::Vec;

use super::{covariance, orient_up, sorted_eigen, CloudError, PointCloud};
use crate::geom::Vec3;
use crate::spatial::GridIndex;

/// Per-point covariance features over a radius neighbourhood.
///
/// With eigenvalues `l1 >= l2 >= l3`, planarity is `(l2 - l3) / l1` and
/// verticality is `1 - |n_z|` for the smallest-eigenvalue eigenvector `n`.
/// Points with fewer than three neighbours (themselves included) get
/// planarity 0, verticality 1 and an upward normal.
pub fn eigen_features(cloud: &PointCloud, radius: f64) -> Result<PointCloud, CloudError> {
    if cloud.is_empty() {
        return Err(CloudError::EmptyCloud);
    }
    if !(radius > 0.0) {
        return Err(CloudError::NonPositive("radius"));
    }
    let pts = cloud.points();
    let grid = GridIndex::new(pts, radius);
    let n = pts.len();
    let mut normals = Vec::with_capacity(n);
    let mut planarity = Vec::with_capacity(n);
    let mut verticality = Vec::with_capacity(n);
    let mut nbrs = Vec::new();
    for p in pts {
        nbrs.clear();
        grid.radius_search(pts, p, radius, &mut nbrs);
        if nbrs.len() < 3 {
            normals.push(Vec3::z());
            planarity.push(0.0);
            verticality.push(1.0);
            continue;
        }
        let (_, cov) = covariance(pts, &nbrs);
        let (l, v) = sorted_eigen(&cov);
        let normal = orient_up(v[2]);
        planarity.push(if l[0] > 0.0 { (l[1] - l[2]) / l[0] } else { 0.0 });
        verticality.push(1.0 - normal.z.abs());
        normals.push(normal);
    }
    let mut out = cloud.clone();
    out.set_features(normals, planarity, verticality)?;
    Ok(out)
}
