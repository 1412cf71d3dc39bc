//! ISS keypoints, binary shape context descriptors and RANSAC rigid fitting.

use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)] // float methods under no_std
use nalgebra::{ComplexField, Matrix3, RealField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{icp_point_to_plane, IcpConfig, Submap};
use crate::cloud::{covariance, sorted_eigen, PointCloud};
use crate::geom::{RigidTransform, Rotation3, Vec3};
use crate::solver::LoopMeasurement;
use crate::spatial::GridIndex;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopMatchConfig {
    /// Neighbourhood radius of the scatter matrix.
    pub salient_radius: f64,
    pub non_max_radius: f64,
    /// Upper bounds on `l2 / l1` and `l3 / l2`.
    pub ratio_21: f64,
    pub ratio_32: f64,
    pub min_neighbors: usize,
    /// Lower bound on the smallest eigenvalue, in square metres.
    pub min_saliency: f64,
    pub descriptor_radius: f64,
    /// Largest Hamming distance accepted for a match.
    pub max_hamming: u32,
    pub ransac_threshold: f64,
    pub ransac_iterations: usize,
    pub min_ransac_inliers: usize,
    pub seed: u64,
    pub icp: IcpConfig,
}

impl Default for LoopMatchConfig {
    fn default() -> Self {
        Self {
            salient_radius: 1.5,
            non_max_radius: 1.0,
            ratio_21: 0.85,
            ratio_32: 0.85,
            min_neighbors: 10,
            min_saliency: 0.01,
            descriptor_radius: 4.0,
            max_hamming: 24,
            ransac_threshold: 0.5,
            ransac_iterations: 20_000,
            min_ransac_inliers: 6,
            seed: 7,
            icp: IcpConfig::default(),
        }
    }
}

/// Indices of salient points after non-maximum suppression on the smallest
/// scatter eigenvalue.
pub fn iss_keypoints(cloud: &PointCloud, cfg: &LoopMatchConfig) -> Vec<usize> {
    let pts = cloud.points();
    if pts.is_empty() {
        return Vec::new();
    }
    let grid = GridIndex::new(pts, cfg.salient_radius);
    let mut saliency = alloc::vec![f64::NEG_INFINITY; pts.len()];
    let mut nbrs = Vec::new();
    for (i, p) in pts.iter().enumerate() {
        nbrs.clear();
        grid.radius_search(pts, p, cfg.salient_radius, &mut nbrs);
        if nbrs.len() < cfg.min_neighbors {
            continue;
        }
        let (_, cov) = covariance(pts, &nbrs);
        let (l, _) = sorted_eigen(&cov);
        if l[0] <= 0.0 || l[1] <= 0.0 {
            continue;
        }
        if l[1] / l[0] < cfg.ratio_21 && l[2] / l[1] < cfg.ratio_32 && l[2] >= cfg.min_saliency {
            saliency[i] = l[2];
        }
    }
    let mut out = Vec::new();
    for (i, p) in pts.iter().enumerate() {
        if saliency[i] == f64::NEG_INFINITY {
            continue;
        }
        nbrs.clear();
        grid.radius_search(pts, p, cfg.non_max_radius, &mut nbrs);
        let is_max = nbrs.iter().all(|&j| j == i || saliency[j] < saliency[i] || (saliency[j] == saliency[i] && j > i));
        if is_max {
            out.push(i);
        }
    }
    out
}

/// 64-bit binary shape context: 2 radial x 8 azimuth x 4 elevation bins in
/// a local eigenvector frame, one bit per bin set when its count exceeds the
/// median count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Descriptor(pub u64);

impl Descriptor {
    pub fn hamming(&self, other: &Descriptor) -> u32 {
        (self.0 ^ other.0).count_ones()
    }
}

/// Eigenvector frame of the neighbourhood with signs chosen so neighbours
/// lie mostly on the positive side of the first and third axes.
fn local_frame(pts: &[Vec3], nbrs: &[usize], center: &Vec3) -> Option<Matrix3<f64>> {
    if nbrs.len() < 5 {
        return None;
    }
    let (_, cov) = covariance(pts, nbrs);
    let (_, v) = sorted_eigen(&cov);
    let orient = |e: Vec3| {
        let s: f64 = nbrs.iter().map(|&k| (pts[k] - center).dot(&e)).sum();
        if s < 0.0 {
            -e
        } else {
            e
        }
    };
    let x = orient(v[0]);
    let z = orient(v[2]);
    let y = z.cross(&x);
    Some(Matrix3::from_columns(&[x, y, z]))
}

pub fn binary_shape_context(pts: &[Vec3], grid: &GridIndex, center: &Vec3, radius: f64) -> Option<Descriptor> {
    let mut nbrs = Vec::new();
    grid.radius_search(pts, center, radius, &mut nbrs);
    let frame = local_frame(pts, &nbrs, center)?;
    let mut counts = [0u32; 64];
    for &k in &nbrs {
        let d = frame.transpose() * (pts[k] - center);
        let r = d.norm();
        if r < 1e-9 {
            continue;
        }
        let radial = usize::from(r >= radius * 0.5);
        let az = ((d.y.atan2(d.x) + PI) / (2.0 * PI) * 8.0).floor().clamp(0.0, 7.0) as usize;
        let el = (((d.z / r).clamp(-1.0, 1.0).asin() + PI / 2.0) / PI * 4.0).floor().clamp(0.0, 3.0) as usize;
        counts[(radial * 8 + az) * 4 + el] += 1;
    }
    let mut sorted = counts;
    sorted.sort_unstable();
    let median = (sorted[31] + sorted[32]) as f64 * 0.5;
    let bits = counts.iter().enumerate().fold(0u64, |acc, (b, &c)| if c as f64 > median { acc | (1 << b) } else { acc });
    Some(Descriptor(bits))
}

/// Least-squares rigid transform with `T * src ~ dst`.
pub fn fit_rigid(src: &[Vec3], dst: &[Vec3]) -> Option<RigidTransform> {
    if src.len() < 3 || src.len() != dst.len() {
        return None;
    }
    let n = src.len() as f64;
    let cs = src.iter().fold(Vec3::zeros(), |a, p| a + p) / n;
    let cd = dst.iter().fold(Vec3::zeros(), |a, p| a + p) / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s - cs) * (d - cd).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let mut fix = Matrix3::identity();
    if (vt.transpose() * u.transpose()).determinant() < 0.0 {
        fix[(2, 2)] = -1.0;
    }
    let r = vt.transpose() * fix * u.transpose();
    if !r.iter().all(|x| x.is_finite()) {
        return None;
    }
    let rotation = Rotation3::project(&r);
    Some(RigidTransform::new(rotation, cd - rotation.rotate(&cs)))
}

/// RANSAC over putative correspondences; returns the refit transform and
/// the inlier indices into the pairs.
pub fn ransac_rigid<R: Rng>(
    src: &[Vec3],
    dst: &[Vec3],
    threshold: f64,
    iterations: usize,
    rng: &mut R,
) -> Option<(RigidTransform, Vec<usize>)> {
    let n = src.len();
    if n < 3 || n != dst.len() {
        return None;
    }
    let inliers_of = |t: &RigidTransform| -> Vec<usize> {
        (0..n).filter(|&k| (t.transform_point(&src[k]) - dst[k]).norm() < threshold).collect()
    };
    let mut best: Vec<usize> = Vec::new();
    for _ in 0..iterations {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        let c = rng.random_range(0..n);
        if a == b || b == c || a == c {
            continue;
        }
        // Rigid motions preserve pairwise distances.
        let consistent = [(a, b), (b, c), (a, c)].iter().all(|&(i, j)| {
            let ds = (src[i] - src[j]).norm();
            let dd = (dst[i] - dst[j]).norm();
            (ds - dd).abs() < 2.0 * threshold && ds > threshold
        });
        if !consistent {
            continue;
        }
        let Some(t) = fit_rigid(&[src[a], src[b], src[c]], &[dst[a], dst[b], dst[c]]) else { continue };
        let inl = inliers_of(&t);
        if inl.len() > best.len() {
            best = inl;
        }
    }
    if best.len() < 3 {
        return None;
    }
    let pick = |v: &[Vec3], idx: &[usize]| idx.iter().map(|&k| v[k]).collect::<Vec<_>>();
    let mut t = fit_rigid(&pick(src, &best), &pick(dst, &best))?;
    // One re-selection after the refit.
    let again = inliers_of(&t);
    if again.len() >= best.len() {
        t = fit_rigid(&pick(src, &again), &pick(dst, &again)).unwrap_or(t);
        best = again;
    }
    Some((t, best))
}

struct Described {
    positions: Vec<Vec3>,
    descriptors: Vec<Descriptor>,
}

fn describe(cloud: &PointCloud, cfg: &LoopMatchConfig) -> Described {
    let pts = cloud.points();
    let grid = GridIndex::new(pts, cfg.descriptor_radius);
    let mut positions = Vec::new();
    let mut descriptors = Vec::new();
    for k in iss_keypoints(cloud, cfg) {
        if let Some(d) = binary_shape_context(pts, &grid, &pts[k], cfg.descriptor_radius) {
            positions.push(pts[k]);
            descriptors.push(d);
        }
    }
    Described { positions, descriptors }
}

/// Mutual nearest neighbours in Hamming distance, as `(index in a, index in b)`.
fn mutual_matches(a: &[Descriptor], b: &[Descriptor], max_hamming: u32) -> Vec<(usize, usize)> {
    let nearest = |q: &Descriptor, set: &[Descriptor]| {
        set.iter().enumerate().min_by_key(|(k, d)| (q.hamming(d), *k)).map(|(k, d)| (k, q.hamming(d)))
    };
    let mut out = Vec::new();
    for (i, da) in a.iter().enumerate() {
        let Some((j, dist)) = nearest(da, b) else { continue };
        if dist > max_hamming {
            continue;
        }
        if nearest(&b[j], a).map(|(k, _)| k) == Some(i) {
            out.push((i, j));
        }
    }
    out
}

/// Relative transform between two overlapping submaps, anchored at their
/// states: the measurement maps `b`'s anchor frame into `a`'s.
pub fn match_loop_pair(a: &Submap, b: &Submap, cfg: &LoopMatchConfig) -> Option<LoopMeasurement> {
    let la = a.local_cloud();
    let lb = b.local_cloud();
    let da = describe(&la, cfg);
    let db = describe(&lb, cfg);
    let matches = mutual_matches(&da.descriptors, &db.descriptors, cfg.max_hamming);
    if matches.len() < cfg.min_ransac_inliers {
        return None;
    }
    let src: Vec<Vec3> = matches.iter().map(|&(_, j)| db.positions[j]).collect();
    let dst: Vec<Vec3> = matches.iter().map(|&(i, _)| da.positions[i]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ ((a.id as u64) << 32) ^ b.id as u64);
    let (coarse, inliers) = ransac_rigid(&src, &dst, cfg.ransac_threshold, cfg.ransac_iterations, &mut rng)?;
    if inliers.len() < cfg.min_ransac_inliers {
        return None;
    }
    let refined = icp_point_to_plane(&lb, &la, &coarse, &cfg.icp).ok()?;
    Some(LoopMeasurement {
        i: a.anchor,
        j: b.anchor,
        relative: refined.transform,
        inlier_fraction: refined.inlier_fraction,
    })
}

#[cfg(test)]
mod tests {
    use super::super::tests::city_submap;
    use super::*;
    use alloc::vec;

    fn err(a: &RigidTransform, b: &RigidTransform) -> (f64, f64) {
        let d = a.between(b);
        (d.translation.norm(), d.rotation.angle().to_degrees())
    }

    #[test]
    fn kabsch_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = RigidTransform::new(Rotation3::from_euler_xyz(0.3, -0.2, 1.1), Vec3::new(1.0, -2.0, 0.5));
        let src: Vec<Vec3> = (0..20).map(|_| Vec3::new(rng.random(), rng.random(), rng.random()) * 10.0).collect();
        let dst: Vec<Vec3> = src.iter().map(|p| t.transform_point(p)).collect();
        let (dt, dr) = err(&fit_rigid(&src, &dst).unwrap(), &t);
        assert!(dt < 1e-9 && dr < 1e-9);
        // With 40% gross outliers.
        let mut noisy = dst.clone();
        for p in noisy.iter_mut().take(8) {
            *p += Vec3::new(5.0, -3.0, 2.0);
        }
        let (fit, inl) = ransac_rigid(&src, &noisy, 0.1, 500, &mut rng).unwrap();
        assert_eq!(inl, (8..20).collect::<Vec<_>>());
        assert!(err(&fit, &t).0 < 1e-9);
    }

    #[test]
    fn descriptor_is_rotation_invariant() {
        let c = city_submap(5);
        let t = RigidTransform::new(Rotation3::from_euler_xyz(0.1, 0.05, 0.8), Vec3::new(3.0, 1.0, 0.0));
        let moved = c.transformed(&t);
        let cfg = LoopMatchConfig::default();
        let ka = iss_keypoints(&c, &cfg);
        let kb = iss_keypoints(&moved, &cfg);
        assert!(ka.len() >= 10, "{}", ka.len());
        assert_eq!(ka, kb);
        let ga = GridIndex::new(c.points(), 4.0);
        let gb = GridIndex::new(moved.points(), 4.0);
        let mut same = 0;
        for &k in &ka {
            let a = binary_shape_context(c.points(), &ga, &c.points()[k], 4.0);
            let b = binary_shape_context(moved.points(), &gb, &moved.points()[k], 4.0);
            if a == b {
                same += 1;
            }
        }
        assert!(same * 10 >= ka.len() * 9, "{same}/{}", ka.len());
    }

    fn submap_pair(rel: &RigidTransform) -> (Submap, Submap) {
        let c = city_submap(6);
        let a = Submap::new(0, c.clone(), 2, RigidTransform::identity(), (0.0, 30.0)).unwrap();
        // Same geometry, anchored at a pose displaced by `rel`.
        let b = Submap::new(1, c, 40, *rel, (300.0, 330.0)).unwrap();
        let _ = vec![0];
        (a, b)
    }

    #[test]
    fn recovers_relative_transform() {
        // b's local frame is a's frame moved by `rel`, so the measurement is `rel`.
        let rel = RigidTransform::new(Rotation3::about_z(10f64.to_radians()), Vec3::new(0.6, 0.8, 0.0));
        let (a, b) = submap_pair(&rel);
        let m = match_loop_pair(&a, &b, &LoopMatchConfig::default()).unwrap();
        assert_eq!((m.i, m.j), (2, 40));
        let (dt, dr) = err(&m.relative, &rel);
        assert!(dt < 0.05 && dr < 0.3, "{dt} {dr}");

        let (a, b) = submap_pair(&RigidTransform::identity());
        let m = match_loop_pair(&a, &b, &LoopMatchConfig::default()).unwrap();
        let (dt, dr) = err(&m.relative, &RigidTransform::identity());
        assert!(dt < 1e-6 && dr < 1e-6, "{dt} {dr}");
    }

    #[test]
    fn disjoint_geometry_is_rejected() {
        let c = city_submap(7);
        let a = Submap::new(0, c.clone(), 0, RigidTransform::identity(), (0.0, 30.0)).unwrap();
        // A flat slab shares the footprint but no structure.
        let pts: Vec<Vec3> = (0..80).flat_map(|i| (0..80).map(move |j| Vec3::new(i as f64 - 40.0, j as f64 - 40.0, 0.0))).collect();
        let flat = crate::cloud::eigen_features(&PointCloud::new(pts), 1.5).unwrap();
        let b = Submap::new(1, flat, 9, RigidTransform::identity(), (0.0, 30.0)).unwrap();
        assert!(match_loop_pair(&a, &b, &LoopMatchConfig::default()).is_none());
    }
}
