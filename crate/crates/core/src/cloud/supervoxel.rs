use alloc::vec::Vec;

#[allow(unused_imports)] // float methods under no_std
use nalgebra::ComplexField;

use super::{covariance, eigen_features, orient_up, sorted_eigen, CloudError, PointCloud};
use crate::geom::Vec3;
use crate::spatial::GridIndex;

/// A connected group of points with its aggregate shape features.
#[derive(Debug, Clone, PartialEq)]
pub struct Supervoxel {
    /// Sorted indices into the source cloud; never empty.
    pub members: Vec<usize>,
    pub centroid: Vec3,
    pub normal: Vec3,
    pub planarity: f64,
    pub verticality: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupervoxelConfig {
    pub seed_resolution: f64,
    /// Feature radius used when the cloud carries no features.
    pub feature_radius: f64,
    /// Cost per metre of point-to-seed distance.
    pub spatial_weight: f64,
    /// Cost of a fully orthogonal normal, scaled by `1 - |n · n_seed|`.
    pub normal_weight: f64,
    /// Points closer than this link their supervoxels as neighbours.
    pub adjacency_radius: f64,
    pub merge_distance: f64,
    pub merge_angle_deg: f64,
}

impl SupervoxelConfig {
    pub fn with_resolution(seed_resolution: f64) -> Self {
        Self {
            seed_resolution,
            feature_radius: 1.0,
            spatial_weight: 1.0,
            normal_weight: 0.5,
            adjacency_radius: seed_resolution,
            merge_distance: 0.2,
            merge_angle_deg: 10.0,
        }
    }
}

pub fn supervoxel_segment(cloud: &PointCloud, seed_resolution: f64) -> Result<Vec<Supervoxel>, CloudError> {
    supervoxel_segment_with(cloud, &SupervoxelConfig::with_resolution(seed_resolution))
}

/// Over-segments into supervoxels, then merges neighbours whose planes agree.
pub fn supervoxel_segment_with(
    cloud: &PointCloud,
    cfg: &SupervoxelConfig,
) -> Result<Vec<Supervoxel>, CloudError> {
    let featured;
    let cloud = if cloud.has_features() {
        cloud
    } else {
        if cloud.is_empty() {
            return Err(CloudError::EmptyCloud);
        }
        featured = eigen_features(cloud, cfg.feature_radius)?;
        &featured
    };
    let (assignment, voxels) = assign(cloud, cfg)?;
    let n_sv = voxels.len();

    let cos_limit = cfg.merge_angle_deg.to_radians().cos();
    let mut edges = adjacency(cloud.points(), &assignment, cfg.adjacency_radius);
    edges.sort_unstable();
    let mut uf = UnionFind::new(n_sv);
    for (a, b) in edges {
        let (sa, sb) = (&voxels[a], &voxels[b]);
        let aligned = sa.normal.dot(&sb.normal).abs() >= cos_limit;
        let coplanar = sa.normal.dot(&(sb.centroid - sa.centroid)).abs() < cfg.merge_distance
            && sb.normal.dot(&(sa.centroid - sb.centroid)).abs() < cfg.merge_distance;
        if aligned && coplanar {
            uf.union(a, b);
        }
    }

    let mut groups: Vec<Vec<usize>> = alloc::vec![Vec::new(); n_sv];
    for (i, &sv) in assignment.iter().enumerate() {
        groups[uf.find(sv)].push(i);
    }
    let mut regions: Vec<Supervoxel> = groups
        .into_iter()
        .filter(|g| !g.is_empty())
        .map(|members| {
            // Region normal: member-weighted mean of constituent normals.
            let mut normal = Vec3::zeros();
            let reference = voxels[assignment[members[0]]].normal;
            let mut seen = alloc::vec![false; n_sv];
            for &m in &members {
                let sv = assignment[m];
                if !seen[sv] {
                    seen[sv] = true;
                    let n = voxels[sv].normal;
                    let signed = if n.dot(&reference) < 0.0 { -n } else { n };
                    normal += signed * voxels[sv].members.len() as f64;
                }
            }
            summarize(cloud, members, Some(orient_up(normal.normalize())))
        })
        .collect();
    regions.sort_by_key(|r| r.members[0]);
    Ok(regions)
}

/// Supervoxels before merging.
pub fn oversegment(cloud: &PointCloud, cfg: &SupervoxelConfig) -> Result<Vec<Supervoxel>, CloudError> {
    let featured;
    let cloud = if cloud.has_features() {
        cloud
    } else {
        if cloud.is_empty() {
            return Err(CloudError::EmptyCloud);
        }
        featured = eigen_features(cloud, cfg.feature_radius)?;
        &featured
    };
    Ok(assign(cloud, cfg)?.1)
}

/// Seeds one point per occupied seed voxel (the most planar one) and assigns
/// every point to the seed minimizing spatial plus normal cost.
fn assign(cloud: &PointCloud, cfg: &SupervoxelConfig) -> Result<(Vec<usize>, Vec<Supervoxel>), CloudError> {
    if cloud.is_empty() {
        return Err(CloudError::EmptyCloud);
    }
    if !(cfg.seed_resolution > 0.0) {
        return Err(CloudError::NonPositive("seed_resolution"));
    }
    let pts = cloud.points();
    let normals = cloud.normals().expect("features");
    let planarity = cloud.planarity().expect("features");

    let grid = GridIndex::new(pts, cfg.seed_resolution);
    let seeds: Vec<usize> = grid
        .keys()
        .iter()
        .map(|key| {
            grid.members(key)
                .max_by(|&a, &b| planarity[a].total_cmp(&planarity[b]).then(b.cmp(&a)))
                .expect("occupied voxel")
        })
        .collect();
    let seed_pts: Vec<Vec3> = seeds.iter().map(|&s| pts[s]).collect();
    let seed_grid = GridIndex::new(&seed_pts, cfg.seed_resolution);

    let reach = 2.0 * cfg.seed_resolution;
    let mut assignment = Vec::with_capacity(pts.len());
    let mut cand = Vec::new();
    for (i, p) in pts.iter().enumerate() {
        cand.clear();
        seed_grid.radius_search(&seed_pts, p, reach, &mut cand);
        let best = cand
            .iter()
            .map(|&k| {
                let cost = cfg.spatial_weight * (seed_pts[k] - p).norm()
                    + cfg.normal_weight * (1.0 - normals[i].dot(&normals[seeds[k]]).abs());
                (k, cost)
            })
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .map(|(k, _)| k)
            .expect("own seed voxel is always within reach");
        assignment.push(best);
    }

    let mut members: Vec<Vec<usize>> = alloc::vec![Vec::new(); seeds.len()];
    for (i, &s) in assignment.iter().enumerate() {
        members[s].push(i);
    }
    // A seed can lose its own point to a cheaper seed; drop empty supervoxels.
    let mut remap = alloc::vec![usize::MAX; seeds.len()];
    let mut voxels = Vec::new();
    for (s, m) in members.into_iter().enumerate() {
        if !m.is_empty() {
            remap[s] = voxels.len();
            voxels.push(summarize(cloud, m, None));
        }
    }
    for a in assignment.iter_mut() {
        *a = remap[*a];
    }
    Ok((assignment, voxels))
}

/// Aggregates members: centroid, normal (plane fit unless given) and mean
/// point features.
fn summarize(cloud: &PointCloud, members: Vec<usize>, normal: Option<Vec3>) -> Supervoxel {
    let pts = cloud.points();
    let normals = cloud.normals().expect("features");
    let (centroid, cov) = covariance(pts, &members);
    let normal = normal.unwrap_or_else(|| {
        if members.len() >= 3 {
            let (vals, vecs) = sorted_eigen(&cov);
            if vals[1] > 1e-12 {
                return orient_up(vecs[2]);
            }
        }
        let sum = members.iter().fold(Vec3::zeros(), |acc, &m| acc + orient_up(normals[m]));
        orient_up(sum.normalize())
    });
    let n = members.len() as f64;
    let planarity = members.iter().map(|&m| cloud.planarity().unwrap()[m]).sum::<f64>() / n;
    let verticality = members.iter().map(|&m| cloud.verticality().unwrap()[m]).sum::<f64>() / n;
    Supervoxel { members, centroid, normal, planarity, verticality }
}

fn adjacency(pts: &[Vec3], assignment: &[usize], radius: f64) -> Vec<(usize, usize)> {
    let grid = GridIndex::new(pts, radius);
    let mut edges = hashbrown::HashSet::with_hasher(rustc_hash::FxBuildHasher);
    let mut nbrs = Vec::new();
    for (i, p) in pts.iter().enumerate() {
        nbrs.clear();
        grid.radius_search(pts, p, radius, &mut nbrs);
        for &j in &nbrs {
            let (a, b) = (assignment[i], assignment[j]);
            if a < b {
                edges.insert((a, b));
            }
        }
    }
    edges.into_iter().collect()
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_plane(nx: usize, ny: usize, step: f64, f: impl Fn(f64, f64) -> Vec3) -> Vec<Vec3> {
        (0..nx)
            .flat_map(|i| (0..ny).map(move |j| (i as f64 * step, j as f64 * step)))
            .map(|(u, v)| f(u, v))
            .collect()
    }

    fn check_partition(regions: &[Supervoxel], n: usize) {
        let mut owner = alloc::vec![0usize; n];
        for r in regions {
            assert!(!r.members.is_empty());
            for &m in &r.members {
                owner[m] += 1;
            }
        }
        assert!(owner.iter().all(|&c| c == 1));
    }

    #[test]
    fn single_plane_merges_to_one_region() {
        let pts = grid_plane(40, 40, 0.25, |u, v| Vec3::new(u, v, 0.0));
        let n = pts.len();
        let regions = supervoxel_segment(&PointCloud::new(pts), 1.0).unwrap();
        assert_eq!(regions.len(), 1);
        check_partition(&regions, n);
    }

    #[test]
    fn parallel_planes_stay_separate() {
        let mut pts = grid_plane(30, 30, 0.25, |u, v| Vec3::new(u, v, 0.0));
        pts.extend(grid_plane(30, 30, 0.25, |u, v| Vec3::new(u, v, 4.0)));
        let n = pts.len();
        let regions = supervoxel_segment(&PointCloud::new(pts), 1.0).unwrap();
        assert_eq!(regions.len(), 2);
        check_partition(&regions, n);
    }

    #[test]
    fn floor_and_wall_do_not_merge() {
        let mut pts = grid_plane(40, 40, 0.25, |u, v| Vec3::new(u, v, 0.0));
        pts.extend(grid_plane(40, 24, 0.25, |u, v| Vec3::new(0.0, u, v + 0.25)));
        let n = pts.len();
        let regions = supervoxel_segment(&PointCloud::new(pts), 1.0).unwrap();
        check_partition(&regions, n);
        let big: Vec<&Supervoxel> = regions.iter().filter(|r| r.members.len() > 50).collect();
        assert_eq!(regions.len(), 2, "sizes {:?}", regions.iter().map(|r| r.members.len()).collect::<Vec<_>>());
        assert_eq!(big.len(), 2);
    }

    #[test]
    fn empty_cloud_is_rejected() {
        assert_eq!(supervoxel_segment(&PointCloud::default(), 1.0), Err(CloudError::EmptyCloud));
    }
}
