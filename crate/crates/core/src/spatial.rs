//! Uniform voxel hash for radius and nearest-neighbour queries.

use alloc::vec::Vec;

#[allow(unused_imports)] // float methods under no_std
use nalgebra::ComplexField;

use hashbrown::HashMap;
use rustc_hash::FxBuildHasher;

use crate::geom::Vec3;

pub type VoxelKey = (i32, i32, i32);

pub fn voxel_key(p: &Vec3, cell: f64) -> VoxelKey {
    (
        (p.x / cell).floor() as i32,
        (p.y / cell).floor() as i32,
        (p.z / cell).floor() as i32,
    )
}

/// Points bucketed by voxel. Buckets are contiguous slices of one index array.
#[derive(Debug, Clone)]
pub struct GridIndex {
    cell: f64,
    order: Vec<u32>,
    buckets: HashMap<VoxelKey, (u32, u32), FxBuildHasher>,
}

impl GridIndex {
    pub fn new(points: &[Vec3], cell: f64) -> Self {
        assert!(cell > 0.0, "cell size must be positive");
        let mut keyed: Vec<(VoxelKey, u32)> =
            points.iter().enumerate().map(|(i, p)| (voxel_key(p, cell), i as u32)).collect();
        keyed.sort_unstable();
        let mut buckets = HashMap::with_capacity_and_hasher(keyed.len() / 4 + 1, FxBuildHasher);
        let mut start = 0usize;
        while start < keyed.len() {
            let key = keyed[start].0;
            let mut end = start + 1;
            while end < keyed.len() && keyed[end].0 == key {
                end += 1;
            }
            buckets.insert(key, (start as u32, (end - start) as u32));
            start = end;
        }
        let order = keyed.into_iter().map(|(_, i)| i).collect();
        Self { cell, order, buckets }
    }

    pub fn cell(&self) -> f64 {
        self.cell
    }

    fn bucket(&self, key: &VoxelKey) -> &[u32] {
        match self.buckets.get(key) {
            Some(&(s, n)) => &self.order[s as usize..(s + n) as usize],
            None => &[],
        }
    }

    /// Appends to `out` the indices of all points within `radius` of `q`.
    pub fn radius_search(&self, points: &[Vec3], q: &Vec3, radius: f64, out: &mut Vec<usize>) {
        let r2 = radius * radius;
        let reach = (radius / self.cell).ceil() as i32;
        let (cx, cy, cz) = voxel_key(q, self.cell);
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    for &i in self.bucket(&(cx + dx, cy + dy, cz + dz)) {
                        if (points[i as usize] - q).norm_squared() <= r2 {
                            out.push(i as usize);
                        }
                    }
                }
            }
        }
    }

    /// Nearest point within `max_dist`, as `(index, squared distance)`.
    /// Ties resolve to the lowest index.
    pub fn nearest(&self, points: &[Vec3], q: &Vec3, max_dist: f64) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        let reach = (max_dist / self.cell).ceil() as i32;
        let (cx, cy, cz) = voxel_key(q, self.cell);
        let limit = max_dist * max_dist;
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    for &i in self.bucket(&(cx + dx, cy + dy, cz + dz)) {
                        let d2 = (points[i as usize] - q).norm_squared();
                        if d2 > limit {
                            continue;
                        }
                        let better = match best {
                            None => true,
                            Some((bi, bd)) => d2 < bd || (d2 == bd && (i as usize) < bi),
                        };
                        if better {
                            best = Some((i as usize, d2));
                        }
                    }
                }
            }
        }
        best
    }

    /// Occupied voxel keys in sorted order.
    pub fn keys(&self) -> Vec<VoxelKey> {
        let mut k: Vec<VoxelKey> = self.buckets.keys().copied().collect();
        k.sort_unstable();
        k
    }

    /// Indices in the voxel `key`.
    pub fn members(&self, key: &VoxelKey) -> impl Iterator<Item = usize> + '_ {
        self.bucket(key).iter().map(|&i| i as usize)
    }
}
