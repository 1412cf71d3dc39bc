use alloc::vec::Vec;

use super::{Label, PointCloud};
use crate::geom::Vec3;
use crate::spatial::{voxel_key, VoxelKey};

/// One centroid per occupied voxel, in voxel-key order. Labels survive as the
/// majority label of each voxel (ties go to the earlier [`Label`] variant);
/// other attributes are dropped.
pub fn voxel_downsample(cloud: &PointCloud, resolution: f64) -> PointCloud {
    assert!(resolution > 0.0, "resolution must be positive");
    let pts = cloud.points();
    let mut keyed: Vec<(VoxelKey, usize)> =
        pts.iter().enumerate().map(|(i, p)| (voxel_key(p, resolution), i)).collect();
    keyed.sort_unstable();

    let labels = cloud.labels();
    let mut out_pts = Vec::new();
    let mut out_labels = Vec::new();
    let mut start = 0;
    while start < keyed.len() {
        let key = keyed[start].0;
        let mut end = start;
        let mut sum = Vec3::zeros();
        let mut votes = [0usize; 4];
        while end < keyed.len() && keyed[end].0 == key {
            let i = keyed[end].1;
            sum += pts[i];
            if let Some(l) = labels {
                votes[l[i] as usize] += 1;
            }
            end += 1;
        }
        out_pts.push(sum / (end - start) as f64);
        if labels.is_some() {
            let best = (0..4).max_by(|&a, &b| votes[a].cmp(&votes[b]).then(b.cmp(&a))).unwrap();
            out_labels.push([Label::Ground, Label::Roof, Label::Facade, Label::Other][best]);
        }
        start = end;
    }
    match labels {
        Some(_) => PointCloud::labeled(out_pts, out_labels).expect("one label per voxel"),
        None => PointCloud::new(out_pts),
    }
}
