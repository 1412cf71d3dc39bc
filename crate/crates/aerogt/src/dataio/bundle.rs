use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use aerogt_core::cloud::PointCloud;
use aerogt_core::geom::{Mat3, RigidTransform, Rotation3, Vec3};
use aerogt_core::sim::parse_key_values;

use super::pose::rigid_from_row_major;
use super::{
    read_las_points, read_patch_index, read_pose_file, tile_als, tile_of, write_las_points, write_patch_index, write_pose_file, CameraModel,
    DataError, LasFormat, PatchEntry,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub camera: CameraModel,
    /// LiDAR frame to camera frame.
    pub extrinsic: RigidTransform,
}

impl Calibration {
    /// Forward-looking camera on a LiDAR with x forward, z up.
    pub fn forward(camera: CameraModel) -> Self {
        let r = Mat3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0);
        Self { camera, extrinsic: RigidTransform::new(Rotation3::from_matrix_unchecked(r), Vec3::zeros()) }
    }
}

/// `key = value` lines: fx, fy, cx, cy, width, height and a 16-value
/// row-major `extrinsic`.
pub fn read_calibration(path: &Path) -> Result<Calibration, DataError> {
    let text = std::fs::read_to_string(path).map_err(DataError::io(path))?;
    let bad = |what: &str| DataError::Calibration(what.to_string());
    let kv = parse_key_values(&text).map_err(|e| DataError::Calibration(e.to_string()))?;
    let num = |k: &str| -> Result<f64, DataError> { kv.raw(k).and_then(|v| v.parse().ok()).ok_or_else(|| bad(k)) };
    let size = |k: &str| -> Result<u32, DataError> { kv.raw(k).and_then(|v| v.parse().ok()).ok_or_else(|| bad(k)) };
    let camera = CameraModel::pinhole(num("fx")?, num("fy")?, num("cx")?, num("cy")?, size("width")?, size("height")?)?;
    let values: Vec<f64> = kv
        .raw("extrinsic")
        .ok_or_else(|| bad("extrinsic"))?
        .split_whitespace()
        .map(str::parse)
        .collect::<Result<_, _>>()
        .map_err(|_| bad("extrinsic"))?;
    if values.len() != 16 {
        return Err(bad("extrinsic needs 16 values"));
    }
    let extrinsic = rigid_from_row_major(&values).ok_or_else(|| bad("extrinsic is not rigid"))?;
    Ok(Calibration { camera, extrinsic })
}

pub fn write_calibration(path: &Path, c: &Calibration) -> Result<(), DataError> {
    let k = &c.camera.intrinsics;
    let mut s = String::new();
    let _ = writeln!(s, "fx = {}\nfy = {}\ncx = {}\ncy = {}", k[(0, 0)], k[(1, 1)], k[(0, 2)], k[(1, 2)]);
    let _ = writeln!(s, "width = {}\nheight = {}", c.camera.width, c.camera.height);
    let m = c.extrinsic.to_matrix();
    let row: Vec<String> = (0..16).map(|i| format!("{}", m[(i / 4, i % 4)])).collect();
    let _ = writeln!(s, "extrinsic = {}", row.join(" "));
    std::fs::write(path, s).map_err(DataError::io(path))
}

/// A dataset directory:
///
/// ```text
/// root/patches/*.las   ALS tiles
/// root/images/         image files (names only)
/// root/poses.txt       one LiDAR pose per patch index row
/// root/patch_index.txt
/// root/calibration.txt
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBundle {
    pub root: PathBuf,
    pub entries: Vec<PatchEntry>,
    pub poses: Vec<RigidTransform>,
    pub calibration: Calibration,
}

impl SequenceBundle {
    pub const PATCHES: &'static str = "patches";
    pub const IMAGES: &'static str = "images";
    pub const POSES: &'static str = "poses.txt";
    pub const INDEX: &'static str = "patch_index.txt";
    pub const CALIBRATION: &'static str = "calibration.txt";

    pub fn load(root: &Path) -> Result<Self, DataError> {
        let entries = read_patch_index(&root.join(Self::INDEX))?;
        let poses = read_pose_file(&root.join(Self::POSES))?;
        let calibration = read_calibration(&root.join(Self::CALIBRATION))?;
        for e in &entries {
            let p = root.join(Self::PATCHES).join(&e.patch);
            if !p.is_file() {
                return Err(DataError::MissingPatch(p));
            }
        }
        if poses.len() != entries.len() {
            return Err(DataError::PoseCount { poses: poses.len(), entries: entries.len() });
        }
        Ok(Self { root: root.to_path_buf(), entries, poses, calibration })
    }

    pub fn patch_path(&self, entry: &PatchEntry) -> PathBuf {
        self.root.join(Self::PATCHES).join(&entry.patch)
    }

    pub fn load_patch(&self, entry: &PatchEntry) -> Result<PointCloud, DataError> {
        read_las_points(&self.patch_path(entry))
    }
}

impl SequenceBundle {
    /// Writes a bundle for a sequence: one image per pose, each paired with
    /// the ALS tile under the sensor. Poses outside the ALS are skipped.
    pub fn write(root: &Path, als: &[Vec3], poses: &[RigidTransform], calibration: &Calibration, side: f64) -> Result<Self, DataError> {
        let patches = root.join(Self::PATCHES);
        let images = root.join(Self::IMAGES);
        for dir in [&patches, &images] {
            std::fs::create_dir_all(dir).map_err(DataError::io(dir))?;
        }
        let tiles = tile_als(als, side);
        let by_cell: std::collections::BTreeMap<(i64, i64), &super::Tile> = tiles.iter().map(|t| ((t.ix, t.iy), t)).collect();
        let mut entries = Vec::new();
        let mut kept = Vec::new();
        let mut written = std::collections::BTreeSet::new();
        for (k, pose) in poses.iter().enumerate() {
            let Some(tile) = by_cell.get(&tile_of(&pose.translation, side)) else {
                continue;
            };
            let patch = format!("{}.las", tile.name);
            if written.insert(patch.clone()) {
                write_las_points(&patches.join(&patch), &tile.points, LasFormat::default())?;
            }
            entries.push(PatchEntry { image: format!("frame_{k:05}.ppm"), patch, center: tile.center });
            kept.push(*pose);
        }
        write_patch_index(&root.join(Self::INDEX), &entries)?;
        write_pose_file(&root.join(Self::POSES), &kept)?;
        write_calibration(&root.join(Self::CALIBRATION), calibration)?;
        Ok(Self { root: root.to_path_buf(), entries, poses: kept, calibration: *calibration })
    }
}
