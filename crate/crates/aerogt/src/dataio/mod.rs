//! On-disk dataset formats: pose files, LAS tiles, the patch index,
//! camera calibration and depth overlays.

use std::path::PathBuf;

mod bundle;
mod camera;
mod las;
mod patch_index;
mod pose;
mod tiles;

pub use bundle::{read_calibration, write_calibration, Calibration, SequenceBundle};
pub use camera::{project_als_to_image, render_depth_overlay, write_ppm, CameraModel, DepthImage, Projection};
pub use las::{encode_las, parse_las, read_las_points, write_las_points, LasFormat};
pub use patch_index::{format_patch_index, parse_patch_index, read_patch_index, write_patch_index, PatchEntry};
pub(crate) use pose::rigid_from_row_major;
pub use pose::{format_pose_file, parse_pose_file, read_pose_file, write_pose_file};
pub use tiles::{tile_als, tile_name, tile_of, Tile, TILE_SIDE};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {0}: malformed")]
    MalformedLine(usize),
    #[error("line {0}: not a rigid transform")]
    NonRigidMatrix(usize),
    #[error("not a LAS file (bad magic)")]
    BadMagic,
    #[error("unsupported LAS point format {0}")]
    UnsupportedFormat(u8),
    #[error("unsupported LAS version {0}.{1}")]
    UnsupportedVersion(u8, u8),
    #[error("coordinate span exceeds the LAS integer range at a 1 mm quantum")]
    CoordinateRange,
    #[error("LAS file is truncated")]
    TruncatedFile,
    #[error("patch file {0} is missing")]
    MissingPatch(PathBuf),
    #[error("calibration: {0}")]
    Calibration(String),
    #[error("{poses} poses for {entries} patch index entries")]
    PoseCount { poses: usize, entries: usize },
}

impl DataError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> DataError {
        let path = path.into();
        move |source| DataError::Io { path, source }
    }
}
