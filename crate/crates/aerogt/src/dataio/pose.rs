use std::fmt::Write as _;
use std::path::Path;

use aerogt_core::geom::{Mat3, RigidTransform, Rotation3};
use nalgebra::Matrix4;

use super::DataError;

/// Orthonormality slack beyond which the rotation block is rejected.
const ROTATION_TOLERANCE: f64 = 1e-3;

/// A row-major 4x4 matrix as a rigid transform. Exactly rigid input keeps
/// its bits; slightly off input is re-orthonormalized.
pub(crate) fn rigid_from_row_major(values: &[f64]) -> Option<RigidTransform> {
    let m = Matrix4::from_row_slice(values);
    let rot: Mat3 = m.fixed_view::<3, 3>(0, 0).into_owned();
    if Rotation3::from_matrix_unchecked(rot).orthonormality_error() <= 1e-12
        && [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)] - 1.0].iter().all(|v| v.abs() <= 1e-6)
    {
        return Some(RigidTransform::new(Rotation3::from_matrix_unchecked(rot), m.fixed_view::<3, 1>(0, 3).into_owned()));
    }
    RigidTransform::from_matrix(&m, ROTATION_TOLERANCE).ok()
}

/// One row-major 4x4 matrix per non-empty line.
pub fn parse_pose_file(text: &str) -> Result<Vec<RigidTransform>, DataError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let values: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|_| DataError::MalformedLine(n + 1))?;
        if values.len() != 16 {
            return Err(DataError::MalformedLine(n + 1));
        }
        out.push(rigid_from_row_major(&values).ok_or(DataError::NonRigidMatrix(n + 1))?);
    }
    Ok(out)
}

pub fn format_pose_file(poses: &[RigidTransform]) -> String {
    let mut s = String::new();
    for p in poses {
        let m = p.to_matrix();
        let row: Vec<String> = (0..16).map(|k| format!("{}", m[(k / 4, k % 4)])).collect();
        let _ = writeln!(s, "{}", row.join(" "));
    }
    s
}

pub fn read_pose_file(path: &Path) -> Result<Vec<RigidTransform>, DataError> {
    parse_pose_file(&std::fs::read_to_string(path).map_err(DataError::io(path))?)
}

pub fn write_pose_file(path: &Path, poses: &[RigidTransform]) -> Result<(), DataError> {
    std::fs::write(path, format_pose_file(poses)).map_err(DataError::io(path))
}
