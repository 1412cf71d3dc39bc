use std::path::Path;

use aerogt_core::geom::{RigidTransform, Vec3};
use nalgebra::Matrix3;

use super::DataError;

/// Pinhole intrinsics with the image size in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    pub intrinsics: Matrix3<f64>,
    pub width: u32,
    pub height: u32,
}

impl CameraModel {
    pub fn new(intrinsics: Matrix3<f64>, width: u32, height: u32) -> Result<Self, DataError> {
        let (fx, fy, cx, cy) = (intrinsics[(0, 0)], intrinsics[(1, 1)], intrinsics[(0, 2)], intrinsics[(1, 2)]);
        if !(fx > 0.0 && fy > 0.0) {
            return Err(DataError::Calibration("focal lengths must be positive".into()));
        }
        if !(cx >= 0.0 && cx < width as f64 && cy >= 0.0 && cy < height as f64) {
            return Err(DataError::Calibration("principal point outside the image".into()));
        }
        Ok(Self { intrinsics, width, height })
    }

    pub fn pinhole(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, DataError> {
        Self::new(Matrix3::new(fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0), width, height)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
    /// Index of the source point.
    pub index: usize,
}

const MIN_DEPTH: f64 = 0.1;

/// Projects map-frame ALS points through the LiDAR pose `pose` and the
/// LiDAR-to-camera extrinsic. Points closer than 0.1 m or off the image are
/// dropped; the rest come far to near.
pub fn project_als_to_image(points: &[Vec3], pose: &RigidTransform, extrinsic: &RigidTransform, cam: &CameraModel) -> Vec<Projection> {
    let to_camera = extrinsic.compose(&pose.inverse());
    let (w, h) = (cam.width as f64, cam.height as f64);
    let mut out: Vec<Projection> = points
        .iter()
        .enumerate()
        .filter_map(|(index, p)| {
            let c = to_camera.transform_point(p);
            if !(c.z > MIN_DEPTH) {
                return None;
            }
            let q = cam.intrinsics * c;
            let (u, v) = (q.x / q.z, q.y / q.z);
            (u >= 0.0 && u < w && v >= 0.0 && v < h).then_some(Projection { u, v, depth: c.z, index })
        })
        .collect();
    out.sort_by(|a, b| b.depth.total_cmp(&a.depth).then(a.index.cmp(&b.index)));
    out
}

/// Packed RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepthImage {
    pub width: u32,
    pub height: u32,
    pub rgb: Vec<u8>,
}

impl DepthImage {
    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let at = 3 * (y as usize * self.width as usize + x as usize);
        [self.rgb[at], self.rgb[at + 1], self.rgb[at + 2]]
    }

    /// Binary PPM (P6).
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.rgb);
        out
    }
}

/// Blue at 0, green at 1/3, yellow at 2/3, red at 1.
fn depth_colour(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0) * 3.0;
    let c = |x: f64| (x * 255.0).round() as u8;
    if t <= 1.0 {
        [0, c(t), c(1.0 - t)]
    } else if t <= 2.0 {
        [c(t - 1.0), 255, 0]
    } else {
        [255, c(3.0 - t), 0]
    }
}

/// Paints 2x2 splats in the given order (far first from
/// [`project_als_to_image`]) over a black image, coloured by depth across the
/// frame's range.
pub fn render_depth_overlay(projections: &[Projection], cam: &CameraModel) -> DepthImage {
    let (w, h) = (cam.width, cam.height);
    let mut img = DepthImage { width: w, height: h, rgb: vec![0; 3 * w as usize * h as usize] };
    let lo = projections.iter().map(|p| p.depth).fold(f64::INFINITY, f64::min);
    let hi = projections.iter().map(|p| p.depth).fold(f64::NEG_INFINITY, f64::max);
    for p in projections {
        let t = if hi > lo { (p.depth - lo) / (hi - lo) } else { 0.0 };
        let colour = depth_colour(t);
        let (x0, y0) = (p.u.floor() as u32, p.v.floor() as u32);
        for y in y0..(y0 + 2).min(h) {
            for x in x0..(x0 + 2).min(w) {
                let at = 3 * (y as usize * w as usize + x as usize);
                img.rgb[at..at + 3].copy_from_slice(&colour);
            }
        }
    }
    img
}

pub fn write_ppm(path: &Path, image: &DepthImage) -> Result<(), DataError> {
    std::fs::write(path, image.to_ppm()).map_err(DataError::io(path))
}
