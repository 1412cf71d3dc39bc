//! Synthetic urban scenes and sensor streams with known ground truth.

use alloc::vec::Vec;

#[allow(unused_imports)] // float methods under no_std
use nalgebra::{ComplexField, Vector2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::cloud::{Label, PointCloud};
use crate::geom::{RigidTransform, Vec3};

mod scenario;
mod sensors;
mod trajectory;

pub use scenario::{parse_key_values, KeyValues, Scenario, ScenarioError};
pub use sensors::{inject_drift, render_gnss, render_imu, DriftConfig, GnssConfig, ImuConfig};
pub use trajectory::{LoopPath, Motion, TrajectoryTruth};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("buildings {0} and {1} overlap")]
    Overlap(usize, usize),
    #[error("building {0} has a non-positive size")]
    BadBuilding(usize),
    #[error("{0} must be positive")]
    NonPositive(&'static str),
}

/// Ground surface of a scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ground {
    Flat { elevation: f64 },
    /// Rises along +x by `slope_deg` from `elevation` at x = 0.
    Incline { elevation: f64, slope_deg: f64 },
}

impl Ground {
    pub fn height(&self, x: f64, _y: f64) -> f64 {
        match *self {
            Ground::Flat { elevation } => elevation,
            Ground::Incline { elevation, slope_deg } => elevation + x * slope_deg.to_radians().tan(),
        }
    }

    /// Height gradient (dz/dx, dz/dy).
    pub fn gradient(&self) -> Vector2<f64> {
        match *self {
            Ground::Flat { .. } => Vector2::zeros(),
            Ground::Incline { slope_deg, .. } => Vector2::new(slope_deg.to_radians().tan(), 0.0),
        }
    }
}

/// Axis-aligned box standing on the ground.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Building {
    pub min: Vector2<f64>,
    pub max: Vector2<f64>,
    /// Roof height above the ground at the footprint centre.
    pub height: f64,
}

impl Building {
    pub fn contains_xy(&self, x: f64, y: f64) -> bool {
        x >= self.min.x && x < self.max.x && y >= self.min.y && y < self.max.y
    }

    pub fn center(&self) -> Vector2<f64> {
        (self.min + self.max) * 0.5
    }

    /// Footprint corners, counter-clockwise from `min`.
    pub fn corners(&self) -> [Vector2<f64>; 4] {
        [self.min, Vector2::new(self.max.x, self.min.y), self.max, Vector2::new(self.min.x, self.max.y)]
    }

    fn overlaps(&self, o: &Building) -> bool {
        self.min.x < o.max.x && o.min.x < self.max.x && self.min.y < o.max.y && o.min.y < self.max.y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    ground: Ground,
    buildings: Vec<Building>,
    /// xy extent `(min, max)` of the rendered area.
    extent: (Vector2<f64>, Vector2<f64>),
}

impl Scene {
    pub fn new(ground: Ground, buildings: Vec<Building>, extent: (Vector2<f64>, Vector2<f64>)) -> Result<Self, SimError> {
        for (i, b) in buildings.iter().enumerate() {
            if !(b.height > 0.0 && b.max.x > b.min.x && b.max.y > b.min.y) {
                return Err(SimError::BadBuilding(i));
            }
            for (j, o) in buildings.iter().enumerate().skip(i + 1) {
                if b.overlaps(o) {
                    return Err(SimError::Overlap(i, j));
                }
            }
        }
        Ok(Self { ground, buildings, extent })
    }

    pub fn ground(&self) -> &Ground {
        &self.ground
    }

    pub fn buildings(&self) -> &[Building] {
        &self.buildings
    }

    pub fn extent(&self) -> (Vector2<f64>, Vector2<f64>) {
        self.extent
    }

    pub fn roof_elevation(&self, b: &Building) -> f64 {
        let c = b.center();
        self.ground.height(c.x, c.y) + b.height
    }

    /// Roof corners of every building, with the matching ground-level
    /// corners.
    pub fn building_corners(&self) -> Vec<(Vec3, Vec3)> {
        self.buildings
            .iter()
            .flat_map(|b| {
                let top = self.roof_elevation(b);
                b.corners().map(|c| (Vec3::new(c.x, c.y, top), Vec3::new(c.x, c.y, self.ground.height(c.x, c.y))))
            })
            .collect()
    }

    /// Nearest surface hit along a ray, with its label.
    pub fn raycast(&self, origin: &Vec3, dir: &Vec3, max_range: f64) -> Option<(f64, Label)> {
        let mut best: Option<(f64, Label)> = None;
        let g = self.ground.gradient();
        // Ground plane: z = h(x, y)
        let h0 = self.ground.height(origin.x, origin.y);
        let denom = dir.z - g.x * dir.x - g.y * dir.y;
        if denom < -1e-12 {
            let t = (h0 - origin.z) / denom;
            if t > 0.0 && t <= max_range {
                best = Some((t, Label::Ground));
            }
        }
        for b in &self.buildings {
            let top = self.roof_elevation(b);
            let bottom = b.corners().iter().map(|c| self.ground.height(c.x, c.y)).fold(f64::INFINITY, f64::min) - 1.0;
            let lo = Vec3::new(b.min.x, b.min.y, bottom);
            let hi = Vec3::new(b.max.x, b.max.y, top);
            let (mut t0, mut t1) = (0.0f64, best.map_or(max_range, |h| h.0));
            let mut axis = usize::MAX;
            let mut hit = true;
            for k in 0..3 {
                if dir[k].abs() < 1e-15 {
                    if origin[k] < lo[k] || origin[k] > hi[k] {
                        hit = false;
                        break;
                    }
                    continue;
                }
                let inv = 1.0 / dir[k];
                let (mut a, mut c) = ((lo[k] - origin[k]) * inv, (hi[k] - origin[k]) * inv);
                if a > c {
                    core::mem::swap(&mut a, &mut c);
                }
                if a > t0 {
                    t0 = a;
                    axis = k;
                }
                t1 = t1.min(c);
                if t0 > t1 {
                    hit = false;
                    break;
                }
            }
            if hit && axis != usize::MAX && t0 > 0.0 && best.is_none_or(|h| t0 < h.0) {
                let label = if axis == 2 { Label::Roof } else { Label::Facade };
                best = Some((t0, label));
            }
        }
        best
    }
}

/// Top-down airborne sampling on a regular grid at cell centres: roof points
/// inside footprints, ground points elsewhere. Walls are never sampled.
pub fn render_als<R: Rng>(scene: &Scene, spacing: f64, noise_z: f64, rng: &mut R) -> Result<PointCloud, SimError> {
    if !(spacing > 0.0) {
        return Err(SimError::NonPositive("spacing"));
    }
    let (lo, hi) = scene.extent;
    let nx = ((hi.x - lo.x) / spacing + 1e-9).floor() as usize;
    let ny = ((hi.y - lo.y) / spacing + 1e-9).floor() as usize;
    let noise = Normal::new(0.0, noise_z.max(0.0)).map_err(|_| SimError::NonPositive("noise"))?;
    let mut pts = Vec::with_capacity(nx * ny);
    let mut labels = Vec::with_capacity(nx * ny);
    for i in 0..nx {
        for j in 0..ny {
            let x = lo.x + (i as f64 + 0.5) * spacing;
            let y = lo.y + (j as f64 + 0.5) * spacing;
            let (z, label) = match scene.buildings.iter().find(|b| b.contains_xy(x, y)) {
                Some(b) => (scene.roof_elevation(b), Label::Roof),
                None => (scene.ground.height(x, y), Label::Ground),
            };
            let dz = if noise_z > 0.0 { noise.sample(rng) } else { 0.0 };
            pts.push(Vec3::new(x, y, z + dz));
            labels.push(label);
        }
    }
    Ok(PointCloud::labeled(pts, labels).expect("lengths match"))
}

/// Spinning multi-beam scanner.
#[derive(Debug, Clone, PartialEq)]
pub struct MlsConfig {
    pub rings: usize,
    pub min_elevation_deg: f64,
    pub max_elevation_deg: f64,
    pub azimuth_step_deg: f64,
    pub max_range: f64,
    pub range_sigma: f64,
}

impl Default for MlsConfig {
    fn default() -> Self {
        Self { rings: 32, min_elevation_deg: -30.67, max_elevation_deg: 10.67, azimuth_step_deg: 0.2, max_range: 80.0, range_sigma: 0.02 }
    }
}

impl MlsConfig {
    /// Unit beam directions in the sensor frame.
    pub fn directions(&self) -> Vec<Vec3> {
        let steps = (360.0 / self.azimuth_step_deg).round() as usize;
        let mut out = Vec::with_capacity(steps * self.rings);
        for r in 0..self.rings {
            let f = if self.rings > 1 { r as f64 / (self.rings - 1) as f64 } else { 0.5 };
            let e = (self.min_elevation_deg + f * (self.max_elevation_deg - self.min_elevation_deg)).to_radians();
            for a in 0..steps {
                let az = (a as f64 * self.azimuth_step_deg).to_radians();
                let (se, ce) = e.sin_cos();
                let (sa, ca) = az.sin_cos();
                out.push(Vec3::new(ce * ca, ce * sa, se));
            }
        }
        out
    }
}

/// One instantaneous sweep from `pose`, returned in the sensor frame with
/// true surface labels.
pub fn render_mls_scan<R: Rng>(scene: &Scene, pose: &RigidTransform, cfg: &MlsConfig, rng: &mut R) -> PointCloud {
    render_mls_scan_with(scene, pose, cfg, &cfg.directions(), rng)
}

/// [`render_mls_scan`] with precomputed beam directions.
pub fn render_mls_scan_with<R: Rng>(scene: &Scene, pose: &RigidTransform, cfg: &MlsConfig, dirs: &[Vec3], rng: &mut R) -> PointCloud {
    let noise = Normal::new(0.0, cfg.range_sigma.max(0.0)).expect("finite sigma");
    let mut pts = Vec::new();
    let mut labels = Vec::new();
    for d in dirs {
        let world = pose.rotation.rotate(d);
        if let Some((range, label)) = scene.raycast(&pose.translation, &world, cfg.max_range) {
            let dr = if cfg.range_sigma > 0.0 { noise.sample(rng) } else { 0.0 };
            let r = (range + dr).clamp(0.0, cfg.max_range);
            pts.push(d * r);
            labels.push(label);
        }
    }
    PointCloud::labeled(pts, labels).expect("lengths match")
}
