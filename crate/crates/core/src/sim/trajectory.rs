use alloc::vec::Vec;

#[allow(unused_imports)] // float methods under no_std
use nalgebra::{ComplexField, RealField, Vector2};

use super::Ground;
use crate::geom::{RigidTransform, Rotation3, State, Vec3};

/// Continuous-time rigid motion with analytic derivatives.
pub trait Motion {
    fn pose(&self, t: f64) -> RigidTransform;
    /// World-frame velocity.
    fn velocity(&self, t: f64) -> Vec3;
    /// World-frame acceleration.
    fn acceleration(&self, t: f64) -> Vec3;
    /// Body-frame angular rate.
    fn angular_velocity(&self, t: f64) -> Vec3;
}

/// Closed uniform cubic B-spline in the plane.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopPath {
    control: Vec<Vector2<f64>>,
}

impl LoopPath {
    pub fn new(control: Vec<Vector2<f64>>) -> Self {
        assert!(control.len() >= 4, "a closed cubic B-spline needs four control points");
        Self { control }
    }

    /// Axis-aligned square with corner `origin` and the given side,
    /// walked counter-clockwise from the middle of the bottom edge with
    /// control points every `spacing`.
    pub fn square(origin: Vector2<f64>, side: f64, spacing: f64) -> Self {
        let per_edge = (side / spacing).round().max(1.0) as usize;
        let step = side / per_edge as f64;
        let corners = [
            origin,
            origin + Vector2::new(side, 0.0),
            origin + Vector2::new(side, side),
            origin + Vector2::new(0.0, side),
        ];
        let mut pts = Vec::with_capacity(4 * per_edge);
        for e in 0..4 {
            let (a, b) = (corners[e], corners[(e + 1) % 4]);
            let dir = (b - a) / side;
            for k in 0..per_edge {
                pts.push(a + dir * (k as f64 * step));
            }
        }
        // Start mid-edge so the trajectory begins on a straight.
        let shift = per_edge / 2;
        pts.rotate_left(shift);
        Self::new(pts)
    }

    /// Parameter period (number of control points).
    pub fn period(&self) -> f64 {
        self.control.len() as f64
    }

    /// Position and first two derivatives with respect to the parameter.
    pub fn eval(&self, u: f64) -> [Vector2<f64>; 3] {
        let n = self.control.len();
        let period = n as f64;
        let u = u.rem_euclid(period);
        let i = (u.floor() as usize).min(n - 1);
        let s = u - i as f64;
        let p = |k: isize| self.control[((i as isize + k).rem_euclid(n as isize)) as usize];
        let (p0, p1, p2, p3) = (p(-1), p(0), p(1), p(2));
        let s2 = s * s;
        let s3 = s2 * s;
        let b = [(1.0 - s).powi(3) / 6.0, (3.0 * s3 - 6.0 * s2 + 4.0) / 6.0, (-3.0 * s3 + 3.0 * s2 + 3.0 * s + 1.0) / 6.0, s3 / 6.0];
        let db = [-(1.0 - s).powi(2) / 2.0, (3.0 * s2 - 4.0 * s) / 2.0, (-3.0 * s2 + 2.0 * s + 1.0) / 2.0, s2 / 2.0];
        let ddb = [1.0 - s, 3.0 * s - 2.0, -3.0 * s + 1.0, s];
        let comb = |w: [f64; 4]| p0 * w[0] + p1 * w[1] + p2 * w[2] + p3 * w[3];
        [comb(b), comb(db), comb(ddb)]
    }

    /// Approximate arc length by dense sampling.
    pub fn length(&self) -> f64 {
        let steps = self.control.len() * 64;
        let h = self.period() / steps as f64;
        (0..steps).map(|k| (self.eval((k + 1) as f64 * h)[0] - self.eval(k as f64 * h)[0]).norm()).sum()
    }
}

/// A vehicle driving a closed path on the scene ground.
///
/// The parameter advances uniformly in time; heading follows the xy
/// velocity and the body is tilted by the ground slope.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTruth {
    path: LoopPath,
    /// Path parameter per second.
    rate: f64,
    /// Sensor height above ground.
    mount_height: f64,
    ground: Ground,
    duration: f64,
}

impl TrajectoryTruth {
    /// Drives `laps` laps at nominal `speed` (m/s along straights, where
    /// control points are `spacing` apart).
    pub fn new(path: LoopPath, speed: f64, spacing: f64, mount_height: f64, ground: Ground, laps: f64) -> Self {
        let rate = speed / spacing;
        let duration = path.period() * laps / rate;
        Self { path, rate, mount_height, ground, duration }
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn path(&self) -> &LoopPath {
        &self.path
    }

    fn tilt(&self) -> Rotation3 {
        match self.ground {
            Ground::Flat { .. } => Rotation3::identity(),
            Ground::Incline { slope_deg, .. } => Rotation3::about_y(-slope_deg.to_radians()),
        }
    }

    fn heading(&self, t: f64) -> (f64, f64) {
        let [_, d, dd] = self.path.eval(t * self.rate);
        let (v, a) = (d * self.rate, dd * self.rate * self.rate);
        let yaw = v.y.atan2(v.x);
        let yaw_rate = (v.x * a.y - v.y * a.x) / v.norm_squared();
        (yaw, yaw_rate)
    }

    /// True states at `rate_hz` from t = 0, excluding the end time.
    pub fn sample_states(&self, rate_hz: f64) -> Vec<State> {
        let n = (self.duration * rate_hz - 1e-9).ceil() as usize;
        (0..n)
            .map(|k| {
                let t = k as f64 / rate_hz;
                State { velocity: self.velocity(t), ..State::at_pose(self.pose(t), t) }
            })
            .collect()
    }
}

impl Motion for TrajectoryTruth {
    fn pose(&self, t: f64) -> RigidTransform {
        let [p, _, _] = self.path.eval(t * self.rate);
        let z = self.ground.height(p.x, p.y) + self.mount_height;
        let (yaw, _) = self.heading(t);
        RigidTransform::new(self.tilt() * Rotation3::about_z(yaw), Vec3::new(p.x, p.y, z))
    }

    fn velocity(&self, t: f64) -> Vec3 {
        let [_, d, _] = self.path.eval(t * self.rate);
        let v = d * self.rate;
        let g = self.ground.gradient();
        Vec3::new(v.x, v.y, g.dot(&v))
    }

    fn acceleration(&self, t: f64) -> Vec3 {
        let [_, _, dd] = self.path.eval(t * self.rate);
        let a = dd * self.rate * self.rate;
        let g = self.ground.gradient();
        Vec3::new(a.x, a.y, g.dot(&a))
    }

    fn angular_velocity(&self, t: f64) -> Vec3 {
        Vec3::new(0.0, 0.0, self.heading(t).1)
    }
}
