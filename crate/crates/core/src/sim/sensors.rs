use alloc::vec::Vec;

#[allow(unused_imports)] // float methods under no_std
use nalgebra::{ComplexField, RealField};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Motion;
use crate::geom::{RigidTransform, Rotation3, Vec3, GRAVITY};
use crate::preint::ImuSample;
use crate::solver::GnssFix;

fn gauss<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn gauss3<R: Rng>(rng: &mut R, sigma: f64) -> Vec3 {
    if sigma > 0.0 {
        Vec3::new(gauss(rng), gauss(rng), gauss(rng)) * sigma
    } else {
        Vec3::zeros()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuConfig {
    pub rate: f64,
    /// White noise densities; per-sample sigma is `density * sqrt(rate)`.
    pub accel_density: f64,
    pub gyro_density: f64,
    pub bias_acc: Vec3,
    pub bias_gyro: Vec3,
}

impl Default for ImuConfig {
    fn default() -> Self {
        Self {
            rate: 200.0,
            accel_density: 0.0,
            gyro_density: 0.0,
            bias_acc: Vec3::zeros(),
            bias_gyro: Vec3::zeros(),
        }
    }
}

/// Ideal specific force and body rate plus constant biases and white noise,
/// sampled on `[t0, t1]` at `k / rate`.
pub fn render_imu<M: Motion, R: Rng>(motion: &M, t0: f64, t1: f64, cfg: &ImuConfig, rng: &mut R) -> Vec<ImuSample> {
    let first = (t0 * cfg.rate - 1e-9).ceil() as i64;
    let last = (t1 * cfg.rate + 1e-9).floor() as i64;
    let (sa, sg) = (cfg.accel_density * cfg.rate.sqrt(), cfg.gyro_density * cfg.rate.sqrt());
    (first..=last)
        .map(|k| {
            let t = k as f64 / cfg.rate;
            let pose = motion.pose(t);
            let accel = pose.rotation.inverse_rotate(&(motion.acceleration(t) - GRAVITY)) + cfg.bias_acc + gauss3(rng, sa);
            let gyro = motion.angular_velocity(t) + cfg.bias_gyro + gauss3(rng, sg);
            ImuSample { timestamp: t, gyro, accel }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnssConfig {
    pub rate: f64,
    pub sigma: f64,
    /// Antenna offset in the body frame.
    pub lever_arm: Vec3,
    /// Closed intervals `[start, end]` without fixes.
    pub dropouts: Vec<(f64, f64)>,
}

impl Default for GnssConfig {
    fn default() -> Self {
        Self { rate: 1.0, sigma: 0.5, lever_arm: Vec3::zeros(), dropouts: Vec::new() }
    }
}

/// Antenna positions `t + R lever_arm` with isotropic Gaussian noise.
pub fn render_gnss<M: Motion, R: Rng>(motion: &M, t0: f64, t1: f64, cfg: &GnssConfig, rng: &mut R) -> Vec<GnssFix> {
    let first = (t0 * cfg.rate - 1e-9).ceil() as i64;
    let last = (t1 * cfg.rate + 1e-9).floor() as i64;
    let mut out = Vec::new();
    for k in first..=last {
        let t = k as f64 / cfg.rate;
        // Noise is drawn for every epoch so dropouts do not shift the stream.
        let noise = gauss3(rng, cfg.sigma);
        if cfg.dropouts.iter().any(|&(a, b)| t >= a && t <= b) {
            continue;
        }
        let pose = motion.pose(t);
        out.push(GnssFix { timestamp: t, position: pose.transform_point(&cfg.lever_arm) + noise, sigma: Some(cfg.sigma) });
    }
    out
}

/// Odometry error model.
///
/// Scale and yaw-rate errors follow first-order Gauss-Markov processes in
/// travelled distance with the given stationary sigmas and correlation
/// length, on top of small white per-step noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftConfig {
    /// Stationary sigma of the relative scale error.
    pub scale_sigma: f64,
    /// Stationary sigma of the yaw-rate error (degrees per metre).
    pub yaw_sigma_deg_per_m: f64,
    /// Correlation length of both processes (m).
    pub correlation_length: f64,
    /// White translation noise per step (m).
    pub step_translation_sigma: f64,
    /// White rotation noise per step (degrees).
    pub step_rotation_sigma_deg: f64,
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self {
            scale_sigma: 0.003,
            yaw_sigma_deg_per_m: 0.01,
            correlation_length: 100.0,
            step_translation_sigma: 0.001,
            step_rotation_sigma_deg: 0.005,
        }
    }
}

impl DriftConfig {
    pub fn none() -> Self {
        Self { scale_sigma: 0.0, yaw_sigma_deg_per_m: 0.0, correlation_length: 100.0, step_translation_sigma: 0.0, step_rotation_sigma_deg: 0.0 }
    }
}

/// Corrupts consecutive relative poses: translation scaled by `1 + s`,
/// yaw perturbed by `e * d` for step length `d`, plus white noise.
pub fn inject_drift<R: Rng>(relatives: &[RigidTransform], cfg: &DriftConfig, rng: &mut R) -> Vec<RigidTransform> {
    let yaw_sigma = cfg.yaw_sigma_deg_per_m.to_radians();
    let rot_sigma = cfg.step_rotation_sigma_deg.to_radians();
    // Start from the stationary distribution.
    let mut scale = gauss(rng) * cfg.scale_sigma;
    let mut yaw_rate = gauss(rng) * yaw_sigma;
    relatives
        .iter()
        .map(|rel| {
            let d = rel.translation.norm();
            let phi = if cfg.correlation_length > 0.0 { (-d / cfg.correlation_length).exp() } else { 0.0 };
            let k = (1.0 - phi * phi).max(0.0).sqrt();
            scale = phi * scale + k * cfg.scale_sigma * gauss(rng);
            yaw_rate = phi * yaw_rate + k * yaw_sigma * gauss(rng);
            let (white_t, white_r) = (gauss3(rng, cfg.step_translation_sigma), gauss3(rng, rot_sigma));
            let rotation = rel.rotation * Rotation3::exp(&(Vec3::new(0.0, 0.0, yaw_rate * d) + white_r));
            RigidTransform::new(rotation, rel.translation * (1.0 + scale) + white_t)
        })
        .collect()
}
