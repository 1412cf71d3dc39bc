//! IMU preintegration between two LiDAR frames.
//!
//! Increments are expressed in the body frame at the first sample and are
//! gravity free; gravity enters only through the IMU residual.

use alloc::vec::Vec;

use crate::geom::{hat, right_jacobian, Mat3, Rotation3, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub timestamp: f64,
    /// Angular rate in the body frame (rad/s).
    pub gyro: Vec3,
    /// Specific force in the body frame (m/s²).
    pub accel: Vec3,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PreintError {
    #[error("need at least two IMU samples, got {0}")]
    EmptyBatch(usize),
    #[error("IMU timestamp at index {0} does not increase")]
    NonMonotonicTimestamps(usize),
    #[error("IMU sample {0} has a non-finite value")]
    NonFinite(usize),
}

/// First-order sensitivities of the increments to the biases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasJacobians {
    pub alpha_ba: Mat3,
    pub alpha_bg: Mat3,
    pub beta_ba: Mat3,
    pub beta_bg: Mat3,
    pub gamma_bg: Mat3,
}

impl BiasJacobians {
    fn zero() -> Self {
        let z = Mat3::zeros();
        Self { alpha_ba: z, alpha_bg: z, beta_ba: z, beta_bg: z, gamma_bg: z }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreintegratedDelta {
    /// Position increment (m).
    pub alpha: Vec3,
    /// Velocity increment (m/s).
    pub beta: Vec3,
    /// Rotation increment.
    pub gamma: Rotation3,
    pub dt_total: f64,
    /// Biases the increments were integrated with.
    pub bias_acc: Vec3,
    pub bias_gyro: Vec3,
    pub jacobians: BiasJacobians,
}

impl PreintegratedDelta {
    pub fn identity(bias_acc: Vec3, bias_gyro: Vec3) -> Self {
        Self {
            alpha: Vec3::zeros(),
            beta: Vec3::zeros(),
            gamma: Rotation3::identity(),
            dt_total: 0.0,
            bias_acc,
            bias_gyro,
            jacobians: BiasJacobians::zero(),
        }
    }

    /// First-order bias update through the stored Jacobians; no
    /// re-integration. Valid for bias changes up to about 0.1.
    pub fn correct_for_bias(&self, bias_acc: Vec3, bias_gyro: Vec3) -> Self {
        let dba = bias_acc - self.bias_acc;
        let dbg = bias_gyro - self.bias_gyro;
        let j = &self.jacobians;
        Self {
            alpha: self.alpha + j.alpha_ba * dba + j.alpha_bg * dbg,
            beta: self.beta + j.beta_ba * dba + j.beta_bg * dbg,
            gamma: if dbg == Vec3::zeros() { self.gamma } else { self.gamma.retract(&(j.gamma_bg * dbg)) },
            bias_acc,
            bias_gyro,
            ..*self
        }
    }

    /// Delta over this interval followed by `next`. `next` is first moved to
    /// this delta's linearization biases if they differ.
    pub fn compose(&self, next: &PreintegratedDelta) -> Self {
        let next = if next.bias_acc != self.bias_acc || next.bias_gyro != self.bias_gyro {
            next.correct_for_bias(self.bias_acc, self.bias_gyro)
        } else {
            *next
        };
        let ga = *self.gamma.matrix();
        let gb = *next.gamma.matrix();
        let (a, b) = (&self.jacobians, &next.jacobians);
        let dt = next.dt_total;
        let jacobians = BiasJacobians {
            alpha_ba: a.alpha_ba + a.beta_ba * dt + ga * b.alpha_ba,
            alpha_bg: a.alpha_bg + a.beta_bg * dt + ga * b.alpha_bg - ga * hat(&next.alpha) * a.gamma_bg,
            beta_ba: a.beta_ba + ga * b.beta_ba,
            beta_bg: a.beta_bg + ga * b.beta_bg - ga * hat(&next.beta) * a.gamma_bg,
            gamma_bg: gb.transpose() * a.gamma_bg + b.gamma_bg,
        };
        Self {
            alpha: self.alpha + self.beta * dt + ga * next.alpha,
            beta: self.beta + ga * next.beta,
            gamma: Rotation3::project(&(ga * gb)),
            dt_total: self.dt_total + dt,
            bias_acc: self.bias_acc,
            bias_gyro: self.bias_gyro,
            jacobians,
        }
    }
}

/// Midpoint integration of bias-corrected samples.
///
/// Each interval `[t_k, t_k+1]` uses the mean angular rate for the rotation
/// step and the mean of the two endpoint specific forces, each rotated by
/// its own orientation. Two batches that share a boundary sample compose
/// exactly into the batch over their union.
pub fn preintegrate(samples: &[ImuSample], bias_acc: Vec3, bias_gyro: Vec3) -> Result<PreintegratedDelta, PreintError> {
    if samples.len() < 2 {
        return Err(PreintError::EmptyBatch(samples.len()));
    }
    for (k, s) in samples.iter().enumerate() {
        let finite = s.timestamp.is_finite() && s.gyro.iter().chain(s.accel.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(PreintError::NonFinite(k));
        }
        if k > 0 && !(s.timestamp > samples[k - 1].timestamp) {
            return Err(PreintError::NonMonotonicTimestamps(k));
        }
    }

    let mut d = PreintegratedDelta::identity(bias_acc, bias_gyro);
    let mut gamma = Mat3::identity();
    for w in samples.windows(2) {
        let (s0, s1) = (&w[0], &w[1]);
        let dt = s1.timestamp - s0.timestamp;
        let rate = (s0.gyro + s1.gyro) * 0.5 - bias_gyro;
        let step = Rotation3::exp(&(rate * dt));
        let next_gamma = Rotation3::project(&(gamma * step.matrix())).matrix().clone_owned();
        let (f0, f1) = (s0.accel - bias_acc, s1.accel - bias_acc);
        let acc = (gamma * f0 + next_gamma * f1) * 0.5;

        let j = &mut d.jacobians;
        let next_gamma_bg = step.matrix().transpose() * j.gamma_bg - right_jacobian(&(rate * dt)) * dt;
        let dacc_ba = -(gamma + next_gamma) * 0.5;
        let dacc_bg = -(gamma * hat(&f0) * j.gamma_bg + next_gamma * hat(&f1) * next_gamma_bg) * 0.5;
        j.alpha_ba += j.beta_ba * dt + dacc_ba * (0.5 * dt * dt);
        j.alpha_bg += j.beta_bg * dt + dacc_bg * (0.5 * dt * dt);
        j.beta_ba += dacc_ba * dt;
        j.beta_bg += dacc_bg * dt;
        j.gamma_bg = next_gamma_bg;

        d.alpha += d.beta * dt + acc * (0.5 * dt * dt);
        d.beta += acc * dt;
        d.dt_total += dt;
        gamma = next_gamma;
    }
    d.gamma = Rotation3::from_matrix_unchecked(gamma);
    Ok(d)
}

/// Splits `samples` into the batches between consecutive frame times.
///
/// Batch `k` covers `[frame_times[k], frame_times[k+1]]` and includes the
/// boundary samples on both ends, so neighbouring batches share one sample.
/// Frame times are expected to coincide with sample timestamps, and
/// samples must be sorted.
pub fn split_by_frames(samples: &[ImuSample], frame_times: &[f64]) -> Vec<Vec<ImuSample>> {
    let tol = 1e-9;
    frame_times
        .windows(2)
        .map(|w| {
            let lo = samples.partition_point(|s| s.timestamp < w[0] - tol);
            let hi = samples.partition_point(|s| s.timestamp <= w[1] + tol);
            samples[lo..hi.max(lo)].to_vec()
        })
        .collect()
}
