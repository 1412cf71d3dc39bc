//! Rotation and rigid-pose algebra on SO(3)/SE(3), and the per-frame state.
//!
//! Rotations are stored as matrices. Optimizers perturb them on the right,
//! `R <- R * exp(dw)`, which is the convention every Jacobian in this crate
//! is written against. The map frame is ENU with gravity along -z.

use core::ops::Mul;

#[allow(unused_imports)] // float methods under no_std
use nalgebra::{ComplexField, Matrix3, Matrix4, RealField, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Gravity acceleration in the ENU map frame.
pub const GRAVITY: Vec3 = Vec3::new(0.0, 0.0, -9.81);

/// Below this angle `so3_exp` and `so3_log` switch to series expansions.
const SMALL_ANGLE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum GeomError {
    #[error("rotation angle too close to pi for a principal logarithm (trace {trace})")]
    AngleNearPi { trace: f64 },
    #[error("matrix is not a rotation (orthonormality error {error:e})")]
    NotRotation { error: f64 },
    #[error("homogeneous matrix bottom row is not (0, 0, 0, 1)")]
    NotHomogeneous,
}

/// Skew-symmetric matrix with `hat(a) * b == a x b`.
pub fn hat(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`hat`] applied to the antisymmetric part of `m`.
pub fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// A 3x3 orthonormal matrix with determinant +1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation3(Mat3);

impl Default for Rotation3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation3 {
    pub fn identity() -> Self {
        Self(Mat3::identity())
    }

    /// Wraps a matrix the caller guarantees to be a rotation.
    pub fn from_matrix_unchecked(m: Mat3) -> Self {
        Self(m)
    }

    /// Accepts `m` if it is orthonormal within `tol` (max entry of `m mᵀ - I`
    /// and `|det - 1|`), re-projecting it onto SO(3).
    pub fn from_matrix(m: &Mat3, tol: f64) -> Result<Self, GeomError> {
        let error = orthonormality_error(m);
        if !(error <= tol) {
            return Err(GeomError::NotRotation { error });
        }
        Ok(Self::project(m))
    }

    /// Nearest rotation in the Frobenius sense (polar decomposition).
    pub fn project(m: &Mat3) -> Self {
        let svd = m.svd(true, true);
        let u = svd.u.expect("svd u");
        let v_t = svd.v_t.expect("svd v_t");
        let mut r = u * v_t;
        if r.determinant() < 0.0 {
            let mut u = u;
            u.column_mut(2).neg_mut();
            r = u * v_t;
        }
        Self(r)
    }

    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        so3_exp(&(axis.normalize() * angle))
    }

    pub fn about_x(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c))
    }

    pub fn about_y(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c))
    }

    pub fn about_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    /// Fixed-axis XYZ composition: `Rz(z) * Ry(y) * Rx(x)`.
    pub fn from_euler_xyz(x: f64, y: f64, z: f64) -> Self {
        Self::about_z(z) * Self::about_y(y) * Self::about_x(x)
    }

    /// Fixed-axis XYZ angles `(x, y, z)` with `self == Rz(z) Ry(y) Rx(x)` and
    /// `y` in `[-pi/2, pi/2]`.
    pub fn euler_xyz(&self) -> Vec3 {
        let m = &self.0;
        let y = (-m[(2, 0)]).clamp(-1.0, 1.0).asin();
        if m[(2, 0)].abs() < 1.0 - 1e-12 {
            Vec3::new(m[(2, 1)].atan2(m[(2, 2)]), y, m[(1, 0)].atan2(m[(0, 0)]))
        } else {
            // Gimbal lock: only x - z (or x + z) is defined; put it all on x.
            Vec3::new((-m[(1, 2)]).atan2(m[(1, 1)]), y, 0.0)
        }
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    /// `selfᵀ * v` without forming the inverse.
    pub fn inverse_rotate(&self, v: &Vec3) -> Vec3 {
        self.0.tr_mul(v)
    }

    pub fn exp(omega: &Vec3) -> Self {
        so3_exp(omega)
    }

    pub fn log(&self) -> Result<Vec3, GeomError> {
        so3_log(self)
    }

    /// Rotation angle in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        let c = 0.5 * (self.0.trace() - 1.0);
        let s = vee(&self.0).norm();
        s.atan2(c)
    }

    /// Right-multiplicative tangent update `self * exp(delta)`.
    pub fn retract(&self, delta: &Vec3) -> Self {
        Self::project(&(self.0 * so3_exp(delta).0))
    }

    pub fn orthonormality_error(&self) -> f64 {
        orthonormality_error(&self.0)
    }
}

impl Mul for Rotation3 {
    type Output = Rotation3;
    fn mul(self, rhs: Rotation3) -> Rotation3 {
        Rotation3(self.0 * rhs.0)
    }
}

impl Mul<Vec3> for Rotation3 {
    type Output = Vec3;
    fn mul(self, rhs: Vec3) -> Vec3 {
        self.0 * rhs
    }
}

fn orthonormality_error(m: &Mat3) -> f64 {
    let e = (m * m.transpose() - Mat3::identity()).abs().max();
    e.max((m.determinant() - 1.0).abs())
}

/// Rodrigues' formula; second-order Taylor expansion for `|omega| < 1e-8`.
pub fn so3_exp(omega: &Vec3) -> Rotation3 {
    let theta2 = omega.norm_squared();
    let theta = theta2.sqrt();
    let w = hat(omega);
    let w2 = w * w;
    if theta < SMALL_ANGLE {
        return Rotation3(Mat3::identity() + w + 0.5 * w2);
    }
    let (s, c) = theta.sin_cos();
    Rotation3(Mat3::identity() + (s / theta) * w + ((1.0 - c) / theta2) * w2)
}

/// Principal logarithm. Fails with [`GeomError::AngleNearPi`] when
/// `trace(R) <= -1 + 1e-6`, where the axis is ill-determined.
pub fn so3_log(r: &Rotation3) -> Result<Vec3, GeomError> {
    let m = &r.0;
    let trace = m.trace();
    if trace <= -1.0 + 1e-6 {
        return Err(GeomError::AngleNearPi { trace });
    }
    let axis_sin = vee(m);
    let s = axis_sin.norm();
    let c = 0.5 * (trace - 1.0);
    let theta = s.atan2(c);
    if theta < SMALL_ANGLE {
        return Ok(axis_sin * (1.0 + theta * theta / 6.0));
    }
    if theta < 2.5 {
        return Ok(axis_sin * (theta / s));
    }
    // Near pi the antisymmetric part loses precision; recover the axis from
    // the symmetric part instead and take the sign from the antisymmetric one.
    let b = (m + m.transpose()) * 0.5 - Mat3::identity() * c;
    let mut best = 0;
    for k in 1..3 {
        if b[(k, k)] > b[(best, best)] {
            best = k;
        }
    }
    let mut axis: Vec3 = b.column(best).into_owned();
    axis /= axis.norm();
    if axis.dot(&axis_sin) < 0.0 {
        axis = -axis;
    }
    Ok(axis * theta)
}

/// Right Jacobian of SO(3): `exp(w + dw) ≈ exp(w) exp(Jr(w) dw)`.
pub fn right_jacobian(omega: &Vec3) -> Mat3 {
    let theta2 = omega.norm_squared();
    let w = hat(omega);
    if theta2 < 1e-10 {
        return Mat3::identity() - 0.5 * w + (w * w) / 6.0;
    }
    let theta = theta2.sqrt();
    let (s, c) = theta.sin_cos();
    Mat3::identity() - ((1.0 - c) / theta2) * w + ((theta - s) / (theta2 * theta)) * (w * w)
}

/// Inverse right Jacobian: `log(exp(w) exp(dw)) ≈ w + Jr⁻¹(w) dw`.
pub fn right_jacobian_inv(omega: &Vec3) -> Mat3 {
    let theta2 = omega.norm_squared();
    let w = hat(omega);
    if theta2 < 1e-10 {
        return Mat3::identity() + 0.5 * w + (w * w) / 12.0;
    }
    let theta = theta2.sqrt();
    let (s, c) = theta.sin_cos();
    let coeff = 1.0 / theta2 - (1.0 + c) / (2.0 * theta * s);
    Mat3::identity() + 0.5 * w + coeff * (w * w)
}

/// Rigid transform `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RigidTransform {
    pub rotation: Rotation3,
    pub translation: Vec3,
}

impl RigidTransform {
    pub fn new(rotation: Rotation3, translation: Vec3) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self::new(Rotation3::identity(), Vec3::zeros())
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self::new(Rotation3::identity(), t)
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation.rotate(p) + self.translation
    }

    pub fn inverse_transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation.inverse_rotate(&(p - self.translation))
    }

    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform::new(
            self.rotation * other.rotation,
            self.rotation.rotate(&other.translation) + self.translation,
        )
    }

    pub fn inverse(&self) -> RigidTransform {
        let r_inv = self.rotation.inverse();
        RigidTransform::new(r_inv, -(r_inv.rotate(&self.translation)))
    }

    /// `selfᵀ ∘ other`, the pose of `other` expressed in this frame.
    pub fn between(&self, other: &RigidTransform) -> RigidTransform {
        self.inverse().compose(other)
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Parses a homogeneous matrix. The bottom row must be `(0,0,0,1)` within
    /// 1e-6; the rotation block is re-orthonormalized if within `rot_tol`.
    pub fn from_matrix(m: &Matrix4<f64>, rot_tol: f64) -> Result<Self, GeomError> {
        let bottom = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)] - 1.0];
        if bottom.iter().any(|v| !(v.abs() <= 1e-6)) {
            return Err(GeomError::NotHomogeneous);
        }
        let rot: Mat3 = m.fixed_view::<3, 3>(0, 0).into_owned();
        let rotation = Rotation3::from_matrix(&rot, rot_tol)?;
        Ok(Self::new(rotation, m.fixed_view::<3, 1>(0, 3).into_owned()))
    }
}

impl Mul for RigidTransform {
    type Output = RigidTransform;
    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        self.compose(&rhs)
    }
}

/// Applies `t` to `p`.
pub fn transform_point(t: &RigidTransform, p: &Vec3) -> Vec3 {
    t.transform_point(p)
}

/// Per-frame estimation state: pose in the map frame, velocity and IMU biases.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct State {
    pub pose: RigidTransform,
    pub velocity: Vec3,
    pub bias_acc: Vec3,
    pub bias_gyro: Vec3,
    pub timestamp: f64,
}

impl State {
    /// Tangent dimension used by the solver.
    pub const DIM: usize = 15;
    pub const ROT: usize = 0;
    pub const POS: usize = 3;
    pub const VEL: usize = 6;
    pub const BA: usize = 9;
    pub const BG: usize = 12;

    pub fn at_pose(pose: RigidTransform, timestamp: f64) -> Self {
        Self { pose, timestamp, ..Default::default() }
    }

    pub fn rotation(&self) -> &Rotation3 {
        &self.pose.rotation
    }

    pub fn position(&self) -> &Vec3 {
        &self.pose.translation
    }

    /// Applies a 15-dim tangent increment laid out as
    /// `[rotation, position, velocity, bias_acc, bias_gyro]`.
    pub fn retract(&self, delta: &[f64]) -> State {
        let v3 = |o: usize| Vec3::new(delta[o], delta[o + 1], delta[o + 2]);
        State {
            pose: RigidTransform::new(
                self.pose.rotation.retract(&v3(Self::ROT)),
                self.pose.translation + v3(Self::POS),
            ),
            velocity: self.velocity + v3(Self::VEL),
            bias_acc: self.bias_acc + v3(Self::BA),
            bias_gyro: self.bias_gyro + v3(Self::BG),
            timestamp: self.timestamp,
        }
    }
}

/// Checks that timestamps strictly increase along a trajectory.
pub fn timestamps_increasing(states: &[State]) -> bool {
    states.windows(2).all(|w| w[1].timestamp > w[0].timestamp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::{FRAC_PI_2, PI};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
        loop {
            let v = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let n = v.norm();
            if n > 0.1 && n < 1.0 {
                return v / n;
            }
        }
    }

    #[test]
    fn exp_of_zero_is_identity() {
        assert_eq!(so3_exp(&Vec3::zeros()), Rotation3::identity());
    }

    #[test]
    fn quarter_turn_about_z() {
        let r = so3_exp(&Vec3::new(0.0, 0.0, FRAC_PI_2));
        let p = r.rotate(&Vec3::x());
        assert!((p - Vec3::y()).norm() < 1e-15);
        let w = so3_log(&r).unwrap();
        assert!((w - Vec3::new(0.0, 0.0, FRAC_PI_2)).norm() < 1e-15);
    }

    #[test]
    fn log_of_identity_is_zero() {
        assert_eq!(so3_log(&Rotation3::identity()).unwrap(), Vec3::zeros());
    }

    #[test]
    fn log_rejects_half_turn() {
        let r = so3_exp(&Vec3::new(PI, 0.0, 0.0));
        assert!(matches!(so3_log(&r), Err(GeomError::AngleNearPi { .. })));
    }

    #[test]
    fn roundtrip_fixed_magnitude() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let w = random_unit(&mut rng) * 1.3;
            let back = so3_log(&so3_exp(&w)).unwrap();
            assert!((back - w).norm() < 1e-12);
        }
    }

    #[test]
    fn tiny_angles_use_series() {
        let w = Vec3::new(1e-10, -2e-10, 3e-11);
        let r = so3_exp(&w);
        assert!(r.orthonormality_error() < 1e-15);
        assert!((so3_log(&r).unwrap() - w).norm() < 1e-20);
    }

    #[test]
    fn near_pi_log_is_accurate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let w = random_unit(&mut rng) * rng.random_range(2.9..PI - 1e-3);
            let back = so3_log(&so3_exp(&w)).unwrap();
            assert!((back - w).norm() < 1e-11, "{}", (back - w).norm());
        }
    }

    #[test]
    fn right_jacobians_are_inverse() {
        let w = Vec3::new(0.3, -0.7, 1.1);
        let prod = right_jacobian(&w) * right_jacobian_inv(&w);
        assert!((prod - Mat3::identity()).abs().max() < 1e-12);
    }

    #[test]
    fn right_jacobian_first_order() {
        let w = Vec3::new(0.4, 0.2, -0.9);
        let dw = Vec3::new(1e-6, -2e-6, 0.5e-6);
        let lhs = so3_exp(&(w + dw));
        let rhs = so3_exp(&w) * so3_exp(&(right_jacobian(&w) * dw));
        assert!((lhs.matrix() - rhs.matrix()).abs().max() < 1e-11);
    }

    #[test]
    fn transform_point_examples() {
        let p = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(RigidTransform::identity().transform_point(&p), p);
        let t = RigidTransform::from_translation(Vec3::new(0.0, 0.0, 5.0));
        assert_eq!(t.transform_point(&Vec3::zeros()), Vec3::new(0.0, 0.0, 5.0));
    }

    #[test]
    fn matrix_roundtrip_and_validation() {
        let t = RigidTransform::new(so3_exp(&Vec3::new(0.1, 0.2, 0.3)), Vec3::new(1.0, 2.0, 3.0));
        let back = RigidTransform::from_matrix(&t.to_matrix(), 1e-3).unwrap();
        assert!((back.to_matrix() - t.to_matrix()).abs().max() < 1e-14);

        let mut m = t.to_matrix();
        m[(3, 0)] = 0.5;
        assert_eq!(RigidTransform::from_matrix(&m, 1e-3), Err(GeomError::NotHomogeneous));

        let mut m = t.to_matrix();
        m[(0, 0)] += 0.1;
        assert!(matches!(
            RigidTransform::from_matrix(&m, 1e-3),
            Err(GeomError::NotRotation { .. })
        ));
    }

    #[test]
    fn euler_roundtrip() {
        let r = Rotation3::from_euler_xyz(0.1, -0.4, 2.0);
        let e = r.euler_xyz();
        assert!((e - Vec3::new(0.1, -0.4, 2.0)).norm() < 1e-14);
    }

    #[test]
    fn state_retract_layout() {
        let s = State::default();
        let mut d = [0.0; 15];
        d[State::POS] = 1.0;
        d[State::VEL + 1] = 2.0;
        d[State::BG + 2] = 3.0;
        let s2 = s.retract(&d);
        assert_eq!(s2.pose.translation, Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(s2.velocity, Vec3::new(0.0, 2.0, 0.0));
        assert_eq!(s2.bias_gyro, Vec3::new(0.0, 0.0, 3.0));
    }
}
