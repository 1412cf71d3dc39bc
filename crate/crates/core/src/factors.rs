//! Residuals of the pose graph and their analytic Jacobians.
//!
//! Every Jacobian is taken with respect to the 15-dimensional state tangent
//! (see [`State::retract`]): rotation perturbed on the right, everything
//! else additive.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // float methods under no_std
use nalgebra::{ComplexField, DMatrix, DVector, SMatrix, SVector};

use crate::geom::{hat, right_jacobian, right_jacobian_inv, so3_log, GeomError, Mat3, RigidTransform, Rotation3, State, Vec3};
use crate::preint::PreintegratedDelta;

pub type Vec6 = SVector<f64, 6>;
pub type Vec15 = SVector<f64, 15>;
pub type Jac3 = SMatrix<f64, 3, 15>;
pub type Jac6 = SMatrix<f64, 6, 15>;
pub type Jac15 = SMatrix<f64, 15, 15>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FactorKind {
    Loop,
    Aerial,
    Odometry,
    Imu,
    Gnss,
}

impl FactorKind {
    pub const ALL: [FactorKind; 5] = [Self::Loop, Self::Aerial, Self::Odometry, Self::Imu, Self::Gnss];

    /// Residual dimension.
    pub fn dim(self) -> usize {
        match self {
            Self::Loop | Self::Aerial | Self::Odometry => 6,
            Self::Imu => 15,
            Self::Gnss => 3,
        }
    }

    /// Number of states involved.
    pub fn arity(self) -> usize {
        match self {
            Self::Aerial | Self::Gnss => 1,
            _ => 2,
        }
    }

    /// Whether the factor constrains the map frame directly.
    pub fn is_absolute(self) -> bool {
        matches!(self, Self::Aerial | Self::Gnss)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Loop => "loop",
            Self::Aerial => "aerial",
            Self::Odometry => "odometry",
            Self::Imu => "imu",
            Self::Gnss => "gnss",
        }
    }
}

// Factors live in one flat vector; boxing the IMU delta buys nothing.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq)]
pub enum Measurement {
    /// Pose of state j expressed in state i (loop and odometry).
    Relative(RigidTransform),
    /// Absolute pose of the state (aerial).
    Pose(RigidTransform),
    Imu { delta: PreintegratedDelta, gravity: Vec3 },
    /// Antenna position in the map frame and the body-frame lever arm.
    Gnss { antenna: Vec3, lever_arm: Vec3 },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FactorError {
    #[error("{kind:?} factor needs {expected} state indices, got {got}")]
    Arity { kind: FactorKind, expected: usize, got: usize },
    #[error("{kind:?} factor needs a {expected}x{expected} information matrix")]
    InformationShape { kind: FactorKind, expected: usize },
    #[error("information matrix is not symmetric positive semi-definite")]
    InformationNotPsd,
    #[error("measurement does not match factor kind {0:?}")]
    MeasurementKind(FactorKind),
    #[error("IMU delta spans no time")]
    EmptyImuInterval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    kind: FactorKind,
    states: Vec<usize>,
    measurement: Measurement,
    information: DMatrix<f64>,
    robust: bool,
}

/// Residual and one Jacobian block (rows x 15) per involved state.
#[derive(Debug, Clone, PartialEq)]
pub struct Linearization {
    pub residual: DVector<f64>,
    pub jacobians: Vec<DMatrix<f64>>,
}

impl Factor {
    /// Validates the pairing of kind, states, measurement and information.
    /// Loop and aerial factors use the Huber loss when `robust` is set;
    /// other kinds ignore the flag.
    pub fn new(
        kind: FactorKind,
        states: Vec<usize>,
        measurement: Measurement,
        information: DMatrix<f64>,
        robust: bool,
    ) -> Result<Self, FactorError> {
        if states.len() != kind.arity() {
            return Err(FactorError::Arity { kind, expected: kind.arity(), got: states.len() });
        }
        let n = kind.dim();
        if information.nrows() != n || information.ncols() != n {
            return Err(FactorError::InformationShape { kind, expected: n });
        }
        if !is_psd(&information) {
            return Err(FactorError::InformationNotPsd);
        }
        let ok = matches!(
            (kind, &measurement),
            (FactorKind::Loop | FactorKind::Odometry, Measurement::Relative(_))
                | (FactorKind::Aerial, Measurement::Pose(_))
                | (FactorKind::Imu, Measurement::Imu { .. })
                | (FactorKind::Gnss, Measurement::Gnss { .. })
        );
        if !ok {
            return Err(FactorError::MeasurementKind(kind));
        }
        if let Measurement::Imu { delta, .. } = &measurement {
            if !(delta.dt_total > 0.0) {
                return Err(FactorError::EmptyImuInterval);
            }
        }
        let robust = robust && matches!(kind, FactorKind::Loop | FactorKind::Aerial);
        Ok(Self { kind, states, measurement, information, robust })
    }

    pub fn odometry(i: usize, relative: RigidTransform, information: DMatrix<f64>) -> Result<Self, FactorError> {
        Self::new(FactorKind::Odometry, vec![i, i + 1], Measurement::Relative(relative), information, false)
    }

    pub fn loop_closure(i: usize, j: usize, relative: RigidTransform, information: DMatrix<f64>) -> Result<Self, FactorError> {
        Self::new(FactorKind::Loop, vec![i, j], Measurement::Relative(relative), information, true)
    }

    pub fn aerial(i: usize, pose: RigidTransform, information: DMatrix<f64>) -> Result<Self, FactorError> {
        Self::new(FactorKind::Aerial, vec![i], Measurement::Pose(pose), information, true)
    }

    pub fn imu(i: usize, delta: PreintegratedDelta, gravity: Vec3, information: DMatrix<f64>) -> Result<Self, FactorError> {
        Self::new(FactorKind::Imu, vec![i, i + 1], Measurement::Imu { delta, gravity }, information, false)
    }

    pub fn gnss(i: usize, antenna: Vec3, lever_arm: Vec3, information: DMatrix<f64>) -> Result<Self, FactorError> {
        Self::new(FactorKind::Gnss, vec![i], Measurement::Gnss { antenna, lever_arm }, information, false)
    }

    pub fn kind(&self) -> FactorKind {
        self.kind
    }

    pub fn states(&self) -> &[usize] {
        &self.states
    }

    pub fn measurement(&self) -> &Measurement {
        &self.measurement
    }

    pub fn information(&self) -> &DMatrix<f64> {
        &self.information
    }

    pub fn robust(&self) -> bool {
        self.robust
    }

    /// Residual and Jacobians at `states` (the full trajectory).
    pub fn linearize(&self, states: &[State]) -> Result<Linearization, GeomError> {
        let x = |k: usize| &states[self.states[k]];
        let (residual, jacobians) = match &self.measurement {
            Measurement::Relative(m) => {
                let (r, ji, jj) = residual_relative(x(0), x(1), m)?;
                (DVector::from_column_slice(r.as_slice()), vec![dyn_mat(&ji), dyn_mat(&jj)])
            }
            Measurement::Pose(m) => {
                let (r, j) = residual_aerial(x(0), m)?;
                (DVector::from_column_slice(r.as_slice()), vec![dyn_mat(&j)])
            }
            Measurement::Imu { delta, gravity } => {
                let (r, ji, jj) = residual_imu(x(0), x(1), delta, gravity)?;
                (DVector::from_column_slice(r.as_slice()), vec![dyn_mat(&ji), dyn_mat(&jj)])
            }
            Measurement::Gnss { antenna, lever_arm } => {
                let (r, j) = residual_gnss(x(0), antenna, lever_arm);
                (DVector::from_column_slice(r.as_slice()), vec![dyn_mat(&j)])
            }
        };
        Ok(Linearization { residual, jacobians })
    }

    /// Residual only.
    pub fn residual(&self, states: &[State]) -> Result<DVector<f64>, GeomError> {
        Ok(self.linearize(states)?.residual)
    }
}

fn dyn_mat<const R: usize>(m: &SMatrix<f64, R, 15>) -> DMatrix<f64> {
    DMatrix::from_column_slice(R, 15, m.as_slice())
}

fn is_psd(m: &DMatrix<f64>) -> bool {
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > 1e-9 * scale {
        return false;
    }
    let eig = m.clone().symmetric_eigen();
    eig.eigenvalues.iter().all(|&l| l >= -1e-9 * scale)
}

/// Huber loss on a squared Mahalanobis norm `s` with threshold `delta`:
/// `s` inside, `2 delta sqrt(s) - delta^2` outside.
pub fn huber(s: f64, delta: f64) -> f64 {
    let d2 = delta * delta;
    if s <= d2 {
        s
    } else {
        2.0 * delta * s.sqrt() - d2
    }
}

/// IRLS weight matching [`huber`].
pub fn huber_weight(s: f64, delta: f64) -> f64 {
    if s <= delta * delta {
        1.0
    } else {
        delta / s.sqrt()
    }
}

pub const HUBER_DELTA: f64 = 1.0;

/// `r^T Λ r`, through the Huber loss for robust factors.
pub fn weighted_cost(factor: &Factor, residual: &DVector<f64>) -> f64 {
    let s = mahalanobis(&factor.information, residual);
    if factor.robust {
        huber(s, HUBER_DELTA)
    } else {
        s
    }
}

pub(crate) fn mahalanobis(info: &DMatrix<f64>, r: &DVector<f64>) -> f64 {
    (r.transpose() * info * r)[(0, 0)].max(0.0)
}

/// Loop and odometry residual: rotation rows `log(M_R^-1 R_i^-1 R_j)`,
/// translation rows `R_i^-1 (t_j - t_i) - M_t`.
pub fn residual_relative(xi: &State, xj: &State, m: &RigidTransform) -> Result<(Vec6, Jac6, Jac6), GeomError> {
    let ri = xi.pose.rotation.matrix();
    let rj = xj.pose.rotation.matrix();
    let e = Rotation3::from_matrix_unchecked(m.rotation.matrix().transpose() * ri.transpose() * rj);
    let rot = so3_log(&e)?;
    let local = ri.transpose() * (xj.pose.translation - xi.pose.translation);
    let trans = local - m.translation;

    let jinv = right_jacobian_inv(&rot);
    let mut ji = Jac6::zeros();
    let mut jj = Jac6::zeros();
    ji.fixed_view_mut::<3, 3>(0, State::ROT).copy_from(&(-jinv * rj.transpose() * ri));
    jj.fixed_view_mut::<3, 3>(0, State::ROT).copy_from(&jinv);
    ji.fixed_view_mut::<3, 3>(3, State::ROT).copy_from(&hat(&local));
    ji.fixed_view_mut::<3, 3>(3, State::POS).copy_from(&(-ri.transpose()));
    jj.fixed_view_mut::<3, 3>(3, State::POS).copy_from(&ri.transpose());
    Ok((stack(&rot, &trans), ji, jj))
}

pub fn residual_loop(xi: &State, xj: &State, m: &RigidTransform) -> Result<(Vec6, Jac6, Jac6), GeomError> {
    residual_relative(xi, xj, m)
}

pub fn residual_odometry(xi: &State, xi1: &State, m: &RigidTransform) -> Result<(Vec6, Jac6, Jac6), GeomError> {
    residual_relative(xi, xi1, m)
}

/// Aerial residual: `log(M_R^-1 R_i)` and `t_i - M_t`.
pub fn residual_aerial(xi: &State, m: &RigidTransform) -> Result<(Vec6, Jac6), GeomError> {
    let e = Rotation3::from_matrix_unchecked(m.rotation.matrix().transpose() * xi.pose.rotation.matrix());
    let rot = so3_log(&e)?;
    let trans = xi.pose.translation - m.translation;
    let mut j = Jac6::zeros();
    j.fixed_view_mut::<3, 3>(0, State::ROT).copy_from(&right_jacobian_inv(&rot));
    j.fixed_view_mut::<3, 3>(3, State::POS).copy_from(&Mat3::identity());
    Ok((stack(&rot, &trans), j))
}

/// GNSS residual: `t_i + R_i lever_arm - antenna`.
pub fn residual_gnss(xi: &State, antenna: &Vec3, lever_arm: &Vec3) -> (Vec3, Jac3) {
    let r = xi.pose.rotation.matrix();
    let res = xi.pose.translation + r * lever_arm - antenna;
    let mut j = Jac3::zeros();
    j.fixed_view_mut::<3, 3>(0, State::ROT).copy_from(&(-r * hat(lever_arm)));
    j.fixed_view_mut::<3, 3>(0, State::POS).copy_from(&Mat3::identity());
    (res, j)
}

/// IMU residual between consecutive states.
///
/// `gravity` is the gravitational acceleration in the map frame, pointing
/// down. Rows: position increment, velocity increment, rotation increment,
/// accelerometer bias change, gyroscope bias change. The increments are
/// bias-corrected to the biases of state i.
pub fn residual_imu(
    xi: &State,
    xj: &State,
    delta: &PreintegratedDelta,
    gravity: &Vec3,
) -> Result<(Vec15, Jac15, Jac15), GeomError> {
    let dt = delta.dt_total;
    let c = delta.correct_for_bias(xi.bias_acc, xi.bias_gyro);
    let dbg = xi.bias_gyro - delta.bias_gyro;
    let jb = &delta.jacobians;
    let ri = xi.pose.rotation.matrix();
    let rj = xj.pose.rotation.matrix();

    let dp = xj.pose.translation - xi.pose.translation - xi.velocity * dt - gravity * (0.5 * dt * dt);
    let dv = xj.velocity - xi.velocity - gravity * dt;
    let local_p = ri.transpose() * dp;
    let local_v = ri.transpose() * dv;
    let r_alpha = local_p - c.alpha;
    let r_beta = local_v - c.beta;
    let r_gamma = so3_log(&Rotation3::from_matrix_unchecked(c.gamma.matrix().transpose() * ri.transpose() * rj))?;
    let r_ba = xj.bias_acc - xi.bias_acc;
    let r_bg = xj.bias_gyro - xi.bias_gyro;

    let mut res = Vec15::zeros();
    for (k, part) in [r_alpha, r_beta, r_gamma, r_ba, r_bg].iter().enumerate() {
        res.fixed_rows_mut::<3>(3 * k).copy_from(part);
    }

    let (mut ji, mut jj) = (Jac15::zeros(), Jac15::zeros());
    let put = |m: &mut Jac15, row: usize, col: usize, block: Mat3| m.fixed_view_mut::<3, 3>(row, col).copy_from(&block);
    let rit = ri.transpose();
    let eye = Mat3::identity();

    put(&mut ji, 0, State::ROT, hat(&local_p));
    put(&mut ji, 0, State::POS, -rit);
    put(&mut jj, 0, State::POS, rit);
    put(&mut ji, 0, State::VEL, -rit * dt);
    put(&mut ji, 0, State::BA, -jb.alpha_ba);
    put(&mut ji, 0, State::BG, -jb.alpha_bg);

    put(&mut ji, 3, State::ROT, hat(&local_v));
    put(&mut ji, 3, State::VEL, -rit);
    put(&mut jj, 3, State::VEL, rit);
    put(&mut ji, 3, State::BA, -jb.beta_ba);
    put(&mut ji, 3, State::BG, -jb.beta_bg);

    let jinv = right_jacobian_inv(&r_gamma);
    put(&mut ji, 6, State::ROT, -jinv * rj.transpose() * ri);
    put(&mut jj, 6, State::ROT, jinv);
    let exp_neg = Rotation3::exp(&(-r_gamma));
    put(&mut ji, 6, State::BG, -jinv * exp_neg.matrix() * right_jacobian(&(jb.gamma_bg * dbg)) * jb.gamma_bg);

    put(&mut ji, 9, State::BA, -eye);
    put(&mut jj, 9, State::BA, eye);
    put(&mut ji, 12, State::BG, -eye);
    put(&mut jj, 12, State::BG, eye);
    Ok((res, ji, jj))
}

fn stack(a: &Vec3, b: &Vec3) -> Vec6 {
    Vec6::new(a.x, a.y, a.z, b.x, b.y, b.z)
}

/// Noise model the IMU information matrix is derived from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuNoise {
    /// Accelerometer white noise density (m/s²/√Hz).
    pub accel_density: f64,
    /// Gyroscope white noise density (rad/s/√Hz).
    pub gyro_density: f64,
    /// Accelerometer bias random walk (m/s³/√Hz).
    pub accel_bias_walk: f64,
    /// Gyroscope bias random walk (rad/s²/√Hz).
    pub gyro_bias_walk: f64,
}

impl Default for ImuNoise {
    fn default() -> Self {
        Self { accel_density: 0.02, gyro_density: 0.002, accel_bias_walk: 0.01, gyro_bias_walk: 0.001 }
    }
}

/// Default information matrices. All sigmas are standard deviations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InformationDefaults {
    pub odometry_rot_sigma: f64,
    pub odometry_trans_sigma: f64,
    pub aerial_rot_sigma: f64,
    pub aerial_trans_sigma: f64,
    pub loop_rot_sigma: f64,
    pub loop_trans_sigma: f64,
    pub gnss_sigma: f64,
    pub imu: ImuNoise,
}

impl Default for InformationDefaults {
    fn default() -> Self {
        Self {
            odometry_rot_sigma: 0.01,
            odometry_trans_sigma: 0.02,
            aerial_rot_sigma: 0.02,
            aerial_trans_sigma: 0.04,
            loop_rot_sigma: 0.02,
            loop_trans_sigma: 0.04,
            gnss_sigma: 0.5,
            imu: ImuNoise::default(),
        }
    }
}

/// Diagonal 6x6 information with rotation rows first.
pub fn pose_information(rot_sigma: f64, trans_sigma: f64) -> DMatrix<f64> {
    let (a, b) = (1.0 / (rot_sigma * rot_sigma), 1.0 / (trans_sigma * trans_sigma));
    DMatrix::from_diagonal(&DVector::from_column_slice(&[a, a, a, b, b, b]))
}

impl InformationDefaults {
    pub fn odometry(&self) -> DMatrix<f64> {
        pose_information(self.odometry_rot_sigma, self.odometry_trans_sigma)
    }

    /// Aerial information scaled by the registration inlier fraction.
    pub fn aerial(&self, inlier_fraction: f64) -> DMatrix<f64> {
        pose_information(self.aerial_rot_sigma, self.aerial_trans_sigma) * inlier_fraction.clamp(0.0, 1.0)
    }

    pub fn loop_closure(&self, inlier_fraction: f64) -> DMatrix<f64> {
        pose_information(self.loop_rot_sigma, self.loop_trans_sigma) * inlier_fraction.clamp(0.0, 1.0)
    }

    pub fn gnss(&self, sigma: Option<f64>) -> DMatrix<f64> {
        let s = sigma.unwrap_or(self.gnss_sigma);
        DMatrix::identity(3, 3) / (s * s)
    }

    /// Diagonal IMU information for an interval of `dt` seconds.
    pub fn imu(&self, dt: f64) -> DMatrix<f64> {
        let n = &self.imu;
        let var_v = n.accel_density * n.accel_density * dt;
        let var_p = var_v * dt * dt / 3.0;
        let var_r = n.gyro_density * n.gyro_density * dt;
        let var_ba = n.accel_bias_walk * n.accel_bias_walk * dt;
        let var_bg = n.gyro_bias_walk * n.gyro_bias_walk * dt;
        let mut d = DVector::zeros(15);
        for (k, v) in [var_p, var_v, var_r, var_ba, var_bg].iter().enumerate() {
            for r in 0..3 {
                d[3 * k + r] = 1.0 / v;
            }
        }
        DMatrix::from_diagonal(&d)
    }
}
