use alloc::vec::Vec;

#[allow(unused_imports)] // float methods under no_std
use nalgebra::ComplexField;

use super::{PoseGraph, SolverError};
use crate::factors::{Factor, InformationDefaults};
use crate::geom::{RigidTransform, State, Vec3, GRAVITY};
use crate::preint::PreintegratedDelta;

/// Antenna position fix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GnssFix {
    pub timestamp: f64,
    pub position: Vec3,
    /// Per-fix standard deviation (m); the configured default when `None`.
    pub sigma: Option<f64>,
}

/// Relative pose of state `j` in state `i` from submap matching.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopMeasurement {
    pub i: usize,
    pub j: usize,
    pub relative: RigidTransform,
    pub inlier_fraction: f64,
}

/// Absolute pose of a submap anchor state from registration to the
/// airborne reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AerialMeasurement {
    pub state: usize,
    pub pose: RigidTransform,
    pub inlier_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GaugeMode {
    /// Always hold the first state.
    FixFirst,
    /// Hold the first state only when no absolute factor exists.
    #[default]
    Auto,
    /// Hold nothing.
    Free,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphInputs {
    /// Initial estimates, one per LiDAR frame.
    pub states: Vec<State>,
    /// Relative pose between consecutive frames; empty or one per gap.
    pub odometry: Vec<RigidTransform>,
    /// Preintegrated IMU between consecutive frames; empty or one per gap.
    pub imu: Vec<Option<PreintegratedDelta>>,
    pub gnss: Vec<GnssFix>,
    pub loops: Vec<LoopMeasurement>,
    pub aerial: Vec<AerialMeasurement>,
    pub lever_arm: Vec3,
    pub gravity: Vec3,
    pub information: InformationDefaults,
    pub gauge: GaugeMode,
    /// A fix attaches to the nearest frame within this many seconds.
    pub gnss_time_tolerance: f64,
}

impl GraphInputs {
    pub fn new(states: Vec<State>) -> Self {
        Self {
            states,
            odometry: Vec::new(),
            imu: Vec::new(),
            gnss: Vec::new(),
            loops: Vec::new(),
            aerial: Vec::new(),
            lever_arm: Vec3::zeros(),
            gravity: GRAVITY,
            information: InformationDefaults::default(),
            gauge: GaugeMode::Auto,
            gnss_time_tolerance: 0.05,
        }
    }
}

/// Index of the state nearest in time to `t`, if within `tol`.
fn nearest_state(states: &[State], t: f64, tol: f64) -> Option<usize> {
    let k = states.partition_point(|s| s.timestamp < t);
    [k.checked_sub(1), Some(k)]
        .into_iter()
        .flatten()
        .filter(|&i| i < states.len())
        .map(|i| (i, (states[i].timestamp - t).abs()))
        .filter(|&(_, d)| d <= tol)
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
}

/// Builds the graph: one state per frame, odometry and IMU factors between
/// neighbours, GNSS factors at fix times, plus loop and aerial factors.
pub fn assemble_graph(inputs: &GraphInputs) -> Result<PoseGraph, SolverError> {
    let n = inputs.states.len();
    if n == 0 {
        return Err(SolverError::EmptyTrajectory);
    }
    let gaps = n - 1;
    for (what, got) in [("odometry", inputs.odometry.len()), ("imu", inputs.imu.len())] {
        if got != 0 && got != gaps {
            return Err(SolverError::InputLength { what, expected: gaps, got });
        }
    }
    let info = &inputs.information;
    let mut factors = Vec::new();
    for (k, rel) in inputs.odometry.iter().enumerate() {
        factors.push(Factor::odometry(k, *rel, info.odometry())?);
    }
    for (k, delta) in inputs.imu.iter().enumerate() {
        if let Some(d) = delta {
            factors.push(Factor::imu(k, *d, inputs.gravity, info.imu(d.dt_total))?);
        }
    }
    for fix in &inputs.gnss {
        if let Some(k) = nearest_state(&inputs.states, fix.timestamp, inputs.gnss_time_tolerance) {
            factors.push(Factor::gnss(k, fix.position, inputs.lever_arm, info.gnss(fix.sigma))?);
        }
    }
    for l in &inputs.loops {
        if l.i >= n || l.j >= n {
            return Err(SolverError::InvalidIndex { factor: factors.len(), state: l.i.max(l.j), count: n });
        }
        factors.push(Factor::loop_closure(l.i, l.j, l.relative, info.loop_closure(l.inlier_fraction))?);
    }
    for a in &inputs.aerial {
        if a.state >= n {
            return Err(SolverError::InvalidIndex { factor: factors.len(), state: a.state, count: n });
        }
        factors.push(Factor::aerial(a.state, a.pose, info.aerial(a.inlier_fraction))?);
    }
    let has_absolute = factors.iter().any(|f| f.kind().is_absolute());
    let fixed = match inputs.gauge {
        GaugeMode::FixFirst => alloc::vec![0],
        GaugeMode::Auto if !has_absolute => alloc::vec![0],
        _ => Vec::new(),
    };
    PoseGraph::new(inputs.states.clone(), factors, fixed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factors::FactorKind;
    use crate::geom::Rotation3;
    use crate::preint::{preintegrate, ImuSample};
    use alloc::vec;

    fn frames(n: usize) -> Vec<State> {
        (0..n)
            .map(|k| State::at_pose(RigidTransform::from_translation(Vec3::new(k as f64, 0.0, 0.0)), k as f64 * 0.1))
            .collect()
    }

    fn delta() -> PreintegratedDelta {
        let s: Vec<ImuSample> = (0..=20)
            .map(|k| ImuSample { timestamp: k as f64 * 0.005, gyro: Vec3::zeros(), accel: Vec3::new(0.0, 0.0, 9.81) })
            .collect();
        preintegrate(&s, Vec3::zeros(), Vec3::zeros()).unwrap()
    }

    #[test]
    fn full_coverage_counts() {
        let states = frames(10);
        let mut inp = GraphInputs::new(states.clone());
        inp.odometry = states.windows(2).map(|w| w[0].pose.between(&w[1].pose)).collect();
        inp.imu = vec![Some(delta()); 9];
        inp.gnss = states.iter().map(|s| GnssFix { timestamp: s.timestamp, position: s.pose.translation, sigma: None }).collect();
        inp.loops.push(LoopMeasurement { i: 0, j: 9, relative: RigidTransform::identity(), inlier_fraction: 0.8 });
        let g = assemble_graph(&inp).unwrap();
        assert_eq!(g.count(FactorKind::Odometry), 9);
        assert_eq!(g.count(FactorKind::Imu), 9);
        assert_eq!(g.count(FactorKind::Gnss), 10);
        assert_eq!(g.count(FactorKind::Loop), 1);
        assert!(g.fixed().is_empty());
    }

    #[test]
    fn gauge_fallbacks() {
        let states = frames(5);
        let mut inp = GraphInputs::new(states.clone());
        inp.odometry = states.windows(2).map(|w| w[0].pose.between(&w[1].pose)).collect();
        assert_eq!(assemble_graph(&inp).unwrap().fixed(), &[0]);
        inp.aerial.push(AerialMeasurement { state: 2, pose: RigidTransform::new(Rotation3::identity(), Vec3::new(2.0, 0.0, 0.0)), inlier_fraction: 0.9 });
        let g = assemble_graph(&inp).unwrap();
        assert!(g.fixed().is_empty());
        assert!(g.gauge_fixed());
    }

    #[test]
    fn empty_and_mismatched_inputs() {
        assert_eq!(assemble_graph(&GraphInputs::new(vec![])), Err(SolverError::EmptyTrajectory));
        let mut inp = GraphInputs::new(frames(3));
        inp.odometry = vec![RigidTransform::identity()];
        assert!(matches!(assemble_graph(&inp), Err(SolverError::InputLength { .. })));
    }

    #[test]
    fn fixes_snap_to_nearby_frames() {
        let s = frames(5);
        assert_eq!(nearest_state(&s, 0.21, 0.05), Some(2));
        assert_eq!(nearest_state(&s, 0.25, 0.01), None);
        assert_eq!(nearest_state(&s, 9.0, 0.05), None);
    }
}
