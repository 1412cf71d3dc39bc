use aerogt_core::cloud::{Label, PointCloud};
use aerogt_core::geom::{RigidTransform, State};
use aerogt_core::metrics::CheckpointPair;
use aerogt_core::preint::ImuSample;
use aerogt_core::sim::{inject_drift, render_als, render_gnss, render_imu, render_mls_scan_with, Scenario, Scene};
use aerogt_core::solver::GnssFix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::PipelineError;

/// Everything the sensors deliver, plus the simulator's truth.
#[derive(Debug, Clone)]
pub struct SensorData {
    pub scene: Scene,
    pub truth: Vec<State>,
    pub imu: Vec<ImuSample>,
    pub gnss: Vec<GnssFix>,
    /// Drifted relative motion between consecutive frames.
    pub odometry: Vec<RigidTransform>,
    /// Unlabeled airborne cloud.
    pub als: PointCloud,
    /// Frame index of each scan.
    pub keyframes: Vec<usize>,
    /// Unlabeled scans in the sensor frame.
    pub scans: Vec<PointCloud>,
    pub checkpoints: Vec<CheckpointPair>,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

const STREAM_IMU: u64 = 1;
const STREAM_GNSS: u64 = 2;
const STREAM_DRIFT: u64 = 3;
const STREAM_ALS: u64 = 4;
const STREAM_CHECKPOINTS: u64 = 5;
const STREAM_SCANS: u64 = 1000;

pub fn simulate(s: &Scenario, keyframe_stride: usize, checkpoints: usize) -> Result<SensorData, PipelineError> {
    let scene = s.scene().map_err(|e| PipelineError::Load(e.to_string()))?;
    let motion = s.truth();
    let truth = motion.sample_states(s.frame_rate);
    if truth.len() < 2 {
        return Err(PipelineError::Load("trajectory has fewer than two frames".into()));
    }
    let t_end = truth.last().map_or(0.0, |x| x.timestamp);
    let imu = render_imu(&motion, 0.0, t_end, &s.imu, &mut stream(s.seed, STREAM_IMU));
    let gnss = render_gnss(&motion, 0.0, t_end, &s.gnss, &mut stream(s.seed, STREAM_GNSS));
    let relatives: Vec<RigidTransform> = truth.windows(2).map(|w| w[0].pose.between(&w[1].pose)).collect();
    let odometry = inject_drift(&relatives, &s.drift, &mut stream(s.seed, STREAM_DRIFT));
    let mut als = render_als(&scene, s.als_spacing, s.als_noise, &mut stream(s.seed, STREAM_ALS)).map_err(|e| PipelineError::Load(e.to_string()))?;
    als.clear_labels();

    let keyframes: Vec<usize> = (0..truth.len()).step_by(keyframe_stride.max(1)).collect();
    let dirs = s.mls.directions();
    let labeled: Vec<PointCloud> = keyframes
        .par_iter()
        .map(|&k| render_mls_scan_with(&scene, &truth[k].pose, &s.mls, &dirs, &mut stream(s.seed, STREAM_SCANS + k as u64)))
        .collect();

    // Checkpoints: façade returns of evenly spaced scans, surveyed exactly.
    let mut rng = stream(s.seed, STREAM_CHECKPOINTS);
    let mut pairs = Vec::new();
    if checkpoints > 0 {
        let step = (keyframes.len() as f64 / checkpoints as f64).max(1.0);
        let mut pos = 0.0;
        while (pos as usize) < keyframes.len() && pairs.len() < checkpoints {
            let slot = pos as usize;
            let walls = labeled[slot].indices_with(Label::Facade);
            if !walls.is_empty() {
                let p = labeled[slot].points()[walls[rng.random_range(0..walls.len())]];
                let frame = keyframes[slot];
                pairs.push(CheckpointPair { id: pairs.len(), frame, mls_point: p, als_point: truth[frame].pose.transform_point(&p) });
            }
            pos += step;
        }
    }
    let scans = labeled
        .into_iter()
        .map(|mut c| {
            c.clear_labels();
            c
        })
        .collect();
    Ok(SensorData { scene, truth, imu, gnss, odometry, als, keyframes, scans, checkpoints: pairs })
}
