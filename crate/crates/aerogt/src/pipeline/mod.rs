//! End-to-end ground-truth generation: simulate or load sensors, extract
//! ALS structure, build and register submaps, detect loops, solve the
//! graph and score the result.

use aerogt_core::cloud::{voxel_downsample, PointCloud};
use aerogt_core::geom::{RigidTransform, State, Vec3};
use aerogt_core::metrics::{absolute_trajectory_error, checkpoint_errors, rre_rte, ErrorStats};
use aerogt_core::preint::{preintegrate, split_by_frames, PreintegratedDelta};
use aerogt_core::registration::{detect_loops, make_aerial_factor, match_loop_pair, IcpTarget, Submap};
use aerogt_core::sim::Scenario;
use aerogt_core::solver::{assemble_graph, lm_solve, AerialMeasurement, GraphInputs, LoopMeasurement, SolveReport};
use rayon::prelude::*;

use crate::report::RunReport;

mod config;
mod extract;
mod simulate;

pub use config::{load_config, PipelineConfig};
pub use extract::{als_target, extract_als, label_scans, normals_by_class, AlsProducts};
pub use simulate::{simulate, SensorData};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PipelineError {
    #[error("load: {0}")]
    Load(String),
    #[error("extract: {0}")]
    Extract(String),
    #[error("register: {0}")]
    Register(String),
    #[error("optimize: {0}")]
    Optimize(String),
    #[error("evaluate: {0}")]
    Evaluate(String),
    #[error("output: {0}")]
    Output(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Load(_) => 2,
            Self::Extract(_) => 3,
            Self::Register(_) => 4,
            Self::Optimize(_) => 5,
            Self::Evaluate(_) | Self::Output(_) => 6,
        }
    }
}

/// Keyframe slots `[start, end)` covering one stretch of travel.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub anchor_slot: usize,
    pub travel: (f64, f64),
}

/// Splits keyframes into stretches of `length` metres; a final stretch
/// shorter than half that joins its predecessor.
pub fn segment_keyframes(keyframes: &[usize], poses: &[RigidTransform], length: f64) -> Vec<Segment> {
    let mut dist = vec![0.0; keyframes.len()];
    for s in 1..keyframes.len() {
        dist[s] = dist[s - 1] + (poses[keyframes[s]].translation - poses[keyframes[s - 1]].translation).norm();
    }
    let mut bounds = Vec::new();
    let mut start = 0;
    while start < keyframes.len() {
        let mut end = start + 1;
        while end < keyframes.len() && dist[end - 1] - dist[start] < length {
            end += 1;
        }
        bounds.push((start, end));
        start = end;
    }
    if bounds.len() > 1 {
        let (s, e) = bounds[bounds.len() - 1];
        if dist[e - 1] - dist[s] < length * 0.5 {
            bounds.pop();
            bounds.last_mut().expect("non-empty").1 = e;
        }
    }
    bounds
        .into_iter()
        .map(|(start, end)| Segment { start, end, anchor_slot: (start + end - 1) / 2, travel: (dist[start], dist[end - 1]) })
        .collect()
}

/// Merges a segment's scans into the map frame, cropped around the anchor.
pub fn build_submap(
    id: usize,
    seg: &Segment,
    keyframes: &[usize],
    scans: &[PointCloud],
    poses: &[RigidTransform],
    cfg: &PipelineConfig,
) -> Result<Submap, PipelineError> {
    let anchor = keyframes[seg.anchor_slot];
    let anchor_pose = poses[anchor];
    let centre = anchor_pose.translation.xy();
    let mut merged = PointCloud::default();
    for slot in seg.start..seg.end {
        let world = scans[slot].transformed(&poses[keyframes[slot]]);
        let keep: Vec<usize> =
            (0..world.len()).filter(|&i| (world.points()[i].xy() - centre).norm() <= cfg.submap_radius).collect();
        merged.append(&world.select(&keep));
    }
    let thin = voxel_downsample(&merged, cfg.submap_voxel);
    let cloud = normals_by_class(&thin, cfg.normal_radius)?;
    Submap::new(id, cloud, anchor, anchor_pose, seg.travel).map_err(|e| PipelineError::Register(format!("submap {id}: {e}")))
}

/// Inputs shared by the registration and optimisation stages.
pub struct Prepared {
    pub scenario: Scenario,
    pub config: PipelineConfig,
    pub data: SensorData,
    pub als: AlsProducts,
    pub target: IcpTarget,
    /// Scans thinned and labeled ground / other, in the sensor frame.
    pub scans: Vec<PointCloud>,
    pub dead_reckoning: Vec<RigidTransform>,
    pub segments: Vec<Segment>,
}

pub fn dead_reckon(start: RigidTransform, odometry: &[RigidTransform]) -> Vec<RigidTransform> {
    let mut out = Vec::with_capacity(odometry.len() + 1);
    out.push(start);
    for rel in odometry {
        let last = *out.last().expect("non-empty");
        out.push(last.compose(rel));
    }
    out
}

/// Simulation, ALS extraction and scan labeling.
pub fn prepare(scenario: &Scenario, cfg: &PipelineConfig) -> Result<Prepared, PipelineError> {
    let data = simulate(scenario, cfg.keyframe_stride, cfg.checkpoints)?;
    let als = extract_als(&data.als, scenario.als_spacing, cfg)?;
    let target = als_target(&als, cfg)?;
    let scans = label_scans(&data.scans, cfg)?;
    let dead_reckoning = dead_reckon(data.truth[0].pose, &data.odometry);
    let segments = segment_keyframes(&data.keyframes, &dead_reckoning, cfg.submap_length);
    Ok(Prepared { scenario: scenario.clone(), config: cfg.clone(), data, als, target, scans, dead_reckoning, segments })
}

/// First pass: register submaps in travel order, carrying each correction
/// forward so the next submap starts close to the ALS.
pub fn register_incremental(p: &Prepared) -> Result<(Vec<RigidTransform>, Vec<AerialMeasurement>), PipelineError> {
    let mut poses = p.dead_reckoning.clone();
    let mut aerial = Vec::new();
    for (id, seg) in p.segments.iter().enumerate() {
        let submap = build_submap(id, seg, &p.data.keyframes, &p.scans, &poses, &p.config)?;
        if let Some(m) = make_aerial_factor(&submap, &p.target, &p.config.icp) {
            let correction = m.pose.compose(&submap.anchor_pose.inverse());
            for pose in &mut poses[p.data.keyframes[seg.start]..] {
                *pose = correction.compose(pose);
            }
            aerial.push(m);
        }
    }
    Ok((poses, aerial))
}

/// Later passes: rebuild every submap from the current estimate and
/// register them independently; also detect and match loops.
pub fn register_all(p: &Prepared, poses: &[RigidTransform]) -> Result<(Vec<AerialMeasurement>, Vec<LoopMeasurement>, usize), PipelineError> {
    let submaps: Vec<Submap> = p
        .segments
        .par_iter()
        .enumerate()
        .map(|(id, seg)| build_submap(id, seg, &p.data.keyframes, &p.scans, poses, &p.config))
        .collect::<Result<_, _>>()?;
    let aerial: Vec<AerialMeasurement> =
        submaps.par_iter().filter_map(|s| make_aerial_factor(s, &p.target, &p.config.icp)).collect();
    if !p.config.loops_enabled {
        return Ok((aerial, Vec::new(), 0));
    }
    let candidates = detect_loops(&submaps, &p.config.loop_detection);
    let gate_t = p.config.loop_gate_translation;
    let gate_r = p.config.loop_gate_rotation_deg.to_radians();
    let loops = candidates
        .par_iter()
        .filter_map(|&(i, j, _)| {
            let m = match_loop_pair(&submaps[i], &submaps[j], &p.config.loop_match)?;
            let predicted = poses[m.i].between(&poses[m.j]);
            let gap = predicted.between(&m.relative);
            (gap.translation.norm() <= gate_t && gap.rotation.angle() <= gate_r).then_some(m)
        })
        .collect();
    Ok((aerial, loops, candidates.len()))
}

/// States for the solver: poses with finite-difference velocities.
pub fn initial_states(poses: &[RigidTransform], times: &[f64]) -> Vec<State> {
    let n = poses.len();
    (0..n)
        .map(|k| {
            let (a, b) = (k.saturating_sub(1), (k + 1).min(n - 1));
            let velocity = if b > a {
                (poses[b].translation - poses[a].translation) / (times[b] - times[a])
            } else {
                Vec3::zeros()
            };
            State { velocity, ..State::at_pose(poses[k], times[k]) }
        })
        .collect()
}

pub fn imu_deltas(p: &Prepared) -> Vec<Option<PreintegratedDelta>> {
    let times: Vec<f64> = p.data.truth.iter().map(|s| s.timestamp).collect();
    split_by_frames(&p.data.imu, &times)
        .iter()
        .map(|batch| preintegrate(batch, Vec3::zeros(), Vec3::zeros()).ok())
        .collect()
}

pub fn solve(
    p: &Prepared,
    states: Vec<State>,
    imu: &[Option<PreintegratedDelta>],
    aerial: &[AerialMeasurement],
    loops: &[LoopMeasurement],
) -> Result<(Vec<State>, SolveReport, GraphCounts), PipelineError> {
    let mut inputs = GraphInputs::new(states);
    inputs.odometry = p.data.odometry.clone();
    inputs.imu = imu.to_vec();
    inputs.gnss = p.data.gnss.clone();
    inputs.loops = loops.to_vec();
    inputs.aerial = aerial.to_vec();
    inputs.lever_arm = p.scenario.gnss.lever_arm;
    let graph = assemble_graph(&inputs).map_err(|e| PipelineError::Optimize(e.to_string()))?;
    use aerogt_core::factors::FactorKind;
    let counts = GraphCounts {
        odometry: graph.count(FactorKind::Odometry),
        imu: graph.count(FactorKind::Imu),
        gnss: graph.count(FactorKind::Gnss),
        aerial: graph.count(FactorKind::Aerial),
        loops: graph.count(FactorKind::Loop),
    };
    let (states, report) = lm_solve(&graph, &p.config.lm).map_err(|e| PipelineError::Optimize(e.to_string()))?;
    Ok((states, report, counts))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GraphCounts {
    pub odometry: usize,
    pub imu: usize,
    pub gnss: usize,
    pub aerial: usize,
    pub loops: usize,
}

pub struct PipelineRun {
    pub prepared: Prepared,
    pub states: Vec<State>,
    pub solves: Vec<SolveReport>,
    pub aerial: Vec<AerialMeasurement>,
    pub loops: Vec<LoopMeasurement>,
    pub loop_candidates: usize,
    pub counts: GraphCounts,
    pub open_loop: ErrorStats,
    pub ate: ErrorStats,
    pub report: RunReport,
}

impl PipelineRun {
    pub fn poses(&self) -> Vec<RigidTransform> {
        self.states.iter().map(|s| s.pose).collect()
    }
}

pub fn run_pipeline(scenario: &Scenario, cfg: &PipelineConfig) -> Result<PipelineRun, PipelineError> {
    let p = prepare(scenario, cfg)?;
    let times: Vec<f64> = p.data.truth.iter().map(|s| s.timestamp).collect();
    let imu = imu_deltas(&p);

    let (poses, mut aerial) = register_incremental(&p)?;
    if aerial.is_empty() && p.data.gnss.is_empty() {
        return Err(PipelineError::Register("no submap registered to the ALS and no GNSS".into()));
    }
    let mut loops = Vec::new();
    let mut loop_candidates = 0;
    let (mut states, first, mut counts) = solve(&p, initial_states(&poses, &times), &imu, &aerial, &loops)?;
    let mut solves = vec![first];
    for _ in 1..cfg.rounds {
        let current: Vec<RigidTransform> = states.iter().map(|s| s.pose).collect();
        let (a, l, c) = register_all(&p, &current)?;
        aerial = a;
        loops = l;
        loop_candidates = c;
        let (s, r, n) = solve(&p, states, &imu, &aerial, &loops)?;
        states = s;
        solves.push(r);
        counts = n;
    }
    finish(p, states, solves, aerial, loops, loop_candidates, counts)
}

fn evaluate_err(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Evaluate(e.to_string())
}

fn finish(
    p: Prepared,
    states: Vec<State>,
    solves: Vec<SolveReport>,
    aerial: Vec<AerialMeasurement>,
    loops: Vec<LoopMeasurement>,
    loop_candidates: usize,
    counts: GraphCounts,
) -> Result<PipelineRun, PipelineError> {
    let truth: Vec<RigidTransform> = p.data.truth.iter().map(|s| s.pose).collect();
    let estimate: Vec<RigidTransform> = states.iter().map(|s| s.pose).collect();
    let open_loop = absolute_trajectory_error(&p.dead_reckoning, &truth).map_err(evaluate_err)?;
    let ate = absolute_trajectory_error(&estimate, &truth).map_err(evaluate_err)?;
    let (mut rre, mut rte) = (0.0, 0.0);
    for (t, e) in truth.iter().zip(&estimate) {
        let (r, d) = rre_rte(t, e);
        rre += r;
        rte += d;
    }
    let n = truth.len() as f64;
    let last = solves.last().expect("at least one solve");
    let monotone = solves.iter().all(|s| s.cost_trace.windows(2).all(|w| w[1] <= w[0]));

    let mut r = RunReport::default();
    r.push("scenario", &p.scenario.name);
    r.push("seed", p.scenario.seed);
    r.push("frames", truth.len());
    r.push("keyframes", p.data.keyframes.len());
    r.push("submaps", p.segments.len());
    r.push("als_points", p.data.als.len());
    r.push("als_roof_regions", p.als.roof_regions);
    r.push("als_facade_points", p.als.facades.len());
    r.push("odometry_factors", counts.odometry);
    r.push("imu_factors", counts.imu);
    r.push("gnss_factors", counts.gnss);
    r.push("aerial_factors", counts.aerial);
    r.push("loop_candidates", loop_candidates);
    r.push("loop_factors", counts.loops);
    r.push("rounds", solves.len());
    r.push("lm_iterations", last.iterations);
    r.push("lm_termination", last.termination.name());
    r.push("lm_rejected_steps", last.rejected_steps);
    r.push("lm_cost_monotone", monotone);
    r.push_f64("initial_cost", last.initial_cost);
    r.push_f64("final_cost", last.final_cost);
    r.push("final_gradient_norm", format_args!("{:.3e}", last.final_gradient_norm));
    r.push_f64("open_loop_ate_rmse", open_loop.rmse);
    r.push_f64("open_loop_ate_max", open_loop.max);
    r.push_f64("ate_rmse", ate.rmse);
    r.push_f64("ate_mean", ate.mean);
    r.push_f64("ate_max", ate.max);
    r.push_f64("rre_mean_deg", rre / n);
    r.push_f64("rte_mean", rte / n);
    if !p.data.checkpoints.is_empty() {
        let cp = checkpoint_errors(&p.data.checkpoints, &estimate).map_err(evaluate_err)?;
        r.push("checkpoints", cp.count);
        r.push_f64("checkpoint_avg", cp.mean);
        r.push_f64("checkpoint_min", cp.min);
        r.push_f64("checkpoint_max", cp.max);
    }
    r.push("converged", last.termination == aerogt_core::solver::Termination::Converged);
    Ok(PipelineRun { prepared: p, states, solves, aerial, loops, loop_candidates, counts, open_loop, ate, report: r })
}
