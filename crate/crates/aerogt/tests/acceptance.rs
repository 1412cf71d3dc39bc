//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails. Pass criterion numbers as arguments
//! to run a subset.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Mutex;
use std::time::Instant;

use aerogt::dataio::{
    encode_las, format_patch_index, format_pose_file, parse_las, parse_patch_index, parse_pose_file, project_als_to_image, tile_als,
    tile_of, Calibration, CameraModel, LasFormat, PatchEntry,
};
use aerogt::pipeline::{build_submap, label_scans, load_config, prepare, run_pipeline, PipelineConfig, PipelineRun, Prepared};
use aerogt_core::cloud::{
    classify_roofs, complete_facades, eigen_features, segment_ground, segment_ground_with, supervoxel_segment, FacadeConfig,
    GroundConfig, PointCloud, Supervoxel,
};
use aerogt_core::factors::{Factor, InformationDefaults};
use aerogt_core::geom::{so3_exp, so3_log, Mat3, RigidTransform, Rotation3, State, Vec3, GRAVITY};
use aerogt_core::metrics::{recall_at_k, rre_rte, EmbeddingSet};
use aerogt_core::preint::{preintegrate, ImuSample, PreintegratedDelta};
use aerogt_core::registration::{icp_with_target, match_loop_pair, IcpConfig, IcpTarget, LoopMatchConfig, Submap};
use aerogt_core::sim::{render_als, render_imu, render_mls_scan_with, Building, Ground, ImuConfig, Scenario, Scene};
use aerogt_core::solver::{
    build_normal_equations, dense_normal_equations, lm_solve, BlockCholesky, LmConfig, PoseGraph,
};
use nalgebra::{DMatrix, DVector, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

/// Cost traces of every solve made by the suite, checked under criterion 5.
static TRACES: Mutex<Vec<(String, bool)>> = Mutex::new(Vec::new());

fn record_traces(label: &str, run: &PipelineRun) {
    let mut t = TRACES.lock().unwrap();
    for (k, s) in run.solves.iter().enumerate() {
        t.push((format!("{label} round {k}"), monotone(&s.cost_trace)));
    }
}

fn monotone(trace: &[f64]) -> bool {
    trace.windows(2).all(|w| w[1] <= w[0])
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("end-to-end nominal_city", nominal_city),
        ("GNSS-denied", gnss_denied),
        ("factor Jacobians", jacobians),
        ("preintegration oracle", preintegration),
        ("geometry and solver", geometry_and_solver),
        ("feature extraction", features),
        ("registration", registration),
        ("metrics", metrics),
        ("formats", formats),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let n = k + 1;
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n} [{name}]: PASS ({detail}; {secs:.1} s)"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} [{name}]: FAIL ({detail}; {secs:.1} s)");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}

fn scenario(text: &str) -> (Scenario, PipelineConfig) {
    load_config(text, None).expect("scenario script parses")
}

const NOMINAL: &str = include_str!("../../../scenarios/nominal_city.txt");
const DENIED: &str = include_str!("../../../scenarios/gnss_denied.txt");

// 1 ---------------------------------------------------------------------

fn nominal_city() -> Outcome {
    let (s, cfg) = scenario(NOMINAL);
    ensure!(s.scene_size == 200.0 && s.buildings == 12, "scene is not the 200 m / 12 building city");
    let loop_length = s.truth().path().length();
    ensure!((loop_length - 400.0).abs() < 20.0, "loop length {loop_length:.1} m");
    ensure!(s.frame_rate == 10.0 && s.imu.rate == 200.0, "sensor rates");
    ensure!(s.gnss.rate == 1.0 && s.gnss.sigma == 0.5, "GNSS settings");

    let start = Instant::now();
    let run = run_pipeline(&s, &cfg).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    record_traces("nominal_city", &run);
    let last = run.solves.last().unwrap();
    ensure!(last.termination == aerogt_core::solver::Termination::Converged, "LM ended with {}", last.termination.name());
    ensure!(run.open_loop.rmse > 0.5, "open-loop drift only {:.3} m", run.open_loop.rmse);
    ensure!(run.ate.rmse < 0.15, "ATE RMSE {:.4} m", run.ate.rmse);
    ensure!(run.ate.max < 0.30, "ATE max {:.4} m", run.ate.max);
    ensure!(secs < 120.0, "runtime {secs:.1} s");
    Ok(format!(
        "ATE rmse {:.3} m, max {:.3} m, open-loop rmse {:.2} m, checkpoints avg {} m, pipeline {secs:.1} s",
        run.ate.rmse,
        run.ate.max,
        run.open_loop.rmse,
        run.report.get("checkpoint_avg").unwrap_or("n/a")
    ))
}

// 2 ---------------------------------------------------------------------

fn gnss_denied() -> Outcome {
    let (s, cfg) = scenario(DENIED);
    ensure!(s.gnss_denied(), "scenario still has GNSS");
    let run = run_pipeline(&s, &cfg).map_err(|e| e.to_string())?;
    record_traces("gnss_denied", &run);
    ensure!(run.prepared.data.gnss.is_empty() && run.counts.gnss == 0, "GNSS factors present");
    ensure!(run.counts.aerial > 0, "no aerial factors");
    let last = run.solves.last().unwrap();
    ensure!(last.termination == aerogt_core::solver::Termination::Converged, "LM ended with {}", last.termination.name());
    ensure!(run.ate.rmse < 0.25, "ATE RMSE {:.4} m", run.ate.rmse);
    Ok(format!("ATE rmse {:.3} m with {} aerial factors and no GNSS", run.ate.rmse, run.counts.aerial))
}

// 3 ---------------------------------------------------------------------

fn rand_vec(rng: &mut ChaCha8Rng, s: f64) -> Vec3 {
    Vec3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s))
}

fn rand_pose(rng: &mut ChaCha8Rng, rot: f64, trans: f64) -> RigidTransform {
    RigidTransform::new(Rotation3::exp(&rand_vec(rng, rot)), rand_vec(rng, trans))
}

fn rand_state(rng: &mut ChaCha8Rng, t: f64) -> State {
    State {
        pose: rand_pose(rng, 1.5, 20.0),
        velocity: rand_vec(rng, 5.0),
        bias_acc: rand_vec(rng, 0.1),
        bias_gyro: rand_vec(rng, 0.01),
        timestamp: t,
    }
}

fn rand_delta(rng: &mut ChaCha8Rng) -> PreintegratedDelta {
    let w0 = rand_vec(rng, 0.6);
    let w1 = rand_vec(rng, 0.6);
    let a0 = rand_vec(rng, 3.0) - GRAVITY;
    let a1 = rand_vec(rng, 3.0);
    let n = rng.random_range(5..40);
    let samples: Vec<ImuSample> = (0..=n)
        .map(|k| {
            let t = k as f64 * 0.005;
            ImuSample { timestamp: t, gyro: w0 + w1 * t, accel: a0 + a1 * t }
        })
        .collect();
    preintegrate(&samples, rand_vec(rng, 0.05), rand_vec(rng, 0.005)).unwrap()
}

/// Central differences of the residual along each of the 15 tangent
/// directions of one state.
fn numeric_jacobian(factor: &Factor, states: &[State], idx: usize) -> DMatrix<f64> {
    let h = 1e-6;
    let rows = factor.kind().dim();
    let mut j = DMatrix::zeros(rows, 15);
    for k in 0..15 {
        let mut d = [0.0; 15];
        d[k] = h;
        let mut plus = states.to_vec();
        plus[idx] = states[idx].retract(&d);
        d[k] = -h;
        let mut minus = states.to_vec();
        minus[idx] = states[idx].retract(&d);
        let diff = (factor.residual(&plus).unwrap() - factor.residual(&minus).unwrap()) / (2.0 * h);
        j.set_column(k, &diff);
    }
    j
}

fn jacobians() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let d = InformationDefaults::default();
    let mut worst: Vec<(String, f64)> = Vec::new();
    let kinds = ["loop", "odometry", "aerial", "gnss", "imu"];
    for (slot, kind) in kinds.iter().enumerate() {
        let mut max_rel: f64 = 0.0;
        for _ in 0..100 {
            let dt = rng.random_range(0.05..0.3);
            let states = vec![rand_state(&mut rng, 0.0), rand_state(&mut rng, dt)];
            let factor = match slot {
                0 => Factor::loop_closure(0, 1, rand_pose(&mut rng, 1.0, 10.0), d.loop_closure(rng.random_range(0.3..1.0))),
                1 => Factor::odometry(0, rand_pose(&mut rng, 0.3, 2.0), d.odometry()),
                2 => Factor::aerial(1, rand_pose(&mut rng, 1.5, 20.0), d.aerial(rng.random_range(0.3..1.0))),
                3 => Factor::gnss(0, rand_vec(&mut rng, 20.0), rand_vec(&mut rng, 1.0), d.gnss(None)),
                _ => {
                    let delta = rand_delta(&mut rng);
                    Factor::imu(0, delta, GRAVITY, d.imu(delta.dt_total))
                }
            }
            .map_err(|e| e.to_string())?;
            let lin = factor.linearize(&states).map_err(|e| e.to_string())?;
            for (k, &idx) in factor.states().iter().enumerate() {
                let numeric = numeric_jacobian(&factor, &states, idx);
                let rel = (&lin.jacobians[k] - &numeric).norm() / numeric.norm().max(1e-8);
                max_rel = max_rel.max(rel);
            }
        }
        worst.push((kind.to_string(), max_rel));
    }
    let summary = worst.iter().map(|(k, e)| format!("{k} {e:.1e}")).collect::<Vec<_>>().join(", ");
    for (k, e) in &worst {
        ensure!(*e < 1e-4, "{k} Jacobian relative error {e:.2e} ({summary})");
    }
    Ok(format!("max relative error over 100 configurations: {summary}"))
}

// 4 ---------------------------------------------------------------------

/// Trapezoidal world-frame integration of the raw samples, expressed in the
/// first sample's body frame with gravity removed.
fn reintegrate(samples: &[ImuSample], r0: Mat3, v0: Vec3, ba: Vec3, bg: Vec3) -> (Vec3, Vec3, Mat3) {
    let (mut r, mut v, mut p) = (r0, v0, Vec3::zeros());
    for w in samples.windows(2) {
        let dt = w[1].timestamp - w[0].timestamp;
        let omega = (w[0].gyro + w[1].gyro) * 0.5 - bg;
        let r1 = r * so3_exp(&(omega * dt)).matrix();
        let a = (r * (w[0].accel - ba) + r1 * (w[1].accel - ba)) * 0.5 + GRAVITY;
        p += v * dt + a * (0.5 * dt * dt);
        v += a * dt;
        r = r1;
    }
    let total = samples.last().unwrap().timestamp - samples[0].timestamp;
    (
        r0.transpose() * (p - v0 * total - GRAVITY * (0.5 * total * total)),
        r0.transpose() * (v - v0 - GRAVITY * total),
        r0.transpose() * r,
    )
}

fn preintegration() -> Outcome {
    use aerogt_core::sim::Motion;
    let (s, _) = scenario(NOMINAL);
    let motion = s.truth();
    let ideal = ImuConfig { rate: 200.0, ..ImuConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut worst_direct, mut worst_concat): (f64, f64) = (0.0, 0.0);
    let segments: Vec<f64> = (0..16).map(|k| k as f64 * 4.9).collect();
    for (n, &t0) in segments.iter().enumerate() {
        let samples = render_imu(&motion, t0, t0 + 1.0, &ideal, &mut rng);
        ensure!(samples.len() == 201, "segment at {t0} has {} samples", samples.len());
        let (ba, bg) = if n % 2 == 0 { (Vec3::zeros(), Vec3::zeros()) } else { (rand_vec(&mut rng, 0.05), rand_vec(&mut rng, 0.002)) };
        let d = preintegrate(&samples, ba, bg).map_err(|e| e.to_string())?;
        let pose = motion.pose(samples[0].timestamp);
        let (alpha, beta, gamma) = reintegrate(&samples, *pose.rotation.matrix(), motion.velocity(samples[0].timestamp), ba, bg);
        let e = (d.alpha - alpha).amax().max((d.beta - beta).amax()).max((d.gamma.matrix() - gamma).amax());
        worst_direct = worst_direct.max(e);

        let cut = rng.random_range(20..180);
        let joined = preintegrate(&samples[..=cut], ba, bg).unwrap().compose(&preintegrate(&samples[cut..], ba, bg).unwrap());
        let e = (joined.alpha - d.alpha).amax().max((joined.beta - d.beta).amax()).max((joined.gamma.matrix() - d.gamma.matrix()).amax());
        worst_concat = worst_concat.max(e);
    }
    ensure!(worst_direct < 1e-8, "preintegration vs re-integration {worst_direct:.2e}");
    ensure!(worst_concat < 1e-7, "concatenation error {worst_concat:.2e}");
    Ok(format!("16 one-second spline segments: direct {worst_direct:.1e}, concatenation {worst_concat:.1e}"))
}

// 5 ---------------------------------------------------------------------

fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> (PoseGraph, Vec<State>) {
    let d = InformationDefaults::default();
    let mut truth = vec![State::at_pose(RigidTransform::identity(), 0.0)];
    for k in 1..n {
        let step = RigidTransform::new(Rotation3::exp(&rand_vec(rng, 0.1)), Vec3::new(0.5, 0.0, 0.0) + rand_vec(rng, 0.1));
        let pose = truth[k - 1].pose.compose(&step);
        truth.push(State { velocity: rand_vec(rng, 2.0), ..State::at_pose(pose, k as f64 * 0.1) });
    }
    let mut factors = Vec::new();
    for k in 0..n - 1 {
        factors.push(Factor::odometry(k, truth[k].pose.between(&truth[k + 1].pose), d.odometry()).unwrap());
        if rng.random_bool(0.5) {
            let delta = rand_delta(rng);
            factors.push(Factor::imu(k, delta, GRAVITY, d.imu(delta.dt_total)).unwrap());
        }
    }
    for _ in 0..n / 3 {
        let (i, j) = (rng.random_range(0..n), rng.random_range(0..n));
        if i != j {
            let noisy = truth[i].pose.between(&truth[j].pose).compose(&rand_pose(rng, 0.02, 0.05));
            factors.push(Factor::loop_closure(i, j, noisy, d.loop_closure(0.8)).unwrap());
        }
        let k = rng.random_range(0..n);
        factors.push(Factor::aerial(k, truth[k].pose.compose(&rand_pose(rng, 0.02, 0.05)), d.aerial(0.9)).unwrap());
        let k = rng.random_range(0..n);
        factors.push(Factor::gnss(k, truth[k].pose.translation + rand_vec(rng, 0.5), rand_vec(rng, 1.0), d.gnss(None)).unwrap());
    }
    let graph = PoseGraph::new(truth.clone(), factors, vec![0]).unwrap();
    let start: Vec<State> = truth
        .iter()
        .enumerate()
        .map(|(k, s)| {
            if k == 0 {
                return *s;
            }
            let mut delta = [0.0; 15];
            for (i, v) in delta.iter_mut().enumerate() {
                *v = rng.random_range(-0.1..0.1) * if i < 6 { 1.0 } else { 0.1 };
            }
            s.retract(&delta)
        })
        .collect();
    (graph, start)
}

fn geometry_and_solver() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst_log: f64 = 0.0;
    for k in 0..10_000 {
        let axis = rand_vec(&mut rng, 1.0);
        let axis = if axis.norm() < 1e-6 { Vec3::x() } else { axis.normalize() };
        // Spread magnitudes from the small-angle series out to near pi.
        let angle = match k % 4 {
            0 => rng.random_range(0.0..1e-6),
            1 => rng.random_range(1e-6..1e-2),
            _ => rng.random_range(1e-2..std::f64::consts::PI - 1e-3),
        };
        let omega = axis * angle;
        let back = so3_log(&so3_exp(&omega)).map_err(|e| e.to_string())?;
        worst_log = worst_log.max((back - omega).amax());
    }
    ensure!(worst_log < 1e-12, "exp/log roundtrip error {worst_log:.2e}");

    let mut worst_ne: f64 = 0.0;
    let mut worst_solve: f64 = 0.0;
    for n in 2..=20 {
        let (graph, start) = random_graph(&mut rng, n);
        let ne = build_normal_equations(&graph, &start).map_err(|e| e.to_string())?;
        let (h, b) = dense_normal_equations(&graph, &start).map_err(|e| e.to_string())?;
        let dh = (ne.hessian.to_dense() - &h).amax() / h.amax();
        let db = (ne.dense_gradient() - &b).amax() / b.amax().max(1e-12);
        worst_ne = worst_ne.max(dh).max(db);

        // Same step from the block factorization and a dense solve, with
        // the fixed state's block pinned to identity in both.
        let mut hs = ne.hessian.clone();
        let mut hd = h.clone();
        let mut bd = b.clone();
        let mut bs = ne.gradient.clone();
        for k in 0..n {
            let mut damp = aerogt_core::solver::Block::zeros();
            for i in 0..15 {
                damp[(i, i)] = 1e-6 * (1.0 + hd[(15 * k + i, 15 * k + i)]);
            }
            hs.add(k, k, &damp);
            for i in 0..15 {
                hd[(15 * k + i, 15 * k + i)] += damp[(i, i)];
            }
        }
        for i in 0..15 {
            for j in 0..15 * n {
                hd[(i, j)] = 0.0;
                hd[(j, i)] = 0.0;
            }
            hd[(i, i)] = 1.0;
            bd[i] = 0.0;
        }
        let mut pinned = aerogt_core::solver::BlockMatrix::zeros(n);
        for (i, j) in hs.pattern() {
            if i != 0 && j != 0 {
                pinned.add(i, j, &hs.block(i, j).unwrap());
            }
        }
        for k in 0..n {
            let block = if k == 0 { aerogt_core::solver::Block::identity() } else { hs.block(k, k).unwrap() };
            pinned.add(k, k, &block);
        }
        bs[0] = aerogt_core::solver::BVec::zeros();
        let chol = BlockCholesky::factor(&pinned).ok_or("block Cholesky failed")?;
        let xs = aerogt_core::solver::to_dense_vec(&chol.solve(&bs));
        let xd: DVector<f64> = hd.clone().lu().solve(&bd).ok_or("dense solve failed")?;
        worst_solve = worst_solve.max((xs - &xd).amax() / xd.amax().max(1e-12));

        let (_, report) = lm_solve(&graph, &LmConfig::default()).map_err(|e| e.to_string())?;
        TRACES.lock().unwrap().push((format!("random graph n={n}"), monotone(&report.cost_trace)));
    }
    ensure!(worst_ne < 1e-9, "sparse vs dense normal equations {worst_ne:.2e}");
    ensure!(worst_solve < 1e-9, "sparse vs dense step {worst_solve:.2e}");
    let traces = TRACES.lock().unwrap();
    let bad: Vec<&str> = traces.iter().filter(|(_, ok)| !ok).map(|(l, _)| l.as_str()).collect();
    ensure!(bad.is_empty(), "cost increased in {bad:?}");
    Ok(format!(
        "exp/log {worst_log:.1e}; normal equations {worst_ne:.1e}; steps {worst_solve:.1e}; {} monotone LM traces",
        traces.len()
    ))
}

// 6 ---------------------------------------------------------------------

fn features() -> Outcome {
    // Roof classification on supervoxels of a simulated ALS block.
    let scene = Scene::new(
        Ground::Flat { elevation: 0.0 },
        vec![
            Building { min: Vector2::new(5.0, 5.0), max: Vector2::new(20.0, 17.0), height: 12.0 },
            Building { min: Vector2::new(30.0, 8.0), max: Vector2::new(42.0, 30.0), height: 20.0 },
            Building { min: Vector2::new(8.0, 32.0), max: Vector2::new(22.0, 44.0), height: 9.0 },
        ],
        (Vector2::new(0.0, 0.0), Vector2::new(50.0, 50.0)),
    )
    .map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut als = render_als(&scene, 0.25, 0.03, &mut rng).map_err(|e| e.to_string())?;
    als.clear_labels();
    let featured = eigen_features(&als, 1.0).map_err(|e| e.to_string())?;
    let ground = segment_ground(&featured).map_err(|e| e.to_string())?;
    let mut is_ground = vec![false; featured.len()];
    for &g in &ground.ground {
        is_ground[g] = true;
    }
    let rest: Vec<usize> = (0..featured.len()).filter(|&i| !is_ground[i]).collect();
    let non_ground = featured.select(&rest);
    let supervoxels = supervoxel_segment(&non_ground, 2.0).map_err(|e| e.to_string())?;
    let roofs = classify_roofs(&supervoxels);
    let brute: Vec<&Supervoxel> = supervoxels.iter().filter(|s| s.planarity > 0.5 && s.verticality < 0.3).collect();
    ensure!(roofs.len() == brute.len(), "{} roofs vs {} by brute force", roofs.len(), brute.len());
    for (a, b) in roofs.iter().zip(&brute) {
        ensure!(a == *b, "roof set differs from the brute-force selection");
    }
    ensure!(!roofs.is_empty(), "no roofs found");

    // Facade completion on box roofs against the closed-form count.
    let cfg = FacadeConfig::default();
    let boxes = [(10.0, 10.0, 20.0), (12.3, 7.7, 15.2), (6.0, 25.5, 8.0), (3.1, 3.1, 0.9)];
    for &(w, l, h) in &boxes {
        let (nx, ny) = (41usize, 37usize);
        let pts: Vec<Vec3> = (0..nx)
            .flat_map(|i| (0..ny).map(move |j| Vec3::new(w * i as f64 / (nx - 1) as f64, l * j as f64 / (ny - 1) as f64, h)))
            .collect();
        let cloud = PointCloud::new(pts);
        let roof = Supervoxel {
            members: (0..cloud.len()).collect(),
            centroid: Vec3::new(w / 2.0, l / 2.0, h),
            normal: Vec3::z(),
            planarity: 0.9,
            verticality: 0.0,
        };
        let out = complete_facades(&cloud, &[roof], |_, _| 0.0, &cfg);
        let columns = |len: f64| (len / cfg.edge_spacing).ceil() as usize;
        let per_column = (h / cfg.vertical_spacing).floor() as usize + 1;
        let expected = 2 * (columns(w) + columns(l)) * per_column;
        ensure!(out.facades.len() == expected, "box {w}x{l}x{h}: {} facade points, formula {expected}", out.facades.len());
    }

    // Ground RANSAC with 30 % outliers.
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let tilt = Rotation3::from_axis_angle(
            &Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0).normalize(),
            rng.random_range(0.0..5f64.to_radians()),
        );
        let mut pts: Vec<Vec3> = (0..7000)
            .map(|_| tilt.rotate(&Vec3::new(rng.random_range(-15.0..15.0), rng.random_range(-15.0..15.0), rng.random_range(-0.02..0.02))))
            .collect();
        let inliers = pts.len();
        let outliers = inliers * 3 / 7;
        for _ in 0..outliers {
            pts.push(Vec3::new(rng.random_range(-15.0..15.0), rng.random_range(-15.0..15.0), rng.random_range(0.5..10.0)));
        }
        let seg = segment_ground_with(&PointCloud::new(pts), &GroundConfig { seed, ..GroundConfig::default() }).map_err(|e| e.to_string())?;
        let truth = tilt.rotate(&Vec3::z());
        let err = seg.plane.normal.dot(&truth).abs().clamp(-1.0, 1.0).acos().to_degrees();
        worst = worst.max(err);
    }
    ensure!(worst < 0.5, "ground normal error {worst:.3} deg");
    Ok(format!(
        "{} roofs match brute force; {} box facades exact; ground normal error {worst:.3} deg over 20 seeds",
        roofs.len(),
        boxes.len()
    ))
}

// 7 ---------------------------------------------------------------------

fn transform_error(a: &RigidTransform, b: &RigidTransform) -> (f64, f64) {
    let d = a.between(b);
    (d.translation.norm(), d.rotation.angle().to_degrees())
}

/// Submaps of the nominal city aggregated at the true poses, from scans
/// rendered with the given noise seed.
fn truth_submaps(p: &Prepared, noise_seed: u64) -> Vec<Submap> {
    let truth: Vec<RigidTransform> = p.data.truth.iter().map(|s| s.pose).collect();
    let dirs = p.scenario.mls.directions();
    let scans: Vec<PointCloud> = p
        .data
        .keyframes
        .iter()
        .map(|&k| {
            let mut rng = ChaCha8Rng::seed_from_u64(noise_seed ^ (k as u64) << 16);
            let mut scan = render_mls_scan_with(&p.data.scene, &truth[k], &p.scenario.mls, &dirs, &mut rng);
            scan.clear_labels();
            scan
        })
        .collect();
    let labeled = label_scans(&scans, &p.config).unwrap();
    p.segments
        .iter()
        .enumerate()
        .map(|(id, seg)| build_submap(id, seg, &p.data.keyframes, &labeled, &truth, &p.config).unwrap())
        .collect()
}

fn registration() -> Outcome {
    let (s, cfg) = scenario(NOMINAL);
    let p = prepare(&s, &cfg).map_err(|e| e.to_string())?;
    // Two renderings of every submap with independent scan noise; the
    // second, perturbed, is registered onto the first.
    let submaps = truth_submaps(&p, 17);
    let again = truth_submaps(&p, 23);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let icp = IcpConfig::default();
    let (mut worst_t, mut worst_r): (f64, f64) = (0.0, 0.0);
    let mut cases = 0;
    for (sub, other) in submaps.iter().zip(&again).step_by(3) {
        let target = IcpTarget::new(&sub.local_cloud(), 1.0).map_err(|e| e.to_string())?;
        let local = other.local_cloud();
        for _ in 0..4 {
            let axis = rand_vec(&mut rng, 1.0).normalize();
            let dir = rand_vec(&mut rng, 1.0).normalize();
            let perturbation = RigidTransform::new(Rotation3::from_axis_angle(&axis, 5f64.to_radians()), dir);
            let moved = local.transformed(&perturbation);
            let r = icp_with_target(&moved, &target, &RigidTransform::identity(), &icp).map_err(|e| e.to_string())?;
            let (dt, dr) = transform_error(&r.transform, &perturbation.inverse());
            worst_t = worst_t.max(dt);
            worst_r = worst_r.max(dr);
            cases += 1;
        }
    }
    ensure!(worst_t < 0.02 && worst_r < 0.1, "ICP error ({worst_t:.4} m, {worst_r:.4} deg) over {cases} cases");

    // Loop matcher: the second rendering anchored 1 m and 10 deg away.
    let rel = RigidTransform::new(Rotation3::about_z(10f64.to_radians()), Vec3::new(0.6, -0.8, 0.0));
    let (mut loop_t, mut loop_r): (f64, f64) = (0.0, 0.0);
    let mut matched = 0;
    for k in [1usize, 4, 7, 10] {
        let a = &submaps[k];
        let b = &again[k];
        let moved = Submap::new(100 + k, b.cloud.clone(), b.anchor + 1, a.anchor_pose.compose(&rel), b.travel).map_err(|e| e.to_string())?;
        let m = match_loop_pair(a, &moved, &LoopMatchConfig::default()).ok_or(format!("submap {k}: no loop match"))?;
        let (dt, dr) = transform_error(&m.relative, &rel);
        loop_t = loop_t.max(dt);
        loop_r = loop_r.max(dr);
        matched += 1;
    }
    ensure!(loop_t < 0.05 && loop_r < 0.3, "loop matcher error ({loop_t:.4} m, {loop_r:.4} deg)");
    Ok(format!(
        "ICP worst ({worst_t:.4} m, {worst_r:.4} deg) over {cases} (1 m, 5 deg) cases; loop matcher worst ({loop_t:.4} m, {loop_r:.4} deg) over {matched} pairs"
    ))
}

// 8 ---------------------------------------------------------------------

fn unit_vectors(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect()
}

fn metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let dim = 16;
    let qv = unit_vectors(&mut rng, 200, dim);
    let dv = unit_vectors(&mut rng, 2000, dim);
    let pos = |rng: &mut ChaCha8Rng| Vec3::new(rng.random_range(0.0..300.0), rng.random_range(0.0..300.0), 0.0);
    let qp: Vec<Vec3> = (0..200).map(|_| pos(&mut rng)).collect();
    let dp: Vec<Vec3> = (0..2000).map(|_| pos(&mut rng)).collect();
    let q = EmbeddingSet::new((0..200).collect(), &qv, qp.clone()).map_err(|e| e.to_string())?;
    let db = EmbeddingSet::new((0..2000).collect(), &dv, dp.clone()).map_err(|e| e.to_string())?;
    let ks = [1usize, 5, 20];
    let got = recall_at_k(&q, &db, &ks, 20.0).map_err(|e| e.to_string())?;
    // Brute force: full sort by score, ties to the lower index.
    let mut hits = [0usize; 3];
    for (i, v) in qv.iter().enumerate() {
        let mut order: Vec<(f64, usize)> = dv.iter().enumerate().map(|(j, w)| (v.iter().zip(w).map(|(a, b)| a * b).sum(), j)).collect();
        order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for (slot, &k) in ks.iter().enumerate() {
            if order[..k].iter().any(|&(_, j)| (dp[j] - qp[i]).norm() <= 20.0) {
                hits[slot] += 1;
            }
        }
    }
    let expected: Vec<f64> = hits.iter().map(|&h| h as f64 / 200.0).collect();
    ensure!(got == expected, "recall {got:?} vs brute force {expected:?}");

    let id = RigidTransform::identity();
    for axis in [Vec3::x(), Vec3::y(), Vec3::z()] {
        let r = RigidTransform::new(Rotation3::from_axis_angle(&axis, 5f64.to_radians()), Vec3::zeros());
        let (rre, rte) = rre_rte(&id, &r);
        ensure!((rre - 5.0).abs() < 1e-12 && rte == 0.0, "single-axis 5 deg gives ({rre}, {rte})");
        let (back, _) = rre_rte(&r, &id);
        ensure!((back - rre).abs() < 1e-12, "single-axis RRE is not symmetric");
    }
    let (rre, rte) = rre_rte(&id, &id);
    ensure!(rre == 0.0 && rte == 0.0, "identical transforms give ({rre}, {rte})");
    Ok(format!("R@1/5/20 = {:.3}/{:.3}/{:.3} equal brute force; single-axis RRE exact", got[0], got[1], got[2]))
}

// 9 ---------------------------------------------------------------------

fn formats() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let poses: Vec<RigidTransform> = (0..100).map(|_| rand_pose(&mut rng, 3.0, 500.0)).collect();
    let back = parse_pose_file(&format_pose_file(&poses)).map_err(|e| e.to_string())?;
    ensure!(back == poses, "pose file roundtrip is not exact");

    let entries: Vec<PatchEntry> = (0..50)
        .map(|k| PatchEntry {
            image: format!("img_{k:04}.png"),
            patch: format!("tile_{}_{}.las", k % 7, k / 7),
            center: Vector2::new(rng.random_range(-1e4..1e4), rng.random_range(-1e4..1e4)),
        })
        .collect();
    ensure!(parse_patch_index(&format_patch_index(&entries)).map_err(|e| e.to_string())? == entries, "patch index roundtrip");

    let pts: Vec<Vec3> = (0..1000)
        .map(|_| Vec3::new(rng.random_range(-500.0..500.0), rng.random_range(-500.0..500.0), rng.random_range(-20.0..80.0)))
        .collect();
    for fmt in [(2, 0), (2, 1), (3, 2), (4, 3)] {
        let format = LasFormat { version_minor: fmt.0, point_format: fmt.1 };
        let cloud = parse_las(&encode_las(&pts, format).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        ensure!(cloud.len() == pts.len(), "LAS 1.{} format {}: {} points", fmt.0, fmt.1, cloud.len());
        let worst = cloud.points().iter().zip(&pts).map(|(a, b)| (a - b).amax()).fold(0.0, f64::max);
        ensure!(worst <= 0.0005 + 1e-9, "LAS 1.{} format {}: error {worst}", fmt.0, fmt.1);
    }

    let cloud: Vec<Vec3> = (0..100_000)
        .map(|_| Vec3::new(rng.random_range(-250.0..250.0), rng.random_range(-250.0..250.0), rng.random_range(0.0..40.0)))
        .collect();
    let tiles = tile_als(&cloud, 10.0);
    let mut seen = vec![0u8; cloud.len()];
    for t in &tiles {
        for (&i, p) in t.indices.iter().zip(&t.points) {
            seen[i] += 1;
            ensure!(*p == cloud[i] && tile_of(p, 10.0) == (t.ix, t.iy), "point {i} in the wrong tile");
            ensure!((p.x - t.center.x).abs() <= 5.0 && (p.y - t.center.y).abs() <= 5.0, "tile centre");
        }
    }
    ensure!(seen.iter().all(|&c| c == 1), "tiles do not partition the points");

    // Box corners seen by a forward camera; pixels from the pinhole model
    // written out by hand.
    let (fx, fy, cx, cy) = (500.0, 480.0, 320.0, 240.0);
    let cam = CameraModel::pinhole(fx, fy, cx, cy, 640, 480).map_err(|e| e.to_string())?;
    let cal = Calibration::forward(cam);
    let yaw: f64 = 0.3;
    let eye = Vec3::new(2.0, -1.0, 1.5);
    let pose = RigidTransform::new(Rotation3::about_z(yaw), eye);
    let (lo, hi) = (Vec3::new(20.0, 3.0, 0.0), Vec3::new(26.0, 9.0, 8.0));
    let corners: Vec<Vec3> = (0..8).map(|k| Vec3::new([lo.x, hi.x][k & 1], [lo.y, hi.y][(k >> 1) & 1], [lo.z, hi.z][k >> 2])).collect();
    let projections = project_als_to_image(&corners, &pose, &cal.extrinsic, &cal.camera);
    let mut checked = 0;
    for pr in &projections {
        let d = corners[pr.index] - eye;
        let (c, s) = (yaw.cos(), yaw.sin());
        let (forward, left, up) = (c * d.x + s * d.y, -s * d.x + c * d.y, d.z);
        let (u, v) = (cx + fx * (-left) / forward, cy + fy * (-up) / forward);
        ensure!((pr.u - u).abs() < 1.0 && (pr.v - v).abs() < 1.0, "corner {} at ({}, {}) vs ({u}, {v})", pr.index, pr.u, pr.v);
        checked += 1;
    }
    ensure!(checked >= 4, "only {checked} corners in view");
    Ok(format!("100 poses, 50 patch rows, 4 LAS layouts, 1e5-point tiling, {checked} box corners within 1 px"))
}
