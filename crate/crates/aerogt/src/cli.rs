//! The `aerogt` command line.
//!
//! Exit codes: 0 success, 1 usage or generic failure, 2 load, 3 extract,
//! 4 register, 5 optimize, 6 evaluate or output.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use aerogt_core::cloud::PointCloud;
use aerogt_core::geom::{RigidTransform, State};
use aerogt_core::metrics::{absolute_trajectory_error, checkpoint_errors, rre_rte};
use aerogt_core::sim::Scenario;
use clap::{Parser, Subcommand};

use crate::dataio::{
    project_als_to_image, render_depth_overlay, write_las_points, write_ppm, Calibration, CameraModel, DataError, LasFormat,
    SequenceBundle, TILE_SIDE,
};
use crate::pipeline::{
    extract_als, initial_states, load_config, prepare, register_incremental, run_pipeline, simulate, PipelineConfig, PipelineError,
    PipelineRun,
};
use crate::report::{read_trajectory_csv, write_trajectory_csv, RunReport};

#[derive(Debug, Parser)]
#[command(name = "aerogt", version, about = "Ground-truth trajectories for mobile LiDAR from airborne scans")]
pub struct Cli {
    /// Scenario script (`key = value` lines); the built-in city when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for every output file.
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the sensors and write the ALS, truth and a dataset bundle.
    Simulate,
    /// Extract ground, roofs and completed façades from the ALS.
    Extract,
    /// Register submaps to the ALS in travel order.
    Register,
    /// Run registration and graph optimisation; write the trajectory.
    Optimize,
    /// Score a trajectory CSV against the simulator truth.
    Evaluate {
        #[arg(long)]
        trajectory: PathBuf,
    },
    /// Render ALS depth overlays for every image of a dataset bundle.
    Project {
        #[arg(long)]
        bundle: PathBuf,
        /// Render at most this many images.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Full pipeline: report, trajectory and optional overlays.
    Run,
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Help and version requests are not failures; clap's own usage
            // code would collide with the load-stage code.
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("aerogt: {e}");
            e.exit_code()
        }
    }
}

fn load_err(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Load(e.to_string())
}

fn output_err(e: DataError) -> PipelineError {
    PipelineError::Output(e.to_string())
}

/// Reads the scenario script, or the defaults when none is given.
pub fn load_scenario(config: Option<&Path>, seed: Option<u64>) -> Result<(Scenario, PipelineConfig), PipelineError> {
    let text = match config {
        Some(path) => std::fs::read_to_string(path).map_err(|e| PipelineError::Load(format!("{}: {e}", path.display())))?,
        None => String::new(),
    };
    load_config(&text, seed).map_err(load_err)
}

pub fn execute(cli: &Cli) -> Result<(), PipelineError> {
    let (scenario, cfg) = load_scenario(cli.config.as_deref(), cli.seed)?;
    let out = &cli.out_dir;
    std::fs::create_dir_all(out).map_err(|e| PipelineError::Output(format!("{}: {e}", out.display())))?;
    match &cli.command {
        Command::Simulate => cmd_simulate(&scenario, &cfg, out),
        Command::Extract => cmd_extract(&scenario, &cfg, out),
        Command::Register => cmd_register(&scenario, &cfg, out),
        Command::Optimize => {
            let run = run_pipeline(&scenario, &cfg)?;
            write_trajectory_csv(&out.join("trajectory.csv"), &run.states).map_err(output_err)?;
            write_text(&out.join("solve.txt"), &solve_summary(&run))
        }
        Command::Evaluate { trajectory } => cmd_evaluate(&scenario, &cfg, trajectory, out),
        Command::Project { bundle, limit } => cmd_project(bundle, *limit, out),
        Command::Run => cmd_run(&scenario, &cfg, out),
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    std::fs::write(path, text).map_err(|e| PipelineError::Output(format!("{}: {e}", path.display())))
}

fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<(), PipelineError> {
    write_las_points(path, cloud.points(), LasFormat::default()).map_err(output_err)
}

/// Default camera for simulated sequences.
pub fn default_calibration() -> Calibration {
    Calibration::forward(CameraModel::pinhole(320.0, 320.0, 320.0, 240.0, 640, 480).expect("valid intrinsics"))
}

fn cmd_simulate(scenario: &Scenario, cfg: &PipelineConfig, out: &Path) -> Result<(), PipelineError> {
    let data = simulate(scenario, cfg.keyframe_stride, cfg.checkpoints)?;
    write_cloud(&out.join("als.las"), &data.als)?;
    write_trajectory_csv(&out.join("truth.csv"), &data.truth).map_err(output_err)?;
    let times: Vec<f64> = data.truth.iter().map(|s| s.timestamp).collect();
    let dead = crate::pipeline::dead_reckon(data.truth[0].pose, &data.odometry);
    write_trajectory_csv(&out.join("dead_reckoning.csv"), &initial_states(&dead, &times)).map_err(output_err)?;
    let key_poses: Vec<RigidTransform> = data.keyframes.iter().map(|&k| data.truth[k].pose).collect();
    let bundle = SequenceBundle::write(&out.join("bundle"), data.als.points(), &key_poses, &default_calibration(), TILE_SIDE)
        .map_err(output_err)?;
    let mut r = RunReport::default();
    r.push("scenario", &scenario.name);
    r.push("seed", scenario.seed);
    r.push("frames", data.truth.len());
    r.push("imu_samples", data.imu.len());
    r.push("gnss_fixes", data.gnss.len());
    r.push("als_points", data.als.len());
    r.push("scans", data.scans.len());
    r.push("bundle_images", bundle.entries.len());
    write_text(&out.join("simulate.txt"), &r.to_string())
}

fn cmd_extract(scenario: &Scenario, cfg: &PipelineConfig, out: &Path) -> Result<(), PipelineError> {
    let data = simulate(scenario, cfg.keyframe_stride, 0)?;
    let als = extract_als(&data.als, scenario.als_spacing, cfg)?;
    write_cloud(&out.join("ground.las"), &als.ground)?;
    write_cloud(&out.join("roofs.las"), &als.roofs)?;
    write_cloud(&out.join("facades.las"), &als.facades)?;
    let mut r = RunReport::default();
    r.push("als_points", data.als.len());
    r.push("ground_points", als.ground.len());
    r.push("roof_points", als.roofs.len());
    r.push("roof_regions", als.roof_regions);
    r.push("facade_points", als.facades.len());
    let n = als.ground_plane.normal;
    r.push("ground_normal", format_args!("{:.6} {:.6} {:.6}", n.x, n.y, n.z));
    write_text(&out.join("extract.txt"), &r.to_string())
}

fn cmd_register(scenario: &Scenario, cfg: &PipelineConfig, out: &Path) -> Result<(), PipelineError> {
    let p = prepare(scenario, cfg)?;
    let (poses, aerial) = register_incremental(&p)?;
    let times: Vec<f64> = p.data.truth.iter().map(|s| s.timestamp).collect();
    write_trajectory_csv(&out.join("registered.csv"), &initial_states(&poses, &times)).map_err(output_err)?;
    let mut s = String::from("# state inlier_fraction m00 .. m33\n");
    for m in &aerial {
        let t = m.pose.to_matrix();
        let _ = write!(s, "{} {:.6}", m.state, m.inlier_fraction);
        for i in 0..16 {
            let _ = write!(s, " {}", t[(i / 4, i % 4)]);
        }
        s.push('\n');
    }
    write_text(&out.join("aerial.txt"), &s)?;
    if aerial.is_empty() {
        return Err(PipelineError::Register("no submap registered to the ALS".into()));
    }
    Ok(())
}

fn cmd_evaluate(scenario: &Scenario, cfg: &PipelineConfig, trajectory: &Path, out: &Path) -> Result<(), PipelineError> {
    let estimate: Vec<RigidTransform> = read_trajectory_csv(trajectory).map_err(load_err)?.into_iter().map(|(_, t)| t).collect();
    let data = simulate(scenario, cfg.keyframe_stride, cfg.checkpoints)?;
    let truth: Vec<RigidTransform> = data.truth.iter().map(|s| s.pose).collect();
    let eval = |e: aerogt_core::metrics::MetricsError| PipelineError::Evaluate(e.to_string());
    let ate = absolute_trajectory_error(&estimate, &truth).map_err(eval)?;
    let mut r = RunReport::default();
    r.push("frames", truth.len());
    r.push_f64("ate_rmse", ate.rmse);
    r.push_f64("ate_mean", ate.mean);
    r.push_f64("ate_max", ate.max);
    let (rre, rte) = truth.iter().zip(&estimate).map(|(t, e)| rre_rte(t, e)).fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    r.push_f64("rre_mean_deg", rre / truth.len() as f64);
    r.push_f64("rte_mean", rte / truth.len() as f64);
    if !data.checkpoints.is_empty() {
        let cp = checkpoint_errors(&data.checkpoints, &estimate).map_err(eval)?;
        r.push("checkpoints", cp.count);
        r.push_f64("checkpoint_avg", cp.mean);
        r.push_f64("checkpoint_min", cp.min);
        r.push_f64("checkpoint_max", cp.max);
    }
    print!("{r}");
    write_text(&out.join("evaluation.txt"), &r.to_string())
}

fn cmd_project(root: &Path, limit: Option<usize>, out: &Path) -> Result<(), PipelineError> {
    let bundle = SequenceBundle::load(root).map_err(load_err)?;
    let dir = out.join("overlays");
    std::fs::create_dir_all(&dir).map_err(|e| PipelineError::Output(format!("{}: {e}", dir.display())))?;
    let cal = &bundle.calibration;
    for (entry, pose) in bundle.entries.iter().zip(&bundle.poses).take(limit.unwrap_or(usize::MAX)) {
        let patch = bundle.load_patch(entry).map_err(load_err)?;
        let projections = project_als_to_image(patch.points(), pose, &cal.extrinsic, &cal.camera);
        let image = render_depth_overlay(&projections, &cal.camera);
        let stem = Path::new(&entry.image).file_stem().map_or_else(|| entry.image.clone(), |s| s.to_string_lossy().into_owned());
        write_ppm(&dir.join(format!("{stem}.ppm")), &image).map_err(output_err)?;
    }
    Ok(())
}

fn solve_summary(run: &PipelineRun) -> String {
    let mut r = RunReport::default();
    for (k, s) in run.solves.iter().enumerate() {
        r.push(&format!("round{k}.iterations"), s.iterations);
        r.push(&format!("round{k}.termination"), s.termination.name());
        r.push_f64(&format!("round{k}.initial_cost"), s.initial_cost);
        r.push_f64(&format!("round{k}.final_cost"), s.final_cost);
    }
    r.to_string()
}

/// Depth overlays of the ALS seen from evenly spaced optimized poses.
pub fn render_overlays(run: &PipelineRun, count: usize, out: &Path) -> Result<usize, PipelineError> {
    if count == 0 {
        return Ok(0);
    }
    let cal = default_calibration();
    let states: &[State] = &run.states;
    let als = run.prepared.data.als.points();
    let step = (states.len() / count).max(1);
    let mut written = 0;
    for k in (0..states.len()).step_by(step).take(count) {
        let projections = project_als_to_image(als, &states[k].pose, &cal.extrinsic, &cal.camera);
        let image = render_depth_overlay(&projections, &cal.camera);
        write_ppm(&out.join(format!("overlay_{k:05}.ppm")), &image).map_err(output_err)?;
        written += 1;
    }
    Ok(written)
}

fn cmd_run(scenario: &Scenario, cfg: &PipelineConfig, out: &Path) -> Result<(), PipelineError> {
    let run = run_pipeline(scenario, cfg)?;
    write_trajectory_csv(&out.join("trajectory.csv"), &run.states).map_err(output_err)?;
    let mut report = run.report.clone();
    let overlays = render_overlays(&run, cfg.overlays, out)?;
    if overlays > 0 {
        report.push("overlays", overlays);
    }
    print!("{report}");
    write_text(&out.join("report.txt"), &report.to_string())
}
