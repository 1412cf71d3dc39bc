use aerogt_core::registration::{IcpConfig, LoopDetectionConfig, LoopMatchConfig};
use aerogt_core::sim::{parse_key_values, KeyValues, Scenario, ScenarioError};
use aerogt_core::solver::LmConfig;

/// Pipeline settings, read from the `pipeline.` keys of a scenario script.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Every n-th frame carries a LiDAR scan used for submaps.
    pub keyframe_stride: usize,
    /// Metres of travel per submap.
    pub submap_length: f64,
    /// Horizontal crop radius around the anchor.
    pub submap_radius: f64,
    pub scan_voxel: f64,
    pub submap_voxel: f64,
    pub normal_radius: f64,
    /// Voxel size for ALS ground in the ICP target.
    pub als_target_voxel: f64,
    pub roof_seed_resolution: f64,
    pub facade_spacing: f64,
    /// Register-then-solve passes.
    pub rounds: usize,
    pub loops_enabled: bool,
    /// A loop measurement farther than this from the current estimate is
    /// discarded.
    pub loop_gate_translation: f64,
    pub loop_gate_rotation_deg: f64,
    pub icp: IcpConfig,
    pub loop_detection: LoopDetectionConfig,
    pub loop_match: LoopMatchConfig,
    pub lm: LmConfig,
    pub checkpoints: usize,
    pub overlays: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            keyframe_stride: 5,
            submap_length: 30.0,
            submap_radius: 35.0,
            scan_voxel: 0.3,
            submap_voxel: 0.3,
            normal_radius: 1.0,
            als_target_voxel: 0.5,
            roof_seed_resolution: 2.0,
            facade_spacing: 0.5,
            rounds: 2,
            loops_enabled: true,
            loop_gate_translation: 1.0,
            loop_gate_rotation_deg: 5.0,
            icp: IcpConfig::default(),
            loop_detection: LoopDetectionConfig::default(),
            loop_match: LoopMatchConfig::default(),
            lm: LmConfig::default(),
            checkpoints: 40,
            overlays: 0,
        }
    }
}

impl PipelineConfig {
    pub fn from_key_values(kv: &KeyValues) -> Result<Self, ScenarioError> {
        let d = Self::default();
        let p = |k: &str| format!("pipeline.{k}");
        Ok(Self {
            keyframe_stride: kv.get(&p("keyframe_stride"), d.keyframe_stride)?.max(1),
            submap_length: kv.get(&p("submap_length"), d.submap_length)?,
            submap_radius: kv.get(&p("submap_radius"), d.submap_radius)?,
            scan_voxel: kv.get(&p("scan_voxel"), d.scan_voxel)?,
            submap_voxel: kv.get(&p("submap_voxel"), d.submap_voxel)?,
            normal_radius: kv.get(&p("normal_radius"), d.normal_radius)?,
            als_target_voxel: kv.get(&p("als_target_voxel"), d.als_target_voxel)?,
            roof_seed_resolution: kv.get(&p("roof_seed_resolution"), d.roof_seed_resolution)?,
            facade_spacing: kv.get(&p("facade_spacing"), d.facade_spacing)?,
            rounds: kv.get(&p("rounds"), d.rounds)?.max(1),
            loops_enabled: kv.get(&p("loops"), d.loops_enabled)?,
            loop_gate_translation: kv.get(&p("loop_gate_translation"), d.loop_gate_translation)?,
            loop_gate_rotation_deg: kv.get(&p("loop_gate_rotation_deg"), d.loop_gate_rotation_deg)?,
            icp: IcpConfig {
                max_correspondence_distance: kv.get(&p("icp_max_distance"), d.icp.max_correspondence_distance)?,
                normal_gate_deg: kv.get(&p("icp_normal_gate_deg"), d.icp.normal_gate_deg)?,
                max_iterations: kv.get(&p("icp_max_iterations"), d.icp.max_iterations)?,
                ..d.icp
            },
            loop_detection: LoopDetectionConfig {
                min_index_gap: kv.get(&p("loop_min_gap"), d.loop_detection.min_index_gap)?,
                min_iou: kv.get(&p("loop_min_iou"), d.loop_detection.min_iou)?,
            },
            loop_match: d.loop_match,
            lm: LmConfig { max_iter: kv.get(&p("lm_max_iterations"), d.lm.max_iter)?, ..d.lm },
            checkpoints: kv.get(&p("checkpoints"), d.checkpoints)?,
            overlays: kv.get(&p("overlays"), d.overlays)?,
        })
    }
}

/// Parses a scenario script into the scenario and its pipeline settings;
/// any key neither reads is an error.
pub fn load_config(text: &str, seed: Option<u64>) -> Result<(Scenario, PipelineConfig), ScenarioError> {
    let mut kv = parse_key_values(text)?;
    if let Some(s) = seed {
        kv.set("seed", &s.to_string());
    }
    let scenario = Scenario::from_key_values(&kv)?;
    let pipeline = PipelineConfig::from_key_values(&kv)?;
    if let Some(k) = kv.unused(&[]).into_iter().next() {
        return Err(ScenarioError::UnknownKey(k));
    }
    Ok((scenario, pipeline))
}
