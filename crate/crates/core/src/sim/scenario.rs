//! Scenario scripts: `key = value` lines, `#` comments.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cell::RefCell;
use core::str::FromStr;

#[allow(unused_imports)] // float methods under no_std
use nalgebra::{ComplexField, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Building, DriftConfig, GnssConfig, Ground, ImuConfig, LoopPath, MlsConfig, Scene, SimError, TrajectoryTruth};
use crate::geom::Vec3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error("line {0}: expected `key = value`")]
    MalformedLine(usize),
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("key `{key}`: cannot parse `{value}`")]
    BadValue { key: String, value: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error(transparent)]
    Scene(#[from] SimError),
}

/// Parsed `key = value` pairs that remember which keys were read.
#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    map: BTreeMap<String, String>,
    used: RefCell<BTreeSet<String>>,
}

pub fn parse_key_values(text: &str) -> Result<KeyValues, ScenarioError> {
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(ScenarioError::MalformedLine(n + 1))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(ScenarioError::MalformedLine(n + 1));
        }
        if map.insert(k.to_string(), v.to_string()).is_some() {
            return Err(ScenarioError::DuplicateKey { line: n + 1, key: k.to_string() });
        }
    }
    Ok(KeyValues { map, used: RefCell::new(BTreeSet::new()) })
}

impl KeyValues {
    pub fn raw(&self, key: &str) -> Option<&str> {
        let v = self.map.get(key)?;
        self.used.borrow_mut().insert(key.to_string());
        Some(v.as_str())
    }

    pub fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T, ScenarioError> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| ScenarioError::BadValue { key: key.to_string(), value: v.to_string() }),
        }
    }

    /// Three comma-separated numbers.
    pub fn vec3(&self, key: &str, default: Vec3) -> Result<Vec3, ScenarioError> {
        let Some(v) = self.raw(key) else { return Ok(default) };
        let bad = || ScenarioError::BadValue { key: key.to_string(), value: v.to_string() };
        let parts: Vec<f64> = v.split(',').map(|s| s.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|_| bad())?;
        match parts.as_slice() {
            [x, y, z] => Ok(Vec3::new(*x, *y, *z)),
            _ => Err(bad()),
        }
    }

    pub fn set(&mut self, key: &str, value: &str) {
        self.map.insert(key.to_string(), value.to_string());
    }

    /// Keys never read, excluding those under any of `prefixes`.
    pub fn unused(&self, prefixes: &[&str]) -> Vec<String> {
        let used = self.used.borrow();
        self.map
            .keys()
            .filter(|k| !used.contains(*k) && !prefixes.iter().any(|p| k.starts_with(p)))
            .cloned()
            .collect()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(|k| k.as_str())
    }
}

/// Everything needed to synthesize one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub scene_size: f64,
    pub buildings: usize,
    pub ground: Ground,
    pub loop_side: f64,
    pub control_spacing: f64,
    pub speed: f64,
    pub laps: f64,
    pub mount_height: f64,
    pub frame_rate: f64,
    pub imu: ImuConfig,
    pub gnss: GnssConfig,
    pub drift: DriftConfig,
    pub als_spacing: f64,
    pub als_noise: f64,
    pub mls: MlsConfig,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "nominal_city".to_string(),
            seed: 42,
            scene_size: 200.0,
            buildings: 12,
            ground: Ground::Flat { elevation: 0.0 },
            loop_side: 100.0,
            control_spacing: 5.0,
            speed: 5.0,
            laps: 1.0,
            mount_height: 2.0,
            frame_rate: 10.0,
            imu: ImuConfig {
                rate: 200.0,
                accel_density: 0.004,
                gyro_density: 0.0003,
                bias_acc: Vec3::new(0.02, -0.015, 0.01),
                bias_gyro: Vec3::new(0.0005, -0.0003, 0.0004),
            },
            gnss: GnssConfig { rate: 1.0, sigma: 0.5, lever_arm: Vec3::new(0.0, 0.0, 0.5), dropouts: Vec::new() },
            drift: DriftConfig::default(),
            als_spacing: 0.25,
            als_noise: 0.03,
            mls: MlsConfig::default(),
        }
    }
}

fn dropouts(v: &str) -> Option<Vec<(f64, f64)>> {
    let v = v.trim();
    if v == "none" || v.is_empty() {
        return Some(Vec::new());
    }
    if v == "all" {
        return Some(alloc::vec![(f64::NEG_INFINITY, f64::INFINITY)]);
    }
    v.split(',')
        .map(|iv| {
            let (a, b) = iv.split_once(':')?;
            Some((a.trim().parse().ok()?, b.trim().parse().ok()?))
        })
        .collect()
}

impl Scenario {
    /// Reads every non-`pipeline.` key; unknown ones are an error.
    pub fn from_key_values(kv: &KeyValues) -> Result<Self, ScenarioError> {
        let d = Scenario::default();
        let ground = match kv.raw("scene.ground").unwrap_or("flat") {
            "flat" => Ground::Flat { elevation: kv.get("scene.ground_elevation", 0.0)? },
            "incline" => Ground::Incline { elevation: kv.get("scene.ground_elevation", 0.0)?, slope_deg: kv.get("scene.incline_deg", 3.0)? },
            other => return Err(ScenarioError::BadValue { key: "scene.ground".to_string(), value: other.to_string() }),
        };
        let gnss_dropouts = match kv.raw("gnss.dropout") {
            None => Vec::new(),
            Some(v) => dropouts(v).ok_or_else(|| ScenarioError::BadValue { key: "gnss.dropout".to_string(), value: v.to_string() })?,
        };
        let s = Scenario {
            name: kv.get("name", d.name.clone())?,
            seed: kv.get("seed", d.seed)?,
            scene_size: kv.get("scene.size", d.scene_size)?,
            buildings: kv.get("scene.buildings", d.buildings)?,
            ground,
            loop_side: kv.get("trajectory.loop_side", d.loop_side)?,
            control_spacing: kv.get("trajectory.control_spacing", d.control_spacing)?,
            speed: kv.get("trajectory.speed", d.speed)?,
            laps: kv.get("trajectory.laps", d.laps)?,
            mount_height: kv.get("trajectory.mount_height", d.mount_height)?,
            frame_rate: kv.get("frame_rate", d.frame_rate)?,
            imu: ImuConfig {
                rate: kv.get("imu.rate", d.imu.rate)?,
                accel_density: kv.get("imu.accel_density", d.imu.accel_density)?,
                gyro_density: kv.get("imu.gyro_density", d.imu.gyro_density)?,
                bias_acc: kv.vec3("imu.bias_acc", d.imu.bias_acc)?,
                bias_gyro: kv.vec3("imu.bias_gyro", d.imu.bias_gyro)?,
            },
            gnss: GnssConfig {
                rate: kv.get("gnss.rate", d.gnss.rate)?,
                sigma: kv.get("gnss.sigma", d.gnss.sigma)?,
                lever_arm: kv.vec3("gnss.lever_arm", d.gnss.lever_arm)?,
                dropouts: gnss_dropouts,
            },
            drift: DriftConfig {
                scale_sigma: kv.get("drift.scale", d.drift.scale_sigma)?,
                yaw_sigma_deg_per_m: kv.get("drift.yaw_deg_per_m", d.drift.yaw_sigma_deg_per_m)?,
                correlation_length: kv.get("drift.correlation_length", d.drift.correlation_length)?,
                step_translation_sigma: kv.get("drift.step_translation", d.drift.step_translation_sigma)?,
                step_rotation_sigma_deg: kv.get("drift.step_rotation_deg", d.drift.step_rotation_sigma_deg)?,
            },
            als_spacing: kv.get("als.spacing", d.als_spacing)?,
            als_noise: kv.get("als.noise", d.als_noise)?,
            mls: MlsConfig {
                rings: kv.get("mls.rings", d.mls.rings)?,
                min_elevation_deg: kv.get("mls.min_elevation_deg", d.mls.min_elevation_deg)?,
                max_elevation_deg: kv.get("mls.max_elevation_deg", d.mls.max_elevation_deg)?,
                azimuth_step_deg: kv.get("mls.azimuth_step_deg", d.mls.azimuth_step_deg)?,
                max_range: kv.get("mls.max_range", d.mls.max_range)?,
                range_sigma: kv.get("mls.range_sigma", d.mls.range_sigma)?,
            },
        };
        if let Some(k) = kv.unused(&["pipeline."]).into_iter().next() {
            return Err(ScenarioError::UnknownKey(k));
        }
        for (key, v) in [("scene.size", s.scene_size), ("frame_rate", s.frame_rate), ("trajectory.speed", s.speed), ("als.spacing", s.als_spacing), ("imu.rate", s.imu.rate)] {
            if !(v > 0.0) {
                return Err(ScenarioError::BadValue { key: key.to_string(), value: v.to_string() });
            }
        }
        Ok(s)
    }

    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        Self::from_key_values(&parse_key_values(text)?)
    }

    fn loop_origin(&self) -> Vector2<f64> {
        let o = (self.scene_size - self.loop_side) * 0.5;
        Vector2::new(o, o)
    }

    pub fn truth(&self) -> TrajectoryTruth {
        let path = LoopPath::square(self.loop_origin(), self.loop_side, self.control_spacing);
        TrajectoryTruth::new(path, self.speed, self.control_spacing, self.mount_height, self.ground, self.laps)
    }

    /// Box city around the loop: blocks inside the loop and along its outer
    /// side, at least 8 m from the driving line. Footprints and heights are
    /// jittered from the seed.
    pub fn scene(&self) -> Result<Scene, ScenarioError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0xb01d);
        let o = self.loop_origin();
        let side = self.loop_side;
        let clear = 8.0;
        let depth = 30.0f64.min(o.x - clear - 2.0).max(4.0);
        let mid = side * 0.5;
        let gap = 4.0;
        // (x0, x1, y0, y1) slots; inner and outer interleaved.
        let (lo_in, hi_in) = (clear, side - clear);
        let inner = [
            (lo_in, mid - gap, lo_in, mid - gap),
            (mid + gap, hi_in, mid + gap, hi_in),
            (mid + gap, hi_in, lo_in, mid - gap),
            (lo_in, mid - gap, mid + gap, hi_in),
        ];
        let along = [(clear, mid - gap), (mid + gap, side - clear)];
        let mut outer = Vec::new();
        for &(a, b) in &along {
            outer.push((a, b, -clear - depth, -clear));
            outer.push((side + clear, side + clear + depth, a, b));
            outer.push((a, b, side + clear, side + clear + depth));
            outer.push((-clear - depth, -clear, a, b));
        }
        let mut slots = Vec::new();
        for k in 0..12 {
            if k % 3 == 0 {
                slots.push(inner[k / 3]);
            } else {
                slots.push(outer[k - k / 3 - 1]);
            }
        }
        let buildings = slots
            .into_iter()
            .take(self.buildings.min(12))
            .map(|(x0, x1, y0, y1)| {
                let mut j = || rng.random_range(0.3..4.0);
                let min = o + Vector2::new(x0 + j(), y0 + j());
                let max = o + Vector2::new(x1 - j(), y1 - j());
                Building { min, max, height: rng.random_range(8.0..30.0) }
            })
            .collect();
        let extent = (Vector2::zeros(), Vector2::new(self.scene_size, self.scene_size));
        Ok(Scene::new(self.ground, buildings, extent)?)
    }

    /// Whether GNSS is unavailable for the whole run.
    pub fn gnss_denied(&self) -> bool {
        self.gnss.dropouts.iter().any(|&(a, b)| a <= 0.0 && b >= self.truth().duration())
    }
}
