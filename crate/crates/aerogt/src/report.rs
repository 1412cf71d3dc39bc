//! Run report (`key = value` text) and trajectory CSV.

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;

use aerogt_core::geom::{RigidTransform, State};

use crate::dataio::{rigid_from_row_major, DataError};

/// Ordered `key = value` pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunReport {
    entries: Vec<(String, String)>,
}

impl RunReport {
    pub fn push(&mut self, key: &str, value: impl fmt::Display) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn push_f64(&mut self, key: &str, value: f64) {
        self.push(key, format_args!("{value:.6}"));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key)?.parse().ok()
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn parse(text: &str) -> Result<Self, DataError> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once(" = ").ok_or(DataError::MalformedLine(n + 1))?;
            entries.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(Self { entries })
    }
}

impl fmt::Display for RunReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

const CSV_HEADER: &str = "timestamp,m00,m01,m02,m03,m10,m11,m12,m13,m20,m21,m22,m23,m30,m31,m32,m33";

/// Timestamp and the row-major 4x4 pose per line, after a header row.
pub fn format_trajectory_csv(states: &[State]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for st in states {
        let m = st.pose.to_matrix();
        let _ = write!(s, "{}", st.timestamp);
        for k in 0..16 {
            let _ = write!(s, ",{}", m[(k / 4, k % 4)]);
        }
        s.push('\n');
    }
    s
}

pub fn parse_trajectory_csv(text: &str) -> Result<Vec<(f64, RigidTransform)>, DataError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with("timestamp") {
            continue;
        }
        let v: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse())
            .collect::<Result<_, _>>()
            .map_err(|_| DataError::MalformedLine(n + 1))?;
        if v.len() != 17 {
            return Err(DataError::MalformedLine(n + 1));
        }
        let pose = rigid_from_row_major(&v[1..]).ok_or(DataError::NonRigidMatrix(n + 1))?;
        out.push((v[0], pose));
    }
    Ok(out)
}

pub fn write_trajectory_csv(path: &Path, states: &[State]) -> Result<(), DataError> {
    std::fs::write(path, format_trajectory_csv(states)).map_err(DataError::io(path))
}

pub fn read_trajectory_csv(path: &Path) -> Result<Vec<(f64, RigidTransform)>, DataError> {
    parse_trajectory_csv(&std::fs::read_to_string(path).map_err(DataError::io(path))?)
}
