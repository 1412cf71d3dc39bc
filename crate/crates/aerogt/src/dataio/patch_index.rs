use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector2;

use super::DataError;

/// One image paired with its ALS patch and the patch centre (map frame).
#[derive(Debug, Clone, PartialEq)]
pub struct PatchEntry {
    pub image: String,
    pub patch: String,
    pub center: Vector2<f64>,
}

/// Lines of `image patch cx cy`; blank lines and `#` comments are skipped.
pub fn parse_patch_index(text: &str) -> Result<Vec<PatchEntry>, DataError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [image, patch, cx, cy] = fields[..] else {
            return Err(DataError::MalformedLine(n + 1));
        };
        let num = |s: &str| s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or(DataError::MalformedLine(n + 1));
        out.push(PatchEntry { image: image.to_string(), patch: patch.to_string(), center: Vector2::new(num(cx)?, num(cy)?) });
    }
    Ok(out)
}

pub fn format_patch_index(entries: &[PatchEntry]) -> String {
    let mut s = String::new();
    for e in entries {
        let _ = writeln!(s, "{} {} {} {}", e.image, e.patch, e.center.x, e.center.y);
    }
    s
}

pub fn read_patch_index(path: &Path) -> Result<Vec<PatchEntry>, DataError> {
    parse_patch_index(&std::fs::read_to_string(path).map_err(DataError::io(path))?)
}

pub fn write_patch_index(path: &Path, entries: &[PatchEntry]) -> Result<(), DataError> {
    std::fs::write(path, format_patch_index(entries)).map_err(DataError::io(path))
}
