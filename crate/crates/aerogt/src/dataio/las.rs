//! Minimal LAS 1.2-1.4 reader and writer for point formats 0-3, XYZ only.

use std::path::Path;

use aerogt_core::cloud::PointCloud;
use aerogt_core::geom::Vec3;

use super::DataError;

const SCALE: f64 = 0.001;

/// Minimum record length of point formats 0 to 3.
fn record_length(format: u8) -> Option<usize> {
    match format {
        0 => Some(20),
        1 => Some(28),
        2 => Some(26),
        3 => Some(34),
        _ => None,
    }
}

fn header_size(minor: u8) -> usize {
    match minor {
        0..=2 => 227,
        3 => 235,
        _ => 375,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LasFormat {
    pub version_minor: u8,
    pub point_format: u8,
}

impl Default for LasFormat {
    fn default() -> Self {
        Self { version_minor: 2, point_format: 0 }
    }
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

fn f64_at(b: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(b[at..at + 8].try_into().expect("8 bytes"))
}

pub fn parse_las(bytes: &[u8]) -> Result<PointCloud, DataError> {
    if bytes.len() < 4 || &bytes[..4] != b"LASF" {
        return Err(DataError::BadMagic);
    }
    if bytes.len() < 227 {
        return Err(DataError::TruncatedFile);
    }
    let (major, minor) = (bytes[24], bytes[25]);
    if major != 1 || !(2..=4).contains(&minor) {
        return Err(DataError::UnsupportedVersion(major, minor));
    }
    let offset = u32_at(bytes, 96) as usize;
    // The top bits flag compressed data.
    let format = bytes[104];
    let min_len = record_length(format).ok_or(DataError::UnsupportedFormat(format))?;
    let stride = u16_at(bytes, 105) as usize;
    if stride < min_len {
        return Err(DataError::UnsupportedFormat(format));
    }
    let mut count = u32_at(bytes, 107) as u64;
    if minor == 4 && count == 0 {
        if bytes.len() < 255 {
            return Err(DataError::TruncatedFile);
        }
        count = u64::from_le_bytes(bytes[247..255].try_into().expect("8 bytes"));
    }
    let scale = [f64_at(bytes, 131), f64_at(bytes, 139), f64_at(bytes, 147)];
    let shift = [f64_at(bytes, 155), f64_at(bytes, 163), f64_at(bytes, 171)];
    let end = (count as usize).checked_mul(stride).and_then(|n| n.checked_add(offset)).ok_or(DataError::TruncatedFile)?;
    if end > bytes.len() {
        return Err(DataError::TruncatedFile);
    }
    let points = (0..count as usize)
        .map(|k| {
            let at = offset + k * stride;
            let c = |d: usize| u32_at(bytes, at + 4 * d) as i32 as f64 * scale[d] + shift[d];
            Vec3::new(c(0), c(1), c(2))
        })
        .collect();
    Ok(PointCloud::new(points))
}

pub fn read_las_points(path: &Path) -> Result<PointCloud, DataError> {
    parse_las(&std::fs::read(path).map_err(DataError::io(path))?)
}

/// Encodes points with a 1 mm quantum; the offset is the floored minimum.
pub fn encode_las(points: &[Vec3], fmt: LasFormat) -> Result<Vec<u8>, DataError> {
    let stride = record_length(fmt.point_format).ok_or(DataError::UnsupportedFormat(fmt.point_format))?;
    if !(2..=4).contains(&fmt.version_minor) {
        return Err(DataError::UnsupportedVersion(1, fmt.version_minor));
    }
    let hsize = header_size(fmt.version_minor);
    let (mut lo, mut hi) = (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY));
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let shift = if points.is_empty() { Vec3::zeros() } else { lo.map(f64::floor) };
    if points.is_empty() {
        lo = Vec3::zeros();
        hi = Vec3::zeros();
    }
    let mut b = vec![0u8; hsize];
    b[..4].copy_from_slice(b"LASF");
    b[24] = 1;
    b[25] = fmt.version_minor;
    let software = b"aerogt";
    b[58..58 + software.len()].copy_from_slice(software);
    b[94..96].copy_from_slice(&(hsize as u16).to_le_bytes());
    b[96..100].copy_from_slice(&(hsize as u32).to_le_bytes());
    b[104] = fmt.point_format;
    b[105..107].copy_from_slice(&(stride as u16).to_le_bytes());
    let legacy = u32::try_from(points.len()).unwrap_or(0);
    b[107..111].copy_from_slice(&legacy.to_le_bytes());
    b[111..115].copy_from_slice(&legacy.to_le_bytes());
    for d in 0..3 {
        b[131 + 8 * d..139 + 8 * d].copy_from_slice(&SCALE.to_le_bytes());
        b[155 + 8 * d..163 + 8 * d].copy_from_slice(&shift[d].to_le_bytes());
        b[179 + 16 * d..187 + 16 * d].copy_from_slice(&hi[d].to_le_bytes());
        b[187 + 16 * d..195 + 16 * d].copy_from_slice(&lo[d].to_le_bytes());
    }
    if fmt.version_minor == 4 {
        b[247..255].copy_from_slice(&(points.len() as u64).to_le_bytes());
    }
    b.reserve(points.len() * stride);
    for p in points {
        let mut rec = vec![0u8; stride];
        for d in 0..3 {
            let q = ((p[d] - shift[d]) / SCALE).round();
            if !(q >= i32::MIN as f64 && q <= i32::MAX as f64) {
                return Err(DataError::CoordinateRange);
            }
            rec[4 * d..4 * d + 4].copy_from_slice(&(q as i32).to_le_bytes());
        }
        b.extend_from_slice(&rec);
    }
    Ok(b)
}

pub fn write_las_points(path: &Path, points: &[Vec3], fmt: LasFormat) -> Result<(), DataError> {
    std::fs::write(path, encode_las(points, fmt)?).map_err(DataError::io(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_reads_empty() {
        let b = encode_las(&[], LasFormat::default()).unwrap();
        assert_eq!(b.len(), 227);
        assert!(parse_las(&b).unwrap().is_empty());
    }

    #[test]
    fn header_errors() {
        let mut b = encode_las(&[Vec3::new(1.0, 2.0, 3.0)], LasFormat::default()).unwrap();
        assert!(matches!(parse_las(&b[..b.len() - 1]), Err(DataError::TruncatedFile)));
        b[104] = 6;
        assert!(matches!(parse_las(&b), Err(DataError::UnsupportedFormat(6))));
        b[0] = b'X';
        assert!(matches!(parse_las(&b), Err(DataError::BadMagic)));
        assert!(matches!(parse_las(b"LAS"), Err(DataError::BadMagic)));
    }

    #[test]
    fn span_beyond_integer_range() {
        let pts = [Vec3::zeros(), Vec3::new(0.0, 3.0e6, 0.0)];
        assert!(matches!(encode_las(&pts, LasFormat::default()), Err(DataError::CoordinateRange)));
    }

    #[test]
    fn every_version_and_format() {
        let pts = vec![Vec3::new(612340.123, 3391220.5, 12.25), Vec3::new(611003.5, 3390000.0, -7.001)];
        for minor in 2..=4 {
            for format in 0..=3 {
                let b = encode_las(&pts, LasFormat { version_minor: minor, point_format: format }).unwrap();
                let back = parse_las(&b).unwrap();
                for (a, r) in pts.iter().zip(back.points()) {
                    assert!((a - r).amax() <= 0.5e-3 + 1e-9);
                }
            }
        }
    }
}
