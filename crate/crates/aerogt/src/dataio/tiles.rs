use std::collections::BTreeMap;

use aerogt_core::geom::Vec3;
use nalgebra::Vector2;

/// Side of a square ALS patch in metres (100 m² tiles).
pub const TILE_SIDE: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub ix: i64,
    pub iy: i64,
    pub name: String,
    /// Centre of the tile square.
    pub center: Vector2<f64>,
    /// Indices into the input, ascending.
    pub indices: Vec<usize>,
    pub points: Vec<Vec3>,
}

/// Tile indices by flooring; a point on a boundary goes to the higher tile.
pub fn tile_of(p: &Vec3, side: f64) -> (i64, i64) {
    ((p.x / side).floor() as i64, (p.y / side).floor() as i64)
}

pub fn tile_name(ix: i64, iy: i64) -> String {
    format!("tile_{ix}_{iy}")
}

/// Partitions points into square tiles, ordered by `(ix, iy)`.
pub fn tile_als(points: &[Vec3], side: f64) -> Vec<Tile> {
    let mut groups: BTreeMap<(i64, i64), Vec<usize>> = BTreeMap::new();
    for (k, p) in points.iter().enumerate() {
        groups.entry(tile_of(p, side)).or_default().push(k);
    }
    groups
        .into_iter()
        .map(|((ix, iy), indices)| Tile {
            ix,
            iy,
            name: tile_name(ix, iy),
            center: Vector2::new((ix as f64 + 0.5) * side, (iy as f64 + 0.5) * side),
            points: indices.iter().map(|&k| points[k]).collect(),
            indices,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_tile_and_boundary() {
        let t = tile_als(&[Vec3::new(1.0, 1.0, 0.0), Vec3::new(9.0, 2.0, 5.0)], TILE_SIDE);
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].name, "tile_0_0");
        assert_eq!(t[0].center, Vector2::new(5.0, 5.0));
        assert_eq!(tile_of(&Vec3::new(10.0, -0.0, 0.0), TILE_SIDE), (1, 0));
        assert_eq!(tile_of(&Vec3::new(-0.5, 20.0, 0.0), TILE_SIDE), (-1, 2));
    }
}
