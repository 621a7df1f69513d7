//! Planar frame, heading arithmetic and the coarse tile grid.
//!
//! The world frame is a local east-north plane in meters. The search area is
//! covered by a `cols x rows` grid of square, non-overlapping tiles whose
//! centers sit exactly `spacing` meters apart. A point belongs to the tile
//! whose center is nearest; exact ties go to the lower index.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("position ({x}, {y}) lies outside the grid footprint")]
    OutOfBounds { x: f64, y: f64 },
    #[error("tile ({col}, {row}) is not in a {cols}x{rows} grid")]
    InvalidTile {
        col: i64,
        row: i64,
        cols: u32,
        rows: u32,
    },
    #[error("pose belongs to tile ({actual_col}, {actual_row}), not ({col}, {row})")]
    MismatchedTile {
        col: u32,
        row: u32,
        actual_col: u32,
        actual_row: u32,
    },
    #[error("non-finite value: {0}")]
    NonFinite(f64),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
}

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_heading(angle: f64) -> Result<f64, GeometryError> {
    if !angle.is_finite() {
        return Err(GeometryError::NonFinite(angle));
    }
    Ok(wrap_finite(angle))
}

/// Infallible variant for callers that already guarantee a finite angle.
pub(crate) fn wrap_finite(angle: f64) -> f64 {
    if (-PI..PI).contains(&angle) {
        return angle;
    }
    let mut a = (angle + PI).rem_euclid(TAU) - PI;
    // rem_euclid can round up to exactly TAU for tiny negative inputs.
    if a >= PI {
        a -= TAU;
    }
    if a < -PI {
        a = -PI;
    }
    a
}

/// Planar pose. `psi` is kept wrapped to `[-pi, pi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParticlePose {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
}

impl ParticlePose {
    pub fn new(x: f64, y: f64, psi: f64) -> Result<Self, GeometryError> {
        for v in [x, y] {
            if !v.is_finite() {
                return Err(GeometryError::NonFinite(v));
            }
        }
        Ok(Self {
            x,
            y,
            psi: wrap_heading(psi)?,
        })
    }

    pub fn distance_to(&self, other: &ParticlePose) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TileIndex {
    pub col: u32,
    pub row: u32,
}

impl TileIndex {
    pub const fn new(col: u32, row: u32) -> Self {
        Self { col, row }
    }
}

/// Axis-aligned square tiling of the search area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// World x of the center of tile (0, 0).
    pub origin_x: f64,
    /// World y of the center of tile (0, 0).
    pub origin_y: f64,
    /// Meters between neighbouring tile centers.
    pub spacing: f64,
    pub cols: u32,
    pub rows: u32,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            origin_x: 0.0,
            origin_y: 0.0,
            spacing: 60.0,
            cols: 256,
            rows: 256,
        }
    }
}

impl GridSpec {
    pub fn new(
        origin_x: f64,
        origin_y: f64,
        spacing: f64,
        cols: u32,
        rows: u32,
    ) -> Result<Self, GeometryError> {
        let grid = Self {
            origin_x,
            origin_y,
            spacing,
            cols,
            rows,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !self.origin_x.is_finite() || !self.origin_y.is_finite() {
            return Err(GeometryError::InvalidGrid("origin must be finite".into()));
        }
        if !(self.spacing.is_finite() && self.spacing > 0.0) {
            return Err(GeometryError::InvalidGrid(format!(
                "spacing must be positive, got {}",
                self.spacing
            )));
        }
        if self.cols == 0 || self.rows == 0 {
            return Err(GeometryError::InvalidGrid(format!(
                "grid needs at least one tile, got {}x{}",
                self.cols, self.rows
            )));
        }
        Ok(())
    }

    pub fn tile_count(&self) -> usize {
        self.cols as usize * self.rows as usize
    }

    /// Row-major linear index.
    pub fn linear_index(&self, tile: TileIndex) -> usize {
        tile.row as usize * self.cols as usize + tile.col as usize
    }

    pub fn tile_at(&self, linear: usize) -> TileIndex {
        TileIndex::new(
            (linear % self.cols as usize) as u32,
            (linear / self.cols as usize) as u32,
        )
    }

    pub fn tiles(&self) -> impl Iterator<Item = TileIndex> + '_ {
        (0..self.tile_count()).map(|i| self.tile_at(i))
    }

    pub fn contains_tile(&self, tile: TileIndex) -> bool {
        tile.col < self.cols && tile.row < self.rows
    }

    pub fn check_tile(&self, tile: TileIndex) -> Result<(), GeometryError> {
        if self.contains_tile(tile) {
            Ok(())
        } else {
            Err(GeometryError::InvalidTile {
                col: tile.col as i64,
                row: tile.row as i64,
                cols: self.cols,
                rows: self.rows,
            })
        }
    }

    pub fn tile_center(&self, tile: TileIndex) -> (f64, f64) {
        (
            self.origin_x + tile.col as f64 * self.spacing,
            self.origin_y + tile.row as f64 * self.spacing,
        )
    }

    /// `(min_x, min_y, max_x, max_y)` of the in-bounds region.
    pub fn footprint(&self) -> (f64, f64, f64, f64) {
        let half = 0.5 * self.spacing;
        (
            self.origin_x - half,
            self.origin_y - half,
            self.origin_x + (self.cols as f64 - 0.5) * self.spacing,
            self.origin_y + (self.rows as f64 - 0.5) * self.spacing,
        )
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        let (x0, y0, x1, y1) = self.footprint();
        x >= x0 && x <= x1 && y >= y0 && y <= y1
    }

    pub fn clamp_point(&self, x: f64, y: f64) -> (f64, f64) {
        let (x0, y0, x1, y1) = self.footprint();
        (x.clamp(x0, x1), y.clamp(y0, y1))
    }

    /// Nearest-center cell coordinates without any bounds check. Exact ties
    /// round toward the lower index.
    pub(crate) fn raw_cell(&self, x: f64, y: f64) -> (i64, i64) {
        let u = (x - self.origin_x) / self.spacing;
        let v = (y - self.origin_y) / self.spacing;
        ((u - 0.5).ceil() as i64, (v - 0.5).ceil() as i64)
    }

    pub fn tile_of_point(&self, x: f64, y: f64) -> Result<TileIndex, GeometryError> {
        if !x.is_finite() {
            return Err(GeometryError::NonFinite(x));
        }
        if !y.is_finite() {
            return Err(GeometryError::NonFinite(y));
        }
        if !self.contains_point(x, y) {
            return Err(GeometryError::OutOfBounds { x, y });
        }
        let (c, r) = self.raw_cell(x, y);
        // The lower footprint edge is a tie with a nonexistent tile -1.
        Ok(TileIndex::new(
            c.clamp(0, self.cols as i64 - 1) as u32,
            r.clamp(0, self.rows as i64 - 1) as u32,
        ))
    }
}

pub fn tile_of(pose: &ParticlePose, grid: &GridSpec) -> Result<TileIndex, GeometryError> {
    grid.tile_of_point(pose.x, pose.y)
}

/// Offset of `pose` from the center of `tile`, which must be the tile that
/// owns the pose.
pub fn displacement_from_center(
    pose: &ParticlePose,
    tile: TileIndex,
    grid: &GridSpec,
) -> Result<(f64, f64), GeometryError> {
    let owner = tile_of(pose, grid)?;
    if owner != tile {
        return Err(GeometryError::MismatchedTile {
            col: tile.col,
            row: tile.row,
            actual_col: owner.col,
            actual_row: owner.row,
        });
    }
    let (cx, cy) = grid.tile_center(tile);
    Ok((pose.x - cx, pose.y - cy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid60(cols: u32, rows: u32) -> GridSpec {
        GridSpec::new(0.0, 0.0, 60.0, cols, rows).unwrap()
    }

    /// Nearest tile center by exhaustive scan; lower (row, col) wins ties.
    fn brute_force_tile(grid: &GridSpec, x: f64, y: f64) -> TileIndex {
        let mut best = (f64::INFINITY, TileIndex::new(0, 0));
        for row in 0..grid.rows {
            for col in 0..grid.cols {
                let t = TileIndex::new(col, row);
                let (cx, cy) = grid.tile_center(t);
                let d = (x - cx).powi(2) + (y - cy).powi(2);
                if d < best.0 {
                    best = (d, t);
                }
            }
        }
        best.1
    }

    #[test]
    fn origin_maps_to_first_tile() {
        let p = ParticlePose::new(0.0, 0.0, 0.0).unwrap();
        assert_eq!(tile_of(&p, &grid60(4, 4)).unwrap(), TileIndex::new(0, 0));
    }

    #[test]
    fn nearest_center_matches_scan() {
        let grid = grid60(4, 4);
        let p = ParticlePose::new(61.0, -2.0, 0.0).unwrap();
        let t = tile_of(&p, &grid).unwrap();
        assert_eq!(t, TileIndex::new(1, 0));
        assert_eq!(t, brute_force_tile(&grid, 61.0, -2.0));
    }

    #[test]
    fn outside_footprint_is_rejected() {
        let p = ParticlePose::new(-40.0, 0.0, 0.0).unwrap();
        assert!(matches!(
            tile_of(&p, &grid60(4, 4)),
            Err(GeometryError::OutOfBounds { .. })
        ));
    }

    #[test]
    fn ties_go_to_lower_index() {
        let grid = grid60(4, 4);
        assert_eq!(grid.tile_of_point(30.0, 0.0).unwrap(), TileIndex::new(0, 0));
        assert_eq!(
            grid.tile_of_point(90.0, 30.0).unwrap(),
            TileIndex::new(1, 0)
        );
        // lower footprint edge still belongs to tile 0
        assert_eq!(
            grid.tile_of_point(-30.0, -30.0).unwrap(),
            TileIndex::new(0, 0)
        );
        assert_eq!(
            grid.tile_of_point(210.0, 210.0).unwrap(),
            TileIndex::new(3, 3)
        );
    }

    #[test]
    fn displacement_examples() {
        let grid = grid60(4, 4);
        let center = ParticlePose::new(120.0, 60.0, 0.0).unwrap();
        assert_eq!(
            displacement_from_center(&center, TileIndex::new(2, 1), &grid).unwrap(),
            (0.0, 0.0)
        );
        let p = ParticlePose::new(61.0, -2.0, 0.0).unwrap();
        let (dx, dy) = displacement_from_center(&p, TileIndex::new(1, 0), &grid).unwrap();
        assert_eq!((dx, dy), (1.0, -2.0));
        let (cx, cy) = grid.tile_center(TileIndex::new(1, 0));
        assert_eq!((cx + dx, cy + dy), (61.0, -2.0));

        let origin = ParticlePose::new(0.0, 0.0, 0.0).unwrap();
        assert!(matches!(
            displacement_from_center(&origin, TileIndex::new(1, 0), &grid),
            Err(GeometryError::MismatchedTile { .. })
        ));
    }

    #[test]
    fn wrap_examples() {
        assert_eq!(wrap_heading(0.0).unwrap(), 0.0);
        assert_eq!(wrap_heading(-PI).unwrap(), -PI);
        assert!(wrap_heading(f64::NAN).is_err());
        assert!(wrap_heading(f64::INFINITY).is_err());

        // reference: subtract 2pi until in range
        let mut reference = 3.0 * PI;
        while reference >= PI {
            reference -= TAU;
        }
        let w = wrap_heading(3.0 * PI).unwrap();
        assert!((w - reference).abs() < 1e-12);
        assert!((w + PI).abs() < 1e-12);
        assert!((-PI..PI).contains(&w));
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::new(0.0, 0.0, -5.0, 2, 2).is_err());
        assert!(GridSpec::new(0.0, 0.0, 60.0, 0, 2).is_err());
        assert!(GridSpec::new(0.0, 0.0, 60.0, 2, 0).is_err());
    }

    proptest! {
        #[test]
        fn tile_partition_and_round_trip(
            cols in 1u32..8, rows in 1u32..8,
            fx in 0.0f64..=1.0, fy in 0.0f64..=1.0,
            ox in -500.0f64..500.0, oy in -500.0f64..500.0,
        ) {
            let grid = GridSpec::new(ox, oy, 60.0, cols, rows).unwrap();
            let (x0, y0, x1, y1) = grid.footprint();
            let x = x0 + fx * (x1 - x0);
            let y = y0 + fy * (y1 - y0);
            let pose = ParticlePose::new(x, y, 0.0).unwrap();
            let t = tile_of(&pose, &grid).unwrap();
            prop_assert!(grid.contains_tile(t));
            if fx > 0.0 && fx < 1.0 && fy > 0.0 && fy < 1.0 {
                prop_assert_eq!(t, brute_force_tile(&grid, x, y));
            }
            let (dx, dy) = displacement_from_center(&pose, t, &grid).unwrap();
            prop_assert!(dx.abs() <= 30.0 + 1e-9 && dy.abs() <= 30.0 + 1e-9);
            let (cx, cy) = grid.tile_center(t);
            prop_assert!((cx + dx - x).abs() <= 1e-12 * x.abs().max(1.0));
            prop_assert!((cy + dy - y).abs() <= 1e-12 * y.abs().max(1.0));
        }

        #[test]
        fn wrap_is_idempotent_and_congruent(a in -1e4f64..1e4) {
            let w = wrap_heading(a).unwrap();
            prop_assert!((-PI..PI).contains(&w));
            prop_assert_eq!(wrap_heading(w).unwrap(), w);
            let k = ((a - w) / TAU).round();
            prop_assert!((a - w - k * TAU).abs() < 1e-9);
        }
    }
}
