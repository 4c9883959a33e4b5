//! Trap and tile geometry, scan planning, and tile ↔ trap coordinate maps.
//!
//! The global frame is in millimetres with its origin at the trap's minimum
//! corner: x runs along the trap's major axis, y along the minor axis. Tile
//! pixel `(u, v)` has its center at `origin + ((u + 0.5) * pitch_major,
//! (v + 0.5) * pitch_minor)`, so continuous pixel coordinates span
//! `[-0.5, px - 0.5]` across a tile.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::Real;
use crate::polygon::Rect;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("invalid trap: {0}")]
    InvalidTrap(String),
    #[error("invalid tile: {0}")]
    InvalidTile(String),
    #[error("tile ({tile} mm) larger than trap ({trap} mm) along the {axis} axis")]
    TileLargerThanTrap { axis: &'static str, tile: f64, trap: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("pixel ({u}, {v}) outside tile of {px_major}x{px_minor} px")]
    PixelOutOfBounds { u: f64, v: f64, px_major: u32, px_minor: u32 },
    #[error("empty scan plan")]
    EmptyPlan,
    #[error("malformed plan document: {0}")]
    Document(String),
}

/// Physical extent of the trap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct TrapSpec<T: Real = f64> {
    pub length_mm: T,
    pub width_mm: T,
}

impl<T: Real> TrapSpec<T> {
    pub fn new(length_mm: T, width_mm: T) -> Result<Self, GeometryError> {
        let t = Self { length_mm, width_mm };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.length_mm > T::zero() && self.width_mm > T::zero()) {
            return Err(GeometryError::InvalidTrap("extents must be positive".into()));
        }
        if self.length_mm < self.width_mm {
            return Err(GeometryError::InvalidTrap(
                "length must not be shorter than width".into(),
            ));
        }
        Ok(())
    }

    pub fn rect(&self) -> Rect<T> {
        Rect::new([T::zero(), T::zero()], [self.length_mm, self.width_mm])
    }
}

/// Field of view and resolution of a single tile image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct TileSpec<T: Real = f64> {
    /// Extent along the trap's major axis.
    #[serde(rename = "major_mm")]
    pub major_extent_mm: T,
    /// Extent along the trap's minor axis.
    #[serde(rename = "minor_mm")]
    pub minor_extent_mm: T,
    pub px_major: u32,
    pub px_minor: u32,
}

impl<T: Real> TileSpec<T> {
    pub fn new(major_extent_mm: T, minor_extent_mm: T, px_major: u32, px_minor: u32) -> Result<Self, GeometryError> {
        let t = Self { major_extent_mm, minor_extent_mm, px_major, px_minor };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.major_extent_mm > T::zero() && self.minor_extent_mm > T::zero()) {
            return Err(GeometryError::InvalidTile("extents must be positive".into()));
        }
        if self.px_major == 0 || self.px_minor == 0 {
            return Err(GeometryError::InvalidTile("resolution must be positive".into()));
        }
        Ok(())
    }

    pub fn pitch_major(&self) -> T {
        self.major_extent_mm / T::from_u32(self.px_major).unwrap()
    }

    pub fn pitch_minor(&self) -> T {
        self.minor_extent_mm / T::from_u32(self.px_minor).unwrap()
    }

    /// Area of one pixel in mm².
    pub fn pixel_area(&self) -> T {
        self.pitch_major() * self.pitch_minor()
    }

    /// Tile rectangle in continuous pixel coordinates.
    pub fn pixel_rect(&self) -> Rect<T> {
        let h = T::lit(0.5);
        Rect::new(
            [-h, -h],
            [T::from_u32(self.px_major).unwrap() - h, T::from_u32(self.px_minor).unwrap() - h],
        )
    }
}

/// Fractional overlap between neighbouring tiles, relative to tile extent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct OverlapSpec<T: Real = f64> {
    pub major_frac: T,
    pub minor_frac: T,
}

impl<T: Real> OverlapSpec<T> {
    pub fn new(major_frac: T, minor_frac: T) -> Result<Self, GeometryError> {
        let ok = |f: T| f >= T::zero() && f < T::one();
        if !(ok(major_frac) && ok(minor_frac)) {
            return Err(GeometryError::Config("overlap fractions must lie in [0, 1)".into()));
        }
        Ok(Self { major_frac, minor_frac })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TilePose<T: Real = f64> {
    /// Index into the plan's acquisition order.
    pub id: usize,
    /// Index along the major axis.
    pub row: usize,
    /// Index along the minor axis.
    pub col: usize,
    /// Minimum corner of the tile in the global frame.
    pub origin_mm: [T; 2],
}

impl<T: Real> TilePose<T> {
    pub fn rect(&self, tile: &TileSpec<T>) -> Rect<T> {
        Rect::new(
            self.origin_mm,
            [
                self.origin_mm[0] + tile.major_extent_mm,
                self.origin_mm[1] + tile.minor_extent_mm,
            ],
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanPlan<T: Real = f64> {
    pub trap: TrapSpec<T>,
    pub tile: TileSpec<T>,
    pub overlap: OverlapSpec<T>,
    pub n_major: usize,
    pub n_minor: usize,
    /// Poses in acquisition order; `poses[k].id == k`.
    pub poses: Vec<TilePose<T>>,
}

impl<T: Real> ScanPlan<T> {
    pub fn pose(&self, tile_id: usize) -> Option<&TilePose<T>> {
        self.poses.get(tile_id)
    }

    /// Largest step between consecutive positions along each axis.
    pub fn steps(&self) -> [T; 2] {
        let step = |n: usize, trap: T, tile: T| {
            axis_positions_for_count(trap, tile, n)
                .windows(2)
                .map(|w| w[1] - w[0])
                .fold(T::zero(), T::max)
        };
        [
            step(self.n_major, self.trap.length_mm, self.tile.major_extent_mm),
            step(self.n_minor, self.trap.width_mm, self.tile.minor_extent_mm),
        ]
    }

    /// Tiles whose rectangle has positive-area overlap with `rect`.
    pub fn tiles_intersecting<'a>(&'a self, rect: &'a Rect<T>) -> impl Iterator<Item = &'a TilePose<T>> + 'a {
        self.poses
            .iter()
            .filter(move |p| p.rect(&self.tile).intersection(rect).is_some())
    }
}

/// Positions along one axis with a fixed step and the last tile clamped to
/// the trap edge.
fn axis_positions_for_step<T: Real>(trap: T, tile: T, step: T) -> Vec<T> {
    let span = trap - tile;
    if span <= T::zero() {
        return vec![T::zero()];
    }
    // Tolerate rounding so that exact multiples do not gain a spurious tile.
    let ratio = span / step;
    let steps = (ratio - T::lit(1e-9) * ratio.max(T::one())).ceil();
    let n = steps.to_usize().unwrap_or(0) + 1;
    (0..n)
        .map(|i| if i + 1 == n { span } else { T::from_count(i) * step })
        .collect()
}

fn axis_positions_for_count<T: Real>(trap: T, tile: T, n: usize) -> Vec<T> {
    let span = (trap - tile).max(T::zero());
    if n <= 1 {
        return vec![T::zero()];
    }
    let step = span / T::from_count(n - 1);
    (0..n)
        .map(|i| if i + 1 == n { span } else { T::from_count(i) * step })
        .collect()
}

/// Builds the serpentine grid of tile poses covering the trap.
///
/// Without `count_override`, each axis uses `step = extent * (1 - overlap)`
/// and `n = ceil((trap - tile) / step) + 1`, the last tile clamped flush with
/// the trap edge. With an override, positions are spread evenly between the
/// two edges. Columns (minor axis) are visited in increasing order; rows
/// ascend in even columns and descend in odd ones.
pub fn plan_scan<T: Real>(
    trap: TrapSpec<T>,
    tile: TileSpec<T>,
    overlap: OverlapSpec<T>,
    count_override: Option<(usize, usize)>,
) -> Result<ScanPlan<T>, GeometryError> {
    trap.validate()?;
    tile.validate()?;
    if tile.major_extent_mm > trap.length_mm {
        return Err(GeometryError::TileLargerThanTrap {
            axis: "major",
            tile: tile.major_extent_mm.as_f64(),
            trap: trap.length_mm.as_f64(),
        });
    }
    if tile.minor_extent_mm > trap.width_mm {
        return Err(GeometryError::TileLargerThanTrap {
            axis: "minor",
            tile: tile.minor_extent_mm.as_f64(),
            trap: trap.width_mm.as_f64(),
        });
    }

    let (xs, ys) = match count_override {
        Some((n_major, n_minor)) => {
            if n_major == 0 || n_minor == 0 {
                return Err(GeometryError::Config("tile counts must be at least 1".into()));
            }
            let xs = axis_positions_for_count(trap.length_mm, tile.major_extent_mm, n_major);
            let ys = axis_positions_for_count(trap.width_mm, tile.minor_extent_mm, n_minor);
            for (pos, extent, axis) in [(&xs, tile.major_extent_mm, "major"), (&ys, tile.minor_extent_mm, "minor")] {
                if pos.windows(2).any(|w| w[1] - w[0] > extent) {
                    return Err(GeometryError::Config(format!(
                        "tile count along the {axis} axis leaves gaps between tiles"
                    )));
                }
            }
            (xs, ys)
        }
        None => {
            let step_major = tile.major_extent_mm * (T::one() - overlap.major_frac);
            let step_minor = tile.minor_extent_mm * (T::one() - overlap.minor_frac);
            if !(step_major > T::zero() && step_minor > T::zero()) {
                return Err(GeometryError::Config("overlap leaves no forward step".into()));
            }
            if overlap.major_frac < T::zero() || overlap.minor_frac < T::zero() {
                return Err(GeometryError::Config("overlap fractions must be non-negative".into()));
            }
            (
                axis_positions_for_step(trap.length_mm, tile.major_extent_mm, step_major),
                axis_positions_for_step(trap.width_mm, tile.minor_extent_mm, step_minor),
            )
        }
    };

    let (n_major, n_minor) = (xs.len(), ys.len());
    let mut poses = Vec::with_capacity(n_major * n_minor);
    for (col, &y) in ys.iter().enumerate() {
        let rows: Box<dyn Iterator<Item = usize>> = if col % 2 == 0 {
            Box::new(0..n_major)
        } else {
            Box::new((0..n_major).rev())
        };
        for row in rows {
            poses.push(TilePose { id: poses.len(), row, col, origin_mm: [xs[row], y] });
        }
    }
    Ok(ScanPlan { trap, tile, overlap, n_major, n_minor, poses })
}

fn check_pixel<T: Real>(tile: &TileSpec<T>, u: T, v: T) -> Result<(), GeometryError> {
    let inside = |c: T, n: u32| c >= T::zero() && c < T::from_u32(n).unwrap();
    if inside(u, tile.px_major) && inside(v, tile.px_minor) {
        Ok(())
    } else {
        Err(GeometryError::PixelOutOfBounds {
            u: u.as_f64(),
            v: v.as_f64(),
            px_major: tile.px_major,
            px_minor: tile.px_minor,
        })
    }
}

/// Maps a pixel coordinate inside the tile to the global frame (mm).
pub fn tile_to_global<T: Real>(pose: &TilePose<T>, tile: &TileSpec<T>, p: [T; 2]) -> Result<[T; 2], GeometryError> {
    check_pixel(tile, p[0], p[1])?;
    Ok(tile_point_to_global(pose, tile, p))
}

/// Unchecked form of [`tile_to_global`] for continuous coordinates such as
/// polygon vertices lying on the tile border.
pub fn tile_point_to_global<T: Real>(pose: &TilePose<T>, tile: &TileSpec<T>, p: [T; 2]) -> [T; 2] {
    let h = T::lit(0.5);
    [
        pose.origin_mm[0] + (p[0] + h) * tile.pitch_major(),
        pose.origin_mm[1] + (p[1] + h) * tile.pitch_minor(),
    ]
}

/// Inverse of [`tile_point_to_global`].
pub fn global_point_to_tile<T: Real>(pose: &TilePose<T>, tile: &TileSpec<T>, p: [T; 2]) -> [T; 2] {
    let h = T::lit(0.5);
    [
        (p[0] - pose.origin_mm[0]) / tile.pitch_major() - h,
        (p[1] - pose.origin_mm[1]) / tile.pitch_minor() - h,
    ]
}

/// Inverse of [`tile_to_global`]; fails when the point falls outside the
/// tile's pixel area.
pub fn global_to_tile<T: Real>(pose: &TilePose<T>, tile: &TileSpec<T>, p: [T; 2]) -> Result<[T; 2], GeometryError> {
    let q = global_point_to_tile(pose, tile, p);
    let h = T::lit(0.5);
    check_pixel(tile, q[0] + h, q[1] + h)?;
    Ok(q)
}

/// Intersection of two tile footprints; `None` for disjoint interiors.
pub fn overlap_region<T: Real>(a: &TilePose<T>, b: &TilePose<T>, tile: &TileSpec<T>) -> Option<Rect<T>> {
    a.rect(tile).intersection(&b.rect(tile))
}

/// Acquisition time: every tile dwells, every transition moves once.
pub fn estimate_duration<T: Real>(plan: &ScanPlan<T>, dwell_s: T, per_move_s: T) -> Result<T, GeometryError> {
    if plan.poses.is_empty() {
        return Err(GeometryError::EmptyPlan);
    }
    if dwell_s < T::zero() || per_move_s < T::zero() {
        return Err(GeometryError::Config("durations must be non-negative".into()));
    }
    let n = T::from_count(plan.poses.len());
    Ok(n * dwell_s + (n - T::one()) * per_move_s)
}

/// Named configurations.
pub mod presets {
    use super::*;

    /// 148 × 25 mm trap, 5 × 9 mm tiles at 1280 × 1024 px, 25 % / 40 %
    /// overlap, forced to the 33 × 5 grid of 165 images.
    pub const PAPER_165: &str = "paper-165";

    pub const DEFAULT_TILE_PX: (u32, u32) = (1280, 1024);

    pub fn paper_165<T: Real>() -> (TrapSpec<T>, TileSpec<T>, OverlapSpec<T>, (usize, usize)) {
        (
            TrapSpec { length_mm: T::lit(148.0), width_mm: T::lit(25.0) },
            TileSpec {
                major_extent_mm: T::lit(5.0),
                minor_extent_mm: T::lit(9.0),
                px_major: DEFAULT_TILE_PX.0,
                px_minor: DEFAULT_TILE_PX.1,
            },
            OverlapSpec { major_frac: T::lit(0.25), minor_frac: T::lit(0.40) },
            (33, 5),
        )
    }

    pub fn paper_165_plan<T: Real>() -> ScanPlan<T> {
        let (trap, tile, overlap, counts) = paper_165();
        plan_scan(trap, tile, overlap, Some(counts)).expect("preset is valid")
    }

    pub fn by_name<T: Real>(name: &str) -> Option<ScanPlan<T>> {
        (name == PAPER_165).then(paper_165_plan)
    }
}

// ---------------------------------------------------------------------------
// JSON document
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PoseDoc {
    id: usize,
    row: usize,
    col: usize,
    x_mm: f64,
    y_mm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PlanDoc {
    trap: TrapSpec<f64>,
    tile: TileSpec<f64>,
    overlap: OverlapSpec<f64>,
    poses: Vec<PoseDoc>,
}

impl<T: Real> ScanPlan<T> {
    pub fn to_json(&self) -> String {
        let cast = |x: T| x.as_f64();
        let doc = PlanDoc {
            trap: TrapSpec { length_mm: cast(self.trap.length_mm), width_mm: cast(self.trap.width_mm) },
            tile: TileSpec {
                major_extent_mm: cast(self.tile.major_extent_mm),
                minor_extent_mm: cast(self.tile.minor_extent_mm),
                px_major: self.tile.px_major,
                px_minor: self.tile.px_minor,
            },
            overlap: OverlapSpec {
                major_frac: cast(self.overlap.major_frac),
                minor_frac: cast(self.overlap.minor_frac),
            },
            poses: self
                .poses
                .iter()
                .map(|p| PoseDoc {
                    id: p.id,
                    row: p.row,
                    col: p.col,
                    x_mm: cast(p.origin_mm[0]),
                    y_mm: cast(p.origin_mm[1]),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("plan serializes")
    }

    /// Parses and validates a plan document.
    pub fn from_json(s: &str) -> Result<Self, GeometryError> {
        let doc: PlanDoc = serde_json::from_str(s).map_err(|e| GeometryError::Document(e.to_string()))?;
        let lit = T::lit;
        let trap = TrapSpec::new(lit(doc.trap.length_mm), lit(doc.trap.width_mm))?;
        let tile = TileSpec::new(
            lit(doc.tile.major_extent_mm),
            lit(doc.tile.minor_extent_mm),
            doc.tile.px_major,
            doc.tile.px_minor,
        )?;
        let overlap = OverlapSpec::new(lit(doc.overlap.major_frac), lit(doc.overlap.minor_frac))?;
        if doc.poses.is_empty() {
            return Err(GeometryError::EmptyPlan);
        }
        let n_major = doc.poses.iter().map(|p| p.row).max().unwrap_or(0) + 1;
        let n_minor = doc.poses.iter().map(|p| p.col).max().unwrap_or(0) + 1;
        if n_major * n_minor != doc.poses.len() {
            return Err(GeometryError::Document(format!(
                "{} poses do not form a {n_major}x{n_minor} grid",
                doc.poses.len()
            )));
        }
        let mut seen = vec![false; n_major * n_minor];
        let mut poses = Vec::with_capacity(doc.poses.len());
        for (k, p) in doc.poses.iter().enumerate() {
            if p.id != k {
                return Err(GeometryError::Document(format!("pose {k} has id {}", p.id)));
            }
            let cell = &mut seen[p.row * n_minor + p.col];
            if *cell {
                return Err(GeometryError::Document(format!("duplicate grid cell ({}, {})", p.row, p.col)));
            }
            *cell = true;
            let eps = 1e-9;
            if p.x_mm < -eps
                || p.y_mm < -eps
                || p.x_mm + doc.tile.major_extent_mm > doc.trap.length_mm + eps
                || p.y_mm + doc.tile.minor_extent_mm > doc.trap.width_mm + eps
            {
                return Err(GeometryError::Document(format!("pose {k} lies outside the trap")));
            }
            poses.push(TilePose { id: p.id, row: p.row, col: p.col, origin_mm: [lit(p.x_mm), lit(p.y_mm)] });
        }
        Ok(ScanPlan { trap, tile, overlap, n_major, n_minor, poses })
    }
}
