//! Stage command protocol, synthetic egg scenes, and the simulated scan.
//!
//! The protocol is line-oriented UTF-8 text:
//!
//! ```text
//! MOVE 4.46875 0.0
//! DWELL 2000
//! CAPTURE 17
//! ```
//!
//! Coordinates are millimetres with at most six fractional digits.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detections::{EggClass, EggInstance, Frame};
use crate::geometry::{ScanPlan, TilePose, TileSpec, TrapSpec};
use crate::num::Real;
use crate::polygon::{Polygon, Rect};

pub const BACKGROUND_LEVEL: u8 = 200;
pub const SHELL_LEVEL: u8 = 30;
pub const HATCHED_INTERIOR_LEVEL: u8 = 140;
/// Inner ellipse of a hatched egg, as a fraction of the outer semi-axes.
pub const HATCHED_INTERIOR_SCALE: f64 = 0.7;
/// Mean egg area in mm².
pub const EGG_AREA_MM2: f64 = 0.065;
const MAX_PLACEMENT_ATTEMPTS: usize = 20_000;

#[derive(Debug, Error)]
pub enum DeviceError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("image encoding failed: {0}")]
    Image(String),
    #[error("scene too dense: placed {placed} of {requested} eggs")]
    SceneTooDense { placed: usize, requested: usize },
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("line {line}: {message}")]
    Protocol { line: usize, message: String },
}

// ---------------------------------------------------------------------------
// motion commands
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MotionCommand<T: Real = f64> {
    Move { x_mm: T, y_mm: T },
    Dwell { ms: u64 },
    Capture { tile_id: usize },
}

/// Decimal millimetres, rounded to six fractional digits with trailing zeros
/// trimmed (at least one digit is kept).
pub fn format_mm(x: f64) -> String {
    let s = format!("{:.6}", x);
    let s = s.trim_end_matches('0');
    let s = if s.ends_with('.') { format!("{s}0") } else { s.to_string() };
    if s == "-0.0" {
        "0.0".to_string()
    } else {
        s
    }
}

impl<T: Real> fmt::Display for MotionCommand<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MotionCommand::Move { x_mm, y_mm } => {
                write!(f, "MOVE {} {}", format_mm(x_mm.as_f64()), format_mm(y_mm.as_f64()))
            }
            MotionCommand::Dwell { ms } => write!(f, "DWELL {ms}"),
            MotionCommand::Capture { tile_id } => write!(f, "CAPTURE {tile_id}"),
        }
    }
}

impl<T: Real> FromStr for MotionCommand<T> {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split_whitespace().collect();
        let mm = |t: &str| -> Result<T, String> {
            let v: f64 = t.parse().map_err(|_| format!("bad coordinate `{t}`"))?;
            if !v.is_finite() {
                return Err(format!("bad coordinate `{t}`"));
            }
            Ok(T::lit(v))
        };
        match parts.as_slice() {
            ["MOVE", x, y] => Ok(MotionCommand::Move { x_mm: mm(x)?, y_mm: mm(y)? }),
            ["DWELL", ms] => ms
                .parse()
                .map(|ms| MotionCommand::Dwell { ms })
                .map_err(|_| format!("bad dwell `{ms}`")),
            ["CAPTURE", id] => id
                .parse()
                .map(|tile_id| MotionCommand::Capture { tile_id })
                .map_err(|_| format!("bad tile id `{id}`")),
            _ => Err(format!("unrecognized command `{s}`")),
        }
    }
}

/// Expands a plan into `MOVE, DWELL, CAPTURE` per pose in acquisition order.
pub fn compile_plan<T: Real>(plan: &ScanPlan<T>, dwell_s: T) -> Result<Vec<MotionCommand<T>>, DeviceError> {
    if !(dwell_s >= T::zero()) {
        return Err(DeviceError::InvalidParams("dwell must be non-negative".into()));
    }
    let ms = (dwell_s * T::lit(1000.0)).round().to_u64().unwrap_or(0);
    Ok(plan
        .poses
        .iter()
        .flat_map(|p| {
            [
                MotionCommand::Move { x_mm: p.origin_mm[0], y_mm: p.origin_mm[1] },
                MotionCommand::Dwell { ms },
                MotionCommand::Capture { tile_id: p.id },
            ]
        })
        .collect())
}

pub fn render_command_stream<T: Real>(cmds: &[MotionCommand<T>]) -> String {
    let mut out = String::new();
    for c in cmds {
        out.push_str(&c.to_string());
        out.push('\n');
    }
    out
}

pub fn parse_command_stream<T: Real>(text: &str) -> Result<Vec<MotionCommand<T>>, DeviceError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| l.parse().map_err(|message| DeviceError::Protocol { line: i + 1, message }))
        .collect()
}

/// Checks that `cmds` is `(MOVE DWELL CAPTURE)*`. With a plan, MOVE targets
/// must lie inside the trap and CAPTURE ids must exist. Returns the number
/// of captures.
pub fn check_command_stream<T: Real>(cmds: &[MotionCommand<T>], plan: Option<&ScanPlan<T>>) -> Result<usize, DeviceError> {
    #[derive(Clone, Copy, PartialEq)]
    #[allow(clippy::enum_variant_names)]
    enum State {
        ExpectMove,
        ExpectDwell,
        ExpectCapture,
    }
    let mut state = State::ExpectMove;
    let mut captures = 0;
    let err = |i: usize, m: &str| DeviceError::Protocol { line: i + 1, message: m.to_string() };
    for (i, c) in cmds.iter().enumerate() {
        state = match (state, c) {
            (State::ExpectMove, MotionCommand::Move { x_mm, y_mm }) => {
                if let Some(plan) = plan {
                    let eps = T::lit(1e-6);
                    let inside = *x_mm >= -eps
                        && *y_mm >= -eps
                        && *x_mm + plan.tile.major_extent_mm <= plan.trap.length_mm + eps
                        && *y_mm + plan.tile.minor_extent_mm <= plan.trap.width_mm + eps;
                    if !inside {
                        return Err(err(i, "MOVE outside the trap"));
                    }
                }
                State::ExpectDwell
            }
            (State::ExpectDwell, MotionCommand::Dwell { .. }) => State::ExpectCapture,
            (State::ExpectCapture, MotionCommand::Capture { tile_id }) => {
                if plan.is_some_and(|p| *tile_id >= p.poses.len()) {
                    return Err(err(i, "CAPTURE of unknown tile"));
                }
                captures += 1;
                State::ExpectMove
            }
            (State::ExpectMove, _) => return Err(err(i, "expected MOVE")),
            (State::ExpectDwell, _) => return Err(err(i, "expected DWELL")),
            (State::ExpectCapture, _) => return Err(err(i, "expected CAPTURE")),
        };
    }
    if state != State::ExpectMove {
        return Err(err(cmds.len().saturating_sub(1), "truncated command group"));
    }
    Ok(captures)
}

// ---------------------------------------------------------------------------
// synthetic scene
// ---------------------------------------------------------------------------

/// Ground-truth egg, an ellipse in the global frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct EggTruth<T: Real = f64> {
    pub id: usize,
    pub center_mm: [T; 2],
    pub semi_axes_mm: [T; 2],
    pub angle_rad: T,
    pub class: EggClass,
}

impl<T: Real> EggTruth<T> {
    pub fn area(&self) -> T {
        T::PI() * self.semi_axes_mm[0] * self.semi_axes_mm[1]
    }

    /// Closed-ellipse membership test.
    pub fn contains(&self, p: [T; 2]) -> bool {
        self.contains_scaled(p, T::one())
    }

    fn contains_scaled(&self, p: [T; 2], scale: T) -> bool {
        let (s, c) = self.angle_rad.sin_cos();
        let dx = p[0] - self.center_mm[0];
        let dy = p[1] - self.center_mm[1];
        let x = (dx * c + dy * s) / (self.semi_axes_mm[0] * scale);
        let y = (-dx * s + dy * c) / (self.semi_axes_mm[1] * scale);
        x * x + y * y <= T::one()
    }

    pub fn bbox(&self) -> Rect<T> {
        let (s, c) = self.angle_rad.sin_cos();
        let [a, b] = self.semi_axes_mm;
        let hx = (a * a * c * c + b * b * s * s).sqrt();
        let hy = (a * a * s * s + b * b * c * c).sqrt();
        Rect::new(
            [self.center_mm[0] - hx, self.center_mm[1] - hy],
            [self.center_mm[0] + hx, self.center_mm[1] + hy],
        )
    }

    /// `n` counter-clockwise boundary samples at uniform parameter steps.
    pub fn boundary(&self, n: usize) -> Vec<[T; 2]> {
        let (s, c) = self.angle_rad.sin_cos();
        let [a, b] = self.semi_axes_mm;
        (0..n)
            .map(|k| {
                let t = T::TAU() * T::from_count(k) / T::from_count(n);
                let (x, y) = (a * t.cos(), b * t.sin());
                [self.center_mm[0] + x * c - y * s, self.center_mm[1] + x * s + y * c]
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct SyntheticScene<T: Real = f64> {
    pub trap: TrapSpec<T>,
    pub eggs: Vec<EggTruth<T>>,
    pub seed: u64,
}

impl<T: Real> SyntheticScene<T> {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    /// Every egg as a global-frame instance of score 1, its ellipse sampled
    /// at `n_vertices` points.
    pub fn truth_instances(&self, n_vertices: usize) -> Vec<EggInstance<T>> {
        self.eggs
            .iter()
            .map(|e| EggInstance {
                id: e.id,
                class: e.class,
                score: T::one(),
                polygons: vec![Polygon(e.boundary(n_vertices))],
                frame: Frame::Global,
                clipped_edges: Default::default(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneParams {
    pub seed: u64,
    pub n_eggs: usize,
    pub hatch_fraction: f64,
    pub min_separation_mm: f64,
    /// Mean ellipse area, mm².
    pub mean_area_mm2: f64,
    /// Relative half-width of the uniform area spread.
    pub area_spread: f64,
    /// Range of the major/minor semi-axis ratio.
    pub aspect: (f64, f64),
}

impl SceneParams {
    pub fn new(seed: u64, n_eggs: usize, hatch_fraction: f64, min_separation_mm: f64) -> Self {
        Self {
            seed,
            n_eggs,
            hatch_fraction,
            min_separation_mm,
            mean_area_mm2: EGG_AREA_MM2,
            area_spread: 0.1,
            aspect: (2.5, 3.5),
        }
    }
}

/// Places eggs uniformly over the trap by rejection sampling on center
/// separation. Every ellipse lies wholly inside the trap.
pub fn generate_scene<T: Real>(params: &SceneParams, trap: TrapSpec<T>) -> Result<SyntheticScene<T>, DeviceError> {
    let p = params;
    if !(0.0..=1.0).contains(&p.hatch_fraction) {
        return Err(DeviceError::InvalidParams("hatch_fraction must lie in [0, 1]".into()));
    }
    if !(p.min_separation_mm >= 0.0) {
        return Err(DeviceError::InvalidParams("min_separation_mm must be non-negative".into()));
    }
    if !(p.mean_area_mm2 > 0.0) || !(0.0..1.0).contains(&p.area_spread) || !(p.aspect.0 >= 1.0 && p.aspect.1 >= p.aspect.0) {
        return Err(DeviceError::InvalidParams("invalid egg shape parameters".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let (length, width) = (trap.length_mm.as_f64(), trap.width_mm.as_f64());
    let mut eggs: Vec<EggTruth<f64>> = Vec::with_capacity(p.n_eggs);
    let min_sep2 = p.min_separation_mm * p.min_separation_mm;
    for id in 0..p.n_eggs {
        let area = p.mean_area_mm2 * (1.0 + p.area_spread * (2.0 * rng.random::<f64>() - 1.0));
        let ratio = rng.random_range(p.aspect.0..=p.aspect.1);
        let b = (area / (std::f64::consts::PI * ratio)).sqrt();
        let a = ratio * b;
        let angle = rng.random::<f64>() * std::f64::consts::PI;
        let shape = EggTruth { id, center_mm: [0.0, 0.0], semi_axes_mm: [a, b], angle_rad: angle, class: EggClass::Full };
        let half = shape.bbox().max;
        if 2.0 * half[0] > length || 2.0 * half[1] > width {
            return Err(DeviceError::InvalidParams("egg larger than trap".into()));
        }
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let c = [
                rng.random_range(half[0]..=length - half[0]),
                rng.random_range(half[1]..=width - half[1]),
            ];
            let clear = eggs.iter().all(|e| {
                let dx = e.center_mm[0] - c[0];
                let dy = e.center_mm[1] - c[1];
                dx * dx + dy * dy >= min_sep2
            });
            if clear {
                placed = Some(c);
                break;
            }
        }
        let Some(c) = placed else {
            return Err(DeviceError::SceneTooDense { placed: eggs.len(), requested: p.n_eggs });
        };
        eggs.push(EggTruth { center_mm: c, ..shape });
    }
    let n_hatched = (p.n_eggs as f64 * p.hatch_fraction).round() as usize;
    let mut order: Vec<usize> = (0..p.n_eggs).collect();
    order.shuffle(&mut rng);
    for &k in &order[..n_hatched] {
        eggs[k].class = EggClass::Hatched;
    }
    let cast = |v: f64| T::lit(v);
    Ok(SyntheticScene {
        trap,
        seed: p.seed,
        eggs: eggs
            .into_iter()
            .map(|e| EggTruth {
                id: e.id,
                center_mm: e.center_mm.map(cast),
                semi_axes_mm: e.semi_axes_mm.map(cast),
                angle_rad: cast(e.angle_rad),
                class: e.class,
            })
            .collect(),
    })
}

// ---------------------------------------------------------------------------
// rendering
// ---------------------------------------------------------------------------

/// 8-bit grayscale tile, row-major with `width` along the major axis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileImage {
    pub tile_id: usize,
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl TileImage {
    pub fn get(&self, u: u32, v: u32) -> u8 {
        self.pixels[(v * self.width + u) as usize]
    }

    pub fn count_at_most(&self, level: u8) -> usize {
        self.pixels.iter().filter(|&&p| p <= level).count()
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, DeviceError> {
        use image::ImageEncoder;
        let mut buf = Vec::new();
        image::codecs::png::PngEncoder::new(&mut buf)
            .write_image(&self.pixels, self.width, self.height, image::ExtendedColorType::L8)
            .map_err(|e| DeviceError::Image(e.to_string()))?;
        Ok(buf)
    }
}

/// Renders one tile: background 200, full eggs solid 30, hatched eggs as a
/// 30 shell around a 140 interior. A pixel belongs to an egg iff its center
/// lies inside the ellipse.
pub fn render_tile<T: Real>(scene: &SyntheticScene<T>, pose: &TilePose<T>, tile: &TileSpec<T>) -> TileImage {
    let (w, h) = (tile.px_major, tile.px_minor);
    let mut pixels = vec![BACKGROUND_LEVEL; (w as usize) * (h as usize)];
    let rect = pose.rect(tile);
    let (pu, pv) = (tile.pitch_major(), tile.pitch_minor());
    let half = T::lit(0.5);
    let inner = T::lit(HATCHED_INTERIOR_SCALE);
    let range = |lo: T, hi: T, origin: T, pitch: T, n: u32| {
        let a = ((lo - origin) / pitch - half).floor().max(T::zero()).to_u32().unwrap_or(0);
        let b = ((hi - origin) / pitch - half).ceil().min(T::from_u32(n).unwrap() - T::one());
        let b = b.to_i64().unwrap_or(-1);
        (a, b)
    };
    for egg in &scene.eggs {
        let bb = egg.bbox();
        if !bb.touches(&rect) {
            continue;
        }
        let (u0, u1) = range(bb.min[0], bb.max[0], pose.origin_mm[0], pu, w);
        let (v0, v1) = range(bb.min[1], bb.max[1], pose.origin_mm[1], pv, h);
        if u1 < 0 || v1 < 0 {
            continue;
        }
        for v in v0..=(v1 as u32) {
            let y = pose.origin_mm[1] + (T::from_u32(v).unwrap() + half) * pv;
            for u in u0..=(u1 as u32) {
                let x = pose.origin_mm[0] + (T::from_u32(u).unwrap() + half) * pu;
                if !egg.contains([x, y]) {
                    continue;
                }
                let level = match egg.class {
                    EggClass::Full => SHELL_LEVEL,
                    EggClass::Hatched if egg.contains_scaled([x, y], inner) => HATCHED_INTERIOR_LEVEL,
                    EggClass::Hatched => SHELL_LEVEL,
                };
                pixels[(v * w + u) as usize] = level;
            }
        }
    }
    TileImage { tile_id: pose.id, width: w, height: h, pixels }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestTile {
    pub id: usize,
    pub row: usize,
    pub col: usize,
    pub x_mm: f64,
    pub y_mm: f64,
    pub file: String,
}

/// Index of a simulated acquisition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationManifest {
    pub scene_seed: u64,
    pub plan_ref: String,
    pub tiles: Vec<ManifestTile>,
}

impl SimulationManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn tile_file_name(tile_id: usize) -> String {
    format!("tile_{tile_id:03}.png")
}

/// Renders every pose to `out_dir/tile_<id>.png` and writes
/// `out_dir/manifest.json`. Tiles are rendered in parallel; output bytes do
/// not depend on scheduling.
pub fn simulate_run<T: Real>(
    scene: &SyntheticScene<T>,
    plan: &ScanPlan<T>,
    out_dir: &Path,
    plan_ref: &str,
) -> Result<SimulationManifest, DeviceError> {
    std::fs::create_dir_all(out_dir)?;
    plan.poses.par_iter().try_for_each(|pose| -> Result<(), DeviceError> {
        let img = render_tile(scene, pose, &plan.tile);
        std::fs::write(out_dir.join(tile_file_name(pose.id)), img.encode_png()?)?;
        Ok(())
    })?;
    let manifest = SimulationManifest {
        scene_seed: scene.seed,
        plan_ref: plan_ref.to_string(),
        tiles: plan
            .poses
            .iter()
            .map(|p| ManifestTile {
                id: p.id,
                row: p.row,
                col: p.col,
                x_mm: p.origin_mm[0].as_f64(),
                y_mm: p.origin_mm[1].as_f64(),
                file: tile_file_name(p.id),
            })
            .collect(),
    };
    std::fs::write(out_dir.join(MANIFEST_FILE), manifest.to_json())?;
    Ok(manifest)
}
