//! Whole-trap reconstruction from overlapping tile detections.
//!
//! Tile-local instances are lifted into the global frame, then collapsed by
//! connected components over two kinds of links:
//!
//! * **duplicate**: the masks agree, i.e. their IoU reaches
//!   `dup_iou_threshold`, either over the whole plane or over the region both
//!   source tiles actually imaged. The second form is what links a partial
//!   mask cut by one tile's border to the complete mask of the same egg seen
//!   inside a neighbouring tile;
//! * **cut**: both masks are clipped at the same shared tile border from
//!   opposite sides and come within `contact_tolerance_mm` of each other.
//!
//! Collapsing repeats until no links remain, so the output is a fixpoint:
//! running [`deduplicate`] again returns it unchanged.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use rayon::prelude::*;
use serde_json::{json, Value};
use thiserror::Error;

use crate::detections::{EggClass, Edge, Frame, TileDetections};
use crate::geometry::{tile_point_to_global, ScanPlan};
use crate::num::Real;
use crate::polygon::{bbox_of, Polygon, Rect};
use crate::raster::{rasterize, trace_contours, Grid};

/// Cell budget below which IoU rasterization refines its pitch.
const MIN_IOU_CELLS: f64 = 400.0;
const MAX_PITCH_HALVINGS: u32 = 6;

#[derive(Debug, Error, PartialEq)]
pub enum MergeError {
    #[error("unknown tile id {0}")]
    UnknownTile(usize),
    #[error("tile {tile_id}: instance {local_id} is not in that tile's pixel frame")]
    FrameMismatch { tile_id: usize, local_id: usize },
    #[error("malformed merged document: {0}")]
    Document(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ScoreCombine {
    Max,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeConfig<T: Real = f64> {
    pub dup_iou_threshold: T,
    pub contact_tolerance_mm: T,
    pub score_combine: ScoreCombine,
    pub raster_pitch_mm: T,
}

impl<T: Real> Default for MergeConfig<T> {
    fn default() -> Self {
        Self {
            dup_iou_threshold: T::lit(0.5),
            contact_tolerance_mm: T::lit(0.02),
            score_combine: ScoreCombine::Max,
            raster_pitch_mm: T::lit(0.007),
        }
    }
}

impl<T: Real> MergeConfig<T> {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.dup_iou_threshold > T::zero() && self.dup_iou_threshold <= T::one()) {
            return Err("dup_iou_threshold must lie in (0, 1]".into());
        }
        if !(self.contact_tolerance_mm >= T::zero()) {
            return Err("contact_tolerance_mm must be non-negative".into());
        }
        if !(self.raster_pitch_mm > T::zero()) {
            return Err("raster_pitch_mm must be positive".into());
        }
        Ok(())
    }
}

/// A tile border that clips an instance's mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cut<T: Real = f64> {
    pub edge: Edge,
    /// Footprint of the tile whose border it is.
    pub tile: Rect<T>,
}

impl<T: Real> Cut<T> {
    /// True when `self` and `other` are the two sides of one shared border
    /// segment of positive length.
    fn complements(&self, other: &Cut<T>) -> bool {
        if other.edge != self.edge.opposite() {
            return false;
        }
        let close = |a: T, b: T| (a - b).abs() <= T::lit(1e-6) * T::one().max(a.abs());
        let overlap = |a0: T, a1: T, b0: T, b1: T| a1.min(b1) - a0.max(b0) > T::zero();
        let (a, b) = (&self.tile, &other.tile);
        match self.edge {
            Edge::East => close(a.max[0], b.min[0]) && overlap(a.min[1], a.max[1], b.min[1], b.max[1]),
            Edge::West => close(a.min[0], b.max[0]) && overlap(a.min[1], a.max[1], b.min[1], b.max[1]),
            Edge::South => close(a.max[1], b.min[1]) && overlap(a.min[0], a.max[0], b.min[0], b.max[0]),
            Edge::North => close(a.min[1], b.max[1]) && overlap(a.min[0], a.max[0], b.min[0], b.max[0]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalInstance<T: Real = f64> {
    pub id: usize,
    pub class: EggClass,
    pub score: T,
    /// Mask in global millimetres.
    pub polygons: Vec<Polygon<T>>,
    /// `(tile_id, local instance id)` of every contributing detection.
    pub provenance: Vec<(usize, usize)>,
    /// Footprints of the tiles that observed this instance. Empty means
    /// unknown, in which case only whole-plane IoU is used.
    pub views: Vec<Rect<T>>,
    pub cuts: Vec<Cut<T>>,
}

impl<T: Real> GlobalInstance<T> {
    pub fn area(&self) -> T {
        self.polygons.iter().fold(T::zero(), |a, p| a + p.area())
    }

    pub fn bbox(&self) -> Option<Rect<T>> {
        bbox_of(&self.polygons)
    }
}

/// Maps every tile-local instance into the global frame. No merging.
pub fn to_global<T: Real>(dets: &[TileDetections<T>], plan: &ScanPlan<T>) -> Result<Vec<GlobalInstance<T>>, MergeError> {
    let mut out = Vec::new();
    for td in dets {
        let pose = plan.pose(td.tile_id).ok_or(MergeError::UnknownTile(td.tile_id))?;
        let rect = pose.rect(&plan.tile);
        for inst in &td.instances {
            if inst.frame != Frame::TileLocal(td.tile_id) {
                return Err(MergeError::FrameMismatch { tile_id: td.tile_id, local_id: inst.id });
            }
            out.push(GlobalInstance {
                id: out.len(),
                class: inst.class,
                score: inst.score,
                polygons: inst
                    .polygons
                    .iter()
                    .map(|p| p.map(|v| tile_point_to_global(pose, &plan.tile, v)))
                    .collect(),
                provenance: vec![(td.tile_id, inst.id)],
                views: vec![rect],
                cuts: inst.clipped_edges.iter().map(|&edge| Cut { edge, tile: rect }).collect(),
            });
        }
    }
    Ok(out)
}

fn rect_key<T: Real>(r: &Rect<T>) -> [f64; 4] {
    [r.min[0].as_f64(), r.min[1].as_f64(), r.max[0].as_f64(), r.max[1].as_f64()]
}

fn cmp_rect<T: Real>(a: &Rect<T>, b: &Rect<T>) -> Ordering {
    let (a, b) = (rect_key(a), rect_key(b));
    a.iter().zip(&b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
}

fn canonical_cmp<T: Real>(a: &GlobalInstance<T>, b: &GlobalInstance<T>) -> Ordering {
    let key = |g: &GlobalInstance<T>| g.bbox().map(|r| [r.min[0].as_f64(), r.min[1].as_f64()]).unwrap_or([0.0; 2]);
    let (ka, kb) = (key(a), key(b));
    ka[0]
        .total_cmp(&kb[0])
        .then(ka[1].total_cmp(&kb[1]))
        .then_with(|| a.provenance.cmp(&b.provenance))
        .then_with(|| a.score.as_f64().total_cmp(&b.score.as_f64()))
}

/// Sorts by mask bounding-box minimum and reassigns ids `0..n`.
pub fn canonicalize<T: Real>(mut v: Vec<GlobalInstance<T>>) -> Vec<GlobalInstance<T>> {
    v.sort_by(canonical_cmp);
    for (k, g) in v.iter_mut().enumerate() {
        g.id = k;
    }
    v
}

/// Picks a pitch no coarser than `base` giving at least `MIN_IOU_CELLS`
/// cells over an area of `extent` (mm²). Halving keeps grids aligned.
fn refined_pitch<T: Real>(base: T, extent: T) -> T {
    let mut pitch = base;
    for _ in 0..MAX_PITCH_HALVINGS {
        if (extent / (pitch * pitch)).as_f64() >= MIN_IOU_CELLS {
            break;
        }
        pitch = pitch / T::lit(2.0);
    }
    pitch
}

/// Mask IoU on an aligned grid, optionally restricted to the union of
/// `region` rectangles. Returns 0 when either restricted mask is empty.
pub fn region_iou<T: Real>(a: &[Polygon<T>], b: &[Polygon<T>], region: Option<&[Rect<T>]>, base_pitch: T) -> T {
    let (Some(ba), Some(bb)) = (bbox_of(a), bbox_of(b)) else {
        return T::zero();
    };
    let (ba, bb, cover) = match region {
        None => (Some(ba), Some(bb), ba.union(&bb)),
        Some(rs) => {
            let Some(rb) = rs.iter().copied().reduce(|x, y| x.union(&y)) else {
                return T::zero();
            };
            let (ca, cb) = (ba.intersection(&rb), bb.intersection(&rb));
            match (ca, cb) {
                (Some(x), Some(y)) => (Some(x), Some(y), x.union(&y)),
                _ => return T::zero(),
            }
        }
    };
    let (ba, bb) = (ba.unwrap(), bb.unwrap());
    if ba.intersection(&bb).is_none() {
        return T::zero();
    }
    let extent = ba.area().min(bb.area());
    let pitch = refined_pitch(base_pitch, extent);
    let grid = Grid::aligned(&cover, pitch);
    let mut ma = rasterize(&grid, a);
    let mut mb = rasterize(&grid, b);
    if let Some(rs) = region {
        ma.restrict(&grid, rs);
        mb.restrict(&grid, rs);
    }
    let (na, nb) = (ma.count(), mb.count());
    if na == 0 || nb == 0 {
        return T::zero();
    }
    let inter = ma.and_count(&mb);
    let union = na + nb - inter;
    T::from_count(inter) / T::from_count(union)
}

fn common_view<T: Real>(a: &GlobalInstance<T>, b: &GlobalInstance<T>) -> Option<Vec<Rect<T>>> {
    if a.views.is_empty() || b.views.is_empty() {
        return None;
    }
    let rs: Vec<Rect<T>> = a
        .views
        .iter()
        .flat_map(|x| b.views.iter().filter_map(move |y| x.intersection(y)))
        .collect();
    Some(rs)
}

fn linked<T: Real>(a: &GlobalInstance<T>, b: &GlobalInstance<T>, cfg: &MergeConfig<T>) -> bool {
    let (Some(ba), Some(bb)) = (a.bbox(), b.bbox()) else { return false };
    if !ba.expand(cfg.contact_tolerance_mm).touches(&bb) {
        return false;
    }
    if ba.intersection(&bb).is_some() {
        if region_iou(&a.polygons, &b.polygons, None, cfg.raster_pitch_mm) >= cfg.dup_iou_threshold {
            return true;
        }
        if let Some(view) = common_view(a, b) {
            if !view.is_empty()
                && region_iou(&a.polygons, &b.polygons, Some(&view), cfg.raster_pitch_mm) >= cfg.dup_iou_threshold
            {
                return true;
            }
        }
    }
    let cut_pair = a.cuts.iter().any(|ca| b.cuts.iter().any(|cb| ca.complements(cb)));
    cut_pair
        && a.polygons
            .iter()
            .any(|p| b.polygons.iter().any(|q| p.distance_to(q) <= cfg.contact_tolerance_mm))
}

struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect(), rank: vec![0; n] }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            Ordering::Less => self.parent[ra] = rb,
            Ordering::Greater => self.parent[rb] = ra,
            Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

fn collapse<T: Real>(mut members: Vec<GlobalInstance<T>>, cfg: &MergeConfig<T>) -> GlobalInstance<T> {
    if members.len() == 1 {
        return members.pop().unwrap();
    }
    members.sort_by(canonical_cmp);

    let all: Vec<Polygon<T>> = members.iter().flat_map(|m| m.polygons.iter().cloned()).collect();
    let cover = bbox_of(&all).expect("members have masks");
    let mut pitch = cfg.raster_pitch_mm;
    let mut polygons = Vec::new();
    for _ in 0..=MAX_PITCH_HALVINGS {
        let grid = Grid::aligned(&cover, pitch);
        polygons = trace_contours(&grid, &rasterize(&grid, &all));
        if !polygons.is_empty() {
            break;
        }
        pitch = pitch / T::lit(2.0);
    }
    polygons.sort_by(|a, b| b.area().as_f64().total_cmp(&a.area().as_f64()));

    let mut scores: Vec<T> = members.iter().map(|m| m.score).collect();
    scores.sort_by(|a, b| a.as_f64().total_cmp(&b.as_f64()));
    let score = match cfg.score_combine {
        ScoreCombine::Max => *scores.last().unwrap(),
        ScoreCombine::Mean => scores.iter().fold(T::zero(), |a, &s| a + s) / T::from_count(scores.len()),
    };
    let best = members.iter().map(|m| m.score).fold(T::neg_infinity(), T::max);
    let top: BTreeSet<EggClass> = members.iter().filter(|m| m.score == best).map(|m| m.class).collect();
    let class = if top.len() == 1 { *top.iter().next().unwrap() } else { EggClass::Full };

    let provenance: BTreeSet<(usize, usize)> = members.iter().flat_map(|m| m.provenance.iter().copied()).collect();
    let mut views: Vec<Rect<T>> = members.iter().flat_map(|m| m.views.iter().copied()).collect();
    views.sort_by(cmp_rect);
    views.dedup();
    let mut cuts: Vec<Cut<T>> = members.iter().flat_map(|m| m.cuts.iter().copied()).collect();
    cuts.sort_by(|a, b| a.edge.cmp(&b.edge).then_with(|| cmp_rect(&a.tile, &b.tile)));
    cuts.dedup();

    GlobalInstance {
        id: 0,
        class,
        score,
        polygons,
        provenance: provenance.into_iter().collect(),
        views,
        cuts,
    }
}

/// Collapses duplicate and cut detections into one instance per egg.
///
/// Output is sorted by the minimum corner of each mask's bounding box and
/// ids are reassigned `0..n`. Singleton instances pass through untouched;
/// merged ones get the union mask re-vectorized on a grid of pitch
/// `raster_pitch_mm`, the combined score, and the class of their highest
/// scoring member (ties resolve to `Full`).
pub fn deduplicate<T: Real>(instances: Vec<GlobalInstance<T>>, cfg: &MergeConfig<T>) -> Vec<GlobalInstance<T>> {
    let mut current = canonicalize(instances);
    loop {
        let n = current.len();
        let links: Vec<(usize, usize)> = (0..n)
            .into_par_iter()
            .flat_map_iter(|i| {
                let cur = &current;
                ((i + 1)..n).filter(move |&j| linked(&cur[i], &cur[j], cfg)).map(move |j| (i, j))
            })
            .collect();
        if links.is_empty() {
            break;
        }
        let mut ds = DisjointSet::new(n);
        for (i, j) in links {
            ds.union(i, j);
        }
        let mut groups: Vec<Vec<GlobalInstance<T>>> = vec![Vec::new(); n];
        for (k, g) in current.into_iter().enumerate() {
            let root = ds.find(k);
            groups[root].push(g);
        }
        let merged: Vec<GlobalInstance<T>> = groups
            .into_par_iter()
            .filter(|g| !g.is_empty())
            .map(|g| collapse(g, cfg))
            .collect();
        current = canonicalize(merged);
    }
    current
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CountReport {
    #[serde(rename = "hatched")]
    pub n_hatched: usize,
    #[serde(rename = "full")]
    pub n_full: usize,
    pub total: usize,
    /// `n_hatched / total`, absent for an empty trap.
    pub hatch_ratio: Option<f64>,
}

impl std::fmt::Display for CountReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "hatched: {}\nfull:    {}\ntotal:   {}\nhatch ratio: ", self.n_hatched, self.n_full, self.total)?;
        match self.hatch_ratio {
            Some(r) => write!(f, "{r:.4}"),
            None => write!(f, "n/a"),
        }
    }
}

pub fn count_eggs<T: Real>(instances: &[GlobalInstance<T>]) -> CountReport {
    let n_hatched = instances.iter().filter(|g| g.class == EggClass::Hatched).count();
    let total = instances.len();
    CountReport {
        n_hatched,
        n_full: total - n_hatched,
        total,
        hatch_ratio: (total > 0).then(|| n_hatched as f64 / total as f64),
    }
}

// ---------------------------------------------------------------------------
// merged output document
// ---------------------------------------------------------------------------

fn poly_value<T: Real>(p: &Polygon<T>) -> Value {
    Value::Array(p.vertices().iter().map(|v| json!([v[0].as_f64(), v[1].as_f64()])).collect())
}

/// `{instances: [{id, class, score, polygon, provenance}], counts}`. The
/// largest ring goes in `polygon`; any further disjoint rings of the same
/// instance are listed under `extra_polygons`.
pub fn merged_to_json<T: Real>(instances: &[GlobalInstance<T>]) -> String {
    let list: Vec<Value> = instances
        .iter()
        .map(|g| {
            let mut o = json!({
                "id": g.id,
                "class": g.class.name(),
                "score": g.score.as_f64(),
                "polygon": g.polygons.first().map(poly_value).unwrap_or(json!([])),
                "provenance": g.provenance.iter().map(|&(t, l)| json!([t, l])).collect::<Vec<_>>(),
            });
            if g.polygons.len() > 1 {
                o["extra_polygons"] = Value::Array(g.polygons[1..].iter().map(poly_value).collect());
            }
            o
        })
        .collect();
    serde_json::to_string_pretty(&json!({ "instances": list, "counts": count_eggs(instances) })).expect("merged output serializes")
}

/// Reads a merged document back. Tile footprints and cut borders are not
/// part of the format and come back empty.
pub fn merged_from_json<T: Real>(s: &str) -> Result<Vec<GlobalInstance<T>>, MergeError> {
    #[derive(serde::Deserialize)]
    struct Inst {
        id: usize,
        class: EggClass,
        score: f64,
        polygon: Vec<[f64; 2]>,
        #[serde(default)]
        extra_polygons: Vec<Vec<[f64; 2]>>,
        provenance: Vec<(usize, usize)>,
    }
    #[derive(serde::Deserialize)]
    struct Doc {
        instances: Vec<Inst>,
    }
    let doc: Doc = serde_json::from_str(s).map_err(|e| MergeError::Document(e.to_string()))?;
    doc.instances
        .into_iter()
        .enumerate()
        .map(|(k, i)| {
            if !(0.0..=1.0).contains(&i.score) {
                return Err(MergeError::Document(format!("instances[{k}]: score out of range")));
            }
            if i.provenance.is_empty() {
                return Err(MergeError::Document(format!("instances[{k}]: empty provenance")));
            }
            let to_poly = |v: Vec<[f64; 2]>| Polygon(v.into_iter().map(|p| p.map(T::lit)).collect());
            let polygons: Vec<Polygon<T>> =
                std::iter::once(i.polygon).chain(i.extra_polygons).map(to_poly).collect();
            if polygons.iter().any(|p| p.len() < 3 || p.area() <= T::zero()) {
                return Err(MergeError::Document(format!("instances[{k}]: degenerate polygon")));
            }
            Ok(GlobalInstance {
                id: i.id,
                class: i.class,
                score: T::lit(i.score),
                polygons,
                provenance: i.provenance,
                views: Vec::new(),
                cuts: Vec::new(),
            })
        })
        .collect()
}
