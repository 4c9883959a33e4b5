//! Egg-instance data model, interchange parsers, the perfect-knowledge oracle
//! detector, and dataset statistics.
//!
//! Two JSON formats are handled here:
//!
//! * ground truth, a subset of the COCO annotation layout
//!   `{images, annotations, categories}` with categories named `hatch` and
//!   `full`;
//! * tile detections, `{tiles: [{tile_id, instances: [{class, score,
//!   polygon, clipped_edges}]}]}` with polygon vertices in tile pixels.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::device::SyntheticScene;
use crate::geometry::{global_point_to_tile, TilePose, TileSpec};
use crate::num::Real;
use crate::polygon::{Polygon, Rect};

/// Vertex distance (px) under which a mask counts as touching a tile edge.
pub const EDGE_TOUCH_TOLERANCE_PX: f64 = 1.5;
/// Clipped fragments smaller than this (px²) are dropped by the oracle.
pub const MIN_FRAGMENT_AREA_PX: f64 = 1.0;
/// Number of boundary samples per oracle ellipse.
pub const ORACLE_VERTICES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EggClass {
    #[serde(rename = "hatch")]
    Hatched,
    #[serde(rename = "full")]
    Full,
}

impl EggClass {
    pub const ALL: [EggClass; 2] = [EggClass::Hatched, EggClass::Full];

    pub fn name(self) -> &'static str {
        match self {
            EggClass::Hatched => "hatch",
            EggClass::Full => "full",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "hatch" => Some(EggClass::Hatched),
            "full" => Some(EggClass::Full),
            _ => None,
        }
    }
}

impl fmt::Display for EggClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Tile border. East/West bound the major (x, u) axis at its max/min; South
/// and North bound the minor (y, v) axis at its max/min.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Edge {
    #[serde(rename = "N")]
    North,
    #[serde(rename = "S")]
    South,
    #[serde(rename = "E")]
    East,
    #[serde(rename = "W")]
    West,
}

impl Edge {
    pub fn code(self) -> &'static str {
        match self {
            Edge::North => "N",
            Edge::South => "S",
            Edge::East => "E",
            Edge::West => "W",
        }
    }

    pub fn from_code(s: &str) -> Option<Self> {
        match s {
            "N" => Some(Edge::North),
            "S" => Some(Edge::South),
            "E" => Some(Edge::East),
            "W" => Some(Edge::West),
            _ => None,
        }
    }

    pub fn opposite(self) -> Edge {
        match self {
            Edge::North => Edge::South,
            Edge::South => Edge::North,
            Edge::East => Edge::West,
            Edge::West => Edge::East,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    /// Pixel coordinates of the given tile (or ground-truth image).
    TileLocal(usize),
    /// Trap-global millimetres.
    Global,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EggInstance<T: Real = f64> {
    pub id: usize,
    pub class: EggClass,
    pub score: T,
    pub polygons: Vec<Polygon<T>>,
    pub frame: Frame,
    pub clipped_edges: BTreeSet<Edge>,
}

impl<T: Real> EggInstance<T> {
    pub fn area(&self) -> T {
        self.polygons.iter().fold(T::zero(), |a, p| a + p.area())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TileDetections<T: Real = f64> {
    pub tile_id: usize,
    pub instances: Vec<EggInstance<T>>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectionError {
    #[error("invalid JSON: {0}")]
    Json(String),
    #[error("{locus}: {message}")]
    Record { locus: String, message: String },
}

impl DetectionError {
    fn at(locus: impl Into<String>, message: impl Into<String>) -> Self {
        DetectionError::Record { locus: locus.into(), message: message.into() }
    }

    pub fn locus(&self) -> Option<&str> {
        match self {
            DetectionError::Record { locus, .. } => Some(locus),
            DetectionError::Json(_) => None,
        }
    }
}

// ---------------------------------------------------------------------------
// shared JSON helpers
// ---------------------------------------------------------------------------

fn field<'a>(obj: &'a Map<String, Value>, key: &str, locus: &str) -> Result<&'a Value, DetectionError> {
    obj.get(key)
        .ok_or_else(|| DetectionError::at(locus, format!("missing required key `{key}`")))
}

fn as_object<'a>(v: &'a Value, locus: &str) -> Result<&'a Map<String, Value>, DetectionError> {
    v.as_object().ok_or_else(|| DetectionError::at(locus, "expected an object"))
}

fn as_array<'a>(v: &'a Value, locus: &str) -> Result<&'a Vec<Value>, DetectionError> {
    v.as_array().ok_or_else(|| DetectionError::at(locus, "expected an array"))
}

fn as_u64(v: &Value, locus: &str, key: &str) -> Result<u64, DetectionError> {
    v.as_u64()
        .ok_or_else(|| DetectionError::at(locus, format!("`{key}` must be a non-negative integer")))
}

fn as_f64(v: &Value, locus: &str, key: &str) -> Result<f64, DetectionError> {
    v.as_f64()
        .filter(|x| x.is_finite())
        .ok_or_else(|| DetectionError::at(locus, format!("`{key}` must be a finite number")))
}

fn check_polygon<T: Real>(poly: &Polygon<T>, locus: &str) -> Result<(), DetectionError> {
    if poly.len() < 3 {
        return Err(DetectionError::at(locus, "polygon needs at least 3 vertices"));
    }
    if poly.area() <= T::zero() {
        return Err(DetectionError::at(locus, "polygon has zero area"));
    }
    if !poly.is_simple() {
        return Err(DetectionError::at(locus, "self-intersecting polygon"));
    }
    Ok(())
}

fn num(x: f64) -> Value {
    serde_json::Number::from_f64(x).map(Value::Number).unwrap_or(Value::Null)
}

// ---------------------------------------------------------------------------
// tile detections
// ---------------------------------------------------------------------------

/// Parses and validates a tile-detections document.
pub fn parse_tile_detections<T: Real>(doc: &str) -> Result<Vec<TileDetections<T>>, DetectionError> {
    let root: Value = serde_json::from_str(doc).map_err(|e| DetectionError::Json(e.to_string()))?;
    tile_detections_from_value(&root)
}

pub fn tile_detections_from_value<T: Real>(root: &Value) -> Result<Vec<TileDetections<T>>, DetectionError> {
    let root = as_object(root, "document")?;
    let tiles = as_array(field(root, "tiles", "document")?, "tiles")?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(tiles.len());
    for (ti, tv) in tiles.iter().enumerate() {
        let locus = format!("tiles[{ti}]");
        let t = as_object(tv, &locus)?;
        let tile_id = as_u64(field(t, "tile_id", &locus)?, &locus, "tile_id")? as usize;
        if !seen.insert(tile_id) {
            return Err(DetectionError::at(&locus, format!("duplicate tile_id {tile_id}")));
        }
        let insts = as_array(field(t, "instances", &locus)?, &locus)?;
        let mut instances = Vec::with_capacity(insts.len());
        for (ii, iv) in insts.iter().enumerate() {
            let locus = format!("tiles[{ti}].instances[{ii}]");
            let o = as_object(iv, &locus)?;
            let class_name = field(o, "class", &locus)?
                .as_str()
                .ok_or_else(|| DetectionError::at(&locus, "`class` must be a string"))?;
            let class = EggClass::from_name(class_name)
                .ok_or_else(|| DetectionError::at(&locus, format!("unknown class `{class_name}`")))?;
            let score = as_f64(field(o, "score", &locus)?, &locus, "score")?;
            if !(0.0..=1.0).contains(&score) {
                return Err(DetectionError::at(&locus, "score out of range"));
            }
            let verts = as_array(field(o, "polygon", &locus)?, &locus)?;
            let mut pts = Vec::with_capacity(verts.len());
            for (vi, vv) in verts.iter().enumerate() {
                let vl = format!("{locus}.polygon[{vi}]");
                let pair = as_array(vv, &vl)?;
                if pair.len() != 2 {
                    return Err(DetectionError::at(&vl, "vertex must be an [x, y] pair"));
                }
                pts.push([T::lit(as_f64(&pair[0], &vl, "x")?), T::lit(as_f64(&pair[1], &vl, "y")?)]);
            }
            let poly = Polygon(pts);
            check_polygon(&poly, &locus)?;
            let mut clipped_edges = BTreeSet::new();
            if let Some(ev) = o.get("clipped_edges") {
                for (ei, e) in as_array(ev, &locus)?.iter().enumerate() {
                    let code = e.as_str().unwrap_or("");
                    let edge = Edge::from_code(code).ok_or_else(|| {
                        DetectionError::at(format!("{locus}.clipped_edges[{ei}]"), format!("unknown edge `{code}`"))
                    })?;
                    clipped_edges.insert(edge);
                }
            }
            instances.push(EggInstance {
                id: ii,
                class,
                score: T::lit(score),
                polygons: vec![poly],
                frame: Frame::TileLocal(tile_id),
                clipped_edges,
            });
        }
        out.push(TileDetections { tile_id, instances });
    }
    Ok(out)
}

fn polygon_value<T: Real>(poly: &Polygon<T>) -> Value {
    Value::Array(
        poly.vertices()
            .iter()
            .map(|p| Value::Array(vec![num(p[0].as_f64()), num(p[1].as_f64())]))
            .collect(),
    )
}

/// Canonical JSON form of tile detections. Instances with several polygons
/// are written as one record per polygon.
pub fn tile_detections_to_value<T: Real>(tiles: &[TileDetections<T>]) -> Value {
    let tiles: Vec<Value> = tiles
        .iter()
        .map(|t| {
            let instances: Vec<Value> = t
                .instances
                .iter()
                .flat_map(|inst| {
                    inst.polygons.iter().map(move |poly| {
                        json!({
                            "class": inst.class.name(),
                            "score": num(inst.score.as_f64()),
                            "polygon": polygon_value(poly),
                            "clipped_edges": inst.clipped_edges.iter().map(|e| e.code()).collect::<Vec<_>>(),
                        })
                    })
                })
                .collect();
            json!({ "tile_id": t.tile_id, "instances": instances })
        })
        .collect();
    json!({ "tiles": tiles })
}

pub fn serialize_tile_detections<T: Real>(tiles: &[TileDetections<T>]) -> String {
    serde_json::to_string_pretty(&tile_detections_to_value(tiles)).expect("detections serialize")
}

/// Canonical form of a schema-valid tile-detections document, computed on
/// the raw JSON: unknown keys dropped, numbers widened to floats, edge lists
/// sorted and de-duplicated, missing edge lists made explicit.
pub fn normalize_tile_detections(doc: &Value) -> Value {
    let to_float = |v: &Value| v.as_f64().map(num).unwrap_or(Value::Null);
    let order = ["N", "S", "E", "W"];
    let tiles = doc["tiles"].as_array().cloned().unwrap_or_default();
    let tiles: Vec<Value> = tiles
        .iter()
        .map(|t| {
            let instances: Vec<Value> = t["instances"]
                .as_array()
                .cloned()
                .unwrap_or_default()
                .iter()
                .map(|i| {
                    let polygon: Vec<Value> = i["polygon"]
                        .as_array()
                        .cloned()
                        .unwrap_or_default()
                        .iter()
                        .map(|p| json!([to_float(&p[0]), to_float(&p[1])]))
                        .collect();
                    let present: BTreeSet<&str> = i["clipped_edges"]
                        .as_array()
                        .map(|a| a.iter().filter_map(Value::as_str).collect())
                        .unwrap_or_default();
                    let edges: Vec<&str> = order.iter().copied().filter(|c| present.contains(c)).collect();
                    json!({
                        "class": i["class"].clone(),
                        "score": to_float(&i["score"]),
                        "polygon": polygon,
                        "clipped_edges": edges,
                    })
                })
                .collect();
            json!({ "tile_id": t["tile_id"].clone(), "instances": instances })
        })
        .collect();
    json!({ "tiles": tiles })
}

// ---------------------------------------------------------------------------
// ground truth
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageInfo {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
    /// Optional dataset split label (extension field).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub id: u64,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation<T: Real = f64> {
    pub id: u64,
    pub image_id: u64,
    pub class: EggClass,
    pub polygons: Vec<Polygon<T>>,
    pub area: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthSet<T: Real = f64> {
    pub images: Vec<ImageInfo>,
    pub annotations: Vec<Annotation<T>>,
    pub categories: Vec<Category>,
}

impl<T: Real> GroundTruthSet<T> {
    /// Ground-truth instances of one image, in annotation order, score 1.
    pub fn instances_for_image(&self, image_id: u64) -> Vec<EggInstance<T>> {
        self.annotations
            .iter()
            .filter(|a| a.image_id == image_id)
            .enumerate()
            .map(|(k, a)| EggInstance {
                id: k,
                class: a.class,
                score: T::one(),
                polygons: a.polygons.clone(),
                frame: Frame::TileLocal(image_id as usize),
                clipped_edges: BTreeSet::new(),
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        let categories: Vec<Value> = self.categories.iter().map(|c| json!({"id": c.id, "name": c.name})).collect();
        let cat_id = |class: EggClass| self.categories.iter().find(|c| c.name == class.name()).map(|c| c.id);
        let annotations: Vec<Value> = self
            .annotations
            .iter()
            .map(|a| {
                let seg: Vec<Value> = a
                    .polygons
                    .iter()
                    .map(|p| Value::Array(p.vertices().iter().flat_map(|v| [num(v[0].as_f64()), num(v[1].as_f64())]).collect()))
                    .collect();
                json!({
                    "id": a.id,
                    "image_id": a.image_id,
                    "category_id": cat_id(a.class),
                    "segmentation": seg,
                    "area": num(a.area.as_f64()),
                })
            })
            .collect();
        serde_json::to_string_pretty(&json!({
            "images": self.images,
            "annotations": annotations,
            "categories": categories,
        }))
        .expect("ground truth serializes")
    }
}

/// Parses and validates a COCO-style ground-truth document.
pub fn parse_ground_truth<T: Real>(doc: &str) -> Result<GroundTruthSet<T>, DetectionError> {
    let root: Value = serde_json::from_str(doc).map_err(|e| DetectionError::Json(e.to_string()))?;
    let root = as_object(&root, "document")?;

    let mut categories = Vec::new();
    let mut class_of: HashMap<u64, EggClass> = HashMap::new();
    for (k, cv) in as_array(field(root, "categories", "document")?, "categories")?.iter().enumerate() {
        let locus = format!("categories[{k}]");
        let c: Category = serde_json::from_value(cv.clone()).map_err(|e| DetectionError::at(&locus, e.to_string()))?;
        let class = EggClass::from_name(&c.name)
            .ok_or_else(|| DetectionError::at(&locus, format!("unknown category `{}`", c.name)))?;
        if class_of.values().any(|&x| x == class) || class_of.insert(c.id, class).is_some() {
            return Err(DetectionError::at(&locus, "duplicate category"));
        }
        categories.push(c);
    }

    let mut images = Vec::new();
    let mut image_ids = BTreeSet::new();
    for (k, iv) in as_array(field(root, "images", "document")?, "images")?.iter().enumerate() {
        let locus = format!("images[{k}]");
        let img: ImageInfo = serde_json::from_value(iv.clone()).map_err(|e| DetectionError::at(&locus, e.to_string()))?;
        if !image_ids.insert(img.id) {
            return Err(DetectionError::at(&locus, format!("duplicate image id {}", img.id)));
        }
        images.push(img);
    }

    let mut annotations = Vec::new();
    for (k, av) in as_array(field(root, "annotations", "document")?, "annotations")?.iter().enumerate() {
        let locus = format!("annotations[{k}]");
        let a = as_object(av, &locus)?;
        let id = as_u64(field(a, "id", &locus)?, &locus, "id")?;
        let image_id = as_u64(field(a, "image_id", &locus)?, &locus, "image_id")?;
        if !image_ids.contains(&image_id) {
            return Err(DetectionError::at(&locus, format!("dangling image reference: {image_id}")));
        }
        let category_id = as_u64(field(a, "category_id", &locus)?, &locus, "category_id")?;
        let class = *class_of
            .get(&category_id)
            .ok_or_else(|| DetectionError::at(&locus, format!("unknown category: {category_id}")))?;
        let seg = field(a, "segmentation", &locus)?;
        let rings = seg
            .as_array()
            .ok_or_else(|| DetectionError::at(&locus, "only polygon segmentation is supported"))?;
        if rings.is_empty() {
            return Err(DetectionError::at(&locus, "empty segmentation"));
        }
        let mut polygons = Vec::with_capacity(rings.len());
        for (r, ring) in rings.iter().enumerate() {
            let rl = format!("{locus}.segmentation[{r}]");
            let flat = as_array(ring, &rl)?;
            if flat.len() % 2 != 0 {
                return Err(DetectionError::at(&rl, "odd number of coordinates"));
            }
            let coords = flat
                .iter()
                .map(|v| as_f64(v, &rl, "coordinate").map(T::lit))
                .collect::<Result<Vec<T>, _>>()?;
            let poly = Polygon(coords.chunks_exact(2).map(|c| [c[0], c[1]]).collect());
            check_polygon(&poly, &rl)?;
            polygons.push(poly);
        }
        let area = match a.get("area") {
            Some(v) => T::lit(as_f64(v, &locus, "area")?),
            None => polygons.iter().fold(T::zero(), |s, p| s + p.area()),
        };
        annotations.push(Annotation { id, image_id, class, polygons, area });
    }
    Ok(GroundTruthSet { images, annotations, categories })
}

// ---------------------------------------------------------------------------
// dataset statistics
// ---------------------------------------------------------------------------

/// Assignment of images to named splits. Splits are reported in order of
/// first appearance.
#[derive(Debug, Clone, Default)]
pub struct SplitLabels {
    by_image: HashMap<u64, String>,
    order: Vec<String>,
}

impl SplitLabels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn assign(&mut self, image_id: u64, split: impl Into<String>) {
        let split = split.into();
        if !self.order.contains(&split) {
            self.order.push(split.clone());
        }
        self.by_image.insert(image_id, split);
    }

    /// Uses each image's `split` field, falling back to `default`.
    pub fn from_images(images: &[ImageInfo], default: &str) -> Self {
        let mut labels = Self::new();
        for img in images {
            labels.assign(img.id, img.split.clone().unwrap_or_else(|| default.to_string()));
        }
        labels
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitStats {
    pub split: String,
    pub images: usize,
    pub hatch: usize,
    pub full: usize,
    /// `hatch / (hatch + full)`, absent for an empty split.
    pub hatch_ratio: Option<f64>,
}

impl SplitStats {
    fn new(split: String) -> Self {
        Self { split, images: 0, hatch: 0, full: 0, hatch_ratio: None }
    }

    fn finish(&mut self) {
        let total = self.hatch + self.full;
        self.hatch_ratio = (total > 0).then(|| self.hatch as f64 / total as f64);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    pub splits: Vec<SplitStats>,
    pub total: SplitStats,
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12} {:>7} {:>7} {:>7} {:>8}", "split", "images", "hatch", "full", "ratio")?;
        for s in self.splits.iter().chain(std::iter::once(&self.total)) {
            let ratio = s.hatch_ratio.map_or("-".to_string(), |r| format!("{r:.4}"));
            writeln!(f, "{:<12} {:>7} {:>7} {:>7} {:>8}", s.split, s.images, s.hatch, s.full, ratio)?;
        }
        Ok(())
    }
}

/// Per-split, per-class instance counts.
pub fn dataset_stats<T: Real>(gt: &GroundTruthSet<T>, labels: &SplitLabels) -> DatasetStats {
    let mut rows: BTreeMap<usize, SplitStats> = BTreeMap::new();
    let index = |name: &str| labels.order.iter().position(|s| s == name);
    let mut total = SplitStats::new("total".into());
    for img in &gt.images {
        total.images += 1;
        if let Some(split) = labels.by_image.get(&img.id) {
            let k = index(split).unwrap();
            rows.entry(k).or_insert_with(|| SplitStats::new(split.clone())).images += 1;
        }
    }
    for a in &gt.annotations {
        let row = labels
            .by_image
            .get(&a.image_id)
            .map(|s| rows.entry(index(s).unwrap()).or_insert_with(|| SplitStats::new(s.clone())));
        for r in row.into_iter().chain(std::iter::once(&mut total)) {
            match a.class {
                EggClass::Hatched => r.hatch += 1,
                EggClass::Full => r.full += 1,
            }
        }
    }
    let mut splits: Vec<SplitStats> = rows.into_values().collect();
    splits.iter_mut().for_each(SplitStats::finish);
    total.finish();
    DatasetStats { splits, total }
}

// ---------------------------------------------------------------------------
// oracle detector
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct JitterParams<T: Real = f64> {
    /// Standard deviation of the radial vertex perturbation, in pixels.
    pub sigma_px: T,
    /// Scores are drawn as `1 - score_noise * u`, `u ~ U[0, 1)`.
    pub score_noise: T,
}

impl<T: Real> JitterParams<T> {
    pub fn none() -> Self {
        Self { sigma_px: T::zero(), score_noise: T::zero() }
    }
}

impl<T: Real> Default for JitterParams<T> {
    fn default() -> Self {
        Self::none()
    }
}

fn tile_seed(scene_seed: u64, tile_id: usize) -> u64 {
    scene_seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((tile_id as u64).wrapping_mul(0xD1B5_4A32_D192_ED03))
        ^ 0x5DEE_CE66_D1CE_5EED
}

/// Moves `q` toward `c` until it lies inside `rect` (`c` must be inside).
fn pull_inside<T: Real>(c: [T; 2], q: [T; 2], rect: &Rect<T>) -> [T; 2] {
    let mut t = T::one();
    for axis in 0..2 {
        let d = q[axis] - c[axis];
        if q[axis] > rect.max[axis] && d > T::zero() {
            t = t.min((rect.max[axis] - c[axis]) / d);
        } else if q[axis] < rect.min[axis] && d < T::zero() {
            t = t.min((rect.min[axis] - c[axis]) / d);
        }
    }
    [c[0] + t * (q[0] - c[0]), c[1] + t * (q[1] - c[1])]
}

/// Edges of the pixel rectangle that `poly` comes within tolerance of.
pub fn touched_edges<T: Real>(poly: &Polygon<T>, pixel_rect: &Rect<T>) -> BTreeSet<Edge> {
    let tol = T::lit(EDGE_TOUCH_TOLERANCE_PX);
    let mut edges = BTreeSet::new();
    for p in poly.vertices() {
        if p[0] <= pixel_rect.min[0] + tol {
            edges.insert(Edge::West);
        }
        if p[0] >= pixel_rect.max[0] - tol {
            edges.insert(Edge::East);
        }
        if p[1] <= pixel_rect.min[1] + tol {
            edges.insert(Edge::North);
        }
        if p[1] >= pixel_rect.max[1] - tol {
            edges.insert(Edge::South);
        }
    }
    edges
}

/// Perfect-knowledge detector: one instance per scene egg visible in the
/// tile, with its ellipse sampled, clipped to the tile and optionally
/// jittered.
///
/// Jitter moves each vertex along the ray from the clipped polygon's
/// centroid, so the result stays star-shaped (hence simple) and inside the
/// tile. Random draws do not depend on the jitter magnitudes, so runs with
/// different magnitudes are coupled.
pub fn oracle_detect<T: Real>(
    scene: &SyntheticScene<T>,
    pose: &TilePose<T>,
    tile: &TileSpec<T>,
    jitter: &JitterParams<T>,
) -> TileDetections<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(tile_seed(scene.seed, pose.id));
    let tile_rect = pose.rect(tile);
    let px_rect = tile.pixel_rect();
    let min_area = T::lit(MIN_FRAGMENT_AREA_PX);
    let mut instances = Vec::new();
    for egg in &scene.eggs {
        if !egg.bbox().touches(&tile_rect) {
            continue;
        }
        let u: f64 = rng.random();
        let noise: Vec<f64> = (0..ORACLE_VERTICES).map(|_| rng.sample(StandardNormal)).collect();

        let local = Polygon(
            egg.boundary(ORACLE_VERTICES)
                .into_iter()
                .map(|p| global_point_to_tile(pose, tile, p))
                .collect(),
        );
        let Some(clipped) = local.clip_to_rect(&px_rect) else { continue };
        if clipped.area() < min_area {
            continue;
        }
        let poly = if jitter.sigma_px > T::zero() {
            let c = clipped.centroid().expect("positive area");
            Polygon(
                clipped
                    .vertices()
                    .iter()
                    .zip(&noise)
                    .map(|(&p, &z)| {
                        let d = [p[0] - c[0], p[1] - c[1]];
                        let r = (d[0] * d[0] + d[1] * d[1]).sqrt();
                        if r == T::zero() {
                            return p;
                        }
                        let r2 = (r + jitter.sigma_px * T::lit(z)).max(r * T::lit(0.05));
                        let q = [c[0] + d[0] * r2 / r, c[1] + d[1] * r2 / r];
                        pull_inside(c, q, &px_rect)
                    })
                    .collect(),
            )
        } else {
            clipped
        };
        let score = (T::one() - jitter.score_noise * T::lit(u)).max(T::zero()).min(T::one());
        instances.push(EggInstance {
            id: instances.len(),
            class: egg.class,
            score,
            clipped_edges: touched_edges(&poly, &px_rect),
            polygons: vec![poly],
            frame: Frame::TileLocal(pose.id),
        });
    }
    TileDetections { tile_id: pose.id, instances }
}
