//! Ovitrap egg counting: XY-stage scan planning, stage command streams,
//! synthetic scenes, tile-detection interchange, whole-trap reconstruction
//! and mask-IoU mAP evaluation.
//!
//! Geometry is generic over the scalar type (`f32` or `f64`). Every generic
//! type defaults to `f64`; the `*F32` aliases below name the single
//! precision variants.
//!
//! ```
//! use ovitrap_core::presets;
//!
//! let plan: ovitrap_core::ScanPlan = presets::paper_165_plan();
//! assert_eq!(plan.poses.len(), 165);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod detections;
pub mod device;
pub mod geometry;
pub mod merge;
pub mod metrics;
pub mod num;
pub mod polygon;
pub mod raster;

pub use detections::{
    dataset_stats, normalize_tile_detections, oracle_detect, parse_ground_truth, parse_tile_detections,
    serialize_tile_detections, DatasetStats, DetectionError, Edge, EggClass, EggInstance, Frame, GroundTruthSet,
    JitterParams, SplitLabels, TileDetections,
};
pub use device::{
    check_command_stream, compile_plan, generate_scene, parse_command_stream, render_command_stream, simulate_run,
    DeviceError, EggTruth, MotionCommand, SceneParams, SimulationManifest, SyntheticScene,
};
pub use geometry::{
    estimate_duration, global_to_tile, overlap_region, plan_scan, presets, tile_to_global, GeometryError,
    OverlapSpec, ScanPlan, TilePose, TileSpec, TrapSpec,
};
pub use merge::{count_eggs, deduplicate, to_global, CountReport, GlobalInstance, MergeConfig, MergeError, ScoreCombine};
pub use metrics::{evaluate, evaluate_images, mask_iou, match_greedy, EvalError, EvalParams, EvalReport, ImageEval, MatchResult};
pub use num::Real;
pub use polygon::{Point, Polygon, Rect};

pub type TrapSpecF32 = TrapSpec<f32>;
pub type TileSpecF32 = TileSpec<f32>;
pub type OverlapSpecF32 = OverlapSpec<f32>;
pub type ScanPlanF32 = ScanPlan<f32>;
pub type PolygonF32 = Polygon<f32>;
pub type EggInstanceF32 = EggInstance<f32>;
pub type TileDetectionsF32 = TileDetections<f32>;
pub type GlobalInstanceF32 = GlobalInstance<f32>;
pub type MergeConfigF32 = MergeConfig<f32>;

pub type TrapSpecF64 = TrapSpec<f64>;
pub type TileSpecF64 = TileSpec<f64>;
pub type OverlapSpecF64 = OverlapSpec<f64>;
pub type ScanPlanF64 = ScanPlan<f64>;
pub type PolygonF64 = Polygon<f64>;
pub type EggInstanceF64 = EggInstance<f64>;
pub type TileDetectionsF64 = TileDetections<f64>;
pub type GlobalInstanceF64 = GlobalInstance<f64>;
pub type MergeConfigF64 = MergeConfig<f64>;
