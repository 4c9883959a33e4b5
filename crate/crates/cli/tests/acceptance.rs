//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Positional arguments filter criteria by substring.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use ovitrap_core::detections::SplitLabels;
use ovitrap_core::device::SceneParams;
use ovitrap_core::merge::{merged_to_json, region_iou};
use ovitrap_core::metrics::coco_thresholds;
use ovitrap_core::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::Value;

const CLAMP_TOL_MM: f64 = 1e-9;
const PLAN_RUNTIME: Duration = Duration::from_secs(1);
const PAPER_DURATION_S: f64 = 379.8;
const DURATION_TOL_S: f64 = 1.0;
const PER_MOVE_S: f64 = 0.3037;
const DWELL_S: f64 = 2.0;
const E2E_RUNTIME: Duration = Duration::from_secs(60);
const AREA_REL_TOL: f64 = 0.02;
const MIN_FUSED_STRADDLERS: usize = 20;
const MERGE_SEEDS: u64 = 100;
const EVAL_CASES: u64 = 200;
const AP_TOL: f64 = 1e-9;
const JITTER_SEEDS: u64 = 20;
const JITTER_SIGMAS: [f64; 4] = [0.0, 1.0, 3.0, 6.0];
const RATIO_TOL: f64 = 1e-4;

type Check = fn() -> Result<String, String>;

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, Check); 8] = [
        ("paper preset geometry", preset_geometry),
        ("timing reproduction", timing),
        ("command-stream grammar", grammar),
        ("end-to-end exactness", end_to_end),
        ("merge properties", merge_properties),
        ("evaluator oracle equivalence", evaluator_oracle),
        ("metric sanity", metric_sanity),
        ("table 1 statistics", table1_stats),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (name, check) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name:<30} {detail} [{secs:.2} s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name:<30} {why} [{secs:.2} s]");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn ovitrap(args: &[&str]) -> Result<(String, Duration), String> {
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_ovitrap")).args(args).output().map_err(|e| e.to_string())?;
    let took = start.elapsed();
    if !out.status.success() {
        return Err(format!("ovitrap {args:?} failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok((String::from_utf8_lossy(&out.stdout).into_owned(), took))
}

fn scratch() -> tempfile::TempDir {
    tempfile::tempdir().expect("temp dir")
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

// ---------------------------------------------------------------------------

fn preset_geometry() -> Result<String, String> {
    let dir = scratch();
    let path = dir.path().join("plan.json");
    let (_, took) = ovitrap(&["plan", "--preset", "paper-165", "--out", s(&path)])?;
    let doc = read_json(&path);
    let (tl, tw) = (doc["trap"]["length_mm"].as_f64().unwrap(), doc["trap"]["width_mm"].as_f64().unwrap());
    let (ex, ey) = (doc["tile"]["major_mm"].as_f64().unwrap(), doc["tile"]["minor_mm"].as_f64().unwrap());
    let poses = doc["poses"].as_array().unwrap();
    ensure(poses.len() == 165, || format!("{} poses", poses.len()))?;
    let rows: BTreeSet<u64> = poses.iter().map(|p| p["row"].as_u64().unwrap()).collect();
    let cols: BTreeSet<u64> = poses.iter().map(|p| p["col"].as_u64().unwrap()).collect();
    ensure(rows.len() == 33 && cols.len() == 5, || format!("grid {} x {}", rows.len(), cols.len()))?;
    let xs: Vec<f64> = poses.iter().map(|p| p["x_mm"].as_f64().unwrap()).collect();
    let ys: Vec<f64> = poses.iter().map(|p| p["y_mm"].as_f64().unwrap()).collect();
    let max_x = xs.iter().cloned().fold(f64::MIN, f64::max);
    let max_y = ys.iter().cloned().fold(f64::MIN, f64::max);
    let min_xy = xs.iter().chain(&ys).cloned().fold(f64::MAX, f64::min);
    ensure((max_x + ex - tl).abs() <= CLAMP_TOL_MM, || format!("last major tile ends at {}", max_x + ex))?;
    ensure((max_y + ey - tw).abs() <= CLAMP_TOL_MM, || format!("last minor tile ends at {}", max_y + ey))?;
    ensure(min_xy.abs() <= CLAMP_TOL_MM, || format!("first tile at {min_xy}"))?;
    ensure(took < PLAN_RUNTIME, || format!("took {took:?}"))?;
    Ok(format!("165 poses, 33x5, clamped to {tl}x{tw} mm, {:.0} ms", took.as_secs_f64() * 1e3))
}

fn timing() -> Result<String, String> {
    let plan: ScanPlan = presets::paper_165_plan();
    let t = estimate_duration(&plan, DWELL_S, PER_MOVE_S).map_err(|e| e.to_string())?;
    ensure((t - PAPER_DURATION_S).abs() <= DURATION_TOL_S, || format!("{t} s"))?;
    Ok(format!("{t:.2} s = {:.3} min", t / 60.0))
}

fn grammar() -> Result<String, String> {
    let dir = scratch();
    let path = dir.path().join("cmds.txt");
    ovitrap(&["compile", "--preset", "paper-165", "--dwell-s", "2", "--out", s(&path)])?;
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    ensure(lines.len() == 495, || format!("{} lines", lines.len()))?;
    let number = |t: &str| {
        let body = t.strip_prefix('-').unwrap_or(t);
        let (int, frac) = body.split_once('.').unwrap_or((body, ""));
        !int.is_empty() && int.bytes().all(|b| b.is_ascii_digit()) && frac.len() <= 6 && frac.bytes().all(|b| b.is_ascii_digit())
    };
    for (k, chunk) in lines.chunks(3).enumerate() {
        let mv: Vec<&str> = chunk[0].split(' ').collect();
        ensure(mv.len() == 3 && mv[0] == "MOVE" && number(mv[1]) && number(mv[2]), || format!("bad MOVE `{}`", chunk[0]))?;
        ensure(chunk[1] == "DWELL 2000", || format!("bad DWELL `{}`", chunk[1]))?;
        ensure(chunk[2] == format!("CAPTURE {k}"), || format!("bad CAPTURE `{}`", chunk[2]))?;
    }
    Ok("495 lines, (MOVE DWELL CAPTURE)^165, DWELL 2000".into())
}

// ---------------------------------------------------------------------------
// end to end

struct Egg {
    center: [f64; 2],
    a: f64,
    b: f64,
    angle: f64,
}

impl Egg {
    fn half_extents(&self) -> [f64; 2] {
        let (c, s) = (self.angle.cos(), self.angle.sin());
        [(self.a * c).hypot(self.b * s), (self.a * s).hypot(self.b * c)]
    }
}

fn shoelace(p: &[[f64; 2]]) -> f64 {
    let n = p.len();
    (0..n).map(|i| p[i][0] * p[(i + 1) % n][1] - p[(i + 1) % n][0] * p[i][1]).sum::<f64>().abs() / 2.0
}

fn point_in(p: [f64; 2], poly: &[[f64; 2]]) -> bool {
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        if (a[1] > p[1]) != (b[1] > p[1]) && p[0] < a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]) {
            inside = !inside;
        }
    }
    inside
}

fn rings(inst: &Value) -> Vec<Vec<[f64; 2]>> {
    let ring = |v: &Value| v.as_array().unwrap().iter().map(|p| [p[0].as_f64().unwrap(), p[1].as_f64().unwrap()]).collect();
    let mut out = vec![ring(&inst["polygon"])];
    if let Some(extra) = inst["extra_polygons"].as_array() {
        out.extend(extra.iter().map(ring));
    }
    out
}

fn end_to_end() -> Result<String, String> {
    let dir = scratch();
    let out = dir.path().join("run");
    let args = [
        "run", "--preset", "paper-165", "--eggs", "200", "--hatch-fraction", "0.15", "--min-sep-mm", "0.5", "--seed", "7",
        "--sigma-px", "0", "--out-dir", s(&out), "--json",
    ];
    let (stdout, took) = ovitrap(&args)?;
    ensure(took < E2E_RUNTIME, || format!("took {took:?}"))?;
    let counts: Value = serde_json::from_str(&stdout).map_err(|e| e.to_string())?;
    ensure(counts["total"] == 200, || format!("total {}", counts["total"]))?;
    ensure(counts["hatched"] == 30, || format!("hatched {}", counts["hatched"]))?;

    let merged = read_json(&out.join("merged.json"));
    let instances = merged["instances"].as_array().unwrap();
    let mut prov = BTreeSet::new();
    for inst in instances {
        for p in inst["provenance"].as_array().unwrap() {
            ensure(prov.insert(p.to_string()), || format!("provenance {p} repeated"))?;
        }
    }
    let dets = read_json(&out.join("detections.json"));
    let n_raw: usize = dets["tiles"].as_array().unwrap().iter().map(|t| t["instances"].as_array().unwrap().len()).sum();
    ensure(prov.len() == n_raw, || format!("{} provenance entries for {n_raw} detections", prov.len()))?;

    let plan = read_json(&out.join("plan.json"));
    let (ex, ey) = (plan["tile"]["major_mm"].as_f64().unwrap(), plan["tile"]["minor_mm"].as_f64().unwrap());
    let tiles: Vec<[f64; 4]> = plan["poses"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| {
            let (x, y) = (p["x_mm"].as_f64().unwrap(), p["y_mm"].as_f64().unwrap());
            [x, y, x + ex, y + ey]
        })
        .collect();
    let scene = read_json(&out.join("scene.json"));
    let eggs: Vec<Egg> = scene["eggs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| Egg {
            center: [e["center_mm"][0].as_f64().unwrap(), e["center_mm"][1].as_f64().unwrap()],
            a: e["semi_axes_mm"][0].as_f64().unwrap(),
            b: e["semi_axes_mm"][1].as_f64().unwrap(),
            angle: e["angle_rad"].as_f64().unwrap(),
        })
        .collect();

    let mut straddlers = 0;
    let mut fused = 0;
    let mut worst: f64 = 0.0;
    for egg in &eggs {
        let h = egg.half_extents();
        let (lo, hi) = ([egg.center[0] - h[0], egg.center[1] - h[1]], [egg.center[0] + h[0], egg.center[1] + h[1]]);
        let cut = tiles.iter().any(|t| {
            let overlaps = lo[0] < t[2] && hi[0] > t[0] && lo[1] < t[3] && hi[1] > t[1];
            let contained = lo[0] >= t[0] && hi[0] <= t[2] && lo[1] >= t[1] && hi[1] <= t[3];
            overlaps && !contained
        });
        if !cut {
            continue;
        }
        straddlers += 1;
        let hits: Vec<&Value> = instances.iter().filter(|i| rings(i).iter().any(|r| point_in(egg.center, r))).collect();
        if hits.len() != 1 {
            continue;
        }
        let area: f64 = rings(hits[0]).iter().map(|r| shoelace(r)).sum();
        let truth = std::f64::consts::PI * egg.a * egg.b;
        let rel = (area - truth).abs() / truth;
        worst = worst.max(rel);
        if rel <= AREA_REL_TOL && hits[0]["provenance"].as_array().unwrap().len() >= 2 {
            fused += 1;
        }
    }
    ensure(fused >= MIN_FUSED_STRADDLERS, || format!("{fused} of {straddlers} straddling eggs fused within 2%"))?;
    Ok(format!(
        "200 eggs / 30 hatched, {n_raw} detections, {fused}/{straddlers} straddlers fused (worst area err {:.2}%), {:.1} s",
        worst * 100.0,
        took.as_secs_f64()
    ))
}

// ---------------------------------------------------------------------------
// merge properties

fn random_merge_case(seed: u64) -> (Vec<GlobalInstance>, MergeConfig) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trap = TrapSpec::new(rng.random_range(20.0..40.0), rng.random_range(10.0..20.0)).unwrap();
    let tile = TileSpec::new(5.0, 9.0, 1280, 1024).unwrap();
    let overlap = OverlapSpec::new(rng.random_range(0.0..0.4), rng.random_range(0.0..0.5)).unwrap();
    let plan = plan_scan(trap, tile, overlap, None).unwrap();
    let n = rng.random_range(10..80);
    let scene = generate_scene(&SceneParams::new(seed, n, 0.2, 0.4), trap).unwrap();
    let jitter = JitterParams { sigma_px: rng.random_range(0.0..4.0), score_noise: 0.3 };
    let dets: Vec<TileDetections> = plan.poses.iter().map(|p| oracle_detect(&scene, p, &tile, &jitter)).collect();
    let cfg = MergeConfig { dup_iou_threshold: rng.random_range(0.3..0.8), ..MergeConfig::default() };
    (to_global(&dets, &plan).unwrap(), cfg)
}

fn merge_properties() -> Result<String, String> {
    let thresholds = [0.2, 0.35, 0.5, 0.65, 0.8, 0.95];
    let results: Vec<Result<usize, String>> = (0..MERGE_SEEDS)
        .into_par_iter()
        .map(|seed| {
            let (inst, cfg) = random_merge_case(seed);
            let once = deduplicate(inst.clone(), &cfg);
            ensure(deduplicate(once.clone(), &cfg) == once, || format!("seed {seed}: not idempotent"))?;
            let mut shuffled = inst.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(!seed));
            ensure(merged_to_json(&deduplicate(shuffled, &cfg)) == merged_to_json(&once), || {
                format!("seed {seed}: depends on input order")
            })?;
            for (i, a) in once.iter().enumerate() {
                for b in &once[i + 1..] {
                    let v = region_iou(&a.polygons, &b.polygons, None, cfg.raster_pitch_mm);
                    ensure(v < cfg.dup_iou_threshold, || format!("seed {seed}: residual pair with IoU {v:.3}"))?;
                }
            }
            let counts: Vec<usize> = thresholds
                .iter()
                .map(|&t| deduplicate(inst.clone(), &MergeConfig { dup_iou_threshold: t, ..cfg }).len())
                .collect();
            ensure(counts.windows(2).all(|w| w[0] <= w[1]), || format!("seed {seed}: counts {counts:?} not monotone"))?;
            Ok(inst.len())
        })
        .collect();
    let mut total = 0;
    for r in results {
        total += r?;
    }
    Ok(format!("{MERGE_SEEDS} seeds, {total} tile instances: idempotent, order-invariant, no residual pairs, monotone"))
}

// ---------------------------------------------------------------------------
// evaluator oracle

#[derive(Clone, Copy)]
struct Boxed {
    class: EggClass,
    score: f64,
    r: [i32; 4],
}

fn box_iou(a: &[i32; 4], b: &[i32; 4]) -> f64 {
    let area = |r: &[i32; 4]| ((r[2] - r[0]) * (r[3] - r[1])) as f64;
    let w = (a[2].min(b[2]) - a[0].max(b[0])).max(0);
    let h = (a[3].min(b[3]) - a[1].max(b[1])).max(0);
    let inter = (w * h) as f64;
    inter / (area(a) + area(b) - inter)
}

/// Independent PR/AP computation: greedy trace per image, global ranking,
/// interpolated precision taken directly as the best precision at or beyond
/// each recall level.
fn oracle_ap(images: &[(Vec<Boxed>, Vec<Boxed>)], class: EggClass, t: f64) -> Option<f64> {
    let mut ranked: Vec<(f64, bool)> = Vec::new();
    let mut n_gt = 0usize;
    for (dets, gts) in images {
        let d: Vec<&Boxed> = dets.iter().filter(|x| x.class == class).collect();
        let g: Vec<&Boxed> = gts.iter().filter(|x| x.class == class).collect();
        n_gt += g.len();
        let mut idx: Vec<usize> = (0..d.len()).collect();
        idx.sort_by(|&a, &b| d[b].score.partial_cmp(&d[a].score).unwrap());
        let mut taken = vec![false; g.len()];
        let mut tp = vec![false; d.len()];
        for &k in &idx {
            let mut best: Option<usize> = None;
            for j in 0..g.len() {
                if taken[j] {
                    continue;
                }
                let v = box_iou(&d[k].r, &g[j].r);
                if v >= t && best.is_none_or(|b| v > box_iou(&d[k].r, &g[b].r)) {
                    best = Some(j);
                }
            }
            if let Some(j) = best {
                taken[j] = true;
                tp[k] = true;
            }
        }
        ranked.extend(d.iter().zip(&tp).map(|(x, &hit)| (x.score, hit)));
    }
    if n_gt == 0 {
        return None;
    }
    ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut points = Vec::new();
    let mut tp = 0usize;
    for (k, &(_, hit)) in ranked.iter().enumerate() {
        tp += hit as usize;
        points.push((tp, tp as f64 / (k + 1) as f64));
    }
    let sum: f64 = (0..=100usize)
        .map(|i| points.iter().filter(|(tp, _)| tp * 100 >= i * n_gt).map(|p| p.1).fold(0.0, f64::max))
        .sum();
    Some(sum / 101.0)
}

fn random_eval_case(seed: u64) -> Vec<(Vec<Boxed>, Vec<Boxed>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_images = rng.random_range(1..=3);
    let mut images = vec![(Vec::new(), Vec::new()); n_images];
    for class in EggClass::ALL {
        let (nd, ng) = (rng.random_range(0..=8), rng.random_range(0..=8));
        for k in 0..nd + ng {
            let x = rng.random_range(0..12);
            let y = rng.random_range(0..12);
            let r = [x, y, x + rng.random_range(1..6), y + rng.random_range(1..6)];
            let b = Boxed { class, score: rng.random_range(1..=10) as f64 / 10.0, r };
            let img = rng.random_range(0..n_images);
            if k < nd {
                images[img].0.push(b);
            } else {
                images[img].1.push(b);
            }
        }
    }
    for (d, g) in images.iter_mut() {
        d.shuffle(&mut rng);
        g.shuffle(&mut rng);
    }
    images
}

fn to_instance(b: &Boxed) -> EggInstance {
    let [x0, y0, x1, y1] = b.r.map(|v| v as f64);
    EggInstance {
        id: 0,
        class: b.class,
        score: b.score,
        polygons: vec![Polygon(vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]])],
        frame: Frame::Global,
        clipped_edges: Default::default(),
    }
}

fn evaluator_oracle() -> Result<String, String> {
    let thresholds = coco_thresholds();
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    for seed in 0..EVAL_CASES {
        let case = random_eval_case(seed);
        let images: Vec<ImageEval> = case
            .iter()
            .map(|(d, g)| ImageEval { dets: d.iter().map(to_instance).collect(), gts: g.iter().map(to_instance).collect() })
            .collect();
        let report = evaluate_images(&images, &EvalParams::default()).map_err(|e| e.to_string())?;
        let mut all = Vec::new();
        let mut at50 = Vec::new();
        for class in EggClass::ALL {
            for &t in &thresholds {
                let want = oracle_ap(&case, class, t);
                let got = report.ap(class, t);
                ensure(want.is_some() == got.is_some(), || format!("case {seed}: {class:?}@{t} defined-ness differs"))?;
                if let (Some(w), Some(g)) = (want, got) {
                    worst = worst.max((w - g).abs());
                    compared += 1;
                    all.push(w);
                    if t == 0.5 {
                        at50.push(w);
                    }
                }
            }
        }
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        for (name, want, got) in [("map_50", mean(&at50), report.map_50), ("map_5095", mean(&all), report.map_5095)] {
            match (want, got) {
                (Some(w), Some(g)) => worst = worst.max((w - g).abs()),
                (None, None) => {}
                _ => return Err(format!("case {seed}: {name} defined-ness differs")),
            }
        }
    }
    ensure(worst <= AP_TOL, || format!("max |dAP| = {worst:e}"))?;
    Ok(format!("{EVAL_CASES} cases, {compared} APs compared, max |dAP| = {worst:e}"))
}

// ---------------------------------------------------------------------------
// metric sanity

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn jitter_map(seed: u64, sigma: f64) -> f64 {
    let plan: ScanPlan = presets::paper_165_plan();
    let scene = generate_scene(&SceneParams::new(seed, 200, 0.15, 0.5), plan.trap).unwrap();
    let jitter = JitterParams { sigma_px: sigma, score_noise: 0.2 };
    let dets: Vec<TileDetections> = plan.poses.iter().map(|p| oracle_detect(&scene, p, &plan.tile, &jitter)).collect();
    let merged = deduplicate(to_global(&dets, &plan).unwrap(), &MergeConfig::default());
    let as_dets = merged
        .iter()
        .map(|g| EggInstance {
            id: g.id,
            class: g.class,
            score: g.score,
            polygons: g.polygons.clone(),
            frame: Frame::Global,
            clipped_edges: Default::default(),
        })
        .collect();
    let params = EvalParams { pitch: plan.tile.pitch_major(), ..EvalParams::default() };
    let report = evaluate_images(&[ImageEval { dets: as_dets, gts: scene.truth_instances(256) }], &params).unwrap();
    report.map_5095.unwrap()
}

fn metric_sanity() -> Result<String, String> {
    let gt: GroundTruthSet = parse_ground_truth(&std::fs::read_to_string(fixture("table1.json")).unwrap()).unwrap();
    let perfect: BTreeMap<u64, Vec<EggInstance>> = gt.images.iter().map(|i| (i.id, gt.instances_for_image(i.id))).collect();
    let r = evaluate(&perfect, &gt, &EvalParams::default()).map_err(|e| e.to_string())?;
    ensure(r.map_50 == Some(1.0) && r.map_5095 == Some(1.0), || format!("dets = gt gave {:?}/{:?}", r.map_50, r.map_5095))?;
    let r = evaluate(&BTreeMap::new(), &gt, &EvalParams::default()).map_err(|e| e.to_string())?;
    ensure(r.map_50 == Some(0.0) && r.map_5095 == Some(0.0), || format!("empty dets gave {:?}/{:?}", r.map_50, r.map_5095))?;

    let runs: Vec<(usize, f64)> = (0..JITTER_SEEDS)
        .flat_map(|seed| JITTER_SIGMAS.iter().enumerate().map(move |(k, &s)| (seed, k, s)))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(seed, k, sigma)| (k, jitter_map(seed, sigma)))
        .collect();
    let medians: Vec<f64> = (0..JITTER_SIGMAS.len())
        .map(|k| median(runs.iter().filter(|r| r.0 == k).map(|r| r.1).collect()))
        .collect();
    let shown: Vec<String> = JITTER_SIGMAS.iter().zip(&medians).map(|(s, m)| format!("s={s}:{m:.4}")).collect();
    ensure(medians.windows(2).all(|w| w[1] <= w[0]), || format!("medians not non-increasing: {}", shown.join(" ")))?;
    Ok(format!("identity 1.0/1.0, empty 0.0/0.0, median mAP@.5:.95 {}", shown.join(" ")))
}

// ---------------------------------------------------------------------------

fn table1_stats() -> Result<String, String> {
    let (stdout, _) = ovitrap(&["stats", s(&fixture("table1.json")), "--json"])?;
    let v: Value = serde_json::from_str(&stdout).map_err(|e| e.to_string())?;
    let split = |name: &str| {
        v["splits"].as_array().unwrap().iter().find(|x| x["split"] == name).cloned().ok_or(format!("no {name} split"))
    };
    let (train, test) = (split("training")?, split("test")?);
    let pair = |x: &Value| (x["hatch"].as_u64().unwrap(), x["full"].as_u64().unwrap());
    ensure(pair(&train) == (182, 1042), || format!("training {:?}", pair(&train)))?;
    ensure(pair(&test) == (33, 118), || format!("test {:?}", pair(&test)))?;
    let ratio = train["hatch_ratio"].as_f64().unwrap();
    ensure((ratio - 0.1487).abs() <= RATIO_TOL, || format!("training ratio {ratio}"))?;
    let (text, _) = ovitrap(&["stats", s(&fixture("table1.json"))])?;
    ensure(text.contains("182") && text.contains("1042") && text.contains("118"), || "text output lacks counts".into())?;

    let gt: GroundTruthSet = parse_ground_truth(&std::fs::read_to_string(fixture("table1_train.json")).unwrap()).unwrap();
    let st = dataset_stats(&gt, &SplitLabels::from_images(&gt.images, "training"));
    ensure((st.total.hatch, st.total.full) == (182, 1042), || "table1_train.json counts".into())?;
    Ok(format!("training 182/1042 (ratio {ratio:.4}), test 33/118"))
}
