use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use log::{debug, info};
use ovitrap_core::detections::SplitLabels;
use ovitrap_core::device::{tile_file_name, MANIFEST_FILE};
use ovitrap_core::merge::{merged_from_json, merged_to_json};
use ovitrap_core::metrics::coco_thresholds;
use ovitrap_core::*;
use serde_json::{json, Value};

use crate::args::*;
use crate::error::*;
use crate::outdir::OutDir;
use crate::overlay;

/// Evaluation pitch for trap-level scoring: one pixel of the default tile.
pub const TRAP_EVAL_PITCH_MM: f64 = 5.0 / 1280.0;
/// Vertices used to sample ground-truth ellipses.
const TRUTH_VERTICES: usize = 256;

fn resolve_geometry(g: &GeometryArgs) -> CliResult<ScanPlan> {
    let (mut trap, mut tile_mm, mut tile_px, mut overlap, mut counts) = (None, None, None, None, None);
    if let Some(name) = &g.preset {
        if name != presets::PAPER_165 {
            return Err(CliError::Usage(format!("unknown preset `{name}` (known: {})", presets::PAPER_165)));
        }
        let (t, s, o, c) = presets::paper_165::<f64>();
        trap = Some((t.length_mm, t.width_mm));
        tile_mm = Some((s.major_extent_mm, s.minor_extent_mm));
        tile_px = Some((s.px_major, s.px_minor));
        overlap = Some((o.major_frac, o.minor_frac));
        counts = Some(c);
    }
    trap = g.trap_mm.map(|d| (d.0, d.1)).or(trap);
    tile_mm = g.tile_mm.map(|d| (d.0, d.1)).or(tile_mm);
    tile_px = g.tile_px.map(|d| (d.0, d.1)).or(tile_px);
    overlap = g.overlap.map(|f| (f.0, f.1)).or(overlap);
    counts = g.counts.map(|d| (d.0, d.1)).or(counts);

    let need = |name: &str| CliError::Usage(format!("missing --{name} (or use --preset {})", presets::PAPER_165));
    let trap = trap.ok_or_else(|| need("trap-mm"))?;
    let tile_mm = tile_mm.ok_or_else(|| need("tile-mm"))?;
    let overlap = overlap.ok_or_else(|| need("overlap"))?;
    let tile_px = tile_px.unwrap_or(presets::DEFAULT_TILE_PX);
    let geo = |e| geometry_error(e, None);
    let trap = TrapSpec::new(trap.0, trap.1).map_err(geo)?;
    let tile = TileSpec::new(tile_mm.0, tile_mm.1, tile_px.0, tile_px.1).map_err(geo)?;
    let overlap = OverlapSpec::new(overlap.0, overlap.1).map_err(geo)?;
    plan_scan(trap, tile, overlap, counts).map_err(geo)
}

fn load_plan(src: &PlanSource) -> CliResult<ScanPlan> {
    if let Some(path) = &src.plan {
        return ScanPlan::from_json(&read_input(path)?).map_err(|e| geometry_error(e, Some(path)));
    }
    if src.geometry.is_empty() {
        return Err(CliError::Usage(format!(
            "no plan given: use --plan FILE or geometry flags such as --preset {}",
            presets::PAPER_165
        )));
    }
    resolve_geometry(&src.geometry)
}

fn plan_summary(plan: &ScanPlan) -> String {
    let [sx, sy] = plan.steps();
    format!("{} poses ({} x {}), steps {sx} x {sy} mm", plan.poses.len(), plan.n_major, plan.n_minor)
}

fn emit(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(p) => write_output(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn with_newline(mut s: String) -> String {
    if !s.ends_with('\n') {
        s.push('\n');
    }
    s
}

fn print_counts(report: &CountReport, as_json: bool) {
    if as_json {
        println!("{}", serde_json::to_string_pretty(report).expect("counts serialize"));
    } else {
        println!("{report}");
    }
}

pub fn plan(cmd: &PlanCmd) -> CliResult<()> {
    if cmd.geometry.is_empty() {
        return Err(CliError::Usage(format!("give geometry flags or --preset {}", presets::PAPER_165)));
    }
    let plan = resolve_geometry(&cmd.geometry)?;
    emit(cmd.out.as_deref(), &with_newline(plan.to_json()))?;
    if cmd.out.is_some() {
        println!("{}", plan_summary(&plan));
    }
    Ok(())
}

fn compile_checked(plan: &ScanPlan, dwell_s: f64) -> CliResult<String> {
    if !(dwell_s >= 0.0) {
        return Err(CliError::Usage("--dwell-s must be non-negative".into()));
    }
    let cmds = compile_plan(plan, dwell_s).map_err(|e| CliError::Usage(e.to_string()))?;
    let captures = check_command_stream(&cmds, Some(plan)).map_err(|e| CliError::Invariant(e.to_string()))?;
    if captures != plan.poses.len() {
        return Err(CliError::Invariant(format!("{captures} captures for {} poses", plan.poses.len())));
    }
    Ok(with_newline(render_command_stream(&cmds)))
}

pub fn compile(cmd: &CompileCmd) -> CliResult<()> {
    let plan = load_plan(&cmd.source)?;
    let text = compile_checked(&plan, cmd.dwell_s)?;
    let secs = estimate_duration(&plan, cmd.dwell_s, cmd.per_move_s).map_err(|e| CliError::Usage(e.to_string()))?;
    emit(cmd.out.as_deref(), &text)?;
    let summary = format!("{} commands, estimated duration {secs:.1} s ({:.2} min)", text.lines().count(), secs / 60.0);
    if cmd.out.is_some() {
        println!("{summary}");
    } else {
        eprintln!("{summary}");
    }
    Ok(())
}

fn make_scene(plan: &ScanPlan, s: &SceneArgs) -> CliResult<SyntheticScene> {
    let params = SceneParams::new(s.seed, s.eggs, s.hatch_fraction, s.min_sep_mm);
    generate_scene(&params, plan.trap).map_err(|e| CliError::Usage(e.to_string()))
}

fn scene_config(s: &SceneArgs) -> Value {
    json!({"eggs": s.eggs, "hatch_fraction": s.hatch_fraction, "min_sep_mm": s.min_sep_mm, "seed": s.seed})
}

pub fn simulate(cmd: &SimulateCmd) -> CliResult<()> {
    let plan = load_plan(&cmd.source)?;
    let mut out = OutDir::acquire(&cmd.out_dir)?;
    out.write("plan.json", with_newline(plan.to_json()))?;
    let scene = make_scene(&plan, &cmd.scene)?;
    out.write("scene.json", with_newline(scene.to_json()))?;
    let tiles = out.path("tiles");
    simulate_run(&scene, &plan, &tiles, "../plan.json").map_err(|e| device_error(&tiles, e))?;
    let m = out.manifest_mut();
    m.plan = Some("plan.json".into());
    m.scene = Some("scene.json".into());
    m.images = Some(format!("tiles/{MANIFEST_FILE}"));
    out.finish("simulate", scene_config(&cmd.scene))?;
    println!("rendered {} tiles of {} eggs to {}", plan.poses.len(), scene.eggs.len(), tiles.display());
    Ok(())
}

fn jitter_params(j: &JitterArgs) -> CliResult<JitterParams> {
    if !(j.sigma_px >= 0.0) || !(0.0..=1.0).contains(&j.score_noise) {
        return Err(CliError::Usage("--sigma-px must be >= 0 and --score-noise in [0, 1]".into()));
    }
    Ok(JitterParams { sigma_px: j.sigma_px, score_noise: j.score_noise })
}

fn detect_all(scene: &SyntheticScene, plan: &ScanPlan, jitter: &JitterParams) -> Vec<TileDetections> {
    plan.poses.iter().map(|p| oracle_detect(scene, p, &plan.tile, jitter)).collect()
}

fn read_scene(path: &Path) -> CliResult<SyntheticScene> {
    SyntheticScene::from_json(&read_input(path)?).map_err(|e| CliError::schema(path, e))
}

pub fn detect(cmd: &DetectCmd) -> CliResult<()> {
    let plan = load_plan(&cmd.source)?;
    let scene = read_scene(&cmd.scene)?;
    if scene.trap != plan.trap {
        return Err(CliError::schema(&cmd.scene, "scene trap does not match the plan"));
    }
    let dets = detect_all(&scene, &plan, &jitter_params(&cmd.jitter)?);
    emit(cmd.out.as_deref(), &with_newline(serialize_tile_detections(&dets)))?;
    let n: usize = dets.iter().map(|d| d.instances.len()).sum();
    info!("{n} instances over {} tiles", dets.len());
    Ok(())
}

fn merge_config(m: &MergeArgs) -> CliResult<MergeConfig> {
    let cfg = MergeConfig {
        dup_iou_threshold: m.dup_iou,
        contact_tolerance_mm: m.contact_mm,
        score_combine: match m.score_combine {
            Combine::Max => ScoreCombine::Max,
            Combine::Mean => ScoreCombine::Mean,
        },
        raster_pitch_mm: m.raster_pitch_mm,
    };
    cfg.validate().map_err(CliError::Usage)?;
    Ok(cfg)
}

fn merge_config_json(m: &MergeArgs) -> Value {
    json!({
        "dup_iou": m.dup_iou,
        "contact_mm": m.contact_mm,
        "score_combine": format!("{:?}", m.score_combine).to_lowercase(),
        "raster_pitch_mm": m.raster_pitch_mm,
    })
}

/// Lifts and merges, then checks that every raw detection ends up in
/// exactly one output instance.
fn merge_checked(
    dets: &[TileDetections],
    plan: &ScanPlan,
    cfg: &MergeConfig,
    source: &Path,
) -> CliResult<Vec<GlobalInstance>> {
    let globals = to_global(dets, plan).map_err(|e| merge_error(source, e))?;
    let raw: BTreeSet<(usize, usize)> = globals.iter().flat_map(|g| g.provenance.iter().copied()).collect();
    let n_raw = globals.len();
    debug!("merging {n_raw} instances");
    let merged = deduplicate(globals, cfg);
    let mut seen = BTreeSet::new();
    for g in &merged {
        for p in &g.provenance {
            if !seen.insert(*p) {
                return Err(CliError::Invariant(format!("detection {p:?} appears in two merged instances")));
            }
        }
    }
    if seen != raw {
        return Err(CliError::Invariant("merged provenance does not cover the input".into()));
    }
    info!("{n_raw} tile instances merged into {}", merged.len());
    Ok(merged)
}

pub fn merge(cmd: &MergeCmd) -> CliResult<()> {
    let plan = load_plan(&cmd.source)?;
    let cfg = merge_config(&cmd.merge)?;
    let dets = parse_tile_detections(&read_input(&cmd.detections)?).map_err(|e| detection_error(&cmd.detections, e))?;
    let merged = merge_checked(&dets, &plan, &cfg, &cmd.detections)?;
    if let Some(out) = &cmd.out {
        write_output(out, with_newline(merged_to_json(&merged)))?;
        print_counts(&count_eggs(&merged), cmd.json);
    } else {
        print!("{}", with_newline(merged_to_json(&merged)));
    }
    Ok(())
}

fn read_merged(path: &Path) -> CliResult<Vec<GlobalInstance>> {
    merged_from_json(&read_input(path)?).map_err(|e| merge_error(path, e))
}

pub fn count(cmd: &CountCmd) -> CliResult<()> {
    print_counts(&count_eggs(&read_merged(&cmd.merged)?), cmd.json);
    Ok(())
}

fn as_instances(merged: &[GlobalInstance]) -> Vec<EggInstance> {
    merged
        .iter()
        .map(|g| EggInstance {
            id: g.id,
            class: g.class,
            score: g.score,
            polygons: g.polygons.clone(),
            frame: Frame::Global,
            clipped_edges: Default::default(),
        })
        .collect()
}

fn eval_trap(scene: &SyntheticScene, merged: &[GlobalInstance], pitch: f64, max_dets: Option<usize>) -> Result<EvalReport, EvalError> {
    let params = EvalParams { pitch, thresholds: coco_thresholds(), max_dets };
    let image = ImageEval { dets: as_instances(merged), gts: scene.truth_instances(TRUTH_VERTICES) };
    evaluate_images(&[image], &params)
}

pub fn eval(cmd: &EvalCmd) -> CliResult<()> {
    let report = match (&cmd.gt, &cmd.detections, &cmd.scene, &cmd.merged) {
        (Some(gt_path), Some(det_path), None, None) => {
            let gt: GroundTruthSet = parse_ground_truth(&read_input(gt_path)?).map_err(|e| detection_error(gt_path, e))?;
            let tiles: Vec<TileDetections> =
                parse_tile_detections(&read_input(det_path)?).map_err(|e| detection_error(det_path, e))?;
            let dets: BTreeMap<u64, Vec<EggInstance>> =
                tiles.into_iter().map(|t| (t.tile_id as u64, t.instances)).collect();
            let params = EvalParams { pitch: cmd.pitch.unwrap_or(1.0), thresholds: coco_thresholds(), max_dets: cmd.max_dets };
            evaluate(&dets, &gt, &params).map_err(|e| eval_error(det_path, e))?
        }
        (None, None, Some(scene_path), Some(merged_path)) => {
            let scene = read_scene(scene_path)?;
            let merged = read_merged(merged_path)?;
            eval_trap(&scene, &merged, cmd.pitch.unwrap_or(TRAP_EVAL_PITCH_MM), cmd.max_dets)
                .map_err(|e| eval_error(merged_path, e))?
        }
        _ => return Err(CliError::Usage("give either --gt with --detections, or --scene with --merged".into())),
    };
    if let Some(out) = &cmd.out {
        write_output(out, with_newline(report.to_json()))?;
    }
    if cmd.json {
        println!("{}", report.to_json());
    } else {
        println!("{report}");
    }
    Ok(())
}

pub fn stats(cmd: &StatsCmd) -> CliResult<()> {
    let gt: GroundTruthSet = parse_ground_truth(&read_input(&cmd.gt)?).map_err(|e| detection_error(&cmd.gt, e))?;
    let stats = dataset_stats(&gt, &SplitLabels::from_images(&gt.images, &cmd.default_split));
    if cmd.json {
        println!("{}", serde_json::to_string_pretty(&stats).expect("stats serialize"));
    } else {
        print!("{stats}");
    }
    Ok(())
}

fn tile_names(tile_dir: &Path) -> CliResult<BTreeMap<usize, String>> {
    let path = tile_dir.join(MANIFEST_FILE);
    let manifest = SimulationManifest::from_json(&read_input(&path)?).map_err(|e| CliError::schema(&path, e))?;
    Ok(manifest.tiles.into_iter().map(|t| (t.id, t.file)).collect())
}

fn write_overlay(
    out: &OutDir,
    plan: &ScanPlan,
    tile_dir: &Path,
    names: &BTreeMap<usize, String>,
    merged: &[GlobalInstance],
    mm_per_px: f64,
) -> CliResult<PathBuf> {
    if !(mm_per_px > 0.0) {
        return Err(CliError::Usage("--mm-per-px must be positive".into()));
    }
    let name = |id: usize| names.get(&id).cloned().unwrap_or_else(|| tile_file_name(id));
    let img = overlay::render(plan, tile_dir, name, merged, mm_per_px)?;
    out.write("overlay.png", overlay::encode_png(&img)?)
}

pub fn report(cmd: &ReportCmd) -> CliResult<()> {
    let plan = load_plan(&cmd.source)?;
    let names = tile_names(&cmd.tiles)?;
    let merged = read_merged(&cmd.merged)?;
    let mut out = OutDir::acquire(&cmd.out_dir)?;
    write_overlay(&out, &plan, &cmd.tiles, &names, &merged, cmd.mm_per_px)?;
    let counts = count_eggs(&merged);
    out.write("count.json", with_newline(serde_json::to_string_pretty(&counts).expect("counts serialize")))?;
    out.manifest_mut().reports.extend(["overlay.png".to_string(), "count.json".to_string()]);
    out.finish("report", json!({"mm_per_px": cmd.mm_per_px}))?;
    print_counts(&counts, cmd.json);
    Ok(())
}

pub fn run(cmd: &RunCmd) -> CliResult<()> {
    let plan = load_plan(&cmd.source)?;
    let cfg = merge_config(&cmd.merge)?;
    let jitter = jitter_params(&cmd.jitter)?;
    let mut out = OutDir::acquire(&cmd.out_dir)?;

    out.write("plan.json", with_newline(plan.to_json()))?;
    out.write("commands.txt", compile_checked(&plan, cmd.dwell_s)?)?;
    let scene = make_scene(&plan, &cmd.scene)?;
    out.write("scene.json", with_newline(scene.to_json()))?;
    info!("{}; {} eggs", plan_summary(&plan), scene.eggs.len());

    let tiles = out.path("tiles");
    if !cmd.no_images {
        simulate_run(&scene, &plan, &tiles, "../plan.json").map_err(|e| device_error(&tiles, e))?;
    }
    let dets = detect_all(&scene, &plan, &jitter);
    let det_path = out.write("detections.json", with_newline(serialize_tile_detections(&dets)))?;
    let merged = merge_checked(&dets, &plan, &cfg, &det_path)?;
    out.write("merged.json", with_newline(merged_to_json(&merged)))?;
    let counts = count_eggs(&merged);
    out.write("count.json", with_newline(serde_json::to_string_pretty(&counts).expect("counts serialize")))?;
    let pitch = plan.tile.pitch_major().min(plan.tile.pitch_minor());
    let report = eval_trap(&scene, &merged, pitch, None).map_err(|e| CliError::Invariant(e.to_string()))?;
    out.write("eval.json", with_newline(report.to_json()))?;

    let mut reports = vec!["count.json".to_string(), "eval.json".to_string()];
    if !cmd.no_images {
        let names = tile_names(&tiles)?;
        write_overlay(&out, &plan, &tiles, &names, &merged, cmd.mm_per_px)?;
        reports.push("overlay.png".into());
    }
    let m = out.manifest_mut();
    m.plan = Some("plan.json".into());
    m.commands = Some("commands.txt".into());
    m.scene = Some("scene.json".into());
    m.images = (!cmd.no_images).then(|| format!("tiles/{MANIFEST_FILE}"));
    m.detections = Some("detections.json".into());
    m.merged = Some("merged.json".into());
    m.reports.extend(reports);
    let config = json!({
        "scene": scene_config(&cmd.scene),
        "jitter": {"sigma_px": cmd.jitter.sigma_px, "score_noise": cmd.jitter.score_noise},
        "merge": merge_config_json(&cmd.merge),
        "dwell_s": cmd.dwell_s,
        "mm_per_px": cmd.mm_per_px,
        "images": !cmd.no_images,
    });
    out.finish("run", config)?;
    print_counts(&counts, cmd.json);
    Ok(())
}
