use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn ovitrap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ovitrap")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = ovitrap(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn plan_variants() {
    let count = |args: &[&str]| {
        let v: Value = serde_json::from_str(&ok(args)).unwrap();
        v["poses"].as_array().unwrap().len()
    };
    assert_eq!(count(&["plan", "--preset", "paper-165"]), 165);
    let dims = ["plan", "--trap-mm", "148x25", "--tile-mm", "5x9", "--tile-px", "1280x1024", "--overlap", "0.25,0.40"];
    assert_eq!(count(&dims), 160);
    let mut forced = dims.to_vec();
    forced.extend(["--counts", "1x1"]);
    assert_eq!(count(&forced), 1);
    assert_eq!(count(&["plan", "--preset", "paper-165", "--counts", "40x4"]), 160);
}

#[test]
fn usage_errors_exit_2() {
    for args in [
        vec!["plan", "--trap-mm", "148"],
        vec!["plan", "--preset", "paper-165", "--overlap", "0.25"],
        vec!["plan"],
        vec!["plan", "--preset", "nope"],
        vec!["plan", "--trap-mm", "10x10", "--tile-mm", "12x4", "--overlap", "0,0"],
        vec!["frobnicate"],
        vec!["merge", "--preset", "paper-165", "--detections", "x.json", "--dup-iou", "0"],
    ] {
        assert_eq!(code(&ovitrap(&args)), 2, "{args:?}");
    }
    let out = ovitrap(&["count", "/no/such/merged.json"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("/no/such/merged.json"));
}

#[test]
fn schema_errors_exit_3_with_locus() {
    let dir = tempfile::tempdir().unwrap();
    let dets = dir.path().join("dets.json");
    std::fs::write(
        &dets,
        r#"{"tiles": [{"tile_id": 0, "instances": [
            {"id": 0, "class": "hatch", "score": 1.5, "polygon": [[0,0],[10,0],[10,10]], "clipped_edges": []}]}]}"#,
    )
    .unwrap();
    let out = ovitrap(&["merge", "--preset", "paper-165", "--detections", s(&dets)]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("tiles[0].instances[0]"), "{}", stderr(&out));

    let bad_plan = dir.path().join("plan.json");
    std::fs::write(&bad_plan, "{\"trap\": 1}").unwrap();
    assert_eq!(code(&ovitrap(&["compile", "--plan", s(&bad_plan)])), 3);

    let unknown_tile = dir.path().join("unknown.json");
    std::fs::write(&unknown_tile, r#"{"tiles": [{"tile_id": 999, "instances": []}]}"#).unwrap();
    assert_eq!(code(&ovitrap(&["merge", "--preset", "paper-165", "--detections", s(&unknown_tile)])), 3);
}

#[test]
fn manifest_naming_missing_file_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    ok(&["run", "--preset", "paper-165", "--eggs", "20", "--seed", "3", "--out-dir", s(&run)]);
    std::fs::remove_file(run.join("eval.json")).unwrap();
    let out = ovitrap(&[
        "report", "--plan", s(&run.join("plan.json")), "--tiles", s(&run.join("tiles")),
        "--merged", s(&run.join("merged.json")), "--out-dir", s(&run),
    ]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
}

#[test]
fn lock_file_fails_fast() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join(".ovitrap.lock"), "1").unwrap();
    let out = ovitrap(&["run", "--preset", "paper-165", "--eggs", "5", "--no-images", "--out-dir", s(dir.path())]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("in use"));
    assert!(!dir.path().join("plan.json").exists());
}

#[test]
fn run_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let args = |p: &Path| {
        vec!["run".to_string(), "--preset".into(), "paper-165".into(), "--eggs".into(), "60".into(), "--seed".into(),
            "11".into(), "--sigma-px".into(), "2".into(), "--score-noise".into(), "0.3".into(), "--out-dir".into(),
            s(p).to_string()]
    };
    let argv_a = args(&a);
    let argv_b = args(&b);
    ok(&argv_a.iter().map(String::as_str).collect::<Vec<_>>());
    ok(&argv_b.iter().map(String::as_str).collect::<Vec<_>>());
    for f in ["plan.json", "commands.txt", "scene.json", "detections.json", "merged.json", "count.json", "eval.json",
        "overlay.png", "run_manifest.json", "tiles/manifest.json", "tiles/tile_000.png", "tiles/tile_164.png"]
    {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    assert!(!a.join(".ovitrap.lock").exists());
}

#[test]
fn step_by_step_chain_matches_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = d.join("run");
    ok(&["run", "--preset", "paper-165", "--eggs", "80", "--seed", "5", "--sigma-px", "1", "--out-dir", s(&run)]);

    let sim = d.join("sim");
    ok(&["simulate", "--preset", "paper-165", "--eggs", "80", "--seed", "5", "--out-dir", s(&sim)]);
    assert_eq!(std::fs::read(sim.join("scene.json")).unwrap(), std::fs::read(run.join("scene.json")).unwrap());
    assert_eq!(
        std::fs::read(sim.join("tiles/tile_042.png")).unwrap(),
        std::fs::read(run.join("tiles/tile_042.png")).unwrap()
    );
    let plan = sim.join("plan.json");
    let dets = d.join("dets.json");
    ok(&["detect-oracle", "--plan", s(&plan), "--scene", s(&sim.join("scene.json")), "--sigma-px", "1", "--out", s(&dets)]);
    assert_eq!(std::fs::read(&dets).unwrap(), std::fs::read(run.join("detections.json")).unwrap());
    let merged = d.join("merged.json");
    let counts = ok(&["merge", "--plan", s(&plan), "--detections", s(&dets), "--out", s(&merged), "--json"]);
    assert_eq!(std::fs::read(&merged).unwrap(), std::fs::read(run.join("merged.json")).unwrap());
    let counts: Value = serde_json::from_str(&counts).unwrap();
    assert_eq!(counts, json(&run.join("count.json")));
    let recount: Value = serde_json::from_str(&ok(&["count", s(&merged), "--json"])).unwrap();
    assert_eq!(recount, counts);
    assert!(ok(&["count", s(&merged)]).contains("total:"));

    let text = ok(&["report", "--plan", s(&plan), "--tiles", s(&sim.join("tiles")), "--merged", s(&merged), "--out-dir", s(&sim)]);
    assert!(text.contains("hatched:"));
    assert_eq!(std::fs::read(sim.join("overlay.png")).unwrap(), std::fs::read(run.join("overlay.png")).unwrap());
    let manifest = json(&sim.join("run_manifest.json"));
    assert_eq!(manifest["images"], "tiles/manifest.json");
    assert!(manifest["reports"].as_array().unwrap().iter().any(|r| r == "overlay.png"));
    assert!(manifest["config"]["simulate"].is_object() && manifest["config"]["report"].is_object());

    let eval: Value = serde_json::from_str(&ok(&[
        "eval", "--scene", s(&sim.join("scene.json")), "--merged", s(&merged), "--pitch", "0.00390625", "--json",
    ]))
    .unwrap();
    assert_eq!(eval, json(&run.join("eval.json")));
}

#[test]
fn eval_dets_equal_gt() {
    let dir = tempfile::tempdir().unwrap();
    let gt = json(&fixture("table1_train.json"));
    // Rewrite the annotations as tile detections keyed by image id.
    let mut tiles = Vec::new();
    for img in gt["images"].as_array().unwrap() {
        let id = img["id"].as_u64().unwrap();
        let instances: Vec<Value> = gt["annotations"]
            .as_array()
            .unwrap()
            .iter()
            .filter(|a| a["image_id"] == id)
            .enumerate()
            .map(|(k, a)| {
                let flat = a["segmentation"][0].as_array().unwrap();
                let poly: Vec<Value> = flat.chunks(2).map(|c| serde_json::json!([c[0], c[1]])).collect();
                let class = if a["category_id"] == 1 { "hatch" } else { "full" };
                serde_json::json!({"id": k, "class": class, "score": 1.0, "polygon": poly, "clipped_edges": []})
            })
            .collect();
        tiles.push(serde_json::json!({"tile_id": id, "instances": instances}));
    }
    let dets = dir.path().join("dets.json");
    std::fs::write(&dets, serde_json::json!({ "tiles": tiles }).to_string()).unwrap();
    let out = dir.path().join("eval.json");
    let text = ok(&["eval", "--gt", s(&fixture("table1_train.json")), "--detections", s(&dets), "--out", s(&out)]);
    assert!(text.contains("mAP@.5"));
    let r = json(&out);
    assert_eq!(r["map_50"], 1.0);
    assert_eq!(r["map_5095"], 1.0);

    let empty = dir.path().join("empty.json");
    std::fs::write(&empty, r#"{"tiles": []}"#).unwrap();
    let r: Value =
        serde_json::from_str(&ok(&["eval", "--gt", s(&fixture("table1_train.json")), "--detections", s(&empty), "--json"]))
            .unwrap();
    assert_eq!(r["map_50"], 0.0);
    assert_eq!(code(&ovitrap(&["eval", "--detections", s(&empty)])), 2);
}

#[test]
fn stats_text_and_json() {
    let text = ok(&["stats", s(&fixture("table1.json"))]);
    assert!(text.lines().any(|l| l.starts_with("training") && l.contains("182") && l.contains("1042")));
    assert!(text.lines().any(|l| l.starts_with("test") && l.contains("33") && l.contains("118")));
    let v: Value = serde_json::from_str(&ok(&["stats", s(&fixture("table1_train.json")), "--json"])).unwrap();
    assert_eq!(v["splits"][0]["hatch"], 182);
}

#[test]
fn compile_reports_duration() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c.txt");
    let text = ok(&["compile", "--preset", "paper-165", "--out", s(&out)]);
    assert!(text.contains("495 commands"));
    assert!(text.contains("6.33 min"), "{text}");
}

#[test]
fn log_level_from_environment() {
    let out = Command::new(env!("CARGO_BIN_EXE_ovitrap"))
        .args(["run", "--preset", "paper-165", "--eggs", "10", "--no-images", "--out-dir"])
        .arg(tempfile::tempdir().unwrap().path().join("r"))
        .env("OVITRAP_LOG", "info")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(stderr(&out).contains("merged into"), "{}", stderr(&out));
}
