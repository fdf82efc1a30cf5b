use serde_json::Value;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fieldspray"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn fieldspray")
}

fn small_scenario(dir: &Path) -> String {
    let p = dir.join("s.json");
    let doc = serde_json::json!({
        "seed": 3,
        "field_polygon_m": [
            {"east_m": 0.0, "north_m": 0.0}, {"east_m": 40.0, "north_m": 0.0},
            {"east_m": 40.0, "north_m": 40.0}, {"east_m": 0.0, "north_m": 40.0}
        ],
        "plants": {"density_per_ha": 150.0}
    });
    fs::write(&p, doc.to_string()).unwrap();
    p.to_str().unwrap().to_string()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn simulate_twice_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let sc = small_scenario(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = run(&["simulate", "--scenario", &sc, "--seed", "7", "--out-dir", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["report.json", "report.csv", "events.jsonl", "targets.csv", "valves.csv"] {
        let x = fs::read(a.join(f)).unwrap();
        let y = fs::read(b.join(f)).unwrap();
        assert!(!x.is_empty(), "{f} empty");
        assert_eq!(x, y, "{f} differs");
    }
    let report = read_json(&a.join("report.json"));
    assert_eq!(report["seed"], 7);
    assert_eq!(report["effective_config"]["seed"], 7);
    assert_eq!(report["schema_version"], 1);
    let first = fs::read_to_string(a.join("events.jsonl")).unwrap();
    let first: Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    assert_eq!(first["payload"]["seed"], 7);
}

#[test]
fn different_seeds_differ() {
    let dir = tempfile::tempdir().unwrap();
    let sc = small_scenario(dir.path());
    for seed in ["1", "2"] {
        let out = dir.path().join(seed);
        let o = run(&["simulate", "--scenario", &sc, "--seed", seed, "--out-dir", out.to_str().unwrap()]);
        assert!(o.status.success());
    }
    let x = fs::read(dir.path().join("1/events.jsonl")).unwrap();
    let y = fs::read(dir.path().join("2/events.jsonl")).unwrap();
    assert_ne!(x, y);
}

#[test]
fn netcheck_public_4g_is_uplink_infeasible() {
    let dir = tempfile::tempdir().unwrap();
    let sc = small_scenario(dir.path());
    let out = dir.path().join("net.json");
    let o = run(&["netcheck", "--preset", "public-4g", "--scenario", &sc, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let doc = read_json(&out);
    assert_eq!(doc["result"][0]["verdict"], "uplink infeasible");
    assert!(doc["result"][0]["detail"]["uplink"]["mean_offered_bps"].as_f64().unwrap() > 18e6);
    assert!(String::from_utf8_lossy(&o.stderr).contains("public-4g: uplink infeasible"));
}

#[test]
fn netcheck_unknown_preset_is_validation_error() {
    let o = run(&["netcheck", "--preset", "carrier-pigeon"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn optimize_route_both_reports_improvement() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("t.csv");
    let mut csv = String::from("east,north\n");
    // a zig-zag that nearest neighbour handles badly
    for i in 0..30 {
        let x = (i * 37 % 23) as f64;
        let y = (i * 11 % 17) as f64;
        csv += &format!("{x},{y}\n");
    }
    fs::write(&t, csv).unwrap();
    let o = run(&["optimize-route", "--targets", t.to_str().unwrap(), "--heuristic", "both"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let doc: Value = serde_json::from_slice(&o.stdout).unwrap();
    let nn = doc["result"]["nn_length_m"].as_f64().unwrap();
    let imp = doc["result"]["improved_length_m"].as_f64().unwrap();
    assert!(nn >= imp, "nn {nn} < improved {imp}");
    let mut order: Vec<u64> = doc["result"]["improved"]["order"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .collect();
    order.sort_unstable();
    assert_eq!(order, (0..30).collect::<Vec<_>>());
    assert!(doc["effective_config"]["routing"].is_object());
}

#[test]
fn optimize_route_small_instance_reports_optimum() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("t.csv");
    fs::write(&t, "east,north\n1,0\n-1.1,0\n3,0\n").unwrap();
    let o = run(&["optimize-route", "--targets", t.to_str().unwrap(), "--start", "0,0"]);
    assert!(o.status.success());
    let doc: Value = serde_json::from_slice(&o.stdout).unwrap();
    let opt = doc["result"]["oracle_length_m"].as_f64().unwrap();
    assert!((opt - 5.2).abs() < 1e-9, "{opt}");
    assert!((doc["result"]["nn_length_m"].as_f64().unwrap() - 7.1).abs() < 1e-9);
    assert!((doc["result"]["improved_length_m"].as_f64().unwrap() - opt).abs() < 1e-9);
}

#[test]
fn detect_then_spray_plan() {
    let dir = tempfile::tempdir().unwrap();
    let sc = small_scenario(dir.path());
    let t = dir.path().join("t.csv");
    let o = run(&["detect", "--scenario", &sc, "--csv", t.to_str().unwrap()]);
    assert!(o.status.success());
    let det: Value = serde_json::from_slice(&o.stdout).unwrap();
    let n = det["result"]["target_list"]["targets"].as_array().unwrap().len();
    let v = dir.path().join("v.csv");
    let out = dir.path().join("sp.json");
    let o = run(&[
        "spray-plan", "--scenario", &sc, "--targets", t.to_str().unwrap(),
        "--valves-csv", v.to_str().unwrap(), "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let doc = read_json(&out);
    assert_eq!(doc["result"]["tour"]["order"].as_array().unwrap().len(), n);
    assert!(fs::read_to_string(v).unwrap().starts_with("nozzle_id,t_open,t_close,plant_id"));
}

#[test]
fn plan_survey_writes_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let sc = small_scenario(dir.path());
    let j = dir.path().join("plan.jsonl");
    let o = run(&["plan-survey", "--scenario", &sc, "--jsonl", j.to_str().unwrap()]);
    assert!(o.status.success());
    let text = fs::read_to_string(j).unwrap();
    let kinds: Vec<String> = text
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["kind"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(kinds[0], "config");
    assert!(kinds.iter().any(|k| k == "track"));
    assert!(kinds.iter().any(|k| k == "capture"));
    assert!(String::from_utf8_lossy(&o.stderr).contains("capture rate"));
}

#[test]
fn sweep_writes_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let sc = small_scenario(dir.path());
    let out = dir.path().join("sw");
    let o = run(&[
        "sweep", "--scenario", &sc, "--param", "plants.density_per_ha",
        "--values", "0,100,200", "--jobs", "2", "--out-dir", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    let doc = read_json(&out.join("sweep.json"));
    assert_eq!(doc["result"].as_array().unwrap().len(), 3);
}

#[test]
fn sweep_unknown_parameter_is_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let sc = small_scenario(dir.path());
    let out = dir.path().join("sw");
    let o = run(&[
        "sweep", "--scenario", &sc, "--param", "plants.colour", "--values", "1",
        "--out-dir", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn report_reads_simulate_output() {
    let dir = tempfile::tempdir().unwrap();
    let sc = small_scenario(dir.path());
    let out = dir.path().join("o");
    assert!(run(&["simulate", "--scenario", &sc, "--out-dir", out.to_str().unwrap()]).status.success());
    let o = run(&["report", "--input", out.join("report.json").to_str().unwrap()]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("end to end"));
    let o = run(&["report", "--input", out.join("report.json").to_str().unwrap(), "--format", "csv"]);
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 2);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"seed": 1, "speed": 3}"#).unwrap();
    let o = run(&["simulate", "--scenario", bad.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("speed"));

    fs::write(&bad, r#"{"capture_overlap": 1.5}"#).unwrap();
    let o = run(&["plan-survey", "--scenario", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));

    let missing = dir.path().join("nope.json");
    let o = run(&["gen-field", "--scenario", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));

    // output directory blocked by a regular file
    let sc = small_scenario(dir.path());
    let blocker = dir.path().join("blocker");
    fs::write(&blocker, "x").unwrap();
    let o = run(&["simulate", "--scenario", &sc, "--out-dir", blocker.join("sub").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let o = run(&["simulate"]);
    assert_ne!(o.status.code(), Some(0));
}
