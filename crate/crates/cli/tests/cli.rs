use std::path::Path;
use std::process::{Command, Output};

fn marge(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_marge")).args(args).current_dir(dir).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn simulate_then_analyze_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let o = marge(&["simulate", "--seed", "4", "--stickers", "2", "--out", "trip.jsonl"], dir.path());
    assert!(o.status.success(), "{o:?}");
    let log = std::fs::read_to_string(dir.path().join("trip.jsonl")).unwrap();
    let lines = log.lines().count();
    assert!(lines > 100);

    let o = marge(&["analyze", "trip.jsonl", "--duration-min", "24"], dir.path());
    assert!(o.status.success(), "{o:?}");
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["total_events"], lines);
    assert_eq!(report["window_end_ms"], 24 * 60_000);
    assert_eq!(report["beacons"].as_array().unwrap().len(), 3);

    // Same seed, same log.
    let again = marge(&["simulate", "--seed", "4", "--stickers", "2"], dir.path());
    assert_eq!(stdout(&again), log);
}

#[test]
fn simulate_accepts_a_trip_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = serde_json::json!({
        "duration_min": 30,
        "seed": 1,
        "beacons": [{"uuid": "f7826da64fa24e988024bc5b71e0893e", "major": 1, "minor": 1, "kind": "sticker", "base_rate_per_min": 2.0}]
    });
    std::fs::write(dir.path().join("trip.json"), cfg.to_string()).unwrap();
    let o = marge(&["simulate", "--config", "trip.json"], dir.path());
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).lines().all(|l| l.contains("\"major\":1")));
}

#[test]
fn recommend_reports_sufficiency() {
    let dir = tempfile::tempdir().unwrap();
    let o = marge(&["recommend", "--stickers", "1"], dir.path());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["sufficient"], false);
    let o = marge(&["recommend", "--stickers", "2", "--window-s", "1200", "--trials", "2000"], dir.path());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["sufficient"], true);
    assert!(v["monte_carlo_probability"].as_f64().unwrap() > 0.99);
}

#[test]
fn sus_and_tasks_reports() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("sus.csv"), "q1,q2,q3,q4,q5,q6,q7,q8,q9,q10\n3,3,3,3,3,3,3,3,3,3\n5,1,5,1,5,1,5,1,5,1\n").unwrap();
    let o = marge(&["sus", "sus.csv", "--format", "json"], dir.path());
    assert!(o.status.success(), "{o:?}");
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["interpretation"]["mean_score"], 75.0);
    let o = marge(&["sus", "sus.csv"], dir.path());
    assert!(stdout(&o).contains("75"));

    std::fs::write(dir.path().join("tasks.csv"), "task_id,duration_s,errors\nt1,7,0\nt1,8,0\nt1,9,0\nt1,14,1\nt1,16,0\nt1,17,0\nt1,17,0\nt1,32,0\n").unwrap();
    let o = marge(&["tasks", "tasks.csv", "--format", "json"], dir.path());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["t1"]["mean_s"], 15.0);
    assert_eq!(v["t1"]["sd_s"], 8.0);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(marge(&["frobnicate"], dir.path()).status.code(), Some(2));
    assert_eq!(marge(&["simulate", "--seed", "x"], dir.path()).status.code(), Some(2));
    assert_eq!(marge(&["recommend"], dir.path()).status.code(), Some(2));
    assert_eq!(marge(&["simulate", "--duration-min", "5"], dir.path()).status.code(), Some(1));
    assert_eq!(marge(&["analyze", "missing.jsonl"], dir.path()).status.code(), Some(1));
    assert_eq!(marge(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn validate_catalog_lists_issues() {
    let dir = tempfile::tempdir().unwrap();
    let seed = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/assets/catalog.json");
    let o = marge(&["validate-catalog", seed.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).starts_with("ok: 2 adventures"));

    let mut doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&seed).unwrap()).unwrap();
    doc["adventures"][1]["award_id"] = "ghost".into();
    std::fs::write(dir.path().join("bad.json"), doc.to_string()).unwrap();
    let o = marge(&["validate-catalog", "bad.json"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("adventures[1].award_id"));
}

#[test]
fn serve_rejects_a_bad_catalog() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), "{}").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_marge"))
        .args(["serve", "--catalog", "bad.json", "--port", "0"])
        .current_dir(dir.path())
        .env_remove("MARGE_PORT")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.json"));
}
