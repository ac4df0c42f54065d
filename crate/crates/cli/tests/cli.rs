use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use oilwater::io::RUN_RECORD_SCHEMA;
use oilwater::scaling::closed_form_w;
use serde_json::Value;

fn oilwater(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oilwater"))
        .args(args)
        .current_dir(dir)
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .env("OILWATER_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn check_schema(record: &Value) {
    let schema: Value = serde_json::from_str(RUN_RECORD_SCHEMA).unwrap();
    let validator = jsonschema::validator_for(&schema).expect("schema compiles");
    let errors: Vec<String> = validator.iter_errors(record).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{errors:?}");
}

#[test]
fn empty_run_writes_valid_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = oilwater(&["run", "--n", "0", "--out", "empty"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let record: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("empty.json")).unwrap()).unwrap();
    check_schema(&record);
    assert_eq!(record["tau"], 0);
    assert_eq!(record["odometer"].as_array().unwrap().len(), 0);
    let csv = fs::read_to_string(dir.path().join("empty.profile.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("# manifest: "));
    assert_eq!(&lines[1..], ["x,u,oil,water"]);
}

#[test]
fn single_pair_run_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = oilwater(&["run", "--n", "1", "--seed", "1", "--out", out], dir.path());
        assert_eq!(code(&o), 0);
    }
    let read = |f: &str| fs::read(dir.path().join(f)).unwrap();
    let a: Value = serde_json::from_slice(&read("a.json")).unwrap();
    let b: Value = serde_json::from_slice(&read("b.json")).unwrap();
    check_schema(&a);
    // only the output path in the recorded arguments differs
    let strip = |mut v: Value| {
        v["manifest"]["args"] = Value::Null;
        v
    };
    assert_eq!(strip(a.clone()), strip(b));
    assert!(a["tau"].as_u64().unwrap() >= 1);
    assert!(!a["odometer"].as_array().unwrap().is_empty());
    let occupied = a["final_config"].as_array().unwrap();
    let oil: u64 = occupied.iter().map(|s| s["oil"].as_u64().unwrap()).sum();
    let water: u64 = occupied.iter().map(|s| s["water"].as_u64().unwrap()).sum();
    assert_eq!((oil, water), (1, 1));
    // profile rows carry the whole population
    let csv = String::from_utf8(read("a.profile.csv")).unwrap();
    let rows: Vec<Vec<u64>> = csv
        .lines()
        .skip(2)
        .map(|l| l.split(',').skip(1).map(|c| c.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.iter().map(|r| r[1] + r[2]).sum::<u64>(), 2);
    assert_eq!(rows.iter().map(|r| r[0]).sum::<u64>(), a["tau"].as_u64().unwrap());
}

#[test]
fn rerunning_a_manifest_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["run", "--n", "40", "--seed", "9", "--policy", "uniform-random", "--out", "r"];
    assert_eq!(code(&oilwater(&args, dir.path())), 0);
    let first = fs::read(dir.path().join("r.json")).unwrap();
    let manifest: Value = serde_json::from_slice::<Value>(&first).unwrap()["manifest"].clone();
    let replay: Vec<String> = manifest["args"].as_array().unwrap().iter().map(|a| a.as_str().unwrap().to_string()).collect();
    let replay: Vec<&str> = replay.iter().map(String::as_str).collect();
    assert_eq!(code(&oilwater(&replay, dir.path())), 0);
    assert_eq!(first, fs::read(dir.path().join("r.json")).unwrap());
}

#[test]
fn engine_anomaly_exits_with_json_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = oilwater(&["run", "--n", "50", "--budget", "10", "--out", "x"], dir.path());
    assert_eq!(code(&o), 3);
    let err: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(err["error"]["kind"], "budget-exceeded");
    assert_eq!(err["error"]["n"], 50);
    assert_eq!(err["manifest"]["command"], "run");
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&oilwater(&["run", "--out", "x"], dir.path())), 1);
    assert_eq!(code(&oilwater(&["run", "--n", "3", "--policy", "middle", "--out", "x"], dir.path())), 1);
    assert_eq!(code(&oilwater(&["ode", "--mesh", "0", "--out", "x.csv"], dir.path())), 1);
    assert_eq!(code(&oilwater(&["ode", "--mesh", "-0.5", "--out", "x.csv"], dir.path())), 1);
    assert_eq!(code(&oilwater(&["verify", "--suite", "everything"], dir.path())), 1);
    assert_eq!(code(&oilwater(&["sweep", "--n-grid", "100,10", "--out", "s"], dir.path())), 1);
    assert_eq!(code(&oilwater(&["render", "--n", "5", "--out", "x"], dir.path())), 1);
    assert!(!dir.path().join("x.csv").exists());
    assert_eq!(code(&oilwater(&["--help"], dir.path())), 0);
}

fn read_csv(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(2)
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect()
}

#[test]
fn ode_line_profile_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let o = oilwater(&["ode", "--dim", "1", "--mesh", "1e-4", "--out", "w.csv"], dir.path());
    assert_eq!(code(&o), 0);
    let rows = read_csv(&dir.path().join("w.csv"));
    assert!(rows.len() > 70_000);
    let err = rows.iter().map(|r| (r[1] - closed_form_w(r[0].abs())).abs()).fold(0.0, f64::max);
    assert!(err <= 1e-6, "sup error {err}");
    assert!(rows.iter().any(|r| r[0] < 0.0) && rows.iter().any(|r| r[0] > 0.0));
}

#[test]
fn ode_radial_profile() {
    let dir = tempfile::tempdir().unwrap();
    let o = oilwater(&["ode", "--dim", "2", "--out", "w2.csv"], dir.path());
    assert_eq!(code(&o), 0);
    let rows = read_csv(&dir.path().join("w2.csv"));
    assert!(rows.windows(2).all(|p| p[1][0] > p[0][0] && p[1][1] <= p[0][1]));
    assert!(rows.iter().all(|r| r[1] >= 0.0));
    assert_eq!(rows.last().unwrap()[1], 0.0);
}

#[test]
fn verify_passes_and_fault_fails() {
    let dir = tempfile::tempdir().unwrap();
    for suite in ["abelian", "least-action", "identities"] {
        let o = oilwater(&["verify", "--suite", suite, "--n-max", "12", "--seeds", "4"], dir.path());
        assert_eq!(code(&o), 0, "{suite}: {}", String::from_utf8_lossy(&o.stdout));
        let report: Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(report["passed"], true);
    }
    let o = oilwater(&["verify", "--suite", "walk-stats", "--seeds", "20000"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    for suite in ["abelian", "identities"] {
        let o = oilwater(&["verify", "--suite", suite, "--n-max", "12", "--seeds", "4", "--inject-fault", "2"], dir.path());
        assert_eq!(code(&o), 2, "{suite}");
        let report: Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(report["passed"], false);
        assert!(!report["report"]["failures"].as_array().unwrap().is_empty());
    }
}

#[test]
fn render_writes_pixmaps() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["render", "--n", "200", "--dim", "2", "--seed", "3", "--engine", "batched", "--policy", "sweep-parallel", "--out", "p"];
    assert_eq!(code(&oilwater(&args, dir.path())), 0);
    let occ = fs::read(dir.path().join("p.occupation.ppm")).unwrap();
    let con = fs::read(dir.path().join("p.contours.ppm")).unwrap();
    assert!(occ.starts_with(b"P6\n# manifest: {"));
    assert!(con.starts_with(b"P5\n# manifest: {"));
    assert_eq!(code(&oilwater(&args, dir.path())), 0);
    assert_eq!(occ, fs::read(dir.path().join("p.occupation.ppm")).unwrap());
    assert_eq!(con, fs::read(dir.path().join("p.contours.ppm")).unwrap());
}

#[test]
fn sweep_writes_table_and_fits() {
    let dir = tempfile::tempdir().unwrap();
    let o = oilwater(&["sweep", "--n-grid", "100,200,400", "--seeds", "3", "--fit", "--out", "s"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("s.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2 + 9);
    let summary: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("s.summary.json")).unwrap()).unwrap();
    assert_eq!(summary["aggregates"].as_array().unwrap().len(), 3);
    let slope = summary["fits"]["height"]["slope"].as_f64().unwrap();
    assert!(slope > 0.8 && slope < 2.0, "{slope}");
    assert!(summary["variance"].is_object());
    assert!(summary["rightmost"].is_object());
}
