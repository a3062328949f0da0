use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use zinfer::simulate::{fixtures, sample_dataset, Dgp};
use zinfer::{ObservedLaw, Role};

fn zinfer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zinfer")).args(args).env_remove("ZINFER_THREADS").output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn json(out: &Output) -> Value {
    assert!(out.status.success() || code(out) == 2, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn table_json(law: &ObservedLaw) -> String {
    let t = law.table();
    let axes: Vec<Value> = t
        .axes()
        .iter()
        .map(|a| {
            let name = match a.role {
                Role::X(k) => format!("X{}", k + 1),
                Role::W(k) => format!("W{}", k + 1),
                _ => "C".into(),
            };
            serde_json::json!({"name": name, "card": a.card})
        })
        .collect();
    serde_json::json!({"axes": axes, "probs": t.probs()}).to_string()
}

fn records_csv(dgp: &Dgp, n: usize, seed: u64) -> String {
    let set = sample_dataset(dgp, n, seed);
    let mut s = String::from("x,w,c\n");
    for r in set.rows() {
        s.push_str(&format!("{},{},{}\n", r[0], r[1], r[2]));
    }
    s
}

fn close(v: &Value, want: f64, tol: f64) -> bool {
    (v.as_f64().unwrap() - want).abs() <= tol
}

const FIXTURE: &str = r#"{"wx": [[0.31, 0.07], [0.34, 0.28]]}"#;

#[test]
fn fixture_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "fx.json", FIXTURE);
    let v = json(&zinfer(&["bounds", f.to_str().unwrap(), "--model", "mcar"]));
    assert_eq!(v["q_w0_r1"], 0.2);
    assert!(close(&v["interval"][0], 0.476923, 1e-9) && v["interval"][1] == 1.0);
    assert_eq!(v["r0_interval"], serde_json::json!([0.225, 0.65]));
}

#[test]
fn uniform_table_has_no_inflation() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "u.json", r#"{"wx": [[0.25, 0.25], [0.25, 0.25]]}"#);
    let v = json(&zinfer(&["bounds", f.to_str().unwrap(), "--model", "mcar"]));
    assert_eq!(v["no_inflation"], true);
    let out = zinfer(&["sensitivity", f.to_str().unwrap(), "--model", "mcar", "--format", "csv"]);
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 2);
}

#[test]
fn stratified_fixture_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "s.json", &table_json(&fixtures::mar_stratified().observed_law()));
    let v = json(&zinfer(&["bounds", f.to_str().unwrap(), "--model", "mar-stratified"]));
    let e = v["entries"].as_array().unwrap();
    assert!(close(&e[0]["interval"][0], 0.335294, 1e-6) && e[0]["interval"][1] == 1.0);
    assert!(e[1]["interval"][0] == 0.0 && close(&e[1]["interval"][1], 0.4125, 1e-9));
}

#[test]
fn falsify_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = write(dir.path(), "good.csv", &records_csv(&fixtures::mcar(), 2000, 1));
    assert_eq!(code(&zinfer(&["falsify", good.to_str().unwrap(), "--model", "mcar"])), 0);

    // ternary records with p(w0|x2) = 0.75 against p(w0|x1) = 0.5
    let mut bad = String::from("x,w\n");
    for (x, w, k) in [(0, 0, 2), (1, 0, 1), (2, 0, 3), (0, 1, 2), (1, 1, 1), (2, 1, 1)] {
        for _ in 0..k * 1000 {
            bad.push_str(&format!("{x},{w}\n"));
        }
    }
    let bad = write(dir.path(), "bad.csv", &bad);
    let out = zinfer(&["falsify", bad.to_str().unwrap(), "--model", "mcar"]);
    assert_eq!(code(&out), 2);
    assert_eq!(json(&out)["residuals"][0]["constraint"], "x=2");

    let broken = write(dir.path(), "broken.csv", "x,w\n1,0\n0,zero\n");
    assert_eq!(code(&zinfer(&["falsify", broken.to_str().unwrap(), "--model", "mcar"])), 1);
    assert_eq!(code(&zinfer(&["bounds", bad.to_str().unwrap(), "--model", "mcar"])), 2);
    assert_eq!(code(&zinfer(&["bounds", "/nonexistent.csv", "--model", "mcar"])), 1);
}

#[test]
fn fixture_sensitivity_range() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "fx.json", FIXTURE);
    let v = json(&zinfer(&["sensitivity", f.to_str().unwrap(), "--model", "mcar", "--grid", "200"]));
    assert!(close(&v["target_range"][1][0], 0.451613, 1e-6));
    assert!(close(&v["target_range"][1][1], 1.0, 1e-6));
    assert_eq!(v["points"].as_array().unwrap().len(), 201);
}

#[test]
fn enumerated_records_match_table() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("x,w\n");
    for (x, w, k) in [(0, 0, 31), (1, 0, 7), (0, 1, 34), (1, 1, 28)] {
        for _ in 0..k {
            csv.push_str(&format!("{x},{w}\n"));
        }
    }
    let rec = write(dir.path(), "fx.csv", &csv);
    let tab = write(dir.path(), "fx.json", FIXTURE);
    let a = json(&zinfer(&["bounds", rec.to_str().unwrap(), "--model", "mcar", "--precision", "full"]));
    let b = json(&zinfer(&["bounds", tab.to_str().unwrap(), "--model", "mcar", "--precision", "full"]));
    assert_eq!(a["source"], "counts");
    assert_eq!(a["entries"], b["entries"]);
}

#[test]
fn records_route_through_em() {
    let dir = tempfile::tempdir().unwrap();
    let dgp = fixtures::mar_shared();
    let rec = write(dir.path(), "s.csv", &records_csv(&dgp, 100_000, 4));
    let tab = write(dir.path(), "s.json", &table_json(&dgp.observed_law()));
    let a = json(&zinfer(&["sensitivity", rec.to_str().unwrap(), "--model", "mar-shared"]));
    let b = json(&zinfer(&["sensitivity", tab.to_str().unwrap(), "--model", "mar-shared"]));
    assert_eq!(a["source"], "em");
    for x in 0..2 {
        for end in 0..2 {
            let (u, v) = (a["target_range"][x][end].as_f64().unwrap(), b["target_range"][x][end].as_f64().unwrap());
            assert!((u - v).abs() <= 0.05, "x={x}: {u} vs {v}");
        }
    }
}

#[test]
fn simulate_is_deterministic() {
    let run = |threads: &str| {
        Command::new(env!("CARGO_BIN_EXE_zinfer"))
            .args(["simulate", "--model", "mar-shared", "--n-dgps", "300", "--seed", "11"])
            .env("ZINFER_THREADS", threads)
            .output()
            .unwrap()
    };
    let (a, b) = (run("1"), run("4"));
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    let v: Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(v["passed"], 300);
}

#[test]
fn verify_gap() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "fx.json", FIXTURE);
    let v = json(&zinfer(&["verify", f.to_str().unwrap(), "--model", "mcar", "--grid", "100000"]));
    assert!(v["max_gap"].as_f64().unwrap() <= 2e-5);
    let out = zinfer(&["verify", f.to_str().unwrap(), "--model", "mcar", "--grid", "100"]);
    assert_eq!(code(&out), 0);
    assert!(json(&out)["max_gap"].as_f64().unwrap() <= 0.02);
    assert_eq!(code(&zinfer(&["verify", f.to_str().unwrap(), "--model", "mcar", "--grid", "10"])), 1);
}

#[test]
fn nonid_demo() {
    let v = json(&zinfer(&["nonid-demo"]));
    assert!(v["observed_gap"].as_f64().unwrap() <= 1e-12);
    assert!(v["target_gap"].as_f64().unwrap() >= 0.05);
    assert_eq!(code(&zinfer(&["nonid-demo", "--m", "0.5"])), 1);
}

#[test]
fn output_file_and_precision() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "fx.json", FIXTURE);
    let out = dir.path().join("b.csv");
    let o = zinfer(&["bounds", f.to_str().unwrap(), "--model", "mcar", "--format", "csv", "--output", out.to_str().unwrap()]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.lines().nth(1).unwrap().contains(",0.476923,"));
    let full = json(&zinfer(&["bounds", f.to_str().unwrap(), "--model", "mcar", "--precision", "full"]));
    assert!(close(&full["interval"][0], 0.31 / 0.65, 1e-15));
}
