use serde_json::Value;
use zinfer_web::{analyze_json, forward_json, random_dgp_json};

fn parse(s: String) -> Value {
    serde_json::from_str(&s).unwrap()
}

#[test]
fn forward_then_analyze_fixture() {
    let f = parse(forward_json(&[0.5, 0.5], 0.3, 0.8, 0.2).unwrap());
    let row = |w: usize| -> Vec<f64> { f["wx"][w].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect() };
    let a = parse(analyze_json(&row(0), &row(1), 200).unwrap());
    assert!((a["interval"]["lower"].as_f64().unwrap() - 0.31 / 0.65).abs() < 1e-12);
    assert!((a["target_range"][1][0].as_f64().unwrap() - 0.451613).abs() < 1e-6);
    assert_eq!(a["curve"].as_array().unwrap().len(), 201);
}

#[test]
fn errors_are_messages() {
    assert!(analyze_json(&[0.2, 0.1, 0.3], &[0.2, 0.1, 0.1], 50).unwrap_err().contains("falsifies"));
    assert!(forward_json(&[1.0], 0.3, 0.8, 0.2).is_err());
    assert!(analyze_json(&[0.31, 0.07], &[0.34, 0.28], 1).is_err());
}

#[test]
fn random_dgp_is_reproducible() {
    let a = random_dgp_json(3, 7).unwrap();
    assert_eq!(a, random_dgp_json(3, 7).unwrap());
    let v = parse(a);
    let q0 = v["q0"].as_f64().unwrap();
    let row = |w: usize| -> Vec<f64> { v["wx"][w].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect() };
    let b = parse(analyze_json(&row(0), &row(1), 100).unwrap());
    let iv = &b["interval"];
    assert!(iv["lower"].as_f64().unwrap() - 1e-12 <= q0 && q0 <= iv["upper"].as_f64().unwrap() + 1e-12);
}
