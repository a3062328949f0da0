//! Browser bindings for the zinfer demo page (`www/index.html`).
//!
//! Every export takes and returns JSON strings. The `*_json` functions hold
//! the logic and run natively in tests; the `#[wasm_bindgen]` wrappers only
//! convert errors.

use serde::Serialize;
use serde_json::json;
use wasm_bindgen::prelude::*;

use zinfer::bounds::{bound, BoundOptions, Model};
use zinfer::downstream::sensitivity_curve_from_report;
use zinfer::simulate::{sample_dgp, Dgp, DgpModel};
use zinfer::{BinaryChannel, ObservedLaw};

type Out = Result<String, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn to_json(v: &impl Serialize) -> Out {
    serde_json::to_string(v).map_err(err)
}

fn wx(law: &ObservedLaw) -> [Vec<f64>; 2] {
    let nx = law.x_card(0);
    [0, 1].map(|w| (0..nx).map(|x| law.prob(&[x], &[w], 0)).collect())
}

/// Observed law p(W, X) of the unstratified model with p(X(1)) = `target`,
/// p(R = 0) = `p_r0` and channel (`q0`, `q1`).
pub fn forward_json(target: &[f64], p_r0: f64, q0: f64, q1: f64) -> Out {
    let s: f64 = target.iter().sum();
    if target.len() < 2 || !(s > 0.0) || target.iter().any(|&v| v < 0.0) {
        return Err("p(X(1)) needs at least two nonnegative weights".into());
    }
    let target = target.iter().map(|v| v / s).collect();
    let dgp = Dgp::mcar(target, p_r0, BinaryChannel::new(q0, q1).map_err(err)?).map_err(err)?;
    to_json(&json!({ "wx": wx(&dgp.observed_law()), "target": dgp.target_law().probs() }))
}

/// Bound and sensitivity curve for an observed law given as rows p(w, ·).
pub fn analyze_json(w0: &[f64], w1: &[f64], grid: usize) -> Out {
    if !(2..=5000).contains(&grid) {
        return Err("grid must lie in 2..=5000".into());
    }
    let law = ObservedLaw::from_wx([w0, w1]).map_err(err)?;
    let report = bound(&law, Model::Mcar, BoundOptions::default()).map_err(err)?;
    let curve = sensitivity_curve_from_report(&law, &report, grid).map_err(err)?;
    let e = &report.entries[0];
    let ranges: Vec<_> = (0..law.x_card(0)).map(|x| curve.target_range(x)).collect();
    to_json(&json!({
        "q_w0_r1": e.q_w0_given_r1,
        "interval": e.interval,
        "label": e.interval.to_string(),
        "r0_interval": e.r0_interval,
        "target_range": ranges,
        "curve": curve.points.iter().filter(|p| p.feasible).map(|p| json!({
            "q": p.q_w0_r0,
            "p_r0": p.p_r0,
            "target": p.target,
        })).collect::<Vec<_>>(),
    }))
}

/// Random unstratified DGP number `index` for `seed`, with its observed law.
pub fn random_dgp_json(seed: u32, index: u32) -> Out {
    let dgp = sample_dgp(DgpModel::Mcar, seed as u64, index as u64);
    to_json(&json!({
        "p_r0": dgp.p_r0(0),
        "target": dgp.target_law().probs(),
        "q0": dgp.true_q0(0, 0),
        "q1": dgp.true_q1(0, 0),
        "wx": wx(&dgp.observed_law()),
    }))
}

#[wasm_bindgen]
pub fn forward(target: Vec<f64>, p_r0: f64, q0: f64, q1: f64) -> Result<String, JsError> {
    forward_json(&target, p_r0, q0, q1).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn analyze(w0: Vec<f64>, w1: Vec<f64>, grid: usize) -> Result<String, JsError> {
    analyze_json(&w0, &w1, grid).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = randomDgp)]
pub fn random_dgp(seed: u32, index: u32) -> Result<String, JsError> {
    random_dgp_json(seed, index).map_err(|e| JsError::new(&e))
}
