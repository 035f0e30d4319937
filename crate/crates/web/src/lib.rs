//! Browser bindings: each export takes a model as JSON text and returns a
//! JSON report, or throws with the error message.

use mapfluct::reflection::{reflect_two_sided, verify_barrier_identity};
use mapfluct::scale::{scale_matrices, verify_strong_markov};
use mapfluct::{first_passage, MapModel, SpectralConfig};
use nalgebra::DMatrix;
use serde_json::json;
use wasm_bindgen::prelude::*;

fn model(text: &str) -> Result<MapModel, String> {
    MapModel::from_json(text).map_err(|e| e.to_string())
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// `Λ`, `Π` and the probability of ever reaching `x` from each state, on
/// `points` levels in `[0, x_max]`.
pub fn passage_report(text: &str, q: f64, x_max: f64, points: usize) -> Result<String, String> {
    let m = model(text)?;
    let fp = first_passage(&m, q, &SpectralConfig::default()).map_err(|e| e.to_string())?;
    let points = points.max(2);
    let mut levels = Vec::with_capacity(points);
    let mut mass = Vec::with_capacity(points);
    for k in 0..points {
        let x = x_max * k as f64 / (points - 1) as f64;
        let p = fp.passage_from_all(x).map_err(|e| e.to_string())?;
        levels.push(x);
        mass.push(p.column_sum().iter().copied().collect::<Vec<_>>());
    }
    Ok(json!({
        "Lambda": rows(&fp.lambda),
        "Pi": rows(&fp.pi),
        "plus_states": fp.plus,
        "kappa": m.kappa(),
        "levels": levels,
        "mass": mass,
    })
    .to_string())
}

/// Local times at both barriers of the process reflected on `[0, b]`.
pub fn two_sided_report(text: &str, b: f64) -> Result<String, String> {
    let m = model(text)?;
    let cfg = SpectralConfig::default();
    let law = reflect_two_sided(&m, b, &cfg).map_err(|e| e.to_string())?;
    let barrier_identity = verify_barrier_identity(&m, &law, &cfg).map_err(|e| e.to_string())?;
    serde_json::to_string(&law.report(barrier_identity.residual)).map_err(|e| e.to_string())
}

/// Exit matrices `C`, `D` of the interval `(−b, a)`.
pub fn exit_report(text: &str, q: f64, a: f64, b: f64) -> Result<String, String> {
    let m = model(text)?;
    let cfg = SpectralConfig::default();
    let sm = scale_matrices(&m, q, a, b, &cfg).map_err(|e| e.to_string())?;
    let check = verify_strong_markov(&m, &sm, &cfg).map_err(|e| e.to_string())?;
    serde_json::to_string(&sm.report(Some(check))).map_err(|e| e.to_string())
}

#[wasm_bindgen(js_name = firstPassage)]
pub fn first_passage_js(model: &str, q: f64, x_max: f64, points: usize) -> Result<String, JsError> {
    passage_report(model, q, x_max, points).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = twoSided)]
pub fn two_sided_js(model: &str, b: f64) -> Result<String, JsError> {
    two_sided_report(model, b).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = exitMatrices)]
pub fn exit_js(model: &str, q: f64, a: f64, b: f64) -> Result<String, JsError> {
    exit_report(model, q, a, b).map_err(|e| JsError::new(&e))
}
