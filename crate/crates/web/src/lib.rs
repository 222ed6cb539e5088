//! Browser bindings for three small PVI demos. Every operation returns a JSON
//! string so the page can stay plain JavaScript.

use pvi_core::experiment::{execute, RunConfig};
use pvi_core::models::{generate_normal_data, normal_location_model};
use pvi_core::scores::{crps_objective, log_score_objective, McBatch};
use pvi_core::{Family, PviError, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn toy_config(score: &str, sigma_true: f64, n: usize, iterations: usize, seed: u64) -> Result<RunConfig> {
    let minibatch = n.min(100);
    RunConfig::from_json(&format!(
        r#"{{
        "model": {{"name": "normal_location"}},
        "data": {{"source": "normal", "n": {n}, "sigma_true": {sigma_true}}},
        "family": {{"kind": "gaussian_diag", "dim": 1}},
        "run": {{
            "score": "{score}",
            "optimizer": {{
                "schedule": {{"kind": "warmup_cosine", "peak_lr": 0.05, "floor_lr": 0.001, "warmup_iters": 100, "total_iters": {iterations}}},
                "iterations": {iterations}, "mc_size": 50, "minibatch": {minibatch}, "log_stride": 50
            }}
        }},
        "seed": {seed}
    }}"#
    ))
}

/// Fits the normal location toy by PVI and returns the trace and final moments.
pub fn toy_fit(score: &str, sigma_true: f64, n: usize, iterations: usize, seed: u64) -> Result<Value> {
    let cfg = toy_config(score, sigma_true, n, iterations, seed)?;
    cfg.validate()?;
    let out = execute(&cfg)?;
    let s = &out.summary;
    Ok(json!({
        "mean": s.final_mean[0],
        "std": s.final_std[0],
        "target_std": (sigma_true * sigma_true - 1.0).max(0.0).sqrt(),
        "posterior_std": 1.0 / (n as f64 + 1.0).sqrt(),
        "flagged": s.flagged_iterations,
        "trace": out.trace.records.iter().map(|r| json!([r.iter, r.objective])).collect::<Vec<_>>(),
    }))
}

/// Monte Carlo log score and negated CRPS of `q = N(0, sigma)` on toy data,
/// over a grid of `sigma`.
pub fn score_curves(sigma_true: f64, n: usize, points: usize, seed: u64) -> Result<Value> {
    if points < 2 {
        return Err(PviError::Config("need at least two grid points".into()));
    }
    let model = normal_location_model();
    let family = Family::GaussianDiag { dim: 1 };
    let data = generate_normal_data(n, sigma_true, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lik = McBatch::for_likelihood(&family, 2000, &mut rng)?;
    let sim = McBatch::for_simulation(&family, &model, 2000, &mut rng)?;
    let mut rows = Vec::with_capacity(points);
    for k in 0..points {
        let sigma = 0.05 + 3.0 * k as f64 / (points - 1) as f64;
        let phi = family.gaussian_params(&[0.0], &[sigma.ln()])?.into_values();
        let log = log_score_objective(&model, &family, &phi, &data, &lik)?.value;
        let crps = crps_objective(&model, &family, &phi, &data, &sim)?.value;
        rows.push(json!([sigma, log, crps]));
    }
    Ok(json!({ "sigma_true": sigma_true, "rows": rows }))
}

/// CRPS-PVI with a spline family on the sum-of-squares simulator; returns the
/// KS distance to the true population and a histogram of `|beta|` draws.
pub fn simulator_fit(n: usize, iterations: usize, seed: u64) -> Result<Value> {
    let cfg = RunConfig::from_json(&format!(
        r#"{{
        "model": {{"name": "sum_of_squares", "rows": 10, "dim": 1}},
        "data": {{"source": "sum_of_squares", "n": {n}, "rows": 10}},
        "family": {{"kind": "spline1d", "knots": 10, "bound": 6.0}},
        "run": {{
            "score": "crps",
            "optimizer": {{
                "schedule": {{"kind": "warmup_cosine", "peak_lr": 0.02, "floor_lr": 0.0005, "warmup_iters": 100, "total_iters": {iterations}}},
                "iterations": {iterations}, "mc_size": 50, "minibatch": {}, "log_stride": 50
            }}
        }},
        "seed": {seed}
    }}"#,
        n.min(100)
    ))?;
    cfg.validate()?;
    let out = execute(&cfg)?;
    let family = cfg.family.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let draws = family.sample_many(&out.trace.final_phi, 4000, &mut rng)?;
    let (bins, width) = (40usize, 5.0 / 40.0);
    let mut counts = vec![0usize; bins];
    for d in &draws {
        let b = (d[0].abs() / width) as usize;
        if b < bins {
            counts[b] += 1;
        }
    }
    let density: Vec<f64> = counts.iter().map(|c| *c as f64 / (draws.len() as f64 * width)).collect();
    Ok(json!({
        "ks": out.summary.ks_to_truth,
        "bin_width": width,
        "density": density,
        "trace": out.trace.records.iter().map(|r| json!([r.iter, r.objective])).collect::<Vec<_>>(),
    }))
}

fn to_js(r: Result<Value>) -> std::result::Result<String, JsValue> {
    r.map(|v| v.to_string()).map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen(js_name = toyFit)]
pub fn toy_fit_js(score: &str, sigma_true: f64, n: usize, iterations: usize, seed: u32) -> std::result::Result<String, JsValue> {
    to_js(toy_fit(score, sigma_true, n, iterations, seed as u64))
}

#[wasm_bindgen(js_name = scoreCurves)]
pub fn score_curves_js(sigma_true: f64, n: usize, points: usize, seed: u32) -> std::result::Result<String, JsValue> {
    to_js(score_curves(sigma_true, n, points, seed as u64))
}

#[wasm_bindgen(js_name = simulatorFit)]
pub fn simulator_fit_js(n: usize, iterations: usize, seed: u32) -> std::result::Result<String, JsValue> {
    to_js(simulator_fit(n, iterations, seed as u64))
}
