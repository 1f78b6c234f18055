//! wasm-bindgen surface for the static demo page. Every export takes plain
//! numbers or a TOML string and returns JSON text.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use facar::cancellation::cancellation_example;
use facar::eval::{preset, run_experiment, ExperimentConfig};
use facar::oracle::{linspace, rate_oracle, RateMethod};

#[derive(Serialize)]
struct RateCurves {
    r: Vec<f64>,
    car: Vec<f64>,
    mr: Vec<f64>,
    lsr: Vec<f64>,
}

/// `eta*` of each method as a function of `r` at fixed `(theta, h)`.
pub fn rate_curves_json(theta: f64, h: f64, r_max: f64, points: usize) -> Result<String, String> {
    if !(2..=2000).contains(&points) {
        return Err("points must lie in [2, 2000]".into());
    }
    if r_max.is_nan() || r_max <= 0.0 {
        return Err("r_max must be positive".into());
    }
    let r = linspace(r_max / points as f64, r_max, points);
    let mut out = RateCurves { r: r.clone(), car: Vec::new(), mr: Vec::new(), lsr: Vec::new() };
    for &ri in &r {
        let o = rate_oracle(theta, ri, h).map_err(|e| e.to_string())?;
        out.car.push(o.eta_star(RateMethod::Car));
        out.mr.push(o.eta_star(RateMethod::Mr));
        out.lsr.push(o.eta_star(RateMethod::Lsr));
    }
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Cancellation {
    /// 1-based variable labels.
    variable: Vec<usize>,
    beta_over_tau: Vec<f64>,
    mr: Vec<f64>,
    mr_rank: Vec<usize>,
    facar: Vec<f64>,
    facar_rank: Vec<usize>,
}

/// Scores of the noiseless blockwise example with 3 blocks.
pub fn cancellation_json(a: f64, h: f64, delta: f64) -> Result<String, String> {
    let ex = cancellation_example(a, h, delta, 3).map_err(|e| e.to_string())?;
    let p = ex.beta.len();
    let out = Cancellation {
        variable: (1..=p).collect(),
        beta_over_tau: ex.beta.iter().map(|b| b / ex.tau).collect(),
        mr: (0..p).map(|j| ex.scaled_mr(j)).collect(),
        mr_rank: ex.mr.ranks(),
        facar: (0..p).map(|j| ex.scaled_facar(j)).collect(),
        facar_rank: ex.facar.ranks(),
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct MethodSummary {
    method: String,
    fpr: Vec<f64>,
    tpr: Vec<f64>,
    sp: f64,
    type2_mean: f64,
    size_median: f64,
    reps_failed: usize,
}

/// Run a (small) experiment from TOML and return averaged ROC curves.
pub fn simulate_json(config_toml: &str) -> Result<String, String> {
    let config = ExperimentConfig::from_toml_str(config_toml).map_err(|e| e.to_string())?;
    if config.n * config.p * config.reps > 20_000_000 {
        return Err("setting too large for the browser; reduce reps, n or p".into());
    }
    let result = run_experiment(&config).map_err(|e| e.to_string())?;
    let out: Vec<MethodSummary> = result
        .reports
        .iter()
        .map(|r| MethodSummary {
            method: r.method.to_string(),
            fpr: r.roc.iter().map(|pt| pt.0).collect(),
            tpr: r.roc.iter().map(|pt| pt.1).collect(),
            sp: r.sp,
            type2_mean: r.type2_mean,
            size_median: r.size_median,
            reps_failed: r.reps_failed,
        })
        .collect();
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

/// Default config shown in the page's editor.
pub fn demo_config() -> String {
    let mut config = ExperimentConfig::from_toml_str(preset("roc_autoreg_200_1000_3_20").expect("bundled"))
        .expect("bundled preset parses");
    config.n = 100;
    config.p = 300;
    config.reps = 10;
    config.retain = 100;
    if let facar::eval::SignalSpec::Fixed { ref mut s, .. } = config.signal {
        *s = 10;
    }
    config.to_toml()
}

#[wasm_bindgen]
pub fn rate_curves(theta: f64, h: f64, r_max: f64, points: usize) -> Result<String, JsValue> {
    rate_curves_json(theta, h, r_max, points).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn cancellation(a: f64, h: f64, delta: f64) -> Result<String, JsValue> {
    cancellation_json(a, h, delta).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn simulate(config_toml: &str) -> Result<String, JsValue> {
    simulate_json(config_toml).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn default_config() -> String {
    demo_config()
}
