//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Each exported function takes plain numbers and returns a JSON string,
//! so the page needs no bundler or generated typings.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use cran_cache::admm::project_cache_simplex_box;
use cran_cache::baselines::{proportional_allocation, uniform_allocation};
use cran_cache::channel::{BsGeometry, ChannelModel, ChannelParams, SampleRole};
use cran_cache::evaluation::{evaluate_single, EvalOptions};
use cran_cache::rate::CacheAllocation;
use cran_cache::system::{ObjectiveSense, SystemConfig};
use cran_cache::trust_region::{optimize_cache_single, TrustRegionOptions};

type DemoResult<T> = Result<T, String>;

#[derive(Serialize)]
struct Projection {
    values: Vec<f64>,
    mu: f64,
    total: f64,
}

/// Euclidean projection of `a` onto `{sum <= budget, lower <= c <= upper}`.
pub fn projection(a: &[f64], budget: f64, lower: &[f64], upper: &[f64]) -> DemoResult<String> {
    let p = project_cache_simplex_box(a, budget, lower, upper).map_err(|e| e.to_string())?;
    let total = p.values.iter().sum();
    to_json(&Projection {
        values: p.values,
        mu: p.mu,
        total,
    })
}

fn system(num_bs: usize, antennas: usize, total_cache: f64) -> SystemConfig {
    SystemConfig {
        num_bs,
        antennas,
        total_cache,
        ..SystemConfig::default()
    }
}

fn model(distances_m: &[f64], config: &SystemConfig, seed: u64) -> DemoResult<ChannelModel> {
    let geometry = BsGeometry::new(distances_m.to_vec()).map_err(|e| e.to_string())?;
    config.validate().map_err(|e| e.to_string())?;
    ChannelModel::new(&geometry, config, &ChannelParams::default(), seed).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Baselines {
    average_gain_db: Vec<f64>,
    uniform: Vec<f64>,
    proportional: Vec<f64>,
}

/// Average link gains and the two closed-form allocations for a geometry.
pub fn baselines(distances_m: &[f64], antennas: usize, total_cache: f64) -> DemoResult<String> {
    let config = system(distances_m.len(), antennas, total_cache);
    let gains = model(distances_m, &config, 0)?.average_gains();
    let proportional = proportional_allocation(&gains, &config).map_err(|e| e.to_string())?;
    to_json(&Baselines {
        average_gain_db: gains.iter().map(|g| 10.0 * g.log10()).collect(),
        uniform: uniform_allocation(&config).column(0),
        proportional: proportional.column(0),
    })
}

#[derive(Serialize)]
struct SchemeRow {
    scheme: &'static str,
    cache: Vec<f64>,
    mean_ms_per_mb: f64,
    p90_ms_per_mb: f64,
}

/// Optimizes on `train` sampled channels and compares the result with the
/// baselines on `test` held-out channels.
pub fn comparison(
    distances_m: &[f64],
    antennas: usize,
    total_cache: f64,
    train: usize,
    test: usize,
    seed: u64,
) -> DemoResult<String> {
    let config = system(distances_m.len(), antennas, total_cache);
    let model = model(distances_m, &config, seed)?;
    let err = |e: cran_cache::Error| e.to_string();
    let train_set = model.sample(SampleRole::Train, 0, train).map_err(err)?;
    let test_set = model.sample(SampleRole::Test, 0, test).map_err(err)?;
    let (optimized, _) = optimize_cache_single(
        &train_set,
        &config,
        ObjectiveSense::Time,
        &TrustRegionOptions::default(),
    )
    .map_err(err)?;
    let proportional = proportional_allocation(&model.average_gains(), &config).map_err(err)?;
    let schemes: [(&'static str, CacheAllocation); 3] = [
        ("Uniform", uniform_allocation(&config)),
        ("Proportional", proportional),
        ("Optimized", optimized),
    ];
    let options = EvalOptions {
        percentiles: vec![90.0],
        ..EvalOptions::default()
    };
    let rows = schemes
        .into_iter()
        .map(|(scheme, alloc)| {
            let report = evaluate_single(&test_set, &alloc, &config, &options).map_err(err)?;
            Ok(SchemeRow {
                scheme,
                mean_ms_per_mb: report.mean_time_ms_per_mb,
                p90_ms_per_mb: report.time_percentile_ms_per_mb(90.0).unwrap_or(f64::NAN),
                cache: alloc.column(0),
            })
        })
        .collect::<DemoResult<Vec<_>>>()?;
    to_json(&rows)
}

fn to_json(value: &impl Serialize) -> DemoResult<String> {
    serde_json::to_string(value).map_err(|e| e.to_string())
}

#[wasm_bindgen(js_name = projectCache)]
pub fn project_cache_js(a: Vec<f64>, budget: f64, lower: Vec<f64>, upper: Vec<f64>) -> Result<String, JsError> {
    projection(&a, budget, &lower, &upper).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = baselineAllocations)]
pub fn baselines_js(distances_m: Vec<f64>, antennas: usize, total_cache: f64) -> Result<String, JsError> {
    baselines(&distances_m, antennas, total_cache).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = compareSchemes)]
pub fn comparison_js(
    distances_m: Vec<f64>,
    antennas: usize,
    total_cache: f64,
    train: usize,
    test: usize,
    seed: u32,
) -> Result<String, JsError> {
    comparison(&distances_m, antennas, total_cache, train, test, seed.into()).map_err(|e| JsError::new(&e))
}
