//! Browser bindings: steer one distribution, sweep γ on a synthetic task,
//! and draw a PCA dimensionality curve. Results cross the boundary as JSON.

use rcsteer::dataset::{fit_normalizer, split_grouped, SplitSpec};
use rcsteer::diagnostics::dimensionality_curve;
use rcsteer::labels::{dataset_labels, OptionProbs};
use rcsteer::metrics::{report, CalibrationReport, DEFAULT_BINS};
use rcsteer::probes::{fit_ridge, r_squared};
use rcsteer::steering::{center_residuals, probe_outputs, steer_probs, sweep_gamma_outputs, Fallback};
use rcsteer::synth::{gen_task, SynthConfig};
use serde::Serialize;
use wasm_bindgen::prelude::*;

type Res<T> = Result<T, String>;

fn js<T>(r: Res<T>) -> Result<T, JsError> {
    r.map_err(|e| JsError::new(&e))
}

fn s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Steer `probs` with raw residual predictions (centered here) at strength `gamma`.
pub fn steer_core(probs: &[f64], residuals: &[f64], gamma: f64) -> Res<Vec<f64>> {
    let z: f64 = probs.iter().sum();
    if probs.is_empty() || !(z > 0.0) {
        return Err("probabilities must be non-empty with a positive sum".into());
    }
    let p = OptionProbs(probs.iter().map(|v| v / z).collect());
    Ok(steer_probs(&p, &center_residuals(residuals), gamma, Fallback::Unsteered).map_err(s)?.0)
}

#[wasm_bindgen]
pub fn steer(probs: Vec<f64>, residuals: Vec<f64>, gamma: f64) -> Result<Vec<f64>, JsError> {
    js(steer_core(&probs, &residuals, gamma))
}

#[derive(Serialize)]
pub struct GammaPoint {
    pub gamma: f64,
    pub accuracy: f64,
    pub ece: f64,
    pub brier: f64,
}

#[derive(Serialize)]
pub struct GammaDemo {
    pub probe_r2: f64,
    pub best_gamma: f64,
    pub curve: Vec<GammaPoint>,
    pub base: CalibrationReport,
    pub steered: CalibrationReport,
}

fn synth(n_questions: usize, d_model: usize, signal_dims: usize, seed: u64) -> SynthConfig {
    SynthConfig {
        n_questions,
        d_model,
        signal_dims: signal_dims.min(d_model / 2).max(1),
        seed,
        ..SynthConfig::default()
    }
}

/// Synthetic task, ridge residual probe on the train split, γ picked on val,
/// curve and reliability tables reported on test.
pub fn gamma_demo_core(
    n_questions: usize,
    d_model: usize,
    signal_dims: usize,
    ridge_alpha: f64,
    seed: u64,
    gammas: &[f64],
) -> Res<GammaDemo> {
    let task = gen_task(&synth(n_questions, d_model, signal_dims, seed)).map_err(s)?;
    let spec = SplitSpec::new(0.7, 0.15, 0.15, seed).map_err(s)?;
    let (tr, va, te) = split_grouped(task.dataset(), &spec).map_err(s)?;
    let norm = fit_normalizer(&tr).map_err(s)?;
    let y = dataset_labels(&tr, false).map_err(s)?.residuals;
    let z = norm.apply_rows(tr.activations()).map_err(s)?;
    let ridge = fit_ridge(&z, &y, tr.d_model(), ridge_alpha).map_err(s)?;

    let yv = dataset_labels(&va, false).map_err(s)?.residuals;
    let pv: Vec<f32> = ridge
        .predict(&norm.apply_rows(va.activations()).map_err(s)?)
        .into_iter()
        .map(|v| v as f32)
        .collect();
    let probe_r2 = r_squared(&pv, &yv).map_err(s)?;

    let val = probe_outputs(&va, &ridge, &norm, false).map_err(s)?;
    let best_gamma = sweep_gamma_outputs(&val, gammas, Fallback::Unsteered, DEFAULT_BINS)
        .map_err(s)?
        .best_gamma;
    let test = probe_outputs(&te, &ridge, &norm, false).map_err(s)?;
    let sweep = sweep_gamma_outputs(&test, gammas, Fallback::Unsteered, DEFAULT_BINS).map_err(s)?;
    let base = report(&test.base_eval().map_err(s)?, DEFAULT_BINS).map_err(s)?;
    let steered = sweep
        .rows
        .iter()
        .find(|r| r.gamma == best_gamma)
        .map(|r| r.report.clone())
        .ok_or("best γ missing from the test sweep")?;
    let curve = sweep
        .rows
        .iter()
        .map(|r| GammaPoint {
            gamma: r.gamma,
            accuracy: r.report.accuracy,
            ece: r.report.ece,
            brier: r.report.brier,
        })
        .collect();
    Ok(GammaDemo {
        probe_r2,
        best_gamma,
        curve,
        base,
        steered,
    })
}

#[wasm_bindgen]
pub fn gamma_demo(
    n_questions: usize,
    d_model: usize,
    signal_dims: usize,
    ridge_alpha: f64,
    seed: u64,
    gammas: Vec<f64>,
) -> Result<String, JsError> {
    let d = js(gamma_demo_core(n_questions, d_model, signal_dims, ridge_alpha, seed, &gammas))?;
    js(serde_json::to_string(&d).map_err(s))
}

/// Cross-validated ridge R² on the top-k principal components of a synthetic task.
pub fn dim_curve_core(
    n_questions: usize,
    d_model: usize,
    signal_dims: usize,
    seed: u64,
    ks: &[usize],
) -> Res<rcsteer::diagnostics::DimCurve> {
    let task = gen_task(&synth(n_questions, d_model, signal_dims, seed)).map_err(s)?;
    let ds = task.dataset();
    let y = dataset_labels(ds, false).map_err(s)?.residuals;
    let n = ds.n_options();
    let groups: Vec<usize> = (0..ds.n_rows()).map(|r| r / n).collect();
    let ks: Vec<usize> = ks.iter().copied().filter(|&k| k >= 1 && k <= d_model).collect();
    dimensionality_curve(ds.activations(), &y, d_model, &groups, &ks, 1.0, 5, seed).map_err(s)
}

#[wasm_bindgen]
pub fn dim_curve(
    n_questions: usize,
    d_model: usize,
    signal_dims: usize,
    seed: u64,
    ks: Vec<usize>,
) -> Result<String, JsError> {
    let c = js(dim_curve_core(n_questions, d_model, signal_dims, seed, &ks))?;
    js(serde_json::to_string(&c).map_err(s))
}
