//! WebAssembly front end: three small experiments that return JSON for the
//! static page in `www/`. The `*_json` functions are plain Rust so they can
//! be tested natively; the `#[wasm_bindgen]` wrappers only forward.

use geophase::ensemble::{compare_gauges, run_ensemble, EnsembleSpec, EnsembleStats, InitialEnsemble};
use geophase::lindblad::DephasingSpinModel;
use geophase::phase::{average_intensity, fit_fringe};
use geophase::sse::{SdeConfig, UnravellingGauge};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Upper bound on `n_traj * steps * gauges`, keeping one call well under a
/// few seconds in a browser tab.
pub const WORK_LIMIT: f64 = 2.0e8;

#[derive(Debug, Clone, Copy)]
pub struct Params {
    pub mu_b: f64,
    pub lambda: f64,
    pub theta: f64,
    pub t_final: f64,
    pub dt: f64,
    pub n_traj: usize,
    pub seed: u64,
}

fn nan_to_none(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

fn run(p: &Params, phis: &[f64], final_only: bool) -> Result<(DephasingSpinModel, Vec<EnsembleStats>), String> {
    let model = DephasingSpinModel::new(p.mu_b, p.lambda, p.theta).map_err(|e| e.to_string())?;
    let mut sde = SdeConfig::covering(p.t_final, p.dt).map_err(|e| e.to_string())?;
    let work = p.n_traj as f64 * sde.steps() as f64 * phis.len() as f64;
    if work > WORK_LIMIT {
        return Err(format!("requested work {work:.2e} exceeds the demo limit {WORK_LIMIT:.0e}"));
    }
    let stride = if final_only { sde.steps().max(1) } else { (sde.steps() / 200).max(1) };
    sde = sde.with_stride(stride).map_err(|e| e.to_string())?;
    let gauges = phis
        .iter()
        .map(|&phi| UnravellingGauge::uniform(1, phi))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let initial = InitialEnsemble::pure(model.initial_state()).map_err(|e| e.to_string())?;
    let spec = EnsembleSpec::new(model.lindblad(), gauges[0].clone(), initial, sde, p.n_traj, p.seed)
        .map_err(|e| e.to_string())?;
    let stats = if gauges.len() == 1 {
        vec![run_ensemble(&spec).map_err(|e| e.to_string())?]
    } else {
        compare_gauges(&spec, &gauges).map_err(|e| e.to_string())?.stats
    };
    Ok((model, stats))
}

#[derive(Serialize)]
struct ScanRow {
    phi: f64,
    total: Option<f64>,
    total_se: f64,
    dynamical: f64,
    dynamical_se: f64,
    geometric: Option<f64>,
    geometric_se: f64,
    visibility: f64,
}

/// Total, mean dynamical and geometric phase at `t_final` for `points`
/// gauge angles spread over `[0, π]`.
pub fn phase_scan_json(p: &Params, points: usize) -> Result<String, String> {
    if points < 2 {
        return Err("need at least two gauge angles".into());
    }
    let phis: Vec<f64> = (0..points).map(|k| std::f64::consts::PI * k as f64 / (points - 1) as f64).collect();
    let (_, stats) = run(p, &phis, true)?;
    let rows: Vec<ScanRow> = phis
        .iter()
        .zip(&stats)
        .map(|(&phi, s)| {
            let ps = s.phase_summary.as_ref().expect("dephasing model is diagonal");
            ScanRow {
                phi,
                total: ps.total.value,
                total_se: ps.total.stderr,
                dynamical: ps.dyn_phase_average.value,
                dynamical_se: ps.dyn_phase_average.stderr,
                geometric: ps.geo_by_phase.value,
                geometric_se: ps.geo_by_phase.stderr,
                visibility: ps.visibility.value,
            }
        })
        .collect();
    serde_json::to_string(&rows).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Moments {
    phi: f64,
    t: Vec<f64>,
    mean_sz: Vec<f64>,
    stderr_sz: Vec<f64>,
    mean_sz2: Vec<f64>,
    stderr_sz2: Vec<f64>,
}

/// `E<σz>` and `E<σz>²` curves for each listed gauge angle.
pub fn moments_json(p: &Params, phis: &[f64]) -> Result<String, String> {
    if phis.is_empty() {
        return Err("no gauge angles given".into());
    }
    let (_, stats) = run(p, phis, false)?;
    let curves: Vec<Moments> = phis
        .iter()
        .zip(stats)
        .map(|(&phi, s)| Moments {
            phi,
            t: s.times,
            mean_sz: s.mean_sz,
            stderr_sz: s.stderr_sz,
            mean_sz2: s.mean_sz2,
            stderr_sz2: s.stderr_sz2,
        })
        .collect();
    serde_json::to_string(&curves).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Fringe {
    chi: Vec<f64>,
    intensity: Vec<f64>,
    intensity_se: Vec<f64>,
    fit_visibility: Option<f64>,
    fit_phase: Option<f64>,
    visibility: f64,
    total_phase: Option<f64>,
}

/// Ensemble-averaged interference fringe over `points` analyser angles.
pub fn interference_json(p: &Params, phi: f64, points: usize) -> Result<String, String> {
    if points < 3 {
        return Err("need at least three analyser angles".into());
    }
    let chi: Vec<f64> = (0..points).map(|k| 2.0 * std::f64::consts::PI * k as f64 / points as f64).collect();
    let (model, stats) = run(p, &[phi], true)?;
    let s = &stats[0];
    let curve = average_intensity(&s.outcomes, model, p.t_final, &chi).map_err(|e| e.to_string())?;
    let intensity: Vec<f64> = curve.iter().map(|e| e.value).collect();
    let fit = fit_fringe(&chi, &intensity).map_err(|e| e.to_string())?;
    let ps = s.phase_summary.as_ref().expect("dephasing model is diagonal");
    let out = Fringe {
        intensity_se: curve.iter().map(|e| e.stderr).collect(),
        chi,
        intensity,
        fit_visibility: nan_to_none(fit.visibility),
        fit_phase: fit.phase,
        visibility: ps.visibility.value,
        total_phase: ps.total.value,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

fn params(mu_b: f64, lambda: f64, theta: f64, t_final: f64, dt: f64, n_traj: u32, seed: u32) -> Params {
    Params { mu_b, lambda, theta, t_final, dt, n_traj: n_traj as usize, seed: seed as u64 }
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn phase_scan(
    mu_b: f64,
    lambda: f64,
    theta: f64,
    t_final: f64,
    dt: f64,
    n_traj: u32,
    seed: u32,
    points: u32,
) -> Result<String, JsError> {
    phase_scan_json(&params(mu_b, lambda, theta, t_final, dt, n_traj, seed), points as usize)
        .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn moments(
    mu_b: f64,
    lambda: f64,
    theta: f64,
    t_final: f64,
    dt: f64,
    n_traj: u32,
    seed: u32,
    phis: Vec<f64>,
) -> Result<String, JsError> {
    moments_json(&params(mu_b, lambda, theta, t_final, dt, n_traj, seed), &phis).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn interference(
    mu_b: f64,
    lambda: f64,
    theta: f64,
    t_final: f64,
    dt: f64,
    n_traj: u32,
    seed: u32,
    phi: f64,
    points: u32,
) -> Result<String, JsError> {
    interference_json(&params(mu_b, lambda, theta, t_final, dt, n_traj, seed), phi, points as usize)
        .map_err(|e| JsError::new(&e))
}
