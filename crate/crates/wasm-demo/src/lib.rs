//! wasm-bindgen exports for the static page in `www/`. Every export has a
//! plain Rust twin returning `evagg::Result` so it can be tested natively.

use evagg::eta::eta;
use evagg::evaluate::heatmap;
use evagg::weights::{solve_minimax_regret, SolverConfig};
use evagg::{Error, ParameterSpace, Study, StudyPool, TargetSpec};
use wasm_bindgen::prelude::*;

const REMDESIVIR: &str = include_str!("../../../scenarios/remdesivir.csv");

pub const AGE_RANGE: (f64, f64) = (40.0, 80.0);
pub const FEMALE_RANGE: (f64, f64) = (0.34, 0.41);

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

/// `points` evenly spaced samples of eta on [0, a_max], flattened as
/// (a, eta, t_star) triples.
pub fn eta_samples(a_max: f64, points: usize) -> evagg::Result<Vec<f64>> {
    if !(a_max > 0.0) || !a_max.is_finite() || points < 2 {
        return Err(Error::Input("need a_max > 0 and at least two points".into()));
    }
    let mut out = Vec::with_capacity(3 * points);
    for i in 0..points {
        let a = a_max * i as f64 / (points - 1) as f64;
        let e = eta(a)?;
        out.extend([a, e.value, e.t_star]);
    }
    Ok(out)
}

/// Minimax regret weights for studies on a line under |tau_k - tau_l| <= c |x_k - x_l|.
/// Returns the K weights followed by bias, sd and maximum regret.
pub fn line_weights(x: &[f64], se: &[f64], x0: f64, c: f64) -> evagg::Result<Vec<f64>> {
    if x.len() != se.len() || x.is_empty() {
        return Err(Error::Input("x and se must be non-empty and of equal length".into()));
    }
    let studies = x
        .iter()
        .zip(se)
        .enumerate()
        .map(|(i, (x, s))| Study { id: format!("{}", i + 1), estimate: 0.0, se: *s, covariates: vec![*x] })
        .collect();
    let pool = StudyPool::new(studies, vec!["x".into()])?;
    let solved = solve_minimax_regret(&pool, &TargetSpec::new(vec![x0], 0.0), &ParameterSpace::LipschitzMetric { c }, &SolverConfig::default())?;
    let p = solved.profile;
    let mut out = solved.weights.into_vec();
    out.extend([p.bias, p.sd, p.max_regret]);
    Ok(out)
}

/// Minimax estimate over an age x female-share grid for the Remdesivir
/// trials, with both covariates standardized (ddof 0). Flattened as
/// (age, female, estimate) triples, age-major.
pub fn remdesivir_grid(c: f64, age_steps: usize, female_steps: usize) -> evagg::Result<Vec<f64>> {
    if age_steps < 2 || female_steps < 2 {
        return Err(Error::Input("each axis needs at least two steps".into()));
    }
    let raw = StudyPool::from_csv(REMDESIVIR.as_bytes())?;
    let (pool, std) = raw.standardized(&[0, 1], 0)?;
    let axis = |(lo, hi): (f64, f64), n: usize| (0..n).map(move |i| lo + (hi - lo) * i as f64 / (n - 1) as f64);
    let mut cells = Vec::with_capacity(age_steps * female_steps);
    for age in axis(AGE_RANGE, age_steps) {
        for female in axis(FEMALE_RANGE, female_steps) {
            cells.push((age, female, TargetSpec::new(std.apply(&[age, female]), 0.0)));
        }
    }
    let out = heatmap(&pool, &cells, &ParameterSpace::LipschitzMetric { c }, &SolverConfig::default())?;
    Ok(out.iter().flat_map(|h| [h.x, h.y, h.estimate]).collect())
}

#[wasm_bindgen(js_name = etaCurve)]
pub fn eta_curve(a_max: f64, points: usize) -> Result<Vec<f64>, JsError> {
    eta_samples(a_max, points).map_err(js)
}

#[wasm_bindgen(js_name = lipschitzWeights)]
pub fn lipschitz_weights(x: Vec<f64>, se: Vec<f64>, x0: f64, c: f64) -> Result<Vec<f64>, JsError> {
    line_weights(&x, &se, x0, c).map_err(js)
}

#[wasm_bindgen(js_name = remdesivirHeatmap)]
pub fn remdesivir_heatmap(c: f64, age_steps: usize, female_steps: usize) -> Result<Vec<f64>, JsError> {
    remdesivir_grid(c, age_steps, female_steps).map_err(js)
}
