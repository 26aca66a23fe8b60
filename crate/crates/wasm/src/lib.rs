//! Browser demo bindings: JSON-producing wrappers around the sweep and
//! convergence experiments, driven from a static page. Scenarios arrive as
//! TOML text (the same format the CLI reads); results leave as JSON for
//! the canvas plots.

use serde_json::json;
use wasm_bindgen::prelude::*;

use dcsi_rzf::detequiv::DetEquivOptions;
use dcsi_rzf::experiments::{convergence_study, evaluate_algorithms, Algorithm, EvalOptions};
use dcsi_rzf::precoding::McOptions;
use dcsi_rzf::scenario::{parse_scenario, preset_asymmetric, preset_symmetric};
use dcsi_rzf::Scenario;

fn scenario_from(text: &str) -> Result<Scenario, JsError> {
    parse_scenario(text, None).map_err(|e| JsError::new(&e.to_string()))
}

fn map_err<T>(r: dcsi_rzf::Result<T>) -> Result<T, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

/// The bundled symmetric reference scenario as editable TOML.
#[wasm_bindgen]
pub fn default_scenario() -> String {
    preset_symmetric().to_canonical_toml()
}

/// The asymmetric variant (per-TX CSIT quality 0.01 / 0.16 / 0.49).
#[wasm_bindgen]
pub fn default_scenario_asymmetric() -> String {
    preset_asymmetric().to_canonical_toml()
}

fn algorithms_json(
    s: &Scenario,
    sweep_value: f64,
    trials: usize,
) -> Result<Vec<serde_json::Value>, JsError> {
    let opts = EvalOptions {
        trials,
        mc: McOptions::default(),
        optimizer: Default::default(),
    };
    let results = map_err(evaluate_algorithms(s, &Algorithm::ALL, &opts))?;
    Ok(results
        .into_iter()
        .map(|r| {
            json!({
                "x": sweep_value,
                "algorithm": r.algorithm.label(),
                "sum_rate_det": r.sum_rate_det,
                "sum_rate_mc": r.mc.as_ref().map(|m| m.sum_rate),
                "std_error": r.mc.as_ref().map(|m| m.std_error),
            })
        })
        .collect())
}

/// Deterministic (and optionally Monte-Carlo) sum rate of the five
/// algorithm variants as the cross-TX error correlation sweeps 0..1.
#[wasm_bindgen]
pub fn sweep_rho(scenario_toml: &str, steps: usize, trials: usize) -> Result<String, JsError> {
    let s = scenario_from(scenario_toml)?;
    if steps < 2 {
        return Err(JsError::new("need at least 2 sweep steps"));
    }
    let mut rows = Vec::new();
    for i in 0..steps {
        let rho = i as f64 / (steps - 1) as f64;
        let point = map_err(s.with_rho_scalar(rho))?;
        rows.extend(algorithms_json(&point, rho, trials)?);
    }
    Ok(json!({ "var": "rho", "rows": rows }).to_string())
}

/// Sum rate of the five algorithm variants over a total-power range in dB.
#[wasm_bindgen]
pub fn sweep_power(
    scenario_toml: &str,
    from_db: f64,
    to_db: f64,
    steps: usize,
    trials: usize,
) -> Result<String, JsError> {
    let s = scenario_from(scenario_toml)?;
    if steps < 2 || !(from_db < to_db) {
        return Err(JsError::new("need from_db < to_db and at least 2 steps"));
    }
    let mut rows = Vec::new();
    for i in 0..steps {
        let db = from_db + (to_db - from_db) * i as f64 / (steps - 1) as f64;
        let point = map_err(s.with_power_db(db))?;
        rows.extend(algorithms_json(&point, db, trials)?);
    }
    Ok(json!({ "var": "power_db", "rows": rows }).to_string())
}

/// Deviation between the deterministic equivalent and the Monte-Carlo sum
/// rate across user counts, for rho in {0, 0.81, 1} at alpha = 1/(beta P).
#[wasm_bindgen]
pub fn convergence(scenario_toml: &str, k_values: &str, trials: usize) -> Result<String, JsError> {
    let s = scenario_from(scenario_toml)?;
    let k_list: Vec<usize> = k_values
        .split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|e| JsError::new(&format!("bad k list '{k_values}': {e}")))?;
    let rows = map_err(convergence_study(
        &s,
        &k_list,
        &[0.0, 0.81, 1.0],
        trials.max(1),
        &McOptions::default(),
        &DetEquivOptions::default(),
    ))?;
    let rows: Vec<_> = rows
        .iter()
        .map(|r| {
            json!({
                "k_users": r.k_users,
                "rho": r.rho,
                "sum_rate_det": r.sum_rate_det,
                "sum_rate_mc": r.sum_rate_mc,
                "std_error": r.std_error,
                "abs_deviation": r.abs_deviation,
                "rel_deviation": r.rel_deviation,
            })
        })
        .collect();
    Ok(json!({ "var": "k_users", "rows": rows }).to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_scenario_parses_and_sweeps() {
        let toml = default_scenario();
        let s = parse_scenario(&toml, None).unwrap();
        assert_eq!(s.k_users(), 30);

        let out = sweep_rho(&toml, 3, 0).unwrap();
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["rows"].as_array().unwrap().len(), 15);
    }

    #[test]
    fn convergence_smoke() {
        let toml = default_scenario();
        let out = convergence(&toml, "6,12", 4).unwrap();
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["rows"].as_array().unwrap().len(), 6);
    }
}
