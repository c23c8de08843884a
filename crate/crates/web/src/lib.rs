//! Browser bindings. Every entry point takes model source text and returns
//! a JSON string; errors come back as JS exceptions carrying a message.

use std::collections::BTreeMap;

use serde_json::{json, Value};
use shsmb::mcsim::{estimate_stationary, simulate, Observer, Scheme, SimConfig};
use shsmb::modelfile::{parse_model, parse_model_with};
use shsmb::models;
use shsmb::sdpbuild::{bound_at_order, cv2_bounds, parse_moment, prepare, BoundResult};
use shsmb::shs::ShsModel;
use shsmb::solver::{BuiltinIpm, SolveOptions};
use wasm_bindgen::prelude::*;

fn load(source: &str, overrides: &BTreeMap<String, f64>) -> Result<ShsModel, String> {
    if overrides.is_empty() {
        parse_model(source)
    } else {
        parse_model_with(source, overrides)
    }
    .map_err(|e| e.to_string())
}

fn finite(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn bound_row(r: &BoundResult) -> Value {
    json!({
        "order": r.order,
        "lower": finite(r.lower_value()),
        "upper": finite(r.upper_value()),
        "status": r.status().name(),
        "seconds": r.wall_time.as_secs_f64(),
        "trivial_lower_bound": r.trivial_lower_bound,
    })
}

fn one_bound(model: &ShsModel, moment: &str, order: u32) -> Result<BoundResult, String> {
    let sys = prepare(model).map_err(|e| e.to_string())?;
    let mu = parse_moment(&sys, moment).map_err(|e| e.to_string())?;
    bound_at_order(&sys, &mu, order, &BuiltinIpm, &SolveOptions::default(), &Default::default()).map_err(|e| e.to_string())
}

/// Names and sources of the bundled models.
pub fn bundled() -> String {
    let list: Vec<Value> = models::SOURCES.iter().map(|(n, s)| json!({ "name": n, "source": s })).collect();
    Value::Array(list).to_string()
}

/// Bounds on `E(moment)` for each order in `orders`.
pub fn order_sweep(source: &str, moment: &str, orders: &[u32]) -> Result<String, String> {
    let model = load(source, &BTreeMap::new())?;
    let mut rows = Vec::new();
    for &d in orders {
        rows.push(match one_bound(&model, moment, d) {
            Ok(r) => bound_row(&r),
            Err(e) => json!({ "order": d, "status": "error", "error": e }),
        });
    }
    Ok(Value::Array(rows).to_string())
}

/// Enclosure of the squared coefficient of variation of `var` as `param` varies.
pub fn cv2_sweep(source: &str, param: &str, values: &[f64], var: &str, order: u32) -> Result<String, String> {
    let mut rows = Vec::new();
    for &x in values {
        let model = load(source, &BTreeMap::from([(param.to_string(), x)]))?;
        let m1 = one_bound(&model, var, order)?;
        let m2 = one_bound(&model, &format!("{var}^2"), order)?;
        let cv = cv2_bounds((m1.lower_value(), m1.upper_value()), (m2.lower_value(), m2.upper_value()));
        rows.push(match cv {
            Ok((lo, hi)) => json!({
                "value": x,
                "lower": finite(lo),
                "upper": finite(hi),
                "status": m1.status().name(),
            }),
            Err(e) => json!({ "value": x, "status": "error", "error": e.to_string() }),
        });
    }
    Ok(Value::Array(rows).to_string())
}

/// Monte Carlo estimates with standard errors and effective sample sizes.
pub fn run_simulation(source: &str, moments: &[String], dt: f64, t_end: f64, paths: usize, seed: u64) -> Result<String, String> {
    let model = load(source, &BTreeMap::new())?;
    let sys = prepare(&model).map_err(|e| e.to_string())?;
    let monos = moments.iter().map(|m| parse_moment(&sys, m).map_err(|e| e.to_string())).collect::<Result<Vec<_>, _>>()?;
    let mut cfg = SimConfig::new(dt, t_end, t_end / 10.0, paths, seed);
    cfg.scheme = Scheme::EulerMaruyama;
    let ens = simulate(&model, &cfg, &Observer::new(&sys, monos)).map_err(|e| e.to_string())?;
    let est = estimate_stationary(&ens).map_err(|e| e.to_string())?;
    let rows: Vec<Value> = est
        .iter()
        .map(|e| json!({ "moment": e.moment, "mean": e.mean, "stderr": e.stderr, "ess": e.ess }))
        .collect();
    let modes: Vec<Value> =
        ens.modes.iter().zip(ens.occupancy()).map(|(m, p)| json!({ "mode": m, "occupancy": p })).collect();
    Ok(json!({ "estimates": rows, "modes": modes }).to_string())
}

#[wasm_bindgen(js_name = bundledModels)]
pub fn bundled_models() -> String {
    bundled()
}

#[wasm_bindgen(js_name = orderSweep)]
pub fn order_sweep_js(source: &str, moment: &str, orders: Vec<u32>) -> Result<String, JsError> {
    order_sweep(source, moment, &orders).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = cv2Sweep)]
pub fn cv2_sweep_js(source: &str, param: &str, values: Vec<f64>, var: &str, order: u32) -> Result<String, JsError> {
    cv2_sweep(source, param, &values, var, order).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = simulate)]
pub fn simulate_js(source: &str, moments: Vec<String>, dt: f64, t_end: f64, paths: usize, seed: u64) -> Result<String, JsError> {
    run_simulation(source, &moments, dt, t_end, paths, seed).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Value {
        serde_json::from_str(s).unwrap()
    }

    #[test]
    fn ou_orders_are_exact() {
        let v = parse(&order_sweep(models::OU, "x^2", &[2, 3]).unwrap());
        for row in v.as_array().unwrap() {
            assert!((row["lower"].as_f64().unwrap() - 1.0).abs() < 1e-6);
            assert!((row["upper"].as_f64().unwrap() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn bad_order_is_reported_per_row() {
        let v = parse(&order_sweep(models::OU, "x^2", &[1]).unwrap());
        assert_eq!(v[0]["status"], "error");
    }

    #[test]
    fn cv2_rows_are_enclosures() {
        let v = parse(&cv2_sweep(models::CELL_DIVISION, "n", &[2.0, 4.0], "v", 4).unwrap());
        for row in v.as_array().unwrap() {
            assert!(row["lower"].as_f64().unwrap() <= row["upper"].as_f64().unwrap());
        }
    }

    #[test]
    fn simulation_reports_occupancy() {
        let v = parse(&run_simulation(models::TCP_ONOFF, &["v".into()], 0.01, 200.0, 2, 1).unwrap());
        let total: f64 = v["modes"].as_array().unwrap().iter().map(|m| m["occupancy"].as_f64().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(v["estimates"][0]["mean"].as_f64().unwrap() > 0.0);
    }

    #[test]
    fn bundled_list_has_every_model() {
        assert_eq!(parse(&bundled()).as_array().unwrap().len(), models::SOURCES.len());
    }

    #[test]
    fn unknown_parameter_is_an_error() {
        assert!(cv2_sweep(models::CELL_DIVISION, "nope", &[1.0], "v", 2).is_err());
    }
}
