//! Browser demo bindings. Each operation has a plain Rust function returning
//! a JSON string (tested natively) and a `#[wasm_bindgen]` wrapper.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use tariffsim::engine::{self, State};
use tariffsim::ingest::{self, Dataset};
use tariffsim::report::{self, BandRevenueTable, PartnerShareTable, ScenarioSummary};
use tariffsim::{fixtures, Scenario};

const TOP_N: usize = 5;

#[derive(Serialize)]
struct Simulation {
    summary: ScenarioSummary,
    partners_before: PartnerShareTable,
    partners_after: PartnerShareTable,
    bands_before: BandRevenueTable,
    bands_after: BandRevenueTable,
}

#[derive(Serialize)]
pub struct SubstitutionCurve {
    pub gammas: Vec<f64>,
    /// `shares[i][j]`: share of exporter `j` at `gammas[i]`, `None` where a
    /// weight turns non-positive.
    pub shares: Vec<Option<Vec<f64>>>,
}

#[derive(Serialize)]
pub struct SweepPoint {
    pub top_rate: f64,
    pub tariff_revenue: f64,
    pub total_revenue: f64,
    pub average_tariff: f64,
}

fn load(csv: &str) -> Result<Dataset, String> {
    let records = ingest::parse_trade_records(csv.as_bytes()).map_err(|e| e.to_string())?;
    let groups = ingest::parse_groups(fixtures::GROUPS_CSV.as_bytes()).map_err(|e| e.to_string())?;
    Ok(Dataset::new(ingest::aggregate_lines(&records))
        .with_groups(groups)
        .with_currency_label(fixtures::FIXTURE_CURRENCY))
}

fn to_json<T: Serialize>(value: &T) -> Result<String, String> {
    serde_json::to_string(value).map_err(|e| e.to_string())
}

/// Runs one scenario and returns the summary plus partner and band tables.
pub fn simulate_json(csv: &str, scenario_json: &str) -> Result<String, String> {
    let dataset = load(csv)?;
    let scenario = Scenario::from_json(scenario_json).map_err(|e| e.to_string())?;
    let result = engine::run_simulation(&dataset, &scenario).map_err(|e| e.to_string())?;
    let bands = report::standard_bands();
    to_json(&Simulation {
        summary: report::scenario_summary(&result),
        partners_before: report::partner_shares_for_result(&result, State::Before, Some(TOP_N)),
        partners_after: report::partner_shares_for_result(&result, State::After, Some(TOP_N)),
        bands_before: report::revenue_by_band(&result, &bands, State::Before),
        bands_after: report::revenue_by_band(&result, &bands, State::After),
    })
}

/// Exporter shares after substitution for `steps + 1` values of the
/// elasticity between `gamma_min` and `gamma_max`.
pub fn substitution_curve(
    quantities: &[f64],
    price_changes: &[f64],
    gamma_min: f64,
    gamma_max: f64,
    steps: usize,
) -> Result<SubstitutionCurve, String> {
    if quantities.len() != price_changes.len() || quantities.is_empty() {
        return Err("quantities and price changes must be non-empty and of equal length".into());
    }
    let steps = steps.max(1);
    let mut curve = SubstitutionCurve {
        gammas: Vec::with_capacity(steps + 1),
        shares: Vec::with_capacity(steps + 1),
    };
    for i in 0..=steps {
        let gamma = gamma_min + (gamma_max - gamma_min) * i as f64 / steps as f64;
        let shares = engine::exporter_substitution(quantities, price_changes, gamma)
            .ok()
            .map(|q| {
                let total: f64 = q.iter().sum();
                q.iter().map(|x| x / total).collect()
            });
        curve.gammas.push(gamma);
        curve.shares.push(shares);
    }
    Ok(curve)
}

pub fn substitution_curve_json(
    quantities_json: &str,
    price_changes_json: &str,
    gamma_min: f64,
    gamma_max: f64,
    steps: usize,
) -> Result<String, String> {
    let q: Vec<f64> = serde_json::from_str(quantities_json).map_err(|e| format!("quantities: {e}"))?;
    let dp: Vec<f64> = serde_json::from_str(price_changes_json).map_err(|e| format!("price changes: {e}"))?;
    to_json(&substitution_curve(&q, &dp, gamma_min, gamma_max, steps)?)
}

/// Re-runs the scenario with its open-ended top band set to each of
/// `steps + 1` rates from 0 to `max_rate`.
pub fn top_band_sweep(csv: &str, scenario_json: &str, max_rate: f64, steps: usize) -> Result<Vec<SweepPoint>, String> {
    let dataset = load(csv)?;
    let scenario = Scenario::from_json(scenario_json).map_err(|e| e.to_string())?;
    let top = scenario
        .rules
        .iter()
        .position(|r| r.upper.is_none())
        .ok_or("scenario has no open-ended top band")?;
    let steps = steps.max(1);
    (0..=steps)
        .map(|i| {
            let rate = max_rate * i as f64 / steps as f64;
            let mut s = scenario.clone();
            s.rules[top].new_rate = rate;
            let result = engine::run_simulation(&dataset, &s).map_err(|e| e.to_string())?;
            Ok(SweepPoint {
                top_rate: rate,
                tariff_revenue: result.after.revenue.tariff,
                total_revenue: result.after.revenue.total,
                average_tariff: 100.0 * result.after.average_applied_tariff,
            })
        })
        .collect()
}

pub fn top_band_sweep_json(csv: &str, scenario_json: &str, max_rate: f64, steps: usize) -> Result<String, String> {
    to_json(&top_band_sweep(csv, scenario_json, max_rate, steps)?)
}

#[wasm_bindgen]
pub fn simulate(csv: &str, scenario_json: &str) -> Result<String, JsValue> {
    simulate_json(csv, scenario_json).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = substitutionCurve)]
pub fn substitution_curve_js(
    quantities_json: &str,
    price_changes_json: &str,
    gamma_min: f64,
    gamma_max: f64,
    steps: usize,
) -> Result<String, JsValue> {
    substitution_curve_json(quantities_json, price_changes_json, gamma_min, gamma_max, steps)
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = topBandSweep)]
pub fn top_band_sweep_js(csv: &str, scenario_json: &str, max_rate: f64, steps: usize) -> Result<String, JsValue> {
    top_band_sweep_json(csv, scenario_json, max_rate, steps).map_err(|e| JsValue::from_str(&e))
}

/// Bundled sample import table.
#[wasm_bindgen(js_name = sampleData)]
pub fn sample_data() -> String {
    fixtures::IRAN2010_SHAPE_CSV.to_string()
}

/// Bundled scenario by name, or an empty string.
#[wasm_bindgen(js_name = sampleScenario)]
pub fn sample_scenario(name: &str) -> String {
    match name {
        "scenario1" => fixtures::SCENARIO1_JSON,
        "scenario2" => fixtures::SCENARIO2_JSON,
        "remove-exemptions" => fixtures::REMOVE_EXEMPTIONS_JSON,
        "identity" => fixtures::IDENTITY_JSON,
        _ => "",
    }
    .to_string()
}
