//! Trade response and revenue accounting.
//!
//! A tariff change moves the duty-inclusive price of each (product,
//! exporter) flow. The response is computed per product in three steps:
//!
//! 1. exporter substitution: imports of the product are reallocated across
//!    exporters according to their relative price changes, holding the
//!    product's total imported quantity fixed;
//! 2. import/domestic substitution: all exporters of the product scale
//!    together with the CIF-weighted average price change;
//! 3. demand effect: the same pro-rata scaling, driven by the demand
//!    elasticity.
//!
//! With `gamma_ds = epsilon_d = 0` steps 2 and 3 are exact no-ops. Products
//! never substitute for each other, so they are simulated independently and
//! may run in parallel; totals are always reduced in (product, partner)
//! order so results do not depend on the worker count.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{validate_dataset, CountryGroup, Dataset, TradeLine, ValidationReport};
use crate::scenario::{Scenario, ScenarioError};
use crate::RateSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Step {
    ExporterSubstitution,
    DomesticSubstitution,
    DemandEffect,
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Step::ExporterSubstitution => "exporter substitution",
            Step::DomesticSubstitution => "import/domestic substitution",
            Step::DemandEffect => "demand effect",
        })
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("degenerate weights in {step} step{}: factor {factor} is not positive", product_suffix(.product))]
    DegenerateWeights {
        product: Option<String>,
        step: Step,
        factor: f64,
    },
    #[error("dataset is not simulation-ready:\n{0}")]
    InvalidDataset(ValidationReport),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("failed to start worker pool: {0}")]
    WorkerPool(String),
}

fn product_suffix(product: &Option<String>) -> String {
    product
        .as_ref()
        .map(|p| format!(" for product {p}"))
        .unwrap_or_default()
}

impl EngineError {
    fn for_product(self, product: &str) -> Self {
        match self {
            EngineError::DegenerateWeights { step, factor, .. } => EngineError::DegenerateWeights {
                product: Some(product.to_string()),
                step,
                factor,
            },
            other => other,
        }
    }
}

fn degenerate(step: Step, factor: f64) -> EngineError {
    EngineError::DegenerateWeights {
        product: None,
        step,
        factor,
    }
}

/// Relative change in the duty-inclusive price when the tariff moves from
/// `t_old` to `t_new`, with world price, excise and VAT held fixed.
///
/// Excise and VAT multiply both the old and new price by the same factors
/// `(1 + excise)(1 + vat)`, so they cancel and the result is
/// `(t_new - t_old) / (1 + t_old)`. They are accepted so callers can pass a
/// line's full rate set.
pub fn price_change(t_old: f64, t_new: f64, _excise: f64, _vat: f64) -> f64 {
    (t_new - t_old) / (1.0 + t_old)
}

/// Reallocates a product's imports across its exporters.
///
/// Each exporter's quantity is scaled by `delta_p_rel * gamma_es + 1`, then
/// all quantities are renormalized so the product's total imported
/// quantity is unchanged. Zero-quantity exporters stay at zero and do not
/// enter the normalization.
///
/// Fails with `DegenerateWeights` if any active exporter's factor is not
/// positive.
pub fn exporter_substitution(q_old: &[f64], delta_p_rel: &[f64], gamma_es: f64) -> Result<Vec<f64>, EngineError> {
    assert_eq!(q_old.len(), delta_p_rel.len(), "one price change per exporter");

    let total_old: f64 = q_old.iter().sum();
    let mut weighted = Vec::with_capacity(q_old.len());
    for (&q, &dp) in q_old.iter().zip(delta_p_rel) {
        if q > 0.0 {
            let factor = dp * gamma_es + 1.0;
            if factor <= 0.0 || !factor.is_finite() {
                return Err(degenerate(Step::ExporterSubstitution, factor));
            }
            weighted.push(factor * q);
        } else {
            weighted.push(0.0);
        }
    }
    if total_old <= 0.0 {
        return Ok(weighted);
    }

    let total_weighted: f64 = weighted.iter().sum();
    if total_weighted <= 0.0 {
        return Err(degenerate(Step::ExporterSubstitution, total_weighted));
    }
    let scale = total_old / total_weighted;
    Ok(weighted.into_iter().map(|w| w * scale).collect())
}

/// CIF-weighted mean of the exporters' relative price changes. Zero when
/// the product has no CIF value.
pub fn weighted_price_change(cif_old: &[f64], delta_p_rel: &[f64]) -> f64 {
    assert_eq!(cif_old.len(), delta_p_rel.len());
    let total: f64 = cif_old.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    cif_old.iter().zip(delta_p_rel).map(|(c, dp)| (c / total) * dp).sum()
}

fn scale_all(q: &[f64], avg_price_change: f64, elasticity: f64, step: Step) -> Result<Vec<f64>, EngineError> {
    let factor = 1.0 + elasticity * avg_price_change;
    if factor <= 0.0 || !factor.is_finite() {
        return Err(degenerate(step, factor));
    }
    Ok(q.iter().map(|&x| x * factor).collect())
}

/// Substitution between the product's imports and domestic output: every
/// exporter scales by `1 + gamma_ds * avg_dp`, where `avg_dp` is the
/// pre-reform CIF-weighted price change.
pub fn domestic_substitution(
    q_es: &[f64],
    cif_old: &[f64],
    delta_p_rel: &[f64],
    gamma_ds: f64,
) -> Result<Vec<f64>, EngineError> {
    let avg = weighted_price_change(cif_old, delta_p_rel);
    scale_all(q_es, avg, gamma_ds, Step::DomesticSubstitution)
}

/// Consumption response: every exporter scales by `1 + epsilon_d * avg_dp`.
pub fn demand_effect(q_ds: &[f64], avg_price_change: f64, epsilon_d: f64) -> Result<Vec<f64>, EngineError> {
    scale_all(q_ds, avg_price_change, epsilon_d, Step::DemandEffect)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RevenueBreakdown {
    pub tariff: f64,
    pub excise: f64,
    pub vat: f64,
    pub total: f64,
}

impl RevenueBreakdown {
    fn accumulate(&mut self, other: &RevenueBreakdown) {
        self.tariff += other.tariff;
        self.excise += other.excise;
        self.vat += other.vat;
        self.total += other.total;
    }
}

/// Tariff on CIF, excise on the tariff-inclusive value, VAT on the tariff-
/// and excise-inclusive value.
pub fn compute_revenue(cif: f64, tariff_rate: f64, excise_rate: f64, vat_rate: f64) -> RevenueBreakdown {
    let tariff = tariff_rate * cif;
    let duty_paid = (1.0 + tariff_rate) * cif;
    let excise = excise_rate * duty_paid;
    let vat = vat_rate * (1.0 + excise_rate) * duty_paid;
    RevenueBreakdown {
        tariff,
        excise,
        vat,
        total: tariff + excise + vat,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineResult {
    pub product_code: String,
    pub partner: String,
    pub q_old: f64,
    pub q_es: f64,
    pub q_ds: f64,
    pub q_final: f64,
    pub cif_old: f64,
    pub cif_new: f64,
    pub rates_old: RateSet,
    pub rates_new: RateSet,
    /// Relative change of the duty-inclusive price.
    pub delta_p_rel: f64,
    pub revenue_old: RevenueBreakdown,
    pub revenue_new: RevenueBreakdown,
}

/// Dataset-level aggregates for one state (before or after the reform).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub import_value: f64,
    pub revenue: RevenueBreakdown,
    /// Trade-weighted average collected (applied) tariff, as a fraction.
    pub average_applied_tariff: f64,
    /// Trade-weighted average statutory tariff, as a fraction.
    pub average_statutory_tariff: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum State {
    Before,
    After,
}

impl Totals {
    /// Sums and weighted means over `lines`, in iteration order.
    pub fn from_lines<'a>(lines: impl IntoIterator<Item = &'a LineResult>, state: State) -> Totals {
        let mut import_value = 0.0;
        let mut revenue = RevenueBreakdown::default();
        let mut applied = 0.0;
        let mut statutory = 0.0;
        for line in lines {
            let (cif, rates, rev) = match state {
                State::Before => (line.cif_old, &line.rates_old, &line.revenue_old),
                State::After => (line.cif_new, &line.rates_new, &line.revenue_new),
            };
            import_value += cif;
            revenue.accumulate(rev);
            applied += rates.applied_tariff * cif;
            statutory += rates.statutory_tariff * cif;
        }
        let (average_applied_tariff, average_statutory_tariff) = if import_value > 0.0 {
            (applied / import_value, statutory / import_value)
        } else {
            (0.0, 0.0)
        };
        Totals {
            import_value,
            revenue,
            average_applied_tariff,
            average_statutory_tariff,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub scenario_name: String,
    pub currency_label: String,
    /// Sorted by product, then partner.
    pub lines: Vec<LineResult>,
    pub before: Totals,
    pub after: Totals,
}

impl SimulationResult {
    pub fn totals(&self, state: State) -> &Totals {
        match state {
            State::Before => &self.before,
            State::After => &self.after,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Worker threads for per-product simulation. `None` or `Some(1)` runs
    /// on the calling thread.
    pub jobs: Option<usize>,
}

fn simulate_product(
    product: &str,
    lines: &[&TradeLine],
    scenario: &Scenario,
    target: Option<&CountryGroup>,
) -> Result<Vec<LineResult>, EngineError> {
    let rates_new: Vec<RateSet> = lines.iter().map(|l| scenario.transform_rates(l, target)).collect();
    let delta_p: Vec<f64> = lines
        .iter()
        .zip(&rates_new)
        .map(|(l, new)| price_change(l.applied_tariff, new.applied_tariff, l.excise_rate, l.vat_rate))
        .collect();
    let q_old: Vec<f64> = lines.iter().map(|l| l.quantity).collect();
    let cif_old: Vec<f64> = lines.iter().map(|l| l.cif_value).collect();

    let elasticities = &scenario.elasticities;
    let run = || -> Result<_, EngineError> {
        let q_es = exporter_substitution(&q_old, &delta_p, elasticities.gamma_es_for(product))?;
        let avg = weighted_price_change(&cif_old, &delta_p);
        let q_ds = scale_all(&q_es, avg, elasticities.gamma_ds, Step::DomesticSubstitution)?;
        let q_final = demand_effect(&q_ds, avg, elasticities.epsilon_d)?;
        Ok((q_es, q_ds, q_final))
    };
    let (q_es, q_ds, q_final) = run().map_err(|e| e.for_product(product))?;

    Ok(lines
        .iter()
        .enumerate()
        .map(|(i, line)| {
            let cif_new = if q_old[i] > 0.0 {
                line.cif_value * (q_final[i] / q_old[i])
            } else {
                line.cif_value
            };
            let old = line.rates();
            let new = rates_new[i];
            LineResult {
                product_code: line.product_code.clone(),
                partner: line.partner.clone(),
                q_old: q_old[i],
                q_es: q_es[i],
                q_ds: q_ds[i],
                q_final: q_final[i],
                cif_old: line.cif_value,
                cif_new,
                rates_old: old,
                rates_new: new,
                delta_p_rel: delta_p[i],
                revenue_old: compute_revenue(line.cif_value, old.applied_tariff, old.excise, old.vat),
                revenue_new: compute_revenue(cif_new, new.applied_tariff, new.excise, new.vat),
            }
        })
        .collect())
}

type ProductBatch<'a> = (&'a str, Vec<&'a TradeLine>);

fn run_batches(
    batches: &[ProductBatch<'_>],
    scenario: &Scenario,
    target: Option<&CountryGroup>,
    jobs: usize,
) -> Result<Vec<Result<Vec<LineResult>, EngineError>>, EngineError> {
    let simulate = |(product, lines): &ProductBatch<'_>| simulate_product(product, lines, scenario, target);

    #[cfg(feature = "parallel")]
    if jobs > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| EngineError::WorkerPool(e.to_string()))?;
        return Ok(pool.install(|| batches.par_iter().map(simulate).collect()));
    }
    #[cfg(not(feature = "parallel"))]
    let _ = jobs;

    Ok(batches.iter().map(simulate).collect())
}

/// Simulates `scenario` on `dataset` on the calling thread.
pub fn run_simulation(dataset: &Dataset, scenario: &Scenario) -> Result<SimulationResult, EngineError> {
    run_simulation_with(dataset, scenario, RunOptions::default())
}

pub fn run_simulation_with(
    dataset: &Dataset,
    scenario: &Scenario,
    options: RunOptions,
) -> Result<SimulationResult, EngineError> {
    let report = validate_dataset(dataset);
    if !report.is_clean() {
        return Err(EngineError::InvalidDataset(report));
    }
    scenario.validate()?;
    let target = scenario.resolve_target(&dataset.groups)?;

    let mut by_product: BTreeMap<&str, Vec<&TradeLine>> = BTreeMap::new();
    for line in &dataset.lines {
        by_product.entry(&line.product_code).or_default().push(line);
    }
    let batches: Vec<ProductBatch<'_>> = by_product
        .into_iter()
        .map(|(product, mut lines)| {
            lines.sort_by(|a, b| a.partner.cmp(&b.partner));
            (product, lines)
        })
        .collect();

    let outcomes = run_batches(&batches, scenario, target, options.jobs.unwrap_or(1))?;
    let mut lines = Vec::with_capacity(dataset.lines.len());
    for outcome in outcomes {
        lines.extend(outcome?);
    }

    Ok(SimulationResult {
        scenario_name: scenario.name.clone(),
        currency_label: dataset.currency_label.clone(),
        before: Totals::from_lines(&lines, State::Before),
        after: Totals::from_lines(&lines, State::After),
        lines,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{aggregate_lines, TradeRecord};
    use crate::scenario::Elasticities;
    use approx::assert_relative_eq;

    fn rec(product: &str, partner: &str, cif: f64, t: f64) -> TradeRecord {
        TradeRecord {
            product_code: product.into(),
            partner: partner.into(),
            cif_value: cif,
            quantity: None,
            statutory_tariff: t,
            applied_tariff: t,
            excise_rate: 0.0,
            vat_rate: 0.0,
        }
    }

    #[test]
    fn price_change_examples() {
        assert_relative_eq!(price_change(0.40, 0.35, 0.1, 0.2), -0.05 / 1.40, max_relative = 1e-15);
        assert!((price_change(0.40, 0.35, 0.0, 0.0) + 0.0357142857).abs() < 1e-10);
        assert_eq!(price_change(0.0, 0.05, 0.0, 0.0), 0.05);
        assert_eq!(price_change(0.3, 0.3, 0.5, 0.5), 0.0);
    }

    #[test]
    fn exporter_substitution_two_exporters() {
        let q = exporter_substitution(&[100.0, 100.0], &[-0.10, 0.0], -1.5).unwrap();
        // factors (1.15, 1.00), scale 200 / 215
        assert_relative_eq!(q[0], 115.0 * 200.0 / 215.0, max_relative = 1e-12);
        assert_relative_eq!(q[1], 100.0 * 200.0 / 215.0, max_relative = 1e-12);
        assert!((q[0] - 106.9767).abs() < 1e-4);
        assert!((q[1] - 93.0233).abs() < 1e-4);
    }

    #[test]
    fn exporter_substitution_identities() {
        let q = [3.0, 7.0, 11.0];
        assert_eq!(exporter_substitution(&q, &[0.2, -0.3, 0.1], 0.0).unwrap(), q);
        let single = exporter_substitution(&[42.0], &[-0.25], -1.5).unwrap();
        assert_relative_eq!(single[0], 42.0, max_relative = 1e-15);
    }

    #[test]
    fn zero_quantity_exporters_pass_through() {
        let q = exporter_substitution(&[0.0, 10.0, 10.0], &[5.0, -0.1, 0.0], -1.5).unwrap();
        assert_eq!(q[0], 0.0);
        assert_relative_eq!(q[1] + q[2], 20.0, max_relative = 1e-15);
        assert_eq!(
            exporter_substitution(&[0.0, 0.0], &[0.1, 0.2], -1.5).unwrap(),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn degenerate_factor_is_an_error() {
        // 0.5 * -2 + 1 = 0
        assert!(matches!(
            exporter_substitution(&[1.0, 1.0], &[0.5, 0.0], -2.0),
            Err(EngineError::DegenerateWeights {
                step: Step::ExporterSubstitution,
                ..
            })
        ));
        assert!(domestic_substitution(&[1.0], &[1.0], &[0.5], -2.0).is_err());
        assert!(demand_effect(&[1.0], -0.5, 3.0).is_err());
    }

    #[test]
    fn domestic_and_demand_steps() {
        let q_es = [10.0, 30.0];
        assert_eq!(
            domestic_substitution(&q_es, &[1.0, 3.0], &[0.2, -0.1], 0.0).unwrap(),
            q_es
        );
        assert_eq!(
            domestic_substitution(&q_es, &[1.0, 3.0], &[0.0, 0.0], -4.0).unwrap(),
            q_es
        );
        // avg = (1*(-0.02) + 3*(-0.06)) / 4 = -0.05
        let scaled = domestic_substitution(&q_es, &[1.0, 3.0], &[-0.02, -0.06], -1.0).unwrap();
        assert_relative_eq!(scaled[0], 10.5, max_relative = 1e-12);
        assert_relative_eq!(scaled[1], 31.5, max_relative = 1e-12);

        assert_eq!(demand_effect(&q_es, -0.1, 0.0).unwrap(), q_es);
        assert_eq!(demand_effect(&q_es, 0.0, -3.0).unwrap(), q_es);
        let d = demand_effect(&q_es, -0.10, -0.5).unwrap();
        assert_relative_eq!(d[0], 10.5, max_relative = 1e-12);
    }

    #[test]
    fn revenue_cascade() {
        let r = compute_revenue(100.0, 0.05, 0.0, 0.0);
        assert_eq!((r.tariff, r.total), (5.0, 5.0));
        let r = compute_revenue(100.0, 0.10, 0.20, 0.15);
        assert_relative_eq!(r.tariff, 10.0, max_relative = 1e-12);
        assert_relative_eq!(r.excise, 22.0, max_relative = 1e-12);
        assert_relative_eq!(r.vat, 19.8, max_relative = 1e-12);
        assert_relative_eq!(r.total, 51.8, max_relative = 1e-12);
        assert_eq!(compute_revenue(0.0, 0.3, 0.2, 0.1), RevenueBreakdown::default());
    }

    #[test]
    fn identity_scenario_is_exact() {
        let ds = crate::fixtures::iran2010_shape();
        let res = run_simulation(&ds, &Scenario::identity()).unwrap();
        for l in &res.lines {
            assert_eq!(l.cif_new, l.cif_old);
            assert_eq!(l.q_final, l.q_old);
            assert_eq!(l.revenue_new, l.revenue_old);
        }
        assert_eq!(res.before, res.after);
    }

    #[test]
    fn single_line_nuisance_raise() {
        let ds = Dataset::new(aggregate_lines(&[rec("0101", "UAE", 100.0, 0.0)]));
        let res = run_simulation(&ds, &Scenario::bundled("scenario1").unwrap()).unwrap();
        assert_eq!(res.before.revenue.total, 0.0);
        assert_relative_eq!(res.after.revenue.total, 5.0, max_relative = 1e-12);
        assert_relative_eq!(res.lines[0].cif_new, 100.0, max_relative = 1e-12);
    }

    #[test]
    fn two_line_scenario1() {
        let ds = Dataset::new(aggregate_lines(&[
            rec("A", "UAE", 100.0, 0.40),
            rec("B", "UAE", 100.0, 0.08),
        ]));
        let s = Scenario::bundled("scenario1")
            .unwrap()
            .with_elasticities(Elasticities::zero());
        let res = run_simulation(&ds, &s).unwrap();
        assert_eq!(res.lines[0].rates_new.applied_tariff, 0.30);
        assert_eq!(res.lines[1].rates_new.applied_tariff, 0.10);
        assert_relative_eq!(res.before.revenue.tariff, 48.0, max_relative = 1e-12);
        assert_relative_eq!(res.after.revenue.tariff, 40.0, max_relative = 1e-12);
        assert_relative_eq!(res.before.average_applied_tariff, 0.24, max_relative = 1e-12);
        assert_relative_eq!(res.after.average_applied_tariff, 0.20, max_relative = 1e-12);
    }

    #[test]
    fn degenerate_product_is_named() {
        let ds = Dataset::new(aggregate_lines(&[
            rec("0709", "UAE", 1.0, 0.0),
            rec("0709", "Swiss", 1.0, 0.3),
        ]));
        let mut s = Scenario::bundled("scenario1").unwrap();
        s.elasticities.gamma_es = -25.0;
        let err = run_simulation(&ds, &s).unwrap_err();
        assert!(err.to_string().contains("product 0709"), "{err}");
    }

    #[test]
    fn invalid_dataset_rejected() {
        let mut lines = aggregate_lines(&[rec("A", "UAE", 1.0, 0.1)]);
        lines.push(lines[0].clone());
        assert!(matches!(
            run_simulation(&Dataset::new(lines), &Scenario::identity()),
            Err(EngineError::InvalidDataset(_))
        ));
    }

    #[test]
    fn unknown_target_group() {
        let ds = Dataset::new(aggregate_lines(&[rec("A", "UAE", 1.0, 0.1)]));
        let mut s = Scenario::identity();
        s.target_group = Some("GCC".into());
        assert!(matches!(
            run_simulation(&ds, &s),
            Err(EngineError::Scenario(ScenarioError::UnknownGroup(_)))
        ));
    }

    #[test]
    fn parallel_matches_serial() {
        let ds = crate::fixtures::iran2010_shape();
        let s = Scenario::bundled("scenario1").unwrap();
        let serial = run_simulation(&ds, &s).unwrap();
        let parallel = run_simulation_with(&ds, &s, RunOptions { jobs: Some(4) }).unwrap();
        assert_eq!(serial, parallel);
    }
}
