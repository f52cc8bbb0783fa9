//! Partial-equilibrium simulation of tariff reforms on transaction-level
//! import data.
//!
//! The pipeline is:
//!
//! 1. [`ingest`] parses import records, merges them into one [`TradeLine`]
//!    per (product, partner) and resolves country groups.
//! 2. [`scenario`] describes a reform as ordered rate-band remapping rules
//!    and rewrites each line's rates.
//! 3. [`engine`] turns rate changes into duty-inclusive price changes, runs
//!    the three-step trade response (exporter substitution, import/domestic
//!    substitution, demand effect) and accounts tariff, excise and VAT
//!    revenue before and after.
//! 4. [`report`] folds results into partner-share, revenue-by-band and
//!    before/after summary tables and renders them as CSV, JSON or Markdown.
//!
//! ```
//! use tariffsim::{engine, ingest, scenario::Scenario};
//!
//! let csv = "product_code,partner,cif_value,quantity,statutory_tariff_frac,applied_tariff_frac,excise_frac,vat_frac\n\
//!            0101,UAE,100.0,,0.0,0.0,0.0,0.0\n";
//! let records = ingest::parse_trade_records(csv.as_bytes()).unwrap();
//! let dataset = ingest::Dataset::new(ingest::aggregate_lines(&records));
//! let result = engine::run_simulation(&dataset, &Scenario::bundled("scenario1").unwrap()).unwrap();
//! assert!((result.after.revenue.tariff - 5.0).abs() < 1e-12);
//! ```

pub mod engine;
pub mod fixtures;
pub mod ingest;
pub mod report;
pub mod scenario;

pub use engine::{LineResult, RevenueBreakdown, SimulationResult};
pub use ingest::{CountryGroup, Dataset, TradeLine, TradeRecord};
pub use scenario::{BandRule, Elasticities, RateBasis, Scenario};

/// Upper bound accepted for any tax rate, as a fraction (1000%).
pub const MAX_RATE: f64 = 10.0;

/// The four rates levied on one import flow, all as fractions.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RateSet {
    pub statutory_tariff: f64,
    pub applied_tariff: f64,
    pub excise: f64,
    pub vat: f64,
}

pub(crate) fn is_valid_rate(rate: f64) -> bool {
    rate.is_finite() && (0.0..=MAX_RATE).contains(&rate)
}
