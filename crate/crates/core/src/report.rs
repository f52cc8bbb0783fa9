//! Report tables: partner shares, tariff revenue by rate band and
//! before/after scenario summaries, rendered as CSV, JSON or Markdown.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{SimulationResult, State};
use crate::ingest::Dataset;
use crate::scenario::Interval;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("unsupported format `{0}` (expected csv, json or md)")]
    UnsupportedFormat(String),
    #[error("malformed table: {0}")]
    Malformed(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Label of the row that collects partners beyond the top N, and of
/// partners literally named `OTHER` in the data.
pub const OTHER_LABEL: &str = "OTHER";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShareRow {
    pub label: String,
    pub value: f64,
    pub share_pct: f64,
}

fn share_rows(values: Vec<(String, f64)>) -> (Vec<ShareRow>, ShareRow) {
    let total: f64 = values.iter().map(|(_, v)| v).sum();
    let share = |v: f64| if total > 0.0 { 100.0 * v / total } else { 0.0 };
    let rows = values
        .into_iter()
        .map(|(label, value)| ShareRow {
            label,
            share_pct: share(value),
            value,
        })
        .collect();
    let total_row = ShareRow {
        label: "Total".into(),
        value: total,
        share_pct: if total > 0.0 { 100.0 } else { 0.0 },
    };
    (rows, total_row)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartnerShareTable {
    pub currency_label: String,
    pub rows: Vec<ShareRow>,
    pub total: ShareRow,
}

/// Import value by partner, largest first. With `top_n`, partners past the
/// first `top_n` are folded into a trailing `OTHER` row; partners named
/// `OTHER` in the data always land there.
pub fn partner_shares<'a, I>(flows: I, top_n: Option<usize>, currency_label: &str) -> PartnerShareTable
where
    I: IntoIterator<Item = (&'a str, f64)>,
{
    let mut by_partner: BTreeMap<&str, f64> = BTreeMap::new();
    for (partner, value) in flows {
        *by_partner.entry(partner).or_default() += value;
    }

    let mut other: Option<f64> = None;
    let mut named: Vec<(&str, f64)> = Vec::new();
    for (partner, value) in by_partner {
        if partner.trim().eq_ignore_ascii_case(OTHER_LABEL) {
            *other.get_or_insert(0.0) += value;
        } else {
            named.push((partner, value));
        }
    }
    named.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    if let Some(n) = top_n {
        if named.len() > n {
            for (_, value) in named.drain(n..) {
                *other.get_or_insert(0.0) += value;
            }
        }
    }

    let mut values: Vec<(String, f64)> = named.into_iter().map(|(p, v)| (p.to_string(), v)).collect();
    if let Some(v) = other {
        values.push((OTHER_LABEL.to_string(), v));
    }
    let (rows, total) = share_rows(values);
    PartnerShareTable {
        currency_label: currency_label.to_string(),
        rows,
        total,
    }
}

pub fn partner_shares_for_dataset(dataset: &Dataset, top_n: Option<usize>) -> PartnerShareTable {
    partner_shares(
        dataset.lines.iter().map(|l| (l.partner.as_str(), l.cif_value)),
        top_n,
        &dataset.currency_label,
    )
}

pub fn partner_shares_for_result(result: &SimulationResult, state: State, top_n: Option<usize>) -> PartnerShareTable {
    partner_shares(
        result.lines.iter().map(|l| {
            let v = match state {
                State::Before => l.cif_old,
                State::After => l.cif_new,
            };
            (l.partner.as_str(), v)
        }),
        top_n,
        &result.currency_label,
    )
}

/// A labeled rate range for revenue reporting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportBand {
    pub label: String,
    pub interval: Interval,
}

/// The five bands used by the bundled scenarios, top band first. The
/// intervals are the same ones the scenarios classify on, so an exact 5%
/// rate belongs to none of them.
pub fn standard_bands() -> Vec<ReportBand> {
    let band = |label: &str, interval| ReportBand {
        label: label.to_string(),
        interval,
    };
    vec![
        band("Above 40%", Interval::upper_closed(0.40, None)),
        band("Between 20% & 40%", Interval::upper_closed(0.20, Some(0.40))),
        band("Between 10% & 20%", Interval::upper_closed(0.10, Some(0.20))),
        band("Between 5% & 10%", Interval::upper_closed(0.05, Some(0.10))),
        band("Below 5% (nuisance)", Interval::lower_closed(0.0, 0.05)),
    ]
}

/// Label for revenue from rates that fall in no band.
pub const UNBANDED_LABEL: &str = "Unbanded";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandRevenueTable {
    pub currency_label: String,
    /// `before` or `after`: whose tariff revenue is reported.
    pub state: String,
    pub rows: Vec<ShareRow>,
    pub total: ShareRow,
}

/// Tariff revenue grouped by the band containing each line's pre-reform
/// applied rate. Bands without lines are omitted; lines outside every band
/// are collected in an `Unbanded` row.
pub fn revenue_by_band(result: &SimulationResult, bands: &[ReportBand], state: State) -> BandRevenueTable {
    let mut sums: Vec<Option<f64>> = vec![None; bands.len()];
    let mut unbanded: Option<f64> = None;
    for line in &result.lines {
        let revenue = match state {
            State::Before => line.revenue_old.tariff,
            State::After => line.revenue_new.tariff,
        };
        let rate = line.rates_old.applied_tariff;
        let slot = match bands.iter().position(|b| b.interval.contains(rate)) {
            Some(i) => &mut sums[i],
            None => &mut unbanded,
        };
        *slot.get_or_insert(0.0) += revenue;
    }

    let mut values: Vec<(String, f64)> = bands
        .iter()
        .zip(sums)
        .filter_map(|(b, s)| s.map(|v| (b.label.clone(), v)))
        .collect();
    if let Some(v) = unbanded {
        values.push((UNBANDED_LABEL.to_string(), v));
    }
    let (rows, total) = share_rows(values);
    BandRevenueTable {
        currency_label: result.currency_label.clone(),
        state: match state {
            State::Before => "before",
            State::After => "after",
        }
        .to_string(),
        rows,
        total,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Change {
    pub before: f64,
    pub after: f64,
    pub change: f64,
}

impl Change {
    pub fn new(before: f64, after: f64) -> Self {
        Change {
            before,
            after,
            change: after - before,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub scenario_name: String,
    pub currency_label: String,
    pub import_value: Change,
    /// Collected tariff revenue.
    pub tariff_revenue: Change,
    /// Tariff, excise and VAT together.
    pub total_revenue: Change,
    /// Trade-weighted collected tariff, in percent; change in points.
    pub average_tariff: Change,
    /// Trade-weighted statutory tariff, in percent; change in points.
    pub average_statutory_tariff: Change,
}

pub fn scenario_summary(result: &SimulationResult) -> ScenarioSummary {
    let (b, a) = (&result.before, &result.after);
    ScenarioSummary {
        scenario_name: result.scenario_name.clone(),
        currency_label: result.currency_label.clone(),
        import_value: Change::new(b.import_value, a.import_value),
        tariff_revenue: Change::new(b.revenue.tariff, a.revenue.tariff),
        total_revenue: Change::new(b.revenue.total, a.revenue.total),
        average_tariff: Change::new(100.0 * b.average_applied_tariff, 100.0 * a.average_applied_tariff),
        average_statutory_tariff: Change::new(100.0 * b.average_statutory_tariff, 100.0 * a.average_statutory_tariff),
    }
}

impl ScenarioSummary {
    fn rows(&self) -> [(&'static str, Change, Kind); 5] {
        [
            ("Import value", self.import_value, Kind::Value),
            ("Tariff income", self.tariff_revenue, Kind::Value),
            ("Total tax income", self.total_revenue, Kind::Value),
            ("Average tariff (%)", self.average_tariff, Kind::Percent),
            (
                "Average statutory tariff (%)",
                self.average_statutory_tariff,
                Kind::Percent,
            ),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub before: f64,
    /// One value per scenario, in `ComparisonTable::scenarios` order.
    pub after: Vec<f64>,
}

/// Several scenarios against a shared pre-reform column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub currency_label: String,
    pub scenarios: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

pub fn compare_summaries(summaries: &[ScenarioSummary]) -> ComparisonTable {
    let first = summaries.first();
    let rows = first
        .map(|s| {
            s.rows()
                .iter()
                .enumerate()
                .map(|(i, (label, change, _))| ComparisonRow {
                    label: label.to_string(),
                    before: change.before,
                    after: summaries.iter().map(|s| s.rows()[i].1.after).collect(),
                })
                .collect()
        })
        .unwrap_or_default();
    ComparisonTable {
        currency_label: first.map(|s| s.currency_label.clone()).unwrap_or_default(),
        scenarios: summaries.iter().map(|s| s.scenario_name.clone()).collect(),
        rows,
    }
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
    Markdown,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
            Format::Markdown => "md",
        }
    }

    pub const ALL: [Format; 3] = [Format::Csv, Format::Json, Format::Markdown];
}

impl FromStr for Format {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "md" | "markdown" => Ok(Format::Markdown),
            _ => Err(ReportError::UnsupportedFormat(s.to_string())),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.extension())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RenderOptions {
    /// Shares and average tariffs at 0 decimals.
    pub paper_rounding: bool,
}

#[derive(Clone, Copy)]
enum Kind {
    Value,
    Percent,
}

fn fmt_fixed(v: f64, decimals: usize) -> String {
    let s = format!("{v:.decimals$}");
    // no "-0.0"
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

impl RenderOptions {
    fn value(&self, v: f64) -> String {
        fmt_fixed(v, 1)
    }

    fn percent(&self, v: f64) -> String {
        fmt_fixed(v, if self.paper_rounding { 0 } else { 1 })
    }

    fn cell(&self, v: f64, kind: Kind) -> String {
        match kind {
            Kind::Value => self.value(v),
            Kind::Percent => self.percent(v),
        }
    }
}

/// A table of already formatted cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Grid {
    pub fn to_csv(&self) -> Result<Vec<u8>, ReportError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.headers)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.into_inner().map_err(|e| ReportError::Malformed(e.to_string()))
    }

    pub fn from_csv(bytes: &[u8]) -> Result<Grid, ReportError> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
        let headers = r.headers()?.iter().map(String::from).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(String::from).collect()))
            .collect::<Result<_, _>>()?;
        Ok(Grid { headers, rows })
    }

    pub fn to_markdown(&self) -> String {
        let escape = |s: &str| s.replace('|', "\\|");
        let mut out = String::new();
        let line = |cells: &[String]| {
            let inner: Vec<String> = cells.iter().map(|c| escape(c)).collect();
            format!("| {} |\n", inner.join(" | "))
        };
        out.push_str(&line(&self.headers));
        let rule: Vec<&str> = (0..self.headers.len())
            .map(|i| if i == 0 { "---" } else { "---:" })
            .collect();
        out.push_str(&format!("|{}|\n", rule.join("|")));
        for row in &self.rows {
            out.push_str(&line(row));
        }
        out
    }
}

/// A report that can be laid out as a grid and serialized as JSON.
pub trait ReportTable: Serialize {
    fn grid(&self, options: &RenderOptions) -> Grid;
}

fn share_grid(first: &str, currency: &str, rows: &[ShareRow], total: &ShareRow, o: &RenderOptions) -> Grid {
    Grid {
        headers: vec![
            first.to_string(),
            format!("Value ({currency})"),
            "Share (%)".to_string(),
        ],
        rows: rows
            .iter()
            .chain(std::iter::once(total))
            .map(|r| vec![r.label.clone(), o.value(r.value), o.percent(r.share_pct)])
            .collect(),
    }
}

impl ReportTable for PartnerShareTable {
    fn grid(&self, o: &RenderOptions) -> Grid {
        share_grid("Partner", &self.currency_label, &self.rows, &self.total, o)
    }
}

impl ReportTable for BandRevenueTable {
    fn grid(&self, o: &RenderOptions) -> Grid {
        let mut g = share_grid("Tariff range", &self.currency_label, &self.rows, &self.total, o);
        g.headers[1] = format!("Tariff income {} ({})", self.state, self.currency_label);
        g
    }
}

impl ReportTable for ScenarioSummary {
    fn grid(&self, o: &RenderOptions) -> Grid {
        Grid {
            headers: vec![
                "Variable".into(),
                "Before".into(),
                format!("After ({})", self.scenario_name),
                "Change".into(),
            ],
            rows: self
                .rows()
                .iter()
                .map(|(label, c, kind)| {
                    vec![
                        label.to_string(),
                        o.cell(c.before, *kind),
                        o.cell(c.after, *kind),
                        o.cell(c.change, *kind),
                    ]
                })
                .collect(),
        }
    }
}

impl ReportTable for ComparisonTable {
    fn grid(&self, o: &RenderOptions) -> Grid {
        let mut headers = vec!["Variable".to_string(), "Before".to_string()];
        headers.extend(self.scenarios.iter().map(|s| format!("After ({s})")));
        Grid {
            headers,
            rows: self
                .rows
                .iter()
                .map(|r| {
                    let kind = if r.label.ends_with("(%)") {
                        Kind::Percent
                    } else {
                        Kind::Value
                    };
                    let mut cells = vec![r.label.clone(), o.cell(r.before, kind)];
                    cells.extend(r.after.iter().map(|&v| o.cell(v, kind)));
                    cells
                })
                .collect(),
        }
    }
}

pub fn render<T: ReportTable>(table: &T, format: Format, options: &RenderOptions) -> Result<Vec<u8>, ReportError> {
    match format {
        Format::Csv => table.grid(options).to_csv(),
        Format::Markdown => Ok(table.grid(options).to_markdown().into_bytes()),
        Format::Json => {
            let mut out = serde_json::to_vec_pretty(table)?;
            out.push(b'\n');
            Ok(out)
        }
    }
}
