//! Import record ingestion: parsing, merging into trade lines, validation
//! and country-group resolution.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::is_valid_rate;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("line {line}: invalid `{field}`: {reason}")]
    DomainError { line: u64, field: String, reason: String },
    #[error("input contains no data rows")]
    EmptyInput,
    #[error("unknown country group `{0}`")]
    UnknownGroup(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One import transaction as read from the input table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeRecord {
    pub product_code: String,
    pub partner: String,
    pub cif_value: f64,
    pub quantity: Option<f64>,
    pub statutory_tariff: f64,
    pub applied_tariff: f64,
    pub excise_rate: f64,
    pub vat_rate: f64,
}

/// All imports of one product from one partner. The unit the engine
/// simulates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeLine {
    pub product_code: String,
    pub partner: String,
    pub cif_value: f64,
    pub quantity: f64,
    pub statutory_tariff: f64,
    pub applied_tariff: f64,
    pub excise_rate: f64,
    pub vat_rate: f64,
}

impl TradeLine {
    pub fn key(&self) -> (&str, &str) {
        (&self.product_code, &self.partner)
    }

    pub fn rates(&self) -> crate::RateSet {
        crate::RateSet {
            statutory_tariff: self.statutory_tariff,
            applied_tariff: self.applied_tariff,
            excise: self.excise_rate,
            vat: self.vat_rate,
        }
    }
}

impl From<&TradeLine> for TradeRecord {
    fn from(line: &TradeLine) -> Self {
        TradeRecord {
            product_code: line.product_code.clone(),
            partner: line.partner.clone(),
            cif_value: line.cif_value,
            quantity: Some(line.quantity),
            statutory_tariff: line.statutory_tariff,
            applied_tariff: line.applied_tariff,
            excise_rate: line.excise_rate,
            vat_rate: line.vat_rate,
        }
    }
}

/// A record taken as a line on its own, without merging. A missing
/// quantity becomes the CIF value.
impl From<&TradeRecord> for TradeLine {
    fn from(r: &TradeRecord) -> Self {
        TradeLine {
            product_code: r.product_code.clone(),
            partner: r.partner.clone(),
            cif_value: r.cif_value,
            quantity: r.quantity.unwrap_or(r.cif_value),
            statutory_tariff: r.statutory_tariff,
            applied_tariff: r.applied_tariff,
            excise_rate: r.excise_rate,
            vat_rate: r.vat_rate,
        }
    }
}

/// Trims and case-folds a partner identifier for group matching.
pub fn canonical_partner(id: &str) -> String {
    id.trim().to_lowercase()
}

/// A named set of partners (trading bloc, agreement members).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountryGroup {
    pub name: String,
    members: BTreeSet<String>,
}

impl CountryGroup {
    pub fn new<I, S>(name: impl Into<String>, members: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        CountryGroup {
            name: name.into().trim().to_string(),
            members: members
                .into_iter()
                .map(|m| canonical_partner(m.as_ref()))
                .filter(|m| !m.is_empty())
                .collect(),
        }
    }

    pub fn contains(&self, partner: &str) -> bool {
        self.members.contains(&canonical_partner(partner))
    }

    /// Canonicalized member identifiers.
    pub fn members(&self) -> impl Iterator<Item = &str> {
        self.members.iter().map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub lines: Vec<TradeLine>,
    pub groups: Vec<CountryGroup>,
    pub currency_label: String,
}

impl Dataset {
    pub fn new(lines: Vec<TradeLine>) -> Self {
        Dataset {
            lines,
            groups: Vec::new(),
            currency_label: "currency units".to_string(),
        }
    }

    pub fn with_groups(mut self, groups: Vec<CountryGroup>) -> Self {
        self.groups = groups;
        self
    }

    pub fn with_currency_label(mut self, label: impl Into<String>) -> Self {
        self.currency_label = label.into();
        self
    }

    pub fn total_cif(&self) -> f64 {
        self.lines.iter().map(|l| l.cif_value).sum()
    }

    pub fn group(&self, name: &str) -> Option<&CountryGroup> {
        find_group(&self.groups, name)
    }
}

pub(crate) fn find_group<'a>(groups: &'a [CountryGroup], name: &str) -> Option<&'a CountryGroup> {
    let wanted = name.trim();
    groups
        .iter()
        .find(|g| g.name == wanted)
        .or_else(|| groups.iter().find(|g| g.name.eq_ignore_ascii_case(wanted)))
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
enum RateUnit {
    Fraction,
    Percent,
}

impl RateUnit {
    fn to_fraction(self, v: f64) -> f64 {
        match self {
            RateUnit::Fraction => v,
            RateUnit::Percent => v / 100.0,
        }
    }
}

const RATE_COLUMNS: [&str; 4] = ["statutory_tariff", "applied_tariff", "excise", "vat"];

struct Columns {
    product_code: usize,
    partner: usize,
    cif_value: usize,
    quantity: Option<usize>,
    rates: [(usize, RateUnit); 4],
    arity: usize,
}

impl Columns {
    fn from_header(header: &csv::StringRecord) -> Result<Self, IngestError> {
        let names: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h, i)).collect();
        let missing = |col: &str| IngestError::MalformedRow {
            line: 1,
            reason: format!("header is missing column `{col}`"),
        };
        let required = |col: &'static str| names.get(col).copied().ok_or_else(|| missing(col));

        let mut rates = [(0, RateUnit::Fraction); 4];
        for (slot, base) in rates.iter_mut().zip(RATE_COLUMNS) {
            let frac = names.get(format!("{base}_frac").as_str()).copied();
            let pct = names.get(format!("{base}_pct").as_str()).copied();
            *slot = match (frac, pct) {
                (Some(i), None) => (i, RateUnit::Fraction),
                (None, Some(i)) => (i, RateUnit::Percent),
                (Some(_), Some(_)) => {
                    return Err(IngestError::MalformedRow {
                        line: 1,
                        reason: format!("both `{base}_frac` and `{base}_pct` present"),
                    })
                }
                (None, None) => return Err(missing(&format!("{base}_frac"))),
            };
        }

        Ok(Columns {
            product_code: required("product_code")?,
            partner: required("partner")?,
            cif_value: required("cif_value")?,
            quantity: names.get("quantity").copied(),
            rates,
            arity: header.len(),
        })
    }
}

fn parse_number(line: u64, field: &str, raw: &str) -> Result<f64, IngestError> {
    let value: f64 = raw.parse().map_err(|_| IngestError::MalformedRow {
        line,
        reason: format!("`{field}` is not a number: {raw:?}"),
    })?;
    if !value.is_finite() {
        return Err(IngestError::DomainError {
            line,
            field: field.to_string(),
            reason: format!("{raw} is not finite"),
        });
    }
    Ok(value)
}

fn domain(line: u64, field: &str, reason: impl Into<String>) -> IngestError {
    IngestError::DomainError {
        line,
        field: field.to_string(),
        reason: reason.into(),
    }
}

fn csv_error(err: csv::Error) -> IngestError {
    let line = err.position().map(|p| p.line()).unwrap_or(0);
    match err.into_kind() {
        csv::ErrorKind::Io(io) => IngestError::Io(io),
        other => IngestError::MalformedRow {
            line,
            reason: format!("{other:?}"),
        },
    }
}

/// Parses the import table. Rate columns are suffixed `_frac` or `_pct`;
/// percent columns are divided by 100 so every stored rate is a fraction.
pub fn parse_trade_records<R: Read>(source: R) -> Result<Vec<TradeRecord>, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let header = reader.headers().map_err(csv_error)?.clone();
    if header.is_empty() || header.iter().all(str::is_empty) {
        return Err(IngestError::EmptyInput);
    }
    let cols = Columns::from_header(&header)?;

    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(csv_error)?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.len() == 1 && row[0].is_empty() {
            continue;
        }
        if row.len() != cols.arity {
            return Err(IngestError::MalformedRow {
                line,
                reason: format!("expected {} fields, found {}", cols.arity, row.len()),
            });
        }

        let product_code = row[cols.product_code].to_string();
        if product_code.is_empty() {
            return Err(domain(line, "product_code", "empty"));
        }
        let partner = row[cols.partner].to_string();
        if partner.is_empty() {
            return Err(domain(line, "partner", "empty"));
        }

        let cif_value = parse_number(line, "cif_value", &row[cols.cif_value])?;
        if cif_value < 0.0 {
            return Err(domain(line, "cif_value", format!("{cif_value} is negative")));
        }

        let quantity = match cols.quantity.map(|i| &row[i]) {
            None | Some("") => None,
            Some(raw) => {
                let q = parse_number(line, "quantity", raw)?;
                if q <= 0.0 {
                    return Err(domain(line, "quantity", format!("{q} is not positive")));
                }
                Some(q)
            }
        };

        let mut rates = [0.0; 4];
        for ((slot, (idx, unit)), base) in rates.iter_mut().zip(cols.rates).zip(RATE_COLUMNS) {
            let raw = parse_number(line, base, &row[idx])?;
            let rate = unit.to_fraction(raw);
            if !is_valid_rate(rate) {
                return Err(domain(line, base, format!("{rate} outside [0, {}]", crate::MAX_RATE)));
            }
            *slot = rate;
        }
        let [statutory_tariff, applied_tariff, excise_rate, vat_rate] = rates;
        if applied_tariff > statutory_tariff {
            return Err(domain(
                line,
                "applied_tariff",
                format!("applied {applied_tariff} exceeds statutory {statutory_tariff}"),
            ));
        }

        records.push(TradeRecord {
            product_code,
            partner,
            cif_value,
            quantity,
            statutory_tariff,
            applied_tariff,
            excise_rate,
            vat_rate,
        });
    }

    if records.is_empty() {
        return Err(IngestError::EmptyInput);
    }
    Ok(records)
}

/// Writes records in the canonical fraction-unit layout. Numbers use the
/// shortest representation that parses back to the same `f64`.
pub fn write_trade_records<W: Write>(records: &[TradeRecord], sink: W) -> Result<(), IngestError> {
    let mut writer = csv::Writer::from_writer(sink);
    let io = |e: csv::Error| IngestError::Io(e.into());
    writer
        .write_record([
            "product_code",
            "partner",
            "cif_value",
            "quantity",
            "statutory_tariff_frac",
            "applied_tariff_frac",
            "excise_frac",
            "vat_frac",
        ])
        .map_err(io)?;
    for r in records {
        writer
            .write_record([
                r.product_code.clone(),
                r.partner.clone(),
                r.cif_value.to_string(),
                r.quantity.map(|q| q.to_string()).unwrap_or_default(),
                r.statutory_tariff.to_string(),
                r.applied_tariff.to_string(),
                r.excise_rate.to_string(),
                r.vat_rate.to_string(),
            ])
            .map_err(io)?;
    }
    writer.flush()?;
    Ok(())
}

/// Parses `group_name,member` pairs, one per row. A leading
/// `group_name,member` header row is optional. Groups keep the order in
/// which they first appear.
pub fn parse_groups<R: Read>(source: R) -> Result<Vec<CountryGroup>, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let mut order: Vec<String> = Vec::new();
    let mut members: HashMap<String, Vec<String>> = HashMap::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(csv_error)?;
        let line = row.position().map(|p| p.line()).unwrap_or(i as u64 + 1);
        if row.iter().all(str::is_empty) {
            continue;
        }
        if i == 0 && row.len() == 2 && &row[0] == "group_name" && &row[1] == "member" {
            continue;
        }
        if row.len() != 2 || row[0].is_empty() || row[1].is_empty() {
            return Err(IngestError::MalformedRow {
                line,
                reason: "expected `group_name,member`".to_string(),
            });
        }
        let name = row[0].to_string();
        if !members.contains_key(&name) {
            order.push(name.clone());
        }
        members.entry(name).or_default().push(row[1].to_string());
    }
    Ok(order
        .into_iter()
        .map(|name| {
            let m = members.remove(&name).unwrap_or_default();
            CountryGroup::new(name, m)
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

fn merged_rate(group: &[&TradeRecord], total_cif: f64, rate: impl Fn(&TradeRecord) -> f64) -> f64 {
    let first = rate(group[0]);
    if group.iter().all(|r| rate(r) == first) {
        return first;
    }
    if total_cif > 0.0 {
        group.iter().map(|r| r.cif_value * rate(r)).sum::<f64>() / total_cif
    } else {
        group.iter().map(|r| rate(r)).sum::<f64>() / group.len() as f64
    }
}

/// Merges records sharing a (product, partner) key. CIF and quantity are
/// summed; rates become CIF-weighted means (simple means for zero-CIF
/// keys). Records without a quantity contribute their CIF value as
/// quantity. Output is sorted by product, then partner.
pub fn aggregate_lines(records: &[TradeRecord]) -> Vec<TradeLine> {
    let mut groups: BTreeMap<(&str, &str), Vec<&TradeRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.product_code.as_str(), r.partner.as_str()))
            .or_default()
            .push(r);
    }

    groups
        .into_iter()
        .map(|((product, partner), group)| {
            let cif_value: f64 = group.iter().map(|r| r.cif_value).sum();
            let quantity: f64 = group.iter().map(|r| r.quantity.unwrap_or(r.cif_value)).sum();
            let statutory_tariff = merged_rate(&group, cif_value, |r| r.statutory_tariff);
            let applied_tariff = merged_rate(&group, cif_value, |r| r.applied_tariff).min(statutory_tariff);
            TradeLine {
                product_code: product.to_string(),
                partner: partner.to_string(),
                cif_value,
                quantity,
                statutory_tariff,
                applied_tariff,
                excise_rate: merged_rate(&group, cif_value, |r| r.excise_rate),
                vat_rate: merged_rate(&group, cif_value, |r| r.vat_rate),
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Location {
    /// 1-based position in `Dataset::lines`.
    Line(usize),
    Group(String),
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Line(n) => write!(f, "line {n}"),
            Location::Group(g) => write!(f, "group `{g}`"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum FindingKind {
    DuplicateKey {
        product_code: String,
        partner: String,
        first_line: usize,
    },
    EmptyField {
        field: &'static str,
    },
    RateOutOfBounds {
        field: &'static str,
        value: f64,
    },
    AppliedAboveStatutory {
        applied: f64,
        statutory: f64,
    },
    InvalidCif {
        value: f64,
    },
    InvalidQuantity {
        quantity: f64,
        cif_value: f64,
    },
    EmptyGroup,
    DuplicateGroup,
}

impl fmt::Display for FindingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FindingKind::DuplicateKey {
                product_code,
                partner,
                first_line,
            } => write!(
                f,
                "duplicate key ({product_code}, {partner}), first seen at line {first_line}"
            ),
            FindingKind::EmptyField { field } => write!(f, "`{field}` is empty"),
            FindingKind::RateOutOfBounds { field, value } => {
                write!(f, "`{field}` = {value} outside [0, {}]", crate::MAX_RATE)
            }
            FindingKind::AppliedAboveStatutory { applied, statutory } => write!(
                f,
                "bounded-rate violation: applied tariff {applied} exceeds statutory {statutory}"
            ),
            FindingKind::InvalidCif { value } => {
                write!(f, "cif_value {value} must be finite and nonnegative")
            }
            FindingKind::InvalidQuantity { quantity, cif_value } => write!(
                f,
                "quantity {quantity} inconsistent with cif_value {cif_value} (must be > 0 when CIF > 0)"
            ),
            FindingKind::EmptyGroup => write!(f, "has no members"),
            FindingKind::DuplicateGroup => write!(f, "is defined more than once"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Finding {
    pub location: Location,
    pub kind: FindingKind,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.kind)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_clean() {
            return writeln!(f, "OK");
        }
        for finding in &self.findings {
            writeln!(f, "{finding}")?;
        }
        Ok(())
    }
}

/// Lists every reason the dataset is not ready for simulation.
pub fn validate_dataset(dataset: &Dataset) -> ValidationReport {
    let mut findings = Vec::new();
    let mut seen: HashMap<(&str, &str), usize> = HashMap::new();

    for (idx, line) in dataset.lines.iter().enumerate() {
        let n = idx + 1;
        let mut push = |kind| {
            findings.push(Finding {
                location: Location::Line(n),
                kind,
            })
        };

        if let Some(&first_line) = seen.get(&line.key()) {
            push(FindingKind::DuplicateKey {
                product_code: line.product_code.clone(),
                partner: line.partner.clone(),
                first_line,
            });
        } else {
            seen.insert(line.key(), n);
        }
        if line.product_code.trim().is_empty() {
            push(FindingKind::EmptyField { field: "product_code" });
        }
        if line.partner.trim().is_empty() {
            push(FindingKind::EmptyField { field: "partner" });
        }
        for (field, value) in [
            ("statutory_tariff", line.statutory_tariff),
            ("applied_tariff", line.applied_tariff),
            ("excise_rate", line.excise_rate),
            ("vat_rate", line.vat_rate),
        ] {
            if !is_valid_rate(value) {
                push(FindingKind::RateOutOfBounds { field, value });
            }
        }
        if line.applied_tariff > line.statutory_tariff {
            push(FindingKind::AppliedAboveStatutory {
                applied: line.applied_tariff,
                statutory: line.statutory_tariff,
            });
        }
        let cif_ok = line.cif_value.is_finite() && line.cif_value >= 0.0;
        if !cif_ok {
            push(FindingKind::InvalidCif { value: line.cif_value });
        }
        let q = line.quantity;
        if !q.is_finite() || q < 0.0 || (cif_ok && line.cif_value > 0.0 && q <= 0.0) {
            push(FindingKind::InvalidQuantity {
                quantity: q,
                cif_value: line.cif_value,
            });
        }
    }

    let mut names = BTreeSet::new();
    for group in &dataset.groups {
        if !names.insert(group.name.as_str()) {
            findings.push(Finding {
                location: Location::Group(group.name.clone()),
                kind: FindingKind::DuplicateGroup,
            });
        }
        if group.is_empty() {
            findings.push(Finding {
                location: Location::Group(group.name.clone()),
                kind: FindingKind::EmptyGroup,
            });
        }
    }

    ValidationReport { findings }
}

/// Lines whose partner belongs to the named group.
pub fn resolve_groups<'a>(dataset: &'a Dataset, group_name: &str) -> Result<Vec<&'a TradeLine>, IngestError> {
    let group = dataset
        .group(group_name)
        .ok_or_else(|| IngestError::UnknownGroup(group_name.to_string()))?;
    Ok(dataset.lines.iter().filter(|l| group.contains(&l.partner)).collect())
}
