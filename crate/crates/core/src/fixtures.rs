//! Synthetic datasets and scenario files shipped with the crate.
//!
//! `iran2010_shape.csv` is calibrated to published marginals of a 2010
//! agricultural import dataset: partner CIF totals of 34.9 / 11.9 / 10.7 /
//! 6.1 / 4.9 with a 25.6 residual (`OTHER`), and collected tariff revenue
//! of 6.95 / 1.27 / 1.95 / 0.15 / 2.54 across the five rate bands. The
//! transaction detail behind those marginals is invented.
//!
//! `exemption_shape.csv` carries one heavily exempted line (statutory 45%,
//! collected 5%) next to a fully collected one, which is the setting where
//! cutting the statutory schedule can still raise collected revenue.

use crate::ingest::{self, CountryGroup, Dataset, IngestError};

pub const IRAN2010_SHAPE_CSV: &str = include_str!("../data/iran2010_shape.csv");
pub const EXEMPTION_SHAPE_CSV: &str = include_str!("../data/exemption_shape.csv");
pub const GROUPS_CSV: &str = include_str!("../data/groups.csv");

pub const SCENARIO1_JSON: &str = include_str!("../data/scenario1.json");
pub const SCENARIO2_JSON: &str = include_str!("../data/scenario2.json");
pub const REMOVE_EXEMPTIONS_JSON: &str = include_str!("../data/remove_exemptions.json");
pub const IDENTITY_JSON: &str = include_str!("../data/identity.json");

/// Display label for fixture values.
pub const FIXTURE_CURRENCY: &str = "1000 Billion Rials";

fn load(csv: &str) -> Result<Dataset, IngestError> {
    let records = ingest::parse_trade_records(csv.as_bytes())?;
    let groups: Vec<CountryGroup> = ingest::parse_groups(GROUPS_CSV.as_bytes())?;
    Ok(Dataset::new(ingest::aggregate_lines(&records))
        .with_groups(groups)
        .with_currency_label(FIXTURE_CURRENCY))
}

/// The partner/band calibrated fixture, aggregated and with country groups.
pub fn iran2010_shape() -> Dataset {
    load(IRAN2010_SHAPE_CSV).expect("bundled fixture parses")
}

pub fn exemption_shape() -> Dataset {
    load(EXEMPTION_SHAPE_CSV).expect("bundled fixture parses")
}
