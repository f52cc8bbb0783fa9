//! Reform scenarios: rate-band remapping rules, partner targeting and
//! excise/VAT overrides.
//!
//! Bands are intervals over the pre-reform rate. By default a band is
//! lower-exclusive and upper-inclusive, so `(0.20, 0.40]` captures 40% but
//! not 20%. The nuisance band of the bundled scenarios is `[0, 0.05)`: it
//! includes duty-free lines and leaves an exact 5% untouched.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{find_group, CountryGroup, TradeLine};
use crate::{fixtures, is_valid_rate, RateSet};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario schema error: {0}")]
    Schema(String),
    #[error("overlapping bands {0} and {1}")]
    OverlappingBands(Interval, Interval),
    #[error("invalid rate for `{field}`: {value}")]
    InvalidRate { field: &'static str, value: f64 },
    #[error("invalid band {0}: lower bound must be below upper bound")]
    EmptyBand(Interval),
    #[error("unknown country group `{0}`")]
    UnknownGroup(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn default_true() -> bool {
    true
}

fn is_true(b: &bool) -> bool {
    *b
}

fn is_false(b: &bool) -> bool {
    !*b
}

/// A range of rates. `upper: None` is unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: Option<f64>,
    pub lower_inclusive: bool,
    pub upper_inclusive: bool,
}

impl Interval {
    /// `(lower, upper]`
    pub fn upper_closed(lower: f64, upper: Option<f64>) -> Self {
        Interval {
            lower,
            upper,
            lower_inclusive: false,
            upper_inclusive: true,
        }
    }

    /// `[lower, upper)`
    pub fn lower_closed(lower: f64, upper: f64) -> Self {
        Interval {
            lower,
            upper: Some(upper),
            lower_inclusive: true,
            upper_inclusive: false,
        }
    }

    pub fn contains(&self, rate: f64) -> bool {
        let above = if self.lower_inclusive {
            rate >= self.lower
        } else {
            rate > self.lower
        };
        let below = match self.upper {
            None => rate.is_finite(),
            Some(u) if self.upper_inclusive => rate <= u,
            Some(u) => rate < u,
        };
        above && below
    }

    fn upper_bound(&self) -> (f64, bool) {
        match self.upper {
            Some(u) => (u, self.upper_inclusive),
            None => (f64::INFINITY, false),
        }
    }

    /// Whether some real rate lies in both intervals.
    pub fn intersects(&self, other: &Interval) -> bool {
        let (lo, lo_inc) = if self.lower > other.lower {
            (self.lower, self.lower_inclusive)
        } else if other.lower > self.lower {
            (other.lower, other.lower_inclusive)
        } else {
            (self.lower, self.lower_inclusive && other.lower_inclusive)
        };
        let (a, a_inc) = self.upper_bound();
        let (b, b_inc) = other.upper_bound();
        let (hi, hi_inc) = if a < b {
            (a, a_inc)
        } else if b < a {
            (b, b_inc)
        } else {
            (a, a_inc && b_inc)
        };
        lo < hi || (lo == hi && lo_inc && hi_inc)
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        if !self.lower.is_finite() || self.lower < 0.0 {
            return Err(ScenarioError::InvalidRate {
                field: "lower",
                value: self.lower,
            });
        }
        if let Some(u) = self.upper {
            if !u.is_finite() {
                return Err(ScenarioError::InvalidRate {
                    field: "upper",
                    value: u,
                });
            }
            if u <= self.lower {
                return Err(ScenarioError::EmptyBand(*self));
            }
        }
        Ok(())
    }
}

fn pct(rate: f64) -> String {
    format!("{}%", (rate * 100.0 * 1e6).round() / 1e6)
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let open = if self.lower_inclusive { '[' } else { '(' };
        match self.upper {
            None => write!(f, "{open}{}, inf]", pct(self.lower)),
            Some(u) => {
                let close = if self.upper_inclusive { ']' } else { ')' };
                write!(f, "{open}{}, {}{close}", pct(self.lower), pct(u))
            }
        }
    }
}

/// Every rate in the band `lower..upper` becomes `new_rate`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandRule {
    pub lower: f64,
    pub upper: Option<f64>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub lower_inclusive: bool,
    #[serde(default = "default_true", skip_serializing_if = "is_true")]
    pub upper_inclusive: bool,
    pub new_rate: f64,
}

impl BandRule {
    pub fn new(interval: Interval, new_rate: f64) -> Self {
        BandRule {
            lower: interval.lower,
            upper: interval.upper,
            lower_inclusive: interval.lower_inclusive,
            upper_inclusive: interval.upper_inclusive,
            new_rate,
        }
    }

    pub fn interval(&self) -> Interval {
        Interval {
            lower: self.lower,
            upper: self.upper,
            lower_inclusive: self.lower_inclusive,
            upper_inclusive: self.upper_inclusive,
        }
    }

    pub fn contains(&self, rate: f64) -> bool {
        self.interval().contains(rate)
    }
}

/// The rule whose interval contains `rate`, if any. Rules are assumed
/// disjoint, which `Scenario` construction enforces.
pub fn classify_band(rate: f64, rules: &[BandRule]) -> Option<&BandRule> {
    rules.iter().find(|r| r.contains(rate))
}

/// Which tariff column the band rules are matched against.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateBasis {
    #[default]
    Applied,
    Statutory,
}

/// Signed elasticities. A negative `gamma_es` shifts imports toward
/// exporters whose duty-inclusive price falls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Elasticities {
    #[serde(default = "Elasticities::default_gamma_es")]
    pub gamma_es: f64,
    /// Per-product exporter-substitution elasticities, keyed by product code.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub gamma_es_by_product: BTreeMap<String, f64>,
    #[serde(default)]
    pub gamma_ds: f64,
    #[serde(default)]
    pub epsilon_d: f64,
}

impl Elasticities {
    pub const DEFAULT_GAMMA_ES: f64 = -1.5;

    fn default_gamma_es() -> f64 {
        Self::DEFAULT_GAMMA_ES
    }

    /// All three responses switched off.
    pub fn zero() -> Self {
        Elasticities {
            gamma_es: 0.0,
            gamma_es_by_product: BTreeMap::new(),
            gamma_ds: 0.0,
            epsilon_d: 0.0,
        }
    }

    pub fn gamma_es_for(&self, product_code: &str) -> f64 {
        self.gamma_es_by_product
            .get(product_code)
            .copied()
            .unwrap_or(self.gamma_es)
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        let all = [self.gamma_es, self.gamma_ds, self.epsilon_d]
            .into_iter()
            .chain(self.gamma_es_by_product.values().copied());
        for value in all {
            if !value.is_finite() {
                return Err(ScenarioError::Schema(format!("elasticity {value} is not finite")));
            }
        }
        Ok(())
    }
}

impl Default for Elasticities {
    fn default() -> Self {
        Elasticities {
            gamma_es: Self::DEFAULT_GAMMA_ES,
            ..Self::zero()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub rules: Vec<BandRule>,
    #[serde(default)]
    pub target_group: Option<String>,
    #[serde(default)]
    pub rate_basis: RateBasis,
    #[serde(default)]
    pub remove_exemptions: bool,
    #[serde(default)]
    pub vat_override: Option<f64>,
    #[serde(default)]
    pub excise_override: Option<f64>,
    #[serde(default)]
    pub elasticities: Elasticities,
}

impl Scenario {
    /// No rules and no overrides: every line keeps its rates.
    pub fn identity() -> Self {
        Scenario {
            name: "identity".into(),
            rules: Vec::new(),
            target_group: None,
            rate_basis: RateBasis::Applied,
            remove_exemptions: false,
            vat_override: None,
            excise_override: None,
            elasticities: Elasticities::default(),
        }
    }

    /// Bundled scenarios: `scenario1`, `scenario2`, `remove-exemptions`,
    /// `identity`.
    pub fn bundled(name: &str) -> Option<Scenario> {
        let src = match name {
            "scenario1" => fixtures::SCENARIO1_JSON,
            "scenario2" => fixtures::SCENARIO2_JSON,
            "remove-exemptions" => fixtures::REMOVE_EXEMPTIONS_JSON,
            "identity" => fixtures::IDENTITY_JSON,
            _ => return None,
        };
        Some(Scenario::from_json(src).expect("bundled scenario is valid"))
    }

    pub fn from_json(src: &str) -> Result<Scenario, ScenarioError> {
        let scenario: Scenario = serde_json::from_str(src).map_err(|e| ScenarioError::Schema(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn with_elasticities(mut self, elasticities: Elasticities) -> Self {
        self.elasticities = elasticities;
        self
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.name.trim().is_empty() {
            return Err(ScenarioError::Schema("`name` is empty".into()));
        }
        for rule in &self.rules {
            rule.interval().validate()?;
            if !is_valid_rate(rule.new_rate) {
                return Err(ScenarioError::InvalidRate {
                    field: "new_rate",
                    value: rule.new_rate,
                });
            }
        }
        for (i, a) in self.rules.iter().enumerate() {
            for b in &self.rules[i + 1..] {
                if a.interval().intersects(&b.interval()) {
                    return Err(ScenarioError::OverlappingBands(a.interval(), b.interval()));
                }
            }
        }
        for (field, value) in [
            ("vat_override", self.vat_override),
            ("excise_override", self.excise_override),
        ] {
            if let Some(v) = value {
                if !is_valid_rate(v) {
                    return Err(ScenarioError::InvalidRate { field, value: v });
                }
            }
        }
        self.elasticities.validate()
    }

    /// The group this scenario targets, resolved against `groups`.
    pub fn resolve_target<'a>(&self, groups: &'a [CountryGroup]) -> Result<Option<&'a CountryGroup>, ScenarioError> {
        match &self.target_group {
            None => Ok(None),
            Some(name) => find_group(groups, name)
                .map(Some)
                .ok_or_else(|| ScenarioError::UnknownGroup(name.clone())),
        }
    }

    fn remap(&self, rate: f64) -> f64 {
        classify_band(rate, &self.rules).map_or(rate, |r| r.new_rate)
    }

    /// Post-reform rates for a line, with the target group already resolved.
    ///
    /// With the statutory basis the schedule rate is remapped and the
    /// collected rate keeps its exemption ratio (or equals the new
    /// schedule rate when exemptions are removed). With the applied basis
    /// the collected rate is remapped (starting from the statutory rate
    /// when exemptions are removed) and the schedule rate is remapped by
    /// the same rules, never ending below the collected rate.
    pub fn transform_rates(&self, line: &TradeLine, target: Option<&CountryGroup>) -> RateSet {
        let old = line.rates();
        if let Some(group) = target {
            if !group.contains(&line.partner) {
                return old;
            }
        }

        let (statutory, applied) = match self.rate_basis {
            RateBasis::Statutory => {
                let statutory = self.remap(old.statutory_tariff);
                let applied = if self.remove_exemptions || old.statutory_tariff == 0.0 {
                    statutory
                } else {
                    (statutory * (old.applied_tariff / old.statutory_tariff)).min(statutory)
                };
                (statutory, applied)
            }
            RateBasis::Applied => {
                let base = if self.remove_exemptions {
                    old.statutory_tariff
                } else {
                    old.applied_tariff
                };
                let applied = self.remap(base);
                (self.remap(old.statutory_tariff).max(applied), applied)
            }
        };

        RateSet {
            statutory_tariff: statutory,
            applied_tariff: applied,
            excise: self.excise_override.unwrap_or(old.excise),
            vat: self.vat_override.unwrap_or(old.vat),
        }
    }
}

pub fn parse_scenario<R: Read>(mut source: R) -> Result<Scenario, ScenarioError> {
    let mut buf = String::new();
    source.read_to_string(&mut buf)?;
    Scenario::from_json(&buf)
}

/// Post-reform rates for one line. Lines outside the scenario's target
/// group keep their rates bit-for-bit.
pub fn apply_rules(line: &TradeLine, scenario: &Scenario, groups: &[CountryGroup]) -> Result<RateSet, ScenarioError> {
    let target = scenario.resolve_target(groups)?;
    Ok(scenario.transform_rates(line, target))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(partner: &str, statutory: f64, applied: f64) -> TradeLine {
        TradeLine {
            product_code: "0101".into(),
            partner: partner.into(),
            cif_value: 100.0,
            quantity: 100.0,
            statutory_tariff: statutory,
            applied_tariff: applied,
            excise_rate: 0.02,
            vat_rate: 0.09,
        }
    }

    #[test]
    fn bundled_scenario1_rules() {
        let s = Scenario::bundled("scenario1").unwrap();
        let expected = [
            (Interval::upper_closed(0.40, None), 0.35),
            (Interval::upper_closed(0.20, Some(0.40)), 0.30),
            (Interval::upper_closed(0.10, Some(0.20)), 0.20),
            (Interval::upper_closed(0.05, Some(0.10)), 0.10),
            (Interval::lower_closed(0.0, 0.05), 0.05),
        ];
        let got: Vec<_> = s.rules.iter().map(|r| (r.interval(), r.new_rate)).collect();
        assert_eq!(got, expected);
        assert_eq!(s.rate_basis, RateBasis::Applied);
        assert_eq!(s.elasticities, Elasticities::default());
    }

    #[test]
    fn bundled_scenario2_top_band_eliminated() {
        let s = Scenario::bundled("scenario2").unwrap();
        assert_eq!(s.rules[0].interval(), Interval::upper_closed(0.40, None));
        assert_eq!(s.rules[0].new_rate, 0.0);
        assert_eq!(s.rules[1].new_rate, 0.35);
    }

    #[test]
    fn overlapping_bands_rejected() {
        let src =
            r#"{"name":"x","rules":[{"lower":0,"upper":0.2,"new_rate":0.1},{"lower":0.1,"upper":0.3,"new_rate":0.2}]}"#;
        assert!(matches!(
            Scenario::from_json(src),
            Err(ScenarioError::OverlappingBands(..))
        ));
    }

    #[test]
    fn touching_bands_are_disjoint() {
        let a = Interval::upper_closed(0.1, Some(0.2));
        let b = Interval::upper_closed(0.2, Some(0.3));
        assert!(!a.intersects(&b));
        let c = Interval::lower_closed(0.0, 0.05);
        let d = Interval::upper_closed(0.05, Some(0.1));
        assert!(!c.intersects(&d));
        let e = Interval {
            lower: 0.05,
            upper: Some(0.1),
            lower_inclusive: true,
            upper_inclusive: true,
        };
        assert!(e.intersects(&Interval::upper_closed(0.0, Some(0.05))));
        assert!(Interval::upper_closed(0.4, None).intersects(&Interval::upper_closed(1.0, Some(2.0))));
    }

    #[test]
    fn schema_and_rate_errors() {
        assert!(matches!(Scenario::from_json("{"), Err(ScenarioError::Schema(_))));
        assert!(matches!(
            Scenario::from_json(r#"{"name":"x","rules":[],"bogus":1}"#),
            Err(ScenarioError::Schema(_))
        ));
        assert!(matches!(
            Scenario::from_json(r#"{"name":"x","rules":[{"lower":0,"upper":0.2,"new_rate":-0.1}]}"#),
            Err(ScenarioError::InvalidRate { .. })
        ));
        assert!(matches!(
            Scenario::from_json(r#"{"name":"x","rules":[{"lower":0.3,"upper":0.2,"new_rate":0.1}]}"#),
            Err(ScenarioError::EmptyBand(_))
        ));
        assert!(matches!(
            Scenario::from_json(r#"{"name":"x","vat_override":11}"#),
            Err(ScenarioError::InvalidRate { .. })
        ));
    }

    #[test]
    fn omitted_fields_take_defaults() {
        let s = Scenario::from_json(r#"{"name":"bare"}"#).unwrap();
        assert!(s.rules.is_empty());
        assert_eq!(s.rate_basis, RateBasis::Applied);
        assert!(!s.remove_exemptions);
        assert_eq!(s.elasticities.gamma_es, -1.5);
        assert_eq!(s.elasticities.gamma_ds, 0.0);
    }

    #[test]
    fn json_round_trip() {
        for name in ["scenario1", "scenario2", "remove-exemptions", "identity"] {
            let s = Scenario::bundled(name).unwrap();
            assert_eq!(Scenario::from_json(&s.to_json()).unwrap(), s);
        }
    }

    #[test]
    fn classify_boundaries() {
        let s = Scenario::bundled("scenario1").unwrap();
        assert_eq!(
            classify_band(0.45, &s.rules).unwrap().interval(),
            Interval::upper_closed(0.40, None)
        );
        assert_eq!(
            classify_band(0.40, &s.rules).unwrap().interval(),
            Interval::upper_closed(0.20, Some(0.40))
        );
        assert!(classify_band(0.05, &s.rules).is_none());
        assert_eq!(classify_band(0.0, &s.rules).unwrap().new_rate, 0.05);
    }

    #[test]
    fn apply_examples() {
        let s1 = Scenario::bundled("scenario1").unwrap();
        let s2 = Scenario::bundled("scenario2").unwrap();
        assert_eq!(
            apply_rules(&line("UAE", 0.45, 0.45), &s1, &[]).unwrap().applied_tariff,
            0.35
        );
        assert_eq!(
            apply_rules(&line("UAE", 0.45, 0.45), &s2, &[]).unwrap().applied_tariff,
            0.0
        );
        for s in [&s1, &s2] {
            assert_eq!(
                apply_rules(&line("UAE", 0.03, 0.03), s, &[]).unwrap().applied_tariff,
                0.05
            );
        }
    }

    #[test]
    fn applied_basis_remaps_schedule_too() {
        let s1 = Scenario::bundled("scenario1").unwrap();
        let r = apply_rules(&line("UAE", 0.03, 0.03), &s1, &[]).unwrap();
        assert_eq!(r.statutory_tariff, 0.05);
        let r = apply_rules(&line("UAE", 0.45, 0.45), &s1, &[]).unwrap();
        assert_eq!(r.statutory_tariff, 0.35);
        // exact 5% collected stays; the 45% schedule is still capped
        let r = apply_rules(&line("UAE", 0.45, 0.05), &s1, &[]).unwrap();
        assert_eq!((r.statutory_tariff, r.applied_tariff), (0.35, 0.05));
        let r = apply_rules(&line("UAE", 0.45, 0.03), &s1, &[]).unwrap();
        assert_eq!((r.statutory_tariff, r.applied_tariff), (0.35, 0.05));
    }

    #[test]
    fn exemption_policy() {
        let mut s = Scenario::bundled("remove-exemptions").unwrap();
        let r = apply_rules(&line("UAE", 0.45, 0.05), &s, &[]).unwrap();
        assert_eq!((r.statutory_tariff, r.applied_tariff), (0.35, 0.35));

        s.remove_exemptions = false;
        let r = apply_rules(&line("UAE", 0.45, 0.09), &s, &[]).unwrap();
        assert_eq!(r.statutory_tariff, 0.35);
        assert!((r.applied_tariff - 0.35 * 0.2).abs() < 1e-15);

        // statutory 0: ratio taken as 1
        s.rules = vec![BandRule::new(Interval::lower_closed(0.0, 0.05), 0.05)];
        let r = apply_rules(&line("UAE", 0.0, 0.0), &s, &[]).unwrap();
        assert_eq!((r.statutory_tariff, r.applied_tariff), (0.05, 0.05));
    }

    #[test]
    fn targeting_and_overrides() {
        let groups = vec![CountryGroup::new("GCC", ["UAE"])];
        let mut s = Scenario::bundled("scenario1").unwrap();
        s.target_group = Some("GCC".into());
        s.vat_override = Some(0.10);
        let outside = line("Swiss", 0.45, 0.45);
        assert_eq!(apply_rules(&outside, &s, &groups).unwrap(), outside.rates());
        let inside = apply_rules(&line("uae", 0.45, 0.45), &s, &groups).unwrap();
        assert_eq!(inside.applied_tariff, 0.35);
        assert_eq!(inside.vat, 0.10);
        assert_eq!(inside.excise, 0.02);

        s.target_group = Some("EU".into());
        assert!(matches!(
            apply_rules(&outside, &s, &groups),
            Err(ScenarioError::UnknownGroup(_))
        ));
    }
}
