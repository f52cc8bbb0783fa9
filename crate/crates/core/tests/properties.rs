use proptest::prelude::*;

use tariffsim::engine::{
    self, exporter_substitution, price_change, run_simulation, run_simulation_with, RunOptions, State, Totals,
};
use tariffsim::fixtures;
use tariffsim::ingest::{self, CountryGroup, Dataset, TradeRecord};
use tariffsim::report::{self, Format, RenderOptions};
use tariffsim::scenario::{apply_rules, classify_band, Elasticities, Scenario};

fn partner() -> impl Strategy<Value = String> {
    prop::sample::select(vec!["UAE", "Swiss", "Nederland", "Brazil", "Germany", "OTHER"]).prop_map(String::from)
}

fn product() -> impl Strategy<Value = String> {
    prop::sample::select(vec!["0101", "0201", "1001", "1201"]).prop_map(String::from)
}

fn record() -> impl Strategy<Value = TradeRecord> {
    (
        product(),
        partner(),
        0.0f64..1e6,
        prop::option::of(1e-3f64..1e6),
        0.0f64..2.0,
        0.0f64..=1.0,
        0.0f64..0.5,
        0.0f64..0.3,
    )
        .prop_map(
            |(product_code, partner, cif_value, quantity, statutory, share, excise, vat)| TradeRecord {
                product_code,
                partner,
                cif_value,
                quantity,
                statutory_tariff: statutory,
                applied_tariff: statutory * share,
                excise_rate: excise,
                vat_rate: vat,
            },
        )
}

fn dataset(records: &[TradeRecord]) -> Dataset {
    Dataset::new(ingest::aggregate_lines(records)).with_groups(vec![
        CountryGroup::new("GCC", ["UAE"]),
        CountryGroup::new("EU", ["Nederland", "Germany"]),
    ])
}

proptest! {
    #[test]
    fn aggregation_conserves_cif(records in prop::collection::vec(record(), 1..40)) {
        let lines = ingest::aggregate_lines(&records);
        let before: f64 = records.iter().map(|r| r.cif_value).sum();
        let after: f64 = lines.iter().map(|l| l.cif_value).sum();
        prop_assert!((before - after).abs() <= 1e-9 * before.max(1.0));
        for l in &lines {
            prop_assert!(l.applied_tariff <= l.statutory_tariff);
        }
    }

    #[test]
    fn aggregation_is_idempotent(records in prop::collection::vec(record(), 1..40)) {
        let lines = ingest::aggregate_lines(&records);
        let again: Vec<TradeRecord> = lines.iter().map(TradeRecord::from).collect();
        prop_assert_eq!(ingest::aggregate_lines(&again), lines);
    }

    #[test]
    fn csv_round_trip_is_bit_exact(records in prop::collection::vec(record(), 1..20)) {
        let mut buf = Vec::new();
        ingest::write_trade_records(&records, &mut buf).unwrap();
        let back = ingest::parse_trade_records(buf.as_slice()).unwrap();
        prop_assert_eq!(back.len(), records.len());
        for (a, b) in back.iter().zip(&records) {
            prop_assert_eq!(a.cif_value.to_bits(), b.cif_value.to_bits());
            prop_assert_eq!(a.quantity.map(f64::to_bits), b.quantity.map(f64::to_bits));
            prop_assert_eq!(a.applied_tariff.to_bits(), b.applied_tariff.to_bits());
            prop_assert_eq!(a.statutory_tariff.to_bits(), b.statutory_tariff.to_bits());
            prop_assert_eq!(a.excise_rate.to_bits(), b.excise_rate.to_bits());
            prop_assert_eq!(a.vat_rate.to_bits(), b.vat_rate.to_bits());
        }
    }

    #[test]
    fn lines_outside_target_are_untouched(records in prop::collection::vec(record(), 1..30), top in 0.0f64..0.4) {
        let ds = dataset(&records);
        let mut s = Scenario::bundled("scenario1").unwrap();
        s.rules[0].new_rate = top;
        s.target_group = Some("GCC".into());
        s.vat_override = Some(0.2);
        for line in &ds.lines {
            let new = apply_rules(line, &s, &ds.groups).unwrap();
            if line.partner != "UAE" {
                prop_assert_eq!(new, line.rates());
                prop_assert_eq!(new.applied_tariff.to_bits(), line.applied_tariff.to_bits());
            }
            prop_assert!(new.applied_tariff <= new.statutory_tariff);
        }
    }

    #[test]
    fn monotone_reallocation(
        q in prop::array::uniform2(0.01f64..1e3),
        dp_a in -0.5f64..0.5,
        gap in 1e-3f64..0.5,
        gamma in -1.9f64..-0.01,
    ) {
        let dp_b = dp_a + gap;
        prop_assume!(dp_b * gamma + 1.0 > 0.0);
        let q_es = exporter_substitution(&q, &[dp_a, dp_b], gamma).unwrap();
        prop_assert!(q_es[0] / q[0] > q_es[1] / q[1]);
    }

    #[test]
    fn step_one_is_homogeneous(
        q in prop::collection::vec(0.01f64..1e3, 2..8),
        c in 1e-3f64..1e3,
        gamma in -3.0f64..0.0,
        seed in any::<u64>(),
    ) {
        let dp: Vec<f64> = (0..q.len()).map(|i| (((seed >> (i * 5)) & 31) as f64 / 31.0 - 0.5) * 0.6).collect();
        let base = exporter_substitution(&q, &dp, gamma).unwrap();
        let scaled_q: Vec<f64> = q.iter().map(|x| x * c).collect();
        let scaled = exporter_substitution(&scaled_q, &dp, gamma).unwrap();
        for (s, b) in scaled.iter().zip(&base) {
            prop_assert!((s - c * b).abs() <= 1e-12 * (c * b).abs().max(1e-300));
        }
    }

    #[test]
    fn totals_are_recomputable(records in prop::collection::vec(record(), 1..30), gamma in -1.5f64..0.0) {
        let ds = dataset(&records);
        let s = Scenario::bundled("scenario2").unwrap().with_elasticities(Elasticities { gamma_es: gamma, ..Elasticities::zero() });
        let res = run_simulation(&ds, &s).unwrap();
        prop_assert_eq!(Totals::from_lines(&res.lines, State::Before), res.before);
        prop_assert_eq!(Totals::from_lines(&res.lines, State::After), res.after);
        let sum_new: f64 = res.lines.iter().map(|l| l.revenue_new.total).sum();
        prop_assert!((sum_new - res.after.revenue.total).abs() <= 1e-9 * sum_new.abs().max(1.0));
        for l in &res.lines {
            prop_assert!(l.q_es >= 0.0 && l.q_final >= 0.0);
            if l.q_old > 0.0 {
                prop_assert!((l.cif_new - l.cif_old * (l.q_final / l.q_old)).abs() <= 1e-12 * l.cif_new.abs().max(1.0));
            }
            let r = l.revenue_new;
            prop_assert!((r.total - (r.tariff + r.excise + r.vat)).abs() <= 1e-12 * r.total.max(1.0));
        }
    }

    #[test]
    fn parallelism_does_not_change_results(records in prop::collection::vec(record(), 1..30), jobs in 2usize..6) {
        let ds = dataset(&records);
        let s = Scenario::bundled("scenario1").unwrap();
        let serial = run_simulation(&ds, &s).unwrap();
        let parallel = run_simulation_with(&ds, &s, RunOptions { jobs: Some(jobs) }).unwrap();
        prop_assert_eq!(serde_json::to_string(&serial).unwrap(), serde_json::to_string(&parallel).unwrap());
    }
}

#[test]
fn price_change_ignores_excise_and_vat() {
    let grid = [0.0, 0.03, 0.05, 0.1, 0.2, 0.35, 0.4, 0.45, 1.0, 2.5];
    for &t_old in &grid {
        for &t_new in &grid {
            let reference = price_change(t_old, t_new, 0.0, 0.0);
            for &e in &grid {
                for &v in &grid {
                    assert_eq!(price_change(t_old, t_new, e, v).to_bits(), reference.to_bits());
                    // full duty-inclusive price ratio
                    let full = ((1.0 + t_new) * (1.0 + e) * (1.0 + v) - (1.0 + t_old) * (1.0 + e) * (1.0 + v))
                        / ((1.0 + t_old) * (1.0 + e) * (1.0 + v));
                    assert!((full - reference).abs() <= 1e-12, "{t_old} {t_new} {e} {v}");
                }
            }
        }
    }
}

#[test]
fn bundled_bands_never_overlap_on_grid() {
    for name in ["scenario1", "scenario2"] {
        let s = Scenario::bundled(name).unwrap();
        for i in 0..=1000 {
            let rate = i as f64 / 1000.0;
            let hits = s.rules.iter().filter(|r| r.contains(rate)).count();
            assert!(hits <= 1, "{name}: {rate} in {hits} bands");
            if rate != 0.05 {
                assert_eq!(hits, 1, "{name}: {rate} uncovered");
            }
        }
    }
}

#[test]
fn report_bands_agree_with_scenario_classification() {
    let s = Scenario::bundled("scenario1").unwrap();
    let bands = report::standard_bands();
    for i in 0..=20_000 {
        let rate = i as f64 / 10_000.0;
        let rule = classify_band(rate, &s.rules).map(|r| r.interval());
        let band = bands.iter().find(|b| b.interval.contains(rate)).map(|b| b.interval);
        assert_eq!(rule, band, "{rate}");
    }
}

#[test]
fn zero_elasticities_collapse_to_old_quantities() {
    let ds = fixtures::iran2010_shape();
    let s = Scenario::bundled("scenario1")
        .unwrap()
        .with_elasticities(Elasticities::zero());
    let res = run_simulation(&ds, &s).unwrap();
    for l in &res.lines {
        assert_eq!(l.q_final, l.q_old);
        assert_eq!(l.cif_new, l.cif_old);
    }
}

#[test]
fn rendering_is_deterministic() {
    let res = run_simulation(&fixtures::iran2010_shape(), &Scenario::bundled("scenario1").unwrap()).unwrap();
    let summary = report::scenario_summary(&res);
    let bands = report::revenue_by_band(&res, &report::standard_bands(), State::After);
    for format in Format::ALL {
        for paper_rounding in [false, true] {
            let o = RenderOptions { paper_rounding };
            assert_eq!(
                report::render(&summary, format, &o).unwrap(),
                report::render(&summary, format, &o).unwrap()
            );
            assert_eq!(
                report::render(&bands, format, &o).unwrap(),
                report::render(&bands, format, &o).unwrap()
            );
        }
    }
}

#[test]
fn share_tables_total_their_rows() {
    let res = run_simulation(&fixtures::iran2010_shape(), &Scenario::bundled("scenario2").unwrap()).unwrap();
    for state in [State::Before, State::After] {
        let p = report::partner_shares_for_result(&res, state, Some(3));
        let sum: f64 = p.rows.iter().map(|r| r.value).sum();
        assert_eq!(sum, p.total.value);
        let shares: f64 = p.rows.iter().map(|r| r.share_pct).sum();
        assert!((shares - 100.0).abs() <= 0.1);

        let b = report::revenue_by_band(&res, &report::standard_bands(), state);
        let sum: f64 = b.rows.iter().map(|r| r.value).sum();
        assert_eq!(sum, b.total.value);
    }
}

#[test]
fn compare_uses_shared_before_column() {
    let ds = fixtures::exemption_shape();
    let summaries: Vec<_> = ["scenario1", "scenario2"]
        .iter()
        .map(|n| report::scenario_summary(&engine::run_simulation(&ds, &Scenario::bundled(n).unwrap()).unwrap()))
        .collect();
    let table = report::compare_summaries(&summaries);
    assert_eq!(table.scenarios, ["scenario1", "scenario2"]);
    let revenue = &table.rows[1];
    assert_eq!(revenue.label, "Tariff income");
    assert_eq!(revenue.before, summaries[0].tariff_revenue.before);
    assert!(revenue.after[0] > revenue.after[1]);
}
