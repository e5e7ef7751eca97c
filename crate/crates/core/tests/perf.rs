use proptest::prelude::*;

use supermarket_core::catalog;
use supermarket_core::perf::{
    example_tables, mean_queue_length, mean_sojourn, perf_report, Grid, DEFAULT_EPS,
};
use supermarket_core::validate::table_trends;
use supermarket_core::PhDistribution;

/// Plain partial sums of ρ^{(d^k−1)/(d−1)} until the term underflows.
fn series_oracle(rho: f64, d: usize) -> f64 {
    let mut s: f64 = 0.0;
    let mut expo = 1.0f64;
    loop {
        let t = rho.powf(expo);
        if t < 1e-18 * s.max(1.0) {
            break;
        }
        s += t;
        expo = if d == 1 { expo + 1.0 } else { expo * d as f64 + 1.0 };
    }
    s
}

#[test]
fn erlang_point_of_example_one() {
    let eq = mean_queue_length(0.5, 2, DEFAULT_EPS).unwrap();
    assert!((eq - 0.6328430).abs() < 1e-7, "{eq}");
    assert!((eq - series_oracle(0.5, 2)).abs() < 1e-14);
    let rows = example_tables(1, &Grid { eta: vec![4.0], ..Grid::default() }).unwrap();
    let row = rows.iter().find(|r| r.series == "m=2,d=2").unwrap();
    assert!((row.rho - 0.5).abs() < 1e-15);
    assert!((row.eq - eq).abs() < 1e-15);
}

#[test]
fn d1_is_mg1_like() {
    // Geometric tails at d=1 give ρ/(1−ρ).
    for rho in [0.1, 0.5, 0.9] {
        let eq = mean_queue_length(rho, 1, DEFAULT_EPS).unwrap();
        assert!((eq - rho / (1.0 - rho)).abs() < 1e-10 * eq.max(1.0));
    }
}

#[test]
fn exponential_sojourn_at_d1_is_littles_law() {
    let exp = PhDistribution::exponential(1.0).unwrap();
    for lambda in [0.2, 0.5, 0.8] {
        let eq = mean_queue_length(lambda, 1, DEFAULT_EPS).unwrap();
        let et = mean_sojourn(&exp, lambda, 1, DEFAULT_EPS).unwrap();
        assert!((et - eq / lambda).abs() < 1e-12, "lambda={lambda}");
    }
}

#[test]
fn exponential_sojourn_uses_time_average_tails() {
    // With unit exponential service the sojourn formula reduces to 1 + E[Q]
    // for every d; only at d = 1 does that coincide with E[Q]/λ.
    let exp = PhDistribution::exponential(1.0).unwrap();
    for d in 2..=5 {
        let eq = mean_queue_length(0.5, d, DEFAULT_EPS).unwrap();
        let et = mean_sojourn(&exp, 0.5, d, DEFAULT_EPS).unwrap();
        assert!((et - (1.0 + eq)).abs() < 1e-12);
        assert!(et > eq / 0.5);
    }
}

#[test]
fn report_fields_are_consistent() {
    let ph = catalog::example2_ph();
    let r = perf_report(&ph, 1.0, 2, DEFAULT_EPS).unwrap();
    assert!((r.ex - 0.29310344827586204).abs() < 1e-12);
    assert!((r.rho - r.ex).abs() < 1e-15);
    assert!(r.truncation_bound <= DEFAULT_EPS * 2.0);
    assert!(r.terms >= 3);
    assert!(perf_report(&ph, 4.0, 2, DEFAULT_EPS).is_err());
}

#[test]
fn default_grid_trends_hold() {
    let bad = table_trends(&Grid::default());
    assert!(bad.is_empty(), "{bad:?}");
}

#[test]
fn example_three_orders_laws() {
    let rows = example_tables(3, &Grid::default()).unwrap();
    let at = |s: &str, d: usize| rows.iter().find(|r| r.series == s && r.d == d).unwrap().et;
    for d in 1..=10 {
        assert!(at("T(1)", d) < at("T(2)", d) && at("T(2)", d) < at("T(3)", d));
    }
}

#[test]
fn unstable_points_are_flagged() {
    let grid = Grid { eta: vec![1.5, 2.0, 5.0], ..Grid::default() };
    let rows = example_tables(1, &grid).unwrap();
    let r = rows.iter().find(|r| r.series == "m=2,d=2" && r.value == 1.5).unwrap();
    assert!(!r.stable && r.eq.is_nan());
    let r = rows.iter().find(|r| r.series == "m=2,d=2" && r.value == 2.0).unwrap();
    assert!(!r.stable);
    let r = rows.iter().find(|r| r.series == "m=2,d=2" && r.value == 5.0).unwrap();
    assert!(r.stable);
}

proptest! {
    #[test]
    fn queue_length_matches_series(rho in 0.01f64..0.95, d in 1usize..8) {
        let eq = mean_queue_length(rho, d, DEFAULT_EPS).unwrap();
        prop_assert!((eq - series_oracle(rho, d)).abs() <= 1e-11 * eq.max(1.0));
    }

    #[test]
    fn more_choices_never_hurt(rho in 0.01f64..0.95, d in 1usize..8) {
        let a = mean_queue_length(rho, d, DEFAULT_EPS).unwrap();
        let b = mean_queue_length(rho, d + 1, DEFAULT_EPS).unwrap();
        prop_assert!(b <= a);
        prop_assert!(a >= rho);
    }
}
