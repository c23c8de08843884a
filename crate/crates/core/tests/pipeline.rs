use std::collections::BTreeMap;

use proptest::prelude::*;
use shsmb::mcsim::{estimate_stationary, simulate, Observer, SimConfig};
use shsmb::modelfile::{parse_model, parse_model_with, write_model};
use shsmb::models;
use shsmb::sdpbuild::{bound_at_order, parse_moment, prepare};
use shsmb::solver::{builtin_ipm, parse_sdpa, write_sdpa, BuiltinIpm, EqualityMode, SolveOptions};

fn bounds(src: &str, over: &[(&str, f64)], moment: &str, order: u32) -> (f64, f64) {
    let over: BTreeMap<String, f64> = over.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    let model = parse_model_with(src, &over).unwrap();
    let sys = prepare(&model).unwrap();
    let mu = parse_moment(&sys, moment).unwrap();
    let r = bound_at_order(&sys, &mu, order, &BuiltinIpm, &SolveOptions::default(), &Default::default()).unwrap();
    assert!(r.both_optimal(), "{:?}", r.status());
    (r.lower_value(), r.upper_value())
}

#[test]
fn written_model_reparses_to_the_same_bounds() {
    let model = models::tcp_onoff();
    let again = parse_model(&write_model(&model)).unwrap();
    let a = bounds(models::TCP_ONOFF, &[], "b_ss", 3);
    let sys = prepare(&again).unwrap();
    let mu = parse_moment(&sys, "b_ss").unwrap();
    let r = bound_at_order(&sys, &mu, 3, &BuiltinIpm, &SolveOptions::default(), &Default::default()).unwrap();
    assert!((r.lower_value() - a.0).abs() < 1e-9 && (r.upper_value() - a.1).abs() < 1e-9);
}

#[test]
fn tcp_interval_contains_simulated_mean() {
    let (lo, hi) = bounds(models::TCP_ONOFF, &[], "b_ss", 4);
    let model = models::tcp_onoff();
    let sys = prepare(&model).unwrap();
    let obs = Observer::new(&sys, vec![parse_moment(&sys, "b_ss").unwrap()]);
    let est = estimate_stationary(&simulate(&model, &SimConfig::new(0.01, 5000.0, 100.0, 2, 11), &obs).unwrap()).unwrap();
    let e = &est[0];
    assert!(e.mean >= lo - 3.0 * e.stderr && e.mean <= hi + 3.0 * e.stderr, "{e:?} vs [{lo}, {hi}]");
}

#[test]
fn cell_division_bounds_tighten_with_order() {
    let (l4, u4) = bounds(models::CELL_DIVISION, &[], "v", 4);
    let (l6, u6) = bounds(models::CELL_DIVISION, &[], "v", 6);
    assert!(l6 >= l4 - 1e-6 && u6 <= u4 + 1e-6);
    assert!(u6 - l6 < u4 - l4);
}

#[test]
fn eliminated_export_matches_paired_export() {
    let model = models::birth_death();
    let sys = prepare(&model).unwrap();
    let ms = shsmb::momentgen::build_moment_system(&sys, 3).unwrap();
    let mu = parse_moment(&sys, "x^2").unwrap();
    let p = shsmb::sdpbuild::assemble(&ms, &mu, shsmb::sdpbuild::Sense::Max, &Default::default()).unwrap();
    let std = p.to_standard_form();
    let solve = |mode| builtin_ipm(&parse_sdpa(&write_sdpa(&std, mode, &[]).unwrap()).unwrap(), &SolveOptions::default()).objective;
    let (a, b) = (solve(EqualityMode::Paired), solve(EqualityMode::Eliminated));
    assert!((a - b).abs() < 1e-6, "{a} vs {b}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn ou_variance_is_pinned(sigma in 0.2f64..3.0) {
        let (lo, hi) = bounds(models::OU, &[("sigma", sigma)], "x^2", 2);
        let want = sigma * sigma / 2.0;
        prop_assert!((lo - want).abs() <= 1e-6 * want.max(1.0) && (hi - want).abs() <= 1e-6 * want.max(1.0));
    }

    #[test]
    fn birth_death_mean_is_pinned(k in 1.0f64..30.0, gamma in 0.5f64..4.0) {
        let (lo, hi) = bounds(models::BIRTH_DEATH, &[("k", k), ("gamma", gamma)], "x", 2);
        let want = k / gamma;
        prop_assert!(lo <= hi + 1e-9);
        prop_assert!((lo - want).abs() <= 1e-5 * want && (hi - want).abs() <= 1e-5 * want, "[{}, {}] vs {}", lo, hi, want);
    }
}
