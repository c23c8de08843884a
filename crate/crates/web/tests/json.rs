use serde_json::Value;
use shsmb::models;
use shsmb_web::{order_sweep, run_simulation};

#[test]
fn tcp_rows_carry_the_point_mass_flag() {
    let v: Value = serde_json::from_str(&order_sweep(models::TCP_ONOFF, "b_ss", &[2, 3]).unwrap()).unwrap();
    let rows = v.as_array().unwrap();
    assert_eq!(rows.len(), 2);
    for r in rows {
        assert_eq!(r["trivial_lower_bound"], true);
        assert!((r["upper"].as_f64().unwrap() - 1.0).abs() < 1e-6);
    }
    assert!(rows[1]["lower"].as_f64().unwrap() >= rows[0]["lower"].as_f64().unwrap() - 1e-6);
}

#[test]
fn broken_source_is_an_error_message() {
    let e = order_sweep("[vars]\nx\n[modes]\n", "x", &[2]).unwrap_err();
    assert!(!e.is_empty());
    assert!(run_simulation(models::OU, &["q".into()], 0.01, 10.0, 1, 0).is_err());
}
