use std::process::{Command, Output};

use shsmb::solver::{builtin_ipm, parse_sdpa, SolveOptions};

fn shsmb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shsmb")).args(args).env_remove("SHSMB_SOLVER_TOL").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn ou_bounds_are_exact() {
    let o = shsmb(&["bounds", "ou", "--moment", "x^2", "--orders", "2..4", "--csv"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert_eq!(text.lines().next().unwrap(), "order,lower,upper,status,wall_time_s,trivial_lower_bound");
    let rows = csv_rows(&text);
    assert_eq!(rows.len(), 3);
    for r in rows {
        let lo: f64 = r[1].parse().unwrap();
        let hi: f64 = r[2].parse().unwrap();
        assert!((lo - 1.0).abs() < 1e-6 && (hi - 1.0).abs() < 1e-6, "{r:?}");
        assert_eq!(r[3], "optimal");
    }
}

#[test]
fn tcp_text_table_and_csv_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("tcp.csv");
    let o = shsmb(&["bounds", "tcp_onoff", "--moment", "b_ss", "--orders", "2..3", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("moment E(b_ss)"));
    assert!(text.contains("monotone: yes"));
    assert!(text.contains("mode `ss`"));
    let rows = csv_rows(&std::fs::read_to_string(&out).unwrap());
    assert_eq!(rows.len(), 2);
    let lo2: f64 = rows[0][1].parse().unwrap();
    let lo3: f64 = rows[1][1].parse().unwrap();
    assert!(lo2 > 0.0 && lo3 >= lo2 - 1e-6);
}

#[test]
fn cell_division_mean_has_positive_lower_bound() {
    for n in ["2", "6"] {
        let o = shsmb(&["bounds", "cell_division", "--set", &format!("n={n}"), "--moment", "v", "--orders", "4", "--csv"]);
        assert!(o.status.success());
        let r = &csv_rows(&stdout(&o))[0];
        let lo: f64 = r[1].parse().unwrap();
        let hi: f64 = r[2].parse().unwrap();
        assert!(lo > 0.0 && hi.is_finite() && lo <= hi, "{r:?}");
    }
}

#[test]
fn sweep_over_unused_parameter_is_constant() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("ou_extra.shs");
    let src = shsmb::models::OU.replace("[params]\n", "[params]\nunused = 1\n");
    std::fs::write(&model, src).unwrap();
    let o = shsmb(&[
        "sweep",
        model.to_str().unwrap(),
        "--param",
        "unused",
        "--values",
        "1,2,3",
        "--metric",
        "x^2",
        "--order",
        "2",
        "--csv",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert_eq!(text.lines().next().unwrap(), "param,value,lower,upper,status");
    let rows = csv_rows(&text);
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r[2] == rows[0][2] && r[3] == rows[0][3]));
}

#[test]
fn sweep_rejects_unknown_parameter() {
    let o = shsmb(&["sweep", "ou", "--param", "nope", "--values", "1", "--metric", "x"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn cv2_sweep_reports_an_enclosure() {
    let o = shsmb(&["sweep", "cell_division", "--param", "n", "--values", "2,4", "--metric", "cv2(v)", "--order", "6", "--csv"]);
    assert!(o.status.success());
    let rows = csv_rows(&stdout(&o));
    for r in &rows {
        let lo: f64 = r[2].parse().unwrap();
        let hi: f64 = r[3].parse().unwrap();
        assert!(0.0 <= lo && lo <= hi, "{r:?}");
    }
}

#[test]
fn ou_simulation_matches_variance() {
    let o = shsmb(&["simulate", "ou", "--dt", "0.01", "--t-end", "2000", "--paths", "4", "--seed", "3", "--moments", "x^2"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(text.lines().next().unwrap(), "moment,mean,stderr,ess");
    let r = &csv_rows(&text)[0];
    let mean: f64 = r[1].parse().unwrap();
    let se: f64 = r[2].parse().unwrap();
    // stationary variance of the Euler–Maruyama chain
    let exact = 1.0 / (1.0 - 0.005);
    assert!((mean - exact).abs() < 3.0 * se, "{r:?}");
}

#[test]
fn simulation_is_deterministic() {
    let args = ["simulate", "tcp_onoff", "--t-end", "300", "--paths", "3", "--seed", "8", "--jobs", "2"];
    assert_eq!(stdout(&shsmb(&args)), stdout(&shsmb(&args)));
}

#[test]
fn zero_paths_is_a_usage_error() {
    assert_eq!(shsmb(&["simulate", "ou", "--paths", "0"]).status.code(), Some(2));
}

#[test]
fn missing_initial_section_is_a_model_error() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.shs");
    let src = shsmb::models::OU.split("[initial]").next().unwrap().to_string();
    std::fs::write(&model, src).unwrap();
    assert_eq!(shsmb(&["simulate", model.to_str().unwrap()]).status.code(), Some(3));
}

#[test]
fn exported_problem_solves_to_the_builtin_bound() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tcp2.dat-s");
    let o = shsmb(&["export", "tcp_onoff", "--moment", "b_ss", "--order", "2", "--out", path.to_str().unwrap()]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("* model tcp_onoff sha256 "));
    assert!(text.contains("* order 2, objective min E(b_ss)"));
    let form = parse_sdpa(&text).unwrap();
    let file_value = builtin_ipm(&form, &SolveOptions::default()).objective;

    let b = shsmb(&["bounds", "tcp_onoff", "--moment", "b_ss", "--orders", "2", "--sense", "min", "--csv"]);
    let lo: f64 = csv_rows(&stdout(&b))[0][1].parse().unwrap();
    assert!((file_value - lo).abs() < 1e-4, "{file_value} vs {lo}");
}

#[test]
fn sdpa_export_solver_writes_both_senses() {
    let dir = tempfile::tempdir().unwrap();
    let o = shsmb(&[
        "bounds",
        "ou",
        "--moment",
        "x^2",
        "--orders",
        "2",
        "--solver",
        "sdpa-export",
        "--export-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert!(dir.path().join("ou_x-2_d2_min.dat-s").exists());
    assert!(dir.path().join("ou_x-2_d2_max.dat-s").exists());
}

#[test]
fn invalid_model_path_fails() {
    let o = shsmb(&["export", "/nonexistent/m.shs", "--moment", "x", "--order", "2", "--out", "/tmp/x.dat-s"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/m.shs"));
}

#[test]
fn unknown_moment_is_a_usage_error() {
    assert_eq!(shsmb(&["bounds", "ou", "--moment", "q"]).status.code(), Some(2));
}

#[test]
fn bad_tolerance_variable_is_rejected() {
    let o = Command::new(env!("CARGO_BIN_EXE_shsmb"))
        .args(["bounds", "ou", "--moment", "x^2", "--orders", "2"])
        .env("SHSMB_SOLVER_TOL", "fast")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn failed_order_sets_solver_exit_code() {
    // a moment above the relaxation order is refused per order, not globally
    let o = shsmb(&["bounds", "ou", "--moment", "x^2", "--orders", "1..2", "--csv"]);
    assert_eq!(o.status.code(), Some(4));
    let rows = csv_rows(&stdout(&o));
    assert_eq!(rows[0][3], "error");
    assert_eq!(rows[1][3], "optimal");
}
