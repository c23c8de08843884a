use std::path::PathBuf;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use shsmb::mcsim::{self, Observer, Scheme, SimConfig, SimError};
use shsmb::momentgen::build_moment_system;
use shsmb::polyalg::Monomial;
use shsmb::sdpbuild::{
    assemble, cv2_bounds, parse_moment, prepare, solve_problem, AssembleOptions, BoundError, Sense, SideResult,
    MONOTONE_SLACK,
};
use shsmb::shs::{reduce_modes, validate, Severity, SingleModeShs};
use shsmb::solver::{reduce_zero_diagonals, write_sdpa, BuiltinIpm, ConicStandardForm, EqualityMode, SolveOptions, SolveStatus};

use crate::model::{load, load_with, parse_overrides, Loaded};
use crate::table::{num, write_file, Table};
use crate::{
    BoundsArgs, EqualitiesArg, ExportArgs, Failure, RelaxArgs, SchemeArg, SenseArg, SimulateArgs, SolverChoice,
    SweepArgs,
};

pub const BOUNDS_HEADER: [&str; 6] = ["order", "lower", "upper", "status", "wall_time_s", "trivial_lower_bound"];
pub const SWEEP_HEADER: [&str; 5] = ["param", "value", "lower", "upper", "status"];

fn model_failure(e: BoundError) -> Failure {
    match e {
        BoundError::UnknownMoment(..) | BoundError::AboveOrder { .. } => Failure::Usage(e.to_string()),
        _ => Failure::Model(e.to_string()),
    }
}

fn solve_options() -> Result<SolveOptions, Failure> {
    SolveOptions::from_env().map_err(|e| Failure::Usage(e.to_string()))
}

fn assemble_options(r: &RelaxArgs) -> AssembleOptions {
    AssembleOptions { products: r.products, scaling: !r.no_scaling }
}

/// `a..b` inclusive, or `a,b,c`.
pub fn parse_orders(text: &str) -> Result<Vec<u32>, Failure> {
    let bad = || Failure::Usage(format!("orders `{text}` are not `a..b` or a comma list"));
    let mut out: Vec<u32> = if let Some((a, b)) = text.split_once("..") {
        let a: u32 = a.trim().parse().map_err(|_| bad())?;
        let b: u32 = b.trim().parse().map_err(|_| bad())?;
        (a..=b).collect()
    } else {
        text.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>()?
    };
    if out.is_empty() || out.contains(&0) {
        return Err(Failure::Usage(format!("orders `{text}` must be positive and non-empty")));
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// One order of a bounds table.
struct Row {
    order: u32,
    lower: Option<SideResult>,
    upper: Option<SideResult>,
    trivial: bool,
    point_mass: Vec<usize>,
    wall: Duration,
    error: Option<String>,
    exported: Vec<PathBuf>,
}

impl Row {
    fn sides(&self) -> impl Iterator<Item = &SideResult> {
        self.lower.iter().chain(self.upper.iter())
    }

    fn status(&self) -> String {
        if self.error.is_some() {
            return "error".into();
        }
        if !self.exported.is_empty() {
            return "exported".into();
        }
        self.sides()
            .map(|s| s.report.status)
            .find(|s| *s != SolveStatus::Optimal)
            .unwrap_or(SolveStatus::Optimal)
            .name()
            .into()
    }

    fn failed(&self) -> bool {
        self.error.is_some() || self.sides().any(|s| !s.report.status.has_value())
    }

    fn value(side: &Option<SideResult>) -> f64 {
        side.as_ref().map_or(f64::NAN, |s| s.value)
    }
}

struct Job<'a> {
    sys: &'a SingleModeShs,
    mu: &'a Monomial,
    sense: SenseArg,
    asm: AssembleOptions,
    opts: SolveOptions,
    export: Option<(PathBuf, String, String)>,
}

fn side_needed(sense: SenseArg, s: Sense) -> bool {
    matches!((sense, s), (SenseArg::Both, _) | (SenseArg::Min, Sense::Min) | (SenseArg::Max, Sense::Max))
}

fn run_order(job: &Job<'_>, order: u32) -> Row {
    let start = Instant::now();
    let mut row = Row { order, lower: None, upper: None, trivial: false, point_mass: vec![], wall: Duration::ZERO, error: None, exported: vec![] };
    let ms = match build_moment_system(job.sys, order) {
        Ok(ms) => ms,
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    };
    row.trivial = ms.trivial_lower_bound();
    row.point_mass = ms.degenerate_modes.clone();
    let mut problems = Vec::new();
    for s in [Sense::Min, Sense::Max] {
        if side_needed(job.sense, s) {
            match assemble(&ms, job.mu, s, &job.asm) {
                Ok(p) => problems.push(p),
                Err(e) => {
                    row.error = Some(e.to_string());
                    return row;
                }
            }
        }
    }
    if let Some((dir, name, hash)) = &job.export {
        for p in &problems {
            let sense = if p.sense == Sense::Min { "min" } else { "max" };
            let path = dir.join(format!("{name}_{}_d{order}_{sense}.dat-s", file_label(&p.label())));
            let mut header = export_header(name, hash, p, order);
            let text = export_form(p, true, &mut header)
                .and_then(|f| write_sdpa(&f, EqualityMode::Paired, &header).map_err(|e| e.to_string()));
            match text.and_then(|t| std::fs::write(&path, t).map_err(|e| e.to_string())) {
                Ok(()) => row.exported.push(path),
                Err(e) => row.error = Some(format!("{}: {e}", path.display())),
            }
        }
        row.wall = start.elapsed();
        return row;
    }
    let solved: Vec<SideResult> = problems.par_iter().map(|p| solve_problem(p, &BuiltinIpm, &job.opts)).collect();
    for (p, r) in problems.iter().zip(solved) {
        match p.sense {
            Sense::Min => row.lower = Some(r),
            Sense::Max => row.upper = Some(r),
        }
    }
    row.wall = start.elapsed();
    row
}

/// Standard form to export; optionally with PSD rows forced to zero by a
/// vanishing diagonal turned into equalities first.
fn export_form(p: &shsmb::sdpbuild::SdpProblem, reduce: bool, header: &mut Vec<String>) -> Result<ConicStandardForm, String> {
    let std = p.to_standard_form();
    if !reduce {
        return Ok(std);
    }
    let (red, _) = reduce_zero_diagonals(&std).map_err(|e| e.to_string())?;
    header.push("zero-diagonal facial reduction applied".into());
    Ok(red)
}

fn file_label(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '-' }).collect()
}

fn export_header(name: &str, hash: &str, p: &shsmb::sdpbuild::SdpProblem, order: u32) -> Vec<String> {
    let (sense, sign) = if p.sense == Sense::Min { ("min", 1.0) } else { ("max", -1.0) };
    vec![
        format!("model {name} sha256 {hash}"),
        format!("order {order}, objective {sense} E({})", p.label()),
        format!("bound = {:e} * optimal value", sign * p.scales[p.target_pos]),
    ]
}

fn monotone(rows: &[Row]) -> bool {
    let ok: Vec<&Row> = rows.iter().filter(|r| !r.failed() && r.sides().all(|s| s.report.status.is_optimal())).collect();
    ok.windows(2).all(|w| {
        let (a, b) = (w[0], w[1]);
        let lo = match (&a.lower, &b.lower) {
            (Some(x), Some(y)) => y.value >= x.value - MONOTONE_SLACK,
            _ => true,
        };
        let hi = match (&a.upper, &b.upper) {
            (Some(x), Some(y)) => y.value <= x.value + MONOTONE_SLACK,
            _ => true,
        };
        lo && hi
    })
}

pub fn bounds(a: &BoundsArgs) -> Result<(), Failure> {
    let loaded = load(&a.model)?;
    let sys = prepare(&loaded.model).map_err(model_failure)?;
    let mu = parse_moment(&sys, &a.moment).map_err(model_failure)?;
    let orders = parse_orders(&a.orders)?;
    let opts = solve_options()?;
    let export = match a.solver {
        SolverChoice::Builtin => None,
        SolverChoice::SdpaExport => {
            std::fs::create_dir_all(&a.export_dir)
                .map_err(|e| Failure::Usage(format!("cannot create {}: {e}", a.export_dir.display())))?;
            Some((a.export_dir.clone(), loaded.name.clone(), loaded.hash()))
        }
    };
    let job = Job { sys: &sys, mu: &mu, sense: a.sense, asm: assemble_options(&a.relax), opts, export };
    let rows: Vec<Row> = orders.par_iter().map(|&d| run_order(&job, d)).collect();

    let mut table = Table::new(&BOUNDS_HEADER);
    for r in &rows {
        table.push(vec![
            r.order.to_string(),
            Row::value(&r.lower).to_string(),
            Row::value(&r.upper).to_string(),
            r.status(),
            format!("{:.6}", r.wall.as_secs_f64()),
            r.trivial.to_string(),
        ]);
    }
    if let Some(out) = &a.out {
        write_file(out, &table.csv())?;
    }
    let label = sys.vars.names();
    let label = mu.display_with(label).to_string();
    if a.csv {
        print!("{}", table.csv());
    } else {
        println!("model {} (sha256 {})  moment E({label})  solver {}", loaded.name, &loaded.hash()[..12], solver_name(a.solver));
        let mut text = Table::new(&["order", "lower", "upper", "status", "time"]);
        for r in &rows {
            text.push(vec![
                r.order.to_string(),
                num(Row::value(&r.lower)),
                num(Row::value(&r.upper)),
                r.status(),
                format!("{:.3} s", r.wall.as_secs_f64()),
            ]);
        }
        print!("{}", text.text());
        for r in &rows {
            if let Some(e) = &r.error {
                println!("order {}: {e}", r.order);
            }
            for s in r.sides().filter(|s| !s.report.status.is_optimal()) {
                println!("order {}: {}: {}", r.order, s.report.status, s.report.message);
            }
            for p in &r.exported {
                println!("order {}: wrote {}", r.order, p.display());
            }
        }
        if a.solver == SolverChoice::Builtin && rows.len() > 1 {
            println!("monotone: {}", if monotone(&rows) { "yes" } else { "no" });
        }
        let mut modes: Vec<usize> = rows.iter().flat_map(|r| r.point_mass.iter().copied()).collect();
        modes.sort_unstable();
        modes.dedup();
        for m in modes {
            let name = loaded.model.modes.get(m).map_or("?", String::as_str);
            println!(
                "note: trivial-lower-bound structure: a point mass at the origin of mode `{name}` satisfies \
                 the moment equations, so every interval contains its moments"
            );
        }
    }
    if rows.iter().any(Row::failed) {
        return Err(Failure::Solver("at least one order failed".into()));
    }
    Ok(())
}

fn solver_name(s: SolverChoice) -> &'static str {
    match s {
        SolverChoice::Builtin => "builtin",
        SolverChoice::SdpaExport => "sdpa-export",
    }
}

enum Metric {
    Moment(String),
    Cv2(String),
}

fn parse_metric(text: &str) -> Metric {
    let t = text.trim();
    match t.strip_prefix("cv2(").and_then(|r| r.strip_suffix(')')) {
        Some(v) => Metric::Cv2(v.trim().to_string()),
        None => Metric::Moment(t.to_string()),
    }
}

/// `(lower, upper, status)` of one sweep point.
fn sweep_point(sys: &SingleModeShs, metric: &Metric, order: u32, asm: AssembleOptions, opts: &SolveOptions) -> Result<(f64, f64, String), Failure> {
    let job = |text: &str| -> Result<Row, Failure> {
        let mu = parse_moment(sys, text).map_err(model_failure)?;
        let job = Job { sys, mu: &mu, sense: SenseArg::Both, asm, opts: opts.clone(), export: None };
        Ok(run_order(&job, order))
    };
    match metric {
        Metric::Moment(m) => {
            let r = job(m)?;
            Ok((Row::value(&r.lower), Row::value(&r.upper), r.status()))
        }
        Metric::Cv2(v) => {
            let m1 = job(v)?;
            let m2 = job(&format!("{v}^2"))?;
            if m1.failed() || m2.failed() {
                return Ok((f64::NAN, f64::NAN, if m1.failed() { m1.status() } else { m2.status() }));
            }
            let mean = (Row::value(&m1.lower), Row::value(&m1.upper));
            let second = (Row::value(&m2.lower), Row::value(&m2.upper));
            let status = if m1.status() != "optimal" { m1.status() } else { m2.status() };
            match cv2_bounds(mean, second) {
                Ok((lo, hi)) => Ok((lo, hi, status)),
                Err(e) => Ok((f64::NAN, f64::NAN, format!("refused: {e}"))),
            }
        }
    }
}

pub fn sweep(a: &SweepArgs) -> Result<(), Failure> {
    let base = parse_overrides(&a.model.overrides)?;
    let metric = parse_metric(&a.metric);
    let opts = solve_options()?;
    let asm = assemble_options(&a.relax);
    let mut models = Vec::new();
    for &v in &a.values {
        let mut ov = base.clone();
        ov.insert(a.param.clone(), v);
        let loaded: Loaded = load_with(&a.model, ov)?;
        models.push((v, prepare(&loaded.model).map_err(model_failure)?));
    }
    let points: Vec<Result<(f64, f64, String), Failure>> =
        models.par_iter().map(|(_, sys)| sweep_point(sys, &metric, a.order, asm, &opts)).collect();
    let mut table = Table::new(&SWEEP_HEADER);
    let mut text = Table::new(&[SWEEP_HEADER[0], SWEEP_HEADER[1], "lower", "upper", "status"]);
    let mut failed = false;
    for ((v, _), p) in models.iter().zip(points) {
        let (lo, hi, status) = p?;
        failed |= lo.is_nan() || hi.is_nan();
        table.push(vec![a.param.clone(), v.to_string(), lo.to_string(), hi.to_string(), status.clone()]);
        text.push(vec![a.param.clone(), v.to_string(), num(lo), num(hi), status]);
    }
    if let Some(out) = &a.out {
        write_file(out, &table.csv())?;
    }
    if a.csv {
        print!("{}", table.csv());
    } else {
        println!("sweep of {} over `{}` at order {}", a.metric, a.param, a.order);
        print!("{}", text.text());
    }
    if failed {
        return Err(Failure::Solver("at least one sweep point has no bound".into()));
    }
    Ok(())
}

fn sim_failure(e: SimError) -> Failure {
    match e {
        SimError::BadConfig(_) | SimError::MilsteinNoise(_) => Failure::Usage(e.to_string()),
        SimError::InsufficientSamples { .. } => Failure::Solver(e.to_string()),
        _ => Failure::Model(e.to_string()),
    }
}

pub fn simulate(a: &SimulateArgs) -> Result<(), Failure> {
    let loaded = load(&a.model)?;
    let model = &loaded.model;
    let fatal: Vec<String> =
        validate(model).into_iter().filter(|d| d.severity == Severity::Fatal).map(|d| d.to_string()).collect();
    if !fatal.is_empty() {
        return Err(Failure::Model(fatal.join("\n")));
    }
    if model.initial.is_none() {
        return Err(Failure::Model(format!("{}: simulation needs an [initial] section", loaded.name)));
    }
    let sys = match prepare(model) {
        Ok(s) => s,
        Err(_) => reduce_modes(model).map_err(|e| Failure::Model(e.to_string()))?,
    };
    let names: Vec<String> = if a.moments.is_empty() {
        let mut v: Vec<String> = model.vars.names().to_vec();
        if model.num_modes() > 1 {
            v.extend(sys.indicators.iter().map(|&b| sys.vars.name(b).to_string()));
        }
        v
    } else {
        a.moments.clone()
    };
    let monos = names.iter().map(|m| parse_moment(&sys, m).map_err(model_failure)).collect::<Result<Vec<_>, _>>()?;
    let mut cfg = SimConfig::new(a.dt, a.t_end, a.burn_in.unwrap_or(a.t_end / 10.0), a.paths as usize, a.seed);
    cfg.batches = a.batches;
    cfg.scheme = match a.scheme {
        SchemeArg::Em => Scheme::EulerMaruyama,
        SchemeArg::Milstein => Scheme::Milstein,
    };
    let ens = mcsim::simulate(model, &cfg, &Observer::new(&sys, monos)).map_err(sim_failure)?;
    let est = mcsim::estimate_stationary(&ens).map_err(sim_failure)?;
    let csv = mcsim::write_csv(&est);
    if let Some(out) = &a.out {
        write_file(out, &csv)?;
    }
    print!("{csv}");
    Ok(())
}

pub fn export(a: &ExportArgs) -> Result<(), Failure> {
    let loaded = load(&a.model)?;
    let sys = prepare(&loaded.model).map_err(model_failure)?;
    let mu = parse_moment(&sys, &a.moment).map_err(model_failure)?;
    if a.order == 0 {
        return Err(Failure::Usage("--order must be positive".into()));
    }
    let sense = match a.sense {
        SenseArg::Min => Sense::Min,
        SenseArg::Max => Sense::Max,
        SenseArg::Both => return Err(Failure::Usage("export writes one problem; choose --sense min or max".into())),
    };
    let ms = build_moment_system(&sys, a.order).map_err(|e| Failure::Model(e.to_string()))?;
    let p = assemble(&ms, &mu, sense, &assemble_options(&a.relax)).map_err(model_failure)?;
    let mode = match a.equalities {
        EqualitiesArg::Paired => EqualityMode::Paired,
        EqualitiesArg::Eliminated => EqualityMode::Eliminated,
    };
    let mut header = export_header(&loaded.name, &loaded.hash(), &p, a.order);
    let form = export_form(&p, !a.no_reduction, &mut header).map_err(Failure::Solver)?;
    let text = write_sdpa(&form, mode, &header).map_err(|e| Failure::Solver(e.to_string()))?;
    write_file(&a.out, &text)?;
    eprintln!("wrote {}", a.out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_ranges() {
        assert_eq!(parse_orders("2..5").unwrap(), vec![2, 3, 4, 5]);
        assert_eq!(parse_orders("4,2,2").unwrap(), vec![2, 4]);
        assert!(parse_orders("0..2").is_err());
        assert!(parse_orders("a..b").is_err());
        assert!(parse_orders("5..2").is_err());
    }

    #[test]
    fn metrics() {
        assert!(matches!(parse_metric("cv2(v)"), Metric::Cv2(v) if v == "v"));
        assert!(matches!(parse_metric("v^2"), Metric::Moment(m) if m == "v^2"));
    }

    #[test]
    fn file_labels_are_safe() {
        assert_eq!(file_label("b_ca*v^2"), "b_ca-v-2");
    }
}
