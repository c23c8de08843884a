//! Multi-mode stochastic hybrid system models and the reduction to a
//! single mode with indicator states.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use thiserror::Error;

use crate::polyalg::{Expr, Polynomial, VarKind, VarTable};

/// Per-mode data of one transition.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeTransition {
    pub target: usize,
    pub intensity: Expr,
    /// Image of each continuous variable.
    pub reset: Vec<Expr>,
}

impl ModeTransition {
    /// "No transition from this mode": zero intensity, same mode, identity reset.
    pub fn inactive(mode: usize, n: usize) -> Self {
        Self {
            target: mode,
            intensity: Expr::zero(),
            reset: (0..n).map(Expr::Var).collect(),
        }
    }

    pub fn is_inactive(&self) -> bool {
        self.intensity.to_polynomial().is_some_and(|p| p.is_zero())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub name: String,
    /// Indexed by source mode.
    pub per_mode: Vec<ModeTransition>,
}

/// `lower ≤ expr ≤ upper`; a missing side is unbounded.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub expr: Expr,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl Constraint {
    pub fn satisfied(&self, point: &[f64]) -> bool {
        let v = self.expr.eval(point);
        v.is_finite() && self.lower.is_none_or(|l| v >= l) && self.upper.is_none_or(|u| v <= u)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialState {
    pub mode: usize,
    pub state: Vec<f64>,
}

/// Stochastic hybrid system with finitely many modes:
/// `dx = f(q,x)dt + g(q,x)dw`, transitions firing with intensity `λ_r(q,x)`
/// and mapping `(q,x) ↦ (θ_r(q), φ_r(q,x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShsModel {
    pub vars: VarTable,
    pub modes: Vec<String>,
    pub noise_dim: usize,
    /// `[mode][var]`
    pub drift: Vec<Vec<Expr>>,
    /// `[mode][var][noise]`
    pub diffusion: Vec<Vec<Vec<Expr>>>,
    pub transitions: Vec<Transition>,
    pub params: BTreeMap<String, f64>,
    pub constraints: Vec<Constraint>,
    pub initial: Option<InitialState>,
    /// Characteristic magnitude per continuous variable, used to scale moments.
    pub scales: Vec<f64>,
}

impl ShsModel {
    /// Empty model over the given continuous variables and modes.
    pub fn new<S: AsRef<str>>(vars: &[S], modes: &[S], noise_dim: usize) -> Self {
        let vars = VarTable::continuous(vars);
        let n = vars.len();
        let nm = modes.len();
        Self {
            vars,
            modes: modes.iter().map(|m| m.as_ref().to_string()).collect(),
            noise_dim,
            drift: vec![vec![Expr::zero(); n]; nm],
            diffusion: vec![vec![vec![Expr::zero(); noise_dim]; n]; nm],
            transitions: Vec::new(),
            params: BTreeMap::new(),
            constraints: Vec::new(),
            initial: None,
            scales: vec![1.0; n],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn num_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn mode_id(&self, name: &str) -> Option<usize> {
        self.modes.iter().position(|m| m == name)
    }

    /// Adds a transition that is inactive in every mode; fill in with
    /// [`ShsModel::set_transition`].
    pub fn add_transition(&mut self, name: &str) -> usize {
        let n = self.num_vars();
        self.transitions.push(Transition {
            name: name.to_string(),
            per_mode: (0..self.num_modes()).map(|m| ModeTransition::inactive(m, n)).collect(),
        });
        self.transitions.len() - 1
    }

    pub fn set_transition(&mut self, r: usize, mode: usize, data: ModeTransition) {
        self.transitions[r].per_mode[mode] = data;
    }

    fn all_exprs(&self) -> Vec<(String, &Expr)> {
        let mut out = Vec::new();
        for (m, mode) in self.modes.iter().enumerate() {
            for (i, e) in self.drift.get(m).into_iter().flatten().enumerate() {
                out.push((format!("drift of `{}` in mode `{mode}`", self.var_label(i)), e));
            }
            for (i, row) in self.diffusion.get(m).into_iter().flatten().enumerate() {
                for (k, e) in row.iter().enumerate() {
                    out.push((
                        format!("diffusion of `{}` (noise {}) in mode `{mode}`", self.var_label(i), k + 1),
                        e,
                    ));
                }
            }
            for t in &self.transitions {
                if let Some(mt) = t.per_mode.get(m) {
                    out.push((format!("intensity of `{}` in mode `{mode}`", t.name), &mt.intensity));
                    for (i, e) in mt.reset.iter().enumerate() {
                        out.push((
                            format!("reset of `{}` by `{}` in mode `{mode}`", self.var_label(i), t.name),
                            e,
                        ));
                    }
                }
            }
        }
        out
    }

    fn var_label(&self, i: usize) -> String {
        if i < self.vars.len() {
            self.vars.name(i).to_string()
        } else {
            format!("#{i}")
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Severity {
    /// The model cannot be analysed.
    Fatal,
    /// Non-polynomial dynamics that the recasting step must handle.
    NeedsRecast,
    Warning,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub severity: Severity,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Fatal => "error",
            Severity::NeedsRecast => "recast",
            Severity::Warning => "warning",
        };
        write!(f, "{tag}: {}", self.message)
    }
}

fn diag(severity: Severity, message: impl Into<String>) -> Diagnostic {
    Diagnostic {
        severity,
        message: message.into(),
    }
}

const INTENSITY_SAMPLES: usize = 200;

/// Structural checks on a model. Returns an empty list for a consistent,
/// polynomial model whose modes are all reachable.
pub fn validate(model: &ShsModel) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let n = model.num_vars();
    let nm = model.num_modes();
    if nm == 0 {
        out.push(diag(Severity::Fatal, "model declares no modes"));
        return out;
    }
    for (i, name) in model.modes.iter().enumerate() {
        if model.modes[..i].contains(name) {
            out.push(diag(Severity::Fatal, format!("mode `{name}` declared twice")));
        }
    }
    for name in model.vars.names() {
        if model.params.contains_key(name) {
            out.push(diag(Severity::Fatal, format!("`{name}` is both a variable and a parameter")));
        }
    }
    if model.drift.len() != nm || model.drift.iter().any(|d| d.len() != n) {
        out.push(diag(Severity::Fatal, format!("drift must be {nm} modes × {n} variables")));
    }
    if model.diffusion.len() != nm
        || model
            .diffusion
            .iter()
            .any(|g| g.len() != n || g.iter().any(|row| row.len() != model.noise_dim))
    {
        out.push(diag(
            Severity::Fatal,
            format!("diffusion must be {nm} modes × {n} variables × {} noise inputs", model.noise_dim),
        ));
    }
    if model.scales.len() != n || model.scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        out.push(diag(Severity::Fatal, "scales must be one positive number per variable"));
    }
    for t in &model.transitions {
        if t.per_mode.len() != nm {
            out.push(diag(
                Severity::Fatal,
                format!("transition `{}` must define every one of the {nm} modes", t.name),
            ));
            continue;
        }
        for (m, mt) in t.per_mode.iter().enumerate() {
            if mt.target >= nm {
                out.push(diag(
                    Severity::Fatal,
                    format!("transition `{}` from `{}` targets unknown mode", t.name, model.modes[m]),
                ));
            }
            if mt.reset.len() != n {
                out.push(diag(
                    Severity::Fatal,
                    format!("transition `{}` from `{}` must reset all {n} variables", t.name, model.modes[m]),
                ));
            }
            for (i, e) in mt.reset.iter().enumerate() {
                if e.max_var().is_some_and(|v| v < n) && !e.is_polynomial() {
                    out.push(diag(
                        Severity::Fatal,
                        format!(
                            "reset of `{}` by `{}` in mode `{}` is not polynomial",
                            model.var_label(i),
                            t.name,
                            model.modes[m]
                        ),
                    ));
                }
            }
        }
    }
    for (label, e) in model.all_exprs() {
        if let Some(v) = e.max_var().filter(|&v| v >= n) {
            out.push(diag(Severity::Fatal, format!("{label} references undeclared variable #{v}")));
            continue;
        }
        if !e.is_polynomial() && !label.starts_with("reset") {
            out.push(diag(Severity::NeedsRecast, format!("{label} is not polynomial and requires recasting")));
        }
    }
    for c in &model.constraints {
        if c.expr.max_var().is_some_and(|v| v >= n) {
            out.push(diag(Severity::Fatal, "constraint references an undeclared variable"));
        }
        if c.lower.is_none() && c.upper.is_none() {
            out.push(diag(Severity::Warning, "constraint has no bounds"));
        }
    }
    if let Some(init) = &model.initial {
        if init.mode >= nm || init.state.len() != n {
            out.push(diag(Severity::Fatal, "initial condition has wrong dimensions"));
        }
    }
    if out.iter().any(|d| d.severity == Severity::Fatal) {
        return out;
    }

    // modes entered by some active transition from another mode, or the initial mode
    let mut reachable = vec![false; nm];
    if let Some(init) = &model.initial {
        reachable[init.mode] = true;
    }
    if nm == 1 {
        reachable[0] = true;
    }
    for t in &model.transitions {
        for (m, mt) in t.per_mode.iter().enumerate() {
            if mt.target != m && !mt.is_inactive() {
                reachable[mt.target] = true;
            }
        }
    }
    for (m, r) in reachable.iter().enumerate() {
        if !r {
            out.push(diag(
                Severity::Warning,
                format!("mode `{}` is not entered by any transition", model.modes[m]),
            ));
        }
    }

    for (label, point) in negative_intensity_samples(model) {
        out.push(diag(
            Severity::Warning,
            format!("{label} is negative at feasible point {point:?}"),
        ));
    }
    out
}

fn negative_intensity_samples(model: &ShsModel) -> Vec<(String, Vec<f64>)> {
    let n = model.num_vars();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
    let mut points = Vec::new();
    let mut tries = 0;
    while points.len() < INTENSITY_SAMPLES && tries < 50 * INTENSITY_SAMPLES {
        tries += 1;
        let p: Vec<f64> = (0..n)
            .map(|i| rng.random_range(-10.0..10.0) * model.scales[i])
            .collect();
        if model.constraints.iter().all(|c| c.satisfied(&p)) {
            points.push(p);
        }
    }
    let mut bad = Vec::new();
    for t in &model.transitions {
        for (m, mt) in t.per_mode.iter().enumerate() {
            if let Some(p) = points.iter().find(|p| mt.intensity.eval(p) < -1e-12) {
                bad.push((format!("intensity of `{}` in mode `{}`", t.name, model.modes[m]), p.clone()));
            }
        }
    }
    bad
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ShsError {
    #[error("model is invalid:\n{}", format_diags(.0))]
    Invalid(Vec<Diagnostic>),
    #[error("unknown mode `{0}`")]
    UnknownMode(String),
}

fn format_diags(d: &[Diagnostic]) -> String {
    d.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n")
}

/// Dynamics of the model frozen at one mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeDynamics {
    pub drift: Vec<Expr>,
    pub diffusion: Vec<Vec<Expr>>,
    pub transitions: Vec<ModeTransition>,
}

pub fn specialize(model: &ShsModel, mode: &str) -> Result<ModeDynamics, ShsError> {
    let m = model.mode_id(mode).ok_or_else(|| ShsError::UnknownMode(mode.to_string()))?;
    Ok(ModeDynamics {
        drift: model.drift[m].clone(),
        diffusion: model.diffusion[m].clone(),
        transitions: model.transitions.iter().map(|t| t.per_mode[m].clone()).collect(),
    })
}

/// Inequality over the (augmented) state of a single-mode system.
#[derive(Debug, Clone, PartialEq)]
pub struct Inequality {
    pub expr: Expr,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

/// One transition of a mode-free system; `reset` covers every variable.
#[derive(Debug, Clone, PartialEq)]
pub struct ResetRule {
    pub name: String,
    pub intensity: Expr,
    pub reset: Vec<Expr>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AuxKind {
    Call(crate::polyalg::Func),
    Reciprocal,
}

/// State appended by recasting: `var = definition(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxState {
    pub var: usize,
    pub kind: AuxKind,
    /// Definition in terms of the original (non-auxiliary) variables.
    pub definition: Expr,
    /// Argument of the function (or the denominator of a reciprocal) as a
    /// polynomial over the augmented state.
    pub argument: Polynomial,
    /// `false` when its post-jump value is not polynomial in the augmented
    /// state; such states carry no moment dynamics of their own.
    pub dynamic: bool,
}

/// Mode-free SHS over an augmented state with algebraic side constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleModeShs {
    pub vars: VarTable,
    pub noise_dim: usize,
    pub drift: Vec<Expr>,
    /// `[var][noise]`
    pub diffusion: Vec<Vec<Expr>>,
    pub transitions: Vec<ResetRule>,
    /// Polynomials required to vanish.
    pub eq_constraints: Vec<Polynomial>,
    pub ineq_constraints: Vec<Inequality>,
    /// Indicator variable per original mode, in mode order.
    pub indicators: Vec<usize>,
    pub aux: Vec<AuxState>,
    pub scales: Vec<f64>,
}

impl SingleModeShs {
    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn continuous_vars(&self) -> Vec<usize> {
        self.vars.ids_of(VarKind::Continuous)
    }

    /// Variables excluded from moment test functions.
    pub fn algebraic_vars(&self) -> Vec<usize> {
        self.aux.iter().filter(|a| !a.dynamic).map(|a| a.var).collect()
    }

    /// `true` when every drift, diffusion, intensity and reset entry is
    /// polynomial. Resets of algebraic states are not inspected.
    pub fn is_polynomial(&self) -> bool {
        let algebraic = self.algebraic_vars();
        self.drift.iter().all(Expr::is_polynomial)
            && self.diffusion.iter().flatten().all(Expr::is_polynomial)
            && self.transitions.iter().all(|t| {
                t.intensity.is_polynomial()
                    && t.reset
                        .iter()
                        .enumerate()
                        .all(|(i, e)| algebraic.contains(&i) || e.is_polynomial())
            })
            && self.ineq_constraints.iter().all(|c| c.expr.is_polynomial())
    }

    /// Point of the augmented space for mode `mode` and continuous state `x`;
    /// auxiliary states take their defining values.
    pub fn lift(&self, mode: usize, x: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; self.num_vars()];
        let cont = self.continuous_vars();
        for (k, &v) in cont.iter().enumerate() {
            p[v] = x[k];
        }
        if let Some(&b) = self.indicators.get(mode) {
            p[b] = 1.0;
        }
        for a in &self.aux {
            p[a.var] = a.definition.eval(&p);
        }
        p
    }
}

/// Replaces the discrete mode by indicator states `b_i`, one per mode.
pub fn reduce_modes(model: &ShsModel) -> Result<SingleModeShs, ShsError> {
    let diags = validate(model);
    let fatal: Vec<Diagnostic> = diags.into_iter().filter(|d| d.severity == Severity::Fatal).collect();
    if !fatal.is_empty() {
        return Err(ShsError::Invalid(fatal));
    }
    let n = model.num_vars();
    let nm = model.num_modes();
    let mut vars = model.vars.clone();
    let indicators: Vec<usize> = model
        .modes
        .iter()
        .map(|m| {
            let name = vars.fresh_name(&format!("b_{m}"));
            vars.push(&name, VarKind::Indicator)
        })
        .collect();
    let total = vars.len();
    let b = |i: usize| Expr::Var(indicators[i]);
    let weighted = |per_mode: &dyn Fn(usize) -> Expr| -> Expr {
        Expr::sum((0..nm).map(|i| Expr::product(vec![b(i), per_mode(i)])).collect())
    };

    let mut drift = vec![Expr::zero(); total];
    let mut diffusion = vec![vec![Expr::zero(); model.noise_dim]; total];
    for j in 0..n {
        drift[j] = weighted(&|i| model.drift[i][j].clone());
        for (k, slot) in diffusion[j].iter_mut().enumerate() {
            *slot = weighted(&|i| model.diffusion[i][j][k].clone());
        }
    }

    let mut transitions = Vec::with_capacity(model.transitions.len());
    for t in &model.transitions {
        let intensity = weighted(&|i| t.per_mode[i].intensity.clone());
        let mut reset = vec![Expr::zero(); total];
        for (j, slot) in reset.iter_mut().enumerate().take(n) {
            *slot = weighted(&|i| t.per_mode[i].reset[j].clone());
        }
        // b ↦ b − Σ b_i 1_{s_i} + Σ b_i 1_{θ(s_i)}; component j is b_j − b_j + Σ_{θ(i)=j} b_i
        for (j, &bj) in indicators.iter().enumerate() {
            let mut img = Polynomial::var(bj) - Polynomial::var(bj);
            for (i, mt) in t.per_mode.iter().enumerate() {
                if mt.target == j {
                    img = img + Polynomial::var(indicators[i]);
                }
            }
            reset[bj] = Expr::from(&img);
        }
        transitions.push(ResetRule {
            name: t.name.clone(),
            intensity,
            reset,
        });
    }

    let mut eq_constraints = Vec::new();
    let mut sum_b = Polynomial::constant(-1.0);
    for &bi in &indicators {
        sum_b = sum_b + Polynomial::var(bi);
    }
    eq_constraints.push(sum_b);
    for i in 0..nm {
        for j in (i + 1)..nm {
            eq_constraints.push(Polynomial::var(indicators[i]) * Polynomial::var(indicators[j]));
        }
    }

    let mut ineq_constraints: Vec<Inequality> = indicators
        .iter()
        .map(|&bi| Inequality {
            expr: Expr::Var(bi),
            lower: Some(0.0),
            upper: Some(1.0),
        })
        .collect();
    ineq_constraints.extend(model.constraints.iter().map(|c| Inequality {
        expr: c.expr.clone(),
        lower: c.lower,
        upper: c.upper,
    }));

    let mut scales = model.scales.clone();
    scales.resize(total, 1.0);

    Ok(SingleModeShs {
        vars,
        noise_dim: model.noise_dim,
        drift,
        diffusion,
        transitions,
        eq_constraints,
        ineq_constraints,
        indicators,
        aux: Vec::new(),
        scales,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;

    fn poly(e: &Expr) -> Polynomial {
        e.to_polynomial().expect("polynomial")
    }

    fn one_hot(sys: &SingleModeShs, mode: usize) -> BTreeMap<usize, Polynomial> {
        sys.indicators
            .iter()
            .enumerate()
            .map(|(i, &b)| (b, Polynomial::constant(if i == mode { 1.0 } else { 0.0 })))
            .collect()
    }

    #[test]
    fn tcp_validates_cleanly() {
        let model = models::tcp_onoff();
        assert_eq!(validate(&model), vec![]);
    }

    #[test]
    fn rational_drift_needs_recasting() {
        let model = models::cell_division();
        let d = validate(&model);
        assert!(d.iter().any(|d| d.severity == Severity::NeedsRecast && d.message.contains("requires recasting")));
        assert!(d.iter().all(|d| d.severity != Severity::Fatal));
    }

    #[test]
    fn undeclared_variable_is_reported() {
        let mut model = ShsModel::new(&["x"], &["on"], 0);
        model.drift[0][0] = Expr::Var(3);
        let d = validate(&model);
        assert!(d.iter().any(|d| d.severity == Severity::Fatal && d.message.contains("#3")));
    }

    #[test]
    fn unreachable_mode_warns() {
        let model = ShsModel::new(&["x"], &["a", "b"], 0);
        let d = validate(&model);
        assert!(d.iter().any(|d| d.message.contains("`a`")));
        assert!(d.iter().all(|d| d.severity == Severity::Warning));
    }

    #[test]
    fn negative_intensity_warns() {
        let mut model = ShsModel::new(&["x"], &["on"], 0);
        let r = model.add_transition("decay");
        model.set_transition(
            r,
            0,
            ModeTransition {
                target: 0,
                intensity: Expr::Var(0),
                reset: vec![Expr::zero()],
            },
        );
        assert!(validate(&model).iter().any(|d| d.message.contains("negative")));
        model.constraints.push(Constraint {
            expr: Expr::Var(0),
            lower: Some(0.0),
            upper: None,
        });
        assert!(validate(&model).is_empty());
    }

    #[test]
    fn single_mode_reduction_degenerates() {
        let model = models::ou();
        let sys = reduce_modes(&model).unwrap();
        assert_eq!(sys.indicators.len(), 1);
        let b = sys.indicators[0];
        assert_eq!(poly(&sys.drift[0]), Polynomial::var(b) * Polynomial::var(0).scale(-1.0));
        assert!(sys.eq_constraints.contains(&(Polynomial::var(b) - Polynomial::constant(1.0))));
    }

    #[test]
    fn tcp_reduction_matches_single_mode_picture() {
        let model = models::tcp_onoff();
        let sys = reduce_modes(&model).unwrap();
        let id = |n: &str| sys.vars.id(n).unwrap();
        let (v, bss, bca) = (id("v"), id("b_ss"), id("b_ca"));
        let r = 5.0;
        let delta = model.params["delta"];
        let expected_drift = Polynomial::var(bss)
            * (Polynomial::var(v).scale(2f64.ln() / r) + Polynomial::constant(delta))
            + Polynomial::var(bca).scale(1.0 / r);
        assert!(poly(&sys.drift[v]).approx_eq(&expected_drift, 1e-15));
        let drop = sys.transitions.iter().find(|t| t.name == "drop").unwrap();
        let expected_rate = (Polynomial::var(bss) + Polynomial::var(bca)) * Polynomial::var(v).scale(0.05 / r);
        assert!(poly(&drop.intensity).approx_eq(&expected_rate, 1e-15));
        // drop moves ss and ca into ca
        assert!(poly(&drop.reset[bss]).is_zero());
        assert_eq!(poly(&drop.reset[bca]), Polynomial::var(bss) + Polynomial::var(bca));
    }

    #[test]
    fn pure_switch_permutes_indicators() {
        let mut model = ShsModel::new(&["x"], &["a", "b"], 0);
        let r = model.add_transition("swap");
        for m in 0..2 {
            model.set_transition(
                r,
                m,
                ModeTransition {
                    target: 1 - m,
                    intensity: Expr::one(),
                    reset: vec![Expr::Var(0)],
                },
            );
        }
        let sys = reduce_modes(&model).unwrap();
        let t = &sys.transitions[0];
        let (b1, b2) = (sys.indicators[0], sys.indicators[1]);
        assert_eq!(poly(&t.reset[b1]), Polynomial::var(b2));
        assert_eq!(poly(&t.reset[b2]), Polynomial::var(b1));
        assert_eq!(poly(&t.reset[0]), (Polynomial::var(b1) + Polynomial::var(b2)) * Polynomial::var(0));
    }

    #[test]
    fn specialize_tcp() {
        let model = models::tcp_onoff();
        let off = specialize(&model, "off").unwrap();
        assert!(poly(&off.drift[0]).is_zero());
        let names: Vec<&str> = model.transitions.iter().map(|t| t.name.as_str()).collect();
        let drop = names.iter().position(|&n| n == "drop").unwrap();
        let start = names.iter().position(|&n| n == "start").unwrap();
        assert!(poly(&off.transitions[drop].intensity).is_zero());
        assert_eq!(poly(&off.transitions[start].intensity), Polynomial::constant(2.0));
        let ca = specialize(&model, "ca").unwrap();
        assert_eq!(poly(&ca.drift[0]), Polynomial::constant(0.2));
        assert!(matches!(specialize(&model, "nope"), Err(ShsError::UnknownMode(_))));
        let ou = models::ou();
        let only = specialize(&ou, "main").unwrap();
        assert_eq!(only.drift, ou.drift[0]);
    }

    /// Substituting a one-hot indicator vector into the reduced system gives
    /// back the frozen-mode dynamics, for every bundled multi-mode model.
    #[test]
    fn reduction_equivalence_per_mode() {
        for model in [models::tcp_onoff(), models::ou(), models::birth_death()] {
            let sys = reduce_modes(&model).unwrap();
            let n = model.num_vars();
            for (m, name) in model.modes.iter().enumerate() {
                let sub = one_hot(&sys, m);
                let spec = specialize(&model, name).unwrap();
                for j in 0..n {
                    assert_eq!(poly(&sys.drift[j]).substitute(&sub), poly(&spec.drift[j]));
                    for k in 0..model.noise_dim {
                        assert_eq!(poly(&sys.diffusion[j][k]).substitute(&sub), poly(&spec.diffusion[j][k]));
                    }
                }
                for (r, t) in sys.transitions.iter().enumerate() {
                    let mt = &spec.transitions[r];
                    assert_eq!(poly(&t.intensity).substitute(&sub), poly(&mt.intensity));
                    for j in 0..n {
                        assert_eq!(poly(&t.reset[j]).substitute(&sub), poly(&mt.reset[j]));
                    }
                    for (i, &b) in sys.indicators.iter().enumerate() {
                        let want = if i == mt.target { 1.0 } else { 0.0 };
                        assert_eq!(poly(&t.reset[b]).substitute(&sub), Polynomial::constant(want));
                    }
                }
            }
        }
    }

    #[test]
    fn indicator_resets_preserve_partition_of_unity() {
        let sys = reduce_modes(&models::tcp_onoff()).unwrap();
        let sum_b = &sys.eq_constraints[0];
        for t in &sys.transitions {
            let img: BTreeMap<usize, Polynomial> =
                sys.indicators.iter().map(|&b| (b, poly(&t.reset[b]))).collect();
            assert!((sum_b.substitute(&img) - sum_b.clone()).is_zero());
        }
    }

    #[test]
    fn reduction_of_polynomial_model_is_polynomial() {
        for model in [models::tcp_onoff(), models::ou(), models::birth_death()] {
            assert!(reduce_modes(&model).unwrap().is_polynomial());
        }
    }
}
