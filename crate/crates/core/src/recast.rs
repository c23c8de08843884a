//! Recasting rational and elementary-function dynamics into polynomial
//! form by appending auxiliary states with algebraic constraints.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::polyalg::{Expr, Func, Polynomial, VarKind};
use crate::shs::{AuxKind, AuxState, Inequality, ResetRule, SingleModeShs};

/// Strict inequalities `y > 0` become `y ≥ DOMAIN_EPS`.
pub const DOMAIN_EPS: f64 = 1e-6;
/// Generations of derivative-induced states before giving up.
pub const MAX_DEPTH: usize = 8;

const PH_FUNC: usize = 1 << 28;
const PH_RECIP: usize = 1 << 29;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RecastError {
    #[error("{0} contains a transcendental function; use elementary recasting")]
    NotRational(String),
    #[error("reset of `{var}` by `{transition}` is not polynomial")]
    NonPolynomialReset { transition: String, var: String },
    #[error("denominator is identically zero")]
    ZeroDenominator,
    #[error("reset `{transition}` does not map the state {definition} into the augmented state space")]
    UnclosedReset { transition: String, definition: String },
    #[error("derivatives not closed after {0} rounds")]
    DepthExceeded(usize),
}

/// What to do with an auxiliary state whose post-jump value is not a
/// polynomial of the augmented state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnclosedReset {
    Error,
    /// Keep the state as an algebraic variable without moment dynamics.
    Algebraic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewState {
    pub var: usize,
    pub name: String,
    pub kind: AuxKind,
    pub argument: Polynomial,
    pub definition: Expr,
    /// Drift of the state (its derivative-table entry).
    pub drift: Polynomial,
    pub diffusion: Vec<Polynomial>,
    pub dynamic: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RecastPlan {
    pub new_states: Vec<NewState>,
    pub eq_constraints: Vec<Polynomial>,
    pub ineq_constraints: Vec<Inequality>,
}

impl RecastPlan {
    pub fn is_empty(&self) -> bool {
        self.new_states.is_empty()
    }

    pub fn derivative(&self, var: usize) -> Option<&Polynomial> {
        self.new_states.iter().find(|s| s.var == var).map(|s| &s.drift)
    }
}

/// Recasts a system whose drift, diffusion and intensities are rational.
/// States whose reset image is not polynomial are kept algebraic.
pub fn recast_rational(sys: &SingleModeShs) -> Result<(SingleModeShs, RecastPlan), RecastError> {
    if let Some(what) = first_transcendental(sys) {
        return Err(RecastError::NotRational(what));
    }
    Recaster::new(sys, UnclosedReset::Algebraic).run(None).map(|(s, p, _)| (s, p))
}

/// Recasts a system with `exp`, `log`, `sin`, `cos`, quotients and integer
/// powers. Resets must map every new state into the augmented space.
pub fn recast_elementary(sys: &SingleModeShs) -> Result<(SingleModeShs, RecastPlan), RecastError> {
    Recaster::new(sys, UnclosedReset::Error).run(None).map(|(s, p, _)| (s, p))
}

/// Rational systems go through [`recast_rational`], the rest through
/// [`recast_elementary`].
pub fn recast(sys: &SingleModeShs) -> Result<(SingleModeShs, RecastPlan), RecastError> {
    if first_transcendental(sys).is_none() {
        recast_rational(sys)
    } else {
        recast_elementary(sys)
    }
}

/// Itô image of `definition` (over the variables of `sys`).
#[derive(Debug, Clone)]
pub struct ItoImage {
    /// Augmented system the polynomials refer to.
    pub system: SingleModeShs,
    pub drift: Polynomial,
    pub diffusion: Vec<Polynomial>,
}

pub fn ito_drift_for_state(definition: &Expr, sys: &SingleModeShs) -> Result<ItoImage, RecastError> {
    let mode = if first_transcendental(sys).is_none() && !definition.contains_call() {
        UnclosedReset::Algebraic
    } else {
        UnclosedReset::Error
    };
    let (system, _, probe) = Recaster::new(sys, mode).run(Some(definition))?;
    let (drift, diffusion) = probe.expect("probe requested");
    Ok(ItoImage {
        system,
        drift,
        diffusion,
    })
}

fn first_transcendental(sys: &SingleModeShs) -> Option<String> {
    let check = |e: &Expr| !e.is_rational();
    for (i, e) in sys.drift.iter().enumerate() {
        if check(e) {
            return Some(format!("drift of `{}`", sys.vars.name(i)));
        }
    }
    if sys.diffusion.iter().flatten().any(check) {
        return Some("diffusion".into());
    }
    for t in &sys.transitions {
        if check(&t.intensity) {
            return Some(format!("intensity of `{}`", t.name));
        }
    }
    if sys.ineq_constraints.iter().any(|c| check(&c.expr)) {
        return Some("a constraint".into());
    }
    None
}

#[derive(Debug, Clone)]
struct Pending {
    id: usize,
    kind: AuxKind,
    argument: Polynomial,
    definition: Expr,
    generation: usize,
}

type Dynamics = (Polynomial, Vec<Polynomial>);

struct Recaster<'a> {
    sys: &'a SingleModeShs,
    mode: UnclosedReset,
    funcs: Vec<Pending>,
    recips: Vec<Pending>,
    order: Vec<usize>,
    generation: usize,
}

fn approx_zero(p: &Polynomial, scale: f64) -> bool {
    p.max_abs_coeff() <= 1e-12 * scale.max(1.0)
}

/// `Some(c)` when `p` is a constant up to round-off.
fn near_constant(p: &Polynomial) -> Option<f64> {
    let c = p.constant_term();
    approx_zero(&(p - &Polynomial::constant(c)), p.max_abs_coeff()).then_some(c)
}

/// `Some(a)` when `p = a·q` up to round-off.
fn ratio(p: &Polynomial, q: &Polynomial) -> Option<f64> {
    let (m, cq) = q.terms().last()?;
    let a = p.coeff(m) / cq;
    approx_zero(&(p - &q.scale(a)), p.max_abs_coeff()).then_some(a)
}

impl<'a> Recaster<'a> {
    fn new(sys: &'a SingleModeShs, mode: UnclosedReset) -> Self {
        Self {
            sys,
            mode,
            funcs: Vec::new(),
            recips: Vec::new(),
            order: Vec::new(),
            generation: 0,
        }
    }

    fn pending(&self, id: usize) -> Option<&Pending> {
        if id >= PH_RECIP {
            self.recips.get(id - PH_RECIP)
        } else if id >= PH_FUNC {
            self.funcs.get(id - PH_FUNC)
        } else {
            None
        }
    }

    fn definition_of(&self, var: usize) -> Expr {
        if let Some(p) = self.pending(var) {
            return p.definition.clone();
        }
        match self.sys.aux.iter().find(|a| a.var == var) {
            Some(a) => a.definition.clone(),
            None => Expr::Var(var),
        }
    }

    /// The argument polynomial written over the original variables.
    fn expand(&self, p: &Polynomial) -> Expr {
        Expr::from(p).substitute(&|v| Some(self.definition_of(v)))
    }

    fn register(&mut self, kind: AuxKind, argument: Polynomial) -> usize {
        if let Some(a) = self.sys.aux.iter().find(|a| a.kind == kind && a.argument == argument) {
            return a.var;
        }
        let list = if kind == AuxKind::Reciprocal { &self.recips } else { &self.funcs };
        if let Some(p) = list.iter().find(|p| p.kind == kind && p.argument == argument) {
            return p.id;
        }
        let inner = self.expand(&argument);
        let definition = match kind {
            AuxKind::Call(f) => Expr::call(f, inner),
            AuxKind::Reciprocal => Expr::quotient(Expr::one(), inner),
        };
        let (list, base) = if kind == AuxKind::Reciprocal {
            (&mut self.recips, PH_RECIP)
        } else {
            (&mut self.funcs, PH_FUNC)
        };
        let id = base + list.len();
        list.push(Pending {
            id,
            kind,
            argument,
            definition,
            generation: self.generation,
        });
        self.order.push(id);
        id
    }

    fn reciprocal(&mut self, p: &Polynomial) -> Result<Polynomial, RecastError> {
        if let Some(c) = p.as_constant() {
            if c == 0.0 {
                return Err(RecastError::ZeroDenominator);
            }
            return Ok(Polynomial::constant(1.0 / c));
        }
        let (_, lead) = p.terms().last().expect("non-constant");
        let id = self.register(AuxKind::Reciprocal, p.scale(1.0 / lead));
        Ok(Polynomial::var(id).scale(1.0 / lead))
    }

    fn polyize(&mut self, e: &Expr) -> Result<Polynomial, RecastError> {
        Ok(match e {
            Expr::Const(c) => Polynomial::constant(*c),
            Expr::Var(v) => Polynomial::var(*v),
            Expr::Sum(items) => {
                let mut acc = Polynomial::zero();
                for it in items {
                    acc = acc + self.polyize(it)?;
                }
                acc
            }
            Expr::Product(items) => {
                let mut acc = Polynomial::constant(1.0);
                for it in items {
                    acc = acc * self.polyize(it)?;
                }
                acc
            }
            Expr::Quotient(a, b) => {
                let mut acc = self.polyize(a)?;
                let factors: Vec<&Expr> = match &**b {
                    Expr::Product(items) => items.iter().collect(),
                    other => vec![other],
                };
                for f in factors {
                    let (base, k) = match f {
                        Expr::Pow(b, k) => (&**b, *k),
                        other => (other, 1),
                    };
                    let p = self.polyize(base)?;
                    let img = if k >= 0 {
                        self.reciprocal(&p)?.pow(k as u32)
                    } else {
                        p.pow(k.unsigned_abs())
                    };
                    acc = acc * img;
                }
                acc
            }
            Expr::Pow(b, k) => {
                let p = self.polyize(b)?;
                if *k >= 0 {
                    p.pow(*k as u32)
                } else {
                    self.reciprocal(&p)?.pow(k.unsigned_abs())
                }
            }
            Expr::Call(f, a) => {
                let p = self.polyize(a)?;
                match p.as_constant() {
                    Some(c) => Polynomial::constant(f.apply(c)),
                    None => Polynomial::var(self.register(AuxKind::Call(*f), p)),
                }
            }
        })
    }

    fn ito(u: &Polynomial, dynamics: &BTreeMap<usize, Dynamics>, noise: usize) -> Dynamics {
        let grads: Vec<(usize, Polynomial)> = u.variables().into_iter().map(|v| (v, u.diff(v))).collect();
        let mut drift = Polynomial::zero();
        let mut sig = vec![Polynomial::zero(); noise];
        for (v, g) in &grads {
            let (f, gv) = &dynamics[v];
            drift = drift + g * f;
            for k in 0..noise {
                sig[k] = &sig[k] + &(g * &gv[k]);
            }
        }
        for k in 0..noise {
            for (v, g) in &grads {
                let gvk = &dynamics[v].1[k];
                if gvk.is_zero() {
                    continue;
                }
                for (w, _) in &grads {
                    let gwk = &dynamics[w].1[k];
                    if gwk.is_zero() {
                        continue;
                    }
                    let h = g.diff(*w);
                    drift = drift + (h * gvk * gwk).scale(0.5);
                }
            }
        }
        (drift, sig)
    }

    /// Post-jump value of a state in one mode, when it stays polynomial.
    fn closed_image(&mut self, p: &Pending, u_before: &Polynomial, u_after: &Polynomial) -> Option<Polynomial> {
        let y = Polynomial::var(p.id);
        let shift = near_constant(&(u_after - u_before));
        if shift.is_some_and(|c| c.abs() <= 1e-14) {
            return Some(y);
        }
        if let Some(k) = near_constant(u_after) {
            let v = match p.kind {
                AuxKind::Call(f) => f.apply(k),
                AuxKind::Reciprocal => 1.0 / k,
            };
            return v.is_finite().then(|| Polynomial::constant(v));
        }
        match p.kind {
            AuxKind::Call(Func::Exp) => shift.map(|c| y.scale(c.exp())),
            AuxKind::Call(f @ (Func::Sin | Func::Cos)) => {
                let c = shift?;
                let partner = if f == Func::Sin { Func::Cos } else { Func::Sin };
                let q = Polynomial::var(self.register(AuxKind::Call(partner), p.argument.clone()));
                Some(if f == Func::Sin {
                    y.scale(c.cos()) + q.scale(c.sin())
                } else {
                    y.scale(c.cos()) - q.scale(c.sin())
                })
            }
            AuxKind::Call(Func::Log) => {
                let a = ratio(u_after, u_before).filter(|a| *a > 0.0)?;
                Some(y + Polynomial::constant(a.ln()))
            }
            AuxKind::Reciprocal => {
                let a = ratio(u_after, u_before).filter(|a| *a != 0.0)?;
                Some(y.scale(1.0 / a))
            }
        }
    }

    fn run(mut self, probe: Option<&Expr>) -> Result<(SingleModeShs, RecastPlan, Option<Dynamics>), RecastError> {
        let sys = self.sys;
        let n0 = sys.num_vars();
        let noise = sys.noise_dim;
        let algebraic_in = sys.algebraic_vars();

        let mut dynamics: BTreeMap<usize, Dynamics> = BTreeMap::new();
        for v in 0..n0 {
            let f = self.polyize(&sys.drift[v])?;
            let g = sys.diffusion[v]
                .iter()
                .map(|e| self.polyize(e))
                .collect::<Result<Vec<_>, _>>()?;
            dynamics.insert(v, (f, g));
        }
        let mut intensities = Vec::new();
        let mut resets: Vec<BTreeMap<usize, Option<Polynomial>>> = Vec::new();
        for t in &sys.transitions {
            intensities.push(self.polyize(&t.intensity)?);
            let mut img = BTreeMap::new();
            for (v, e) in t.reset.iter().enumerate() {
                let p = e.to_polynomial();
                if p.is_none() && !algebraic_in.contains(&v) {
                    return Err(RecastError::NonPolynomialReset {
                        transition: t.name.clone(),
                        var: sys.vars.name(v).to_string(),
                    });
                }
                img.insert(v, p.filter(|_| !algebraic_in.contains(&v)));
            }
            resets.push(img);
        }
        let mut ineqs = Vec::new();
        for c in &sys.ineq_constraints {
            ineqs.push((self.polyize(&c.expr)?, c.lower, c.upper));
        }
        let probe_poly = probe.map(|e| self.polyize(e)).transpose()?;

        let mut eqs: Vec<Polynomial> = Vec::new();
        let mut new_ineqs: Vec<(Polynomial, Option<f64>, Option<f64>)> = Vec::new();
        let mut dynamic: BTreeMap<usize, bool> = BTreeMap::new();
        let mut reset_exprs: BTreeMap<(usize, usize), Expr> = BTreeMap::new();
        let mut pairs_done: Vec<Polynomial> = Vec::new();
        let one_hot: Vec<BTreeMap<usize, Polynomial>> = (0..sys.indicators.len())
            .map(|i| {
                sys.indicators
                    .iter()
                    .enumerate()
                    .map(|(j, &b)| (b, Polynomial::constant(if i == j { 1.0 } else { 0.0 })))
                    .collect()
            })
            .collect();

        let mut idx = 0;
        while idx < self.order.len() {
            let p = self.pending(self.order[idx]).unwrap().clone();
            idx += 1;
            if p.generation > MAX_DEPTH {
                return Err(RecastError::DepthExceeded(MAX_DEPTH));
            }
            self.generation = p.generation + 1;
            let y = Polynomial::var(p.id);
            let u = &p.argument;
            let (d1, d2) = match p.kind {
                AuxKind::Call(Func::Exp) => {
                    new_ineqs.push((y.clone(), Some(DOMAIN_EPS), None));
                    (y.clone(), y.clone())
                }
                AuxKind::Call(Func::Log) => {
                    new_ineqs.push((u.clone(), Some(DOMAIN_EPS), None));
                    let r = self.reciprocal(u)?;
                    let r2 = &r * &r;
                    (r, -r2)
                }
                AuxKind::Call(f @ (Func::Sin | Func::Cos)) => {
                    new_ineqs.push((y.clone(), Some(-1.0), Some(1.0)));
                    let partner = if f == Func::Sin { Func::Cos } else { Func::Sin };
                    let q = Polynomial::var(self.register(AuxKind::Call(partner), u.clone()));
                    if !pairs_done.contains(u) {
                        pairs_done.push(u.clone());
                        eqs.push(&y * &y + &q * &q - Polynomial::constant(1.0));
                    }
                    let d1 = if f == Func::Sin { q } else { -q };
                    (d1, -y.clone())
                }
                AuxKind::Reciprocal => {
                    eqs.push(u * &y - Polynomial::constant(1.0));
                    let y2 = &y * &y;
                    ((-&y2), (&y2 * &y).scale(2.0))
                }
            };
            let (mu, sig) = Self::ito(u, &dynamics, noise);
            let sq = sig.iter().fold(Polynomial::zero(), |acc, s| acc + s * s);
            let drift = &d1 * &mu + (&d2 * &sq).scale(0.5);
            let diffusion = sig.iter().map(|s| &d1 * s).collect();
            dynamics.insert(p.id, (drift, diffusion));

            let mut closed = true;
            for (r, t) in sys.transitions.iter().enumerate() {
                let known: Option<BTreeMap<usize, Polynomial>> = u
                    .variables()
                    .into_iter()
                    .map(|v| resets[r].get(&v).cloned().flatten().map(|img| (v, img)))
                    .collect();
                let image = match known {
                    None => None,
                    Some(map) => {
                        let after = u.substitute(&map);
                        let mut per_mode = Vec::new();
                        let modes: Vec<Option<&BTreeMap<usize, Polynomial>>> =
                            if one_hot.is_empty() { vec![None] } else { one_hot.iter().map(Some).collect() };
                        let mut ok = true;
                        for sub in modes {
                            let at = |q: &Polynomial| sub.map_or_else(|| q.clone(), |s| q.substitute(s));
                            if at(&intensities[r]).is_zero() {
                                per_mode.push(y.clone());
                                continue;
                            }
                            match self.closed_image(&p, &at(u), &at(&after)) {
                                Some(g) => per_mode.push(g),
                                None => {
                                    ok = false;
                                    break;
                                }
                            }
                        }
                        if !ok {
                            None
                        } else if per_mode.iter().all(|g| *g == per_mode[0]) {
                            Some(per_mode.swap_remove(0))
                        } else {
                            let mut acc = Polynomial::zero();
                            for (i, g) in per_mode.iter().enumerate() {
                                acc = acc + Polynomial::var(sys.indicators[i]) * g;
                            }
                            Some(acc)
                        }
                    }
                };
                if image.is_none() {
                    closed = false;
                    if self.mode == UnclosedReset::Error {
                        return Err(RecastError::UnclosedReset {
                            transition: t.name.clone(),
                            definition: p.definition.display_with(sys.vars.names()).to_string(),
                        });
                    }
                    let phi = |v: usize| Some(t.reset.get(v).cloned().unwrap_or(Expr::Var(v)));
                    reset_exprs.insert((r, p.id), p.definition.substitute(&phi));
                }
                resets[r].insert(p.id, image);
            }
            dynamic.insert(p.id, closed);
        }

        let probe_dyn = probe_poly.map(|q| Self::ito(&q, &dynamics, noise));

        // placeholders → final ids
        let nf = self.funcs.len();
        let remap = |v: usize| {
            if v >= PH_RECIP {
                n0 + nf + (v - PH_RECIP)
            } else if v >= PH_FUNC {
                n0 + (v - PH_FUNC)
            } else {
                v
            }
        };
        let rp = |p: &Polynomial| p.remap_vars(remap);

        let mut vars = sys.vars.clone();
        let states: Vec<Pending> = self.funcs.iter().chain(self.recips.iter()).cloned().collect();
        let first_y = sys.aux.len() + 1;
        let mut new_states = Vec::new();
        for (k, p) in states.iter().enumerate() {
            let name = vars.fresh_name(&format!("y{}", first_y + k));
            let var = vars.push(&name, VarKind::Auxiliary);
            debug_assert_eq!(var, remap(p.id));
            let (drift, diffusion) = &dynamics[&p.id];
            new_states.push(NewState {
                var,
                name,
                kind: p.kind,
                argument: rp(&p.argument),
                definition: p.definition.clone(),
                drift: rp(drift),
                diffusion: diffusion.iter().map(rp).collect(),
                dynamic: dynamic[&p.id],
            });
        }
        let total = vars.len();
        let order_ids: Vec<usize> = (0..n0).chain(states.iter().map(|p| p.id)).collect();

        let drift: Vec<Expr> = order_ids.iter().map(|id| Expr::from(rp(&dynamics[id].0))).collect();
        let diffusion: Vec<Vec<Expr>> = order_ids
            .iter()
            .map(|id| dynamics[id].1.iter().map(|g| Expr::from(rp(g))).collect())
            .collect();
        let transitions = sys
            .transitions
            .iter()
            .enumerate()
            .map(|(r, t)| {
                let reset = order_ids
                    .iter()
                    .map(|&id| match resets[r].get(&id).cloned().flatten() {
                        Some(p) => Expr::from(rp(&p)),
                        None => reset_exprs
                            .get(&(r, id))
                            .cloned()
                            .unwrap_or_else(|| t.reset.get(id).cloned().unwrap_or(Expr::Var(id))),
                    })
                    .collect();
                ResetRule {
                    name: t.name.clone(),
                    intensity: Expr::from(rp(&intensities[r])),
                    reset,
                }
            })
            .collect();

        let to_ineq = |(p, lower, upper): &(Polynomial, Option<f64>, Option<f64>)| Inequality {
            expr: Expr::from(rp(p)),
            lower: *lower,
            upper: *upper,
        };
        let plan = RecastPlan {
            eq_constraints: eqs.iter().map(rp).collect(),
            ineq_constraints: new_ineqs.iter().map(to_ineq).collect(),
            new_states,
        };
        let mut eq_constraints = sys.eq_constraints.clone();
        eq_constraints.extend(plan.eq_constraints.iter().cloned());
        let mut ineq_constraints: Vec<Inequality> = ineqs.iter().map(to_ineq).collect();
        ineq_constraints.extend(plan.ineq_constraints.iter().cloned());
        let mut aux = sys.aux.clone();
        aux.extend(plan.new_states.iter().map(|s| AuxState {
            var: s.var,
            kind: s.kind,
            definition: s.definition.clone(),
            argument: s.argument.clone(),
            dynamic: s.dynamic,
        }));
        let mut scales = sys.scales.clone();
        scales.resize(total, 1.0);

        let out = SingleModeShs {
            vars,
            noise_dim: noise,
            drift,
            diffusion,
            transitions,
            eq_constraints,
            ineq_constraints,
            indicators: sys.indicators.clone(),
            aux,
            scales,
        };
        let probe_dyn = probe_dyn.map(|(d, g)| (rp(&d), g.iter().map(rp).collect()));
        Ok((out, plan, probe_dyn))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;
    use crate::shs::{reduce_modes, ModeTransition, ShsModel};
    use rand::{Rng, SeedableRng};

    fn poly(e: &Expr) -> Polynomial {
        e.to_polynomial().expect("polynomial")
    }

    /// Drops the single-mode indicator by setting it to one.
    fn unit_b(sys: &SingleModeShs, p: &Polynomial) -> Polynomial {
        let sub = sys.indicators.iter().map(|&b| (b, Polynomial::constant(1.0))).collect();
        p.substitute(&sub)
    }

    fn single(drift: Expr, diffusion: Option<Expr>) -> ShsModel {
        let mut m = ShsModel::new(&["x"], &["main"], usize::from(diffusion.is_some()));
        m.drift[0][0] = drift;
        if let Some(g) = diffusion {
            m.diffusion[0][0][0] = g;
        }
        m
    }

    #[test]
    fn polynomial_input_is_unchanged() {
        for model in [models::ou(), models::tcp_onoff(), models::birth_death()] {
            let sys = reduce_modes(&model).unwrap();
            let (out, plan) = recast(&sys).unwrap();
            assert!(plan.is_empty());
            assert_eq!(out.vars, sys.vars);
            for (a, b) in out.drift.iter().zip(&sys.drift) {
                assert_eq!(poly(a), poly(b));
            }
            for (a, b) in out.transitions.iter().zip(&sys.transitions) {
                assert_eq!(poly(&a.intensity), poly(&b.intensity));
                for (x, y) in a.reset.iter().zip(&b.reset) {
                    assert_eq!(poly(x), poly(y));
                }
            }
            assert_eq!(out.eq_constraints, sys.eq_constraints);
        }
    }

    #[test]
    fn cell_division_reciprocal_state() {
        let model = models::cell_division();
        let sys = reduce_modes(&model).unwrap();
        let (out, plan) = recast_rational(&sys).unwrap();
        assert_eq!(plan.new_states.len(), 1);
        let st = &plan.new_states[0];
        let (v, y) = (0, st.var);
        let (a1, a2, v1) = (model.params["alpha1"], model.params["alpha2"], model.params["v1"]);
        let want_drift = Polynomial::constant(a1) + (Polynomial::var(v) * Polynomial::var(y)).scale(a2);
        assert!(unit_b(&out, &poly(&out.drift[v])).approx_eq(&want_drift, 1e-15));
        let want_c = Polynomial::var(v) * Polynomial::var(y) + Polynomial::var(y).scale(v1) - Polynomial::constant(1.0);
        assert!(out.eq_constraints.iter().any(|c| c.approx_eq(&want_c, 1e-15)));
        // dy = -(α₁ + α₂ v y) y² dt
        let y2 = Polynomial::var(y).pow(2);
        assert!(unit_b(&out, &st.drift).approx_eq(&(-(&want_drift * &y2)), 1e-14));
        // halving does not map 1/(v+v1) polynomially
        assert!(!st.dynamic);
        assert_eq!(out.algebraic_vars(), vec![y]);
        assert!(out.is_polynomial());
        // the user bound 0 <= 1/(v+v1) <= 1/v1 lands on y
        assert!(out
            .ineq_constraints
            .iter()
            .any(|c| poly(&c.expr) == Polynomial::var(y) && c.upper == Some(1.0 / v1)));
    }

    #[test]
    fn rational_intensity_on_variety() {
        let mut m = single(Expr::neg(Expr::Var(0)), Some(Expr::one()));
        let r = m.add_transition("kick");
        let lambda = Expr::quotient(Expr::one(), Expr::sum(vec![Expr::one(), Expr::pow(Expr::Var(0), 2)]));
        m.set_transition(
            r,
            0,
            ModeTransition {
                target: 0,
                intensity: lambda.clone(),
                reset: vec![Expr::Var(0)],
            },
        );
        let sys = reduce_modes(&m).unwrap();
        let (out, plan) = recast_rational(&sys).unwrap();
        let y = plan.new_states[0].var;
        let x = Polynomial::var(0);
        let want_c = Polynomial::var(y) + &(&x * &x) * &Polynomial::var(y) - Polynomial::constant(1.0);
        assert!(plan.eq_constraints[0].approx_eq(&want_c, 1e-15));
        assert!(unit_b(&out, &poly(&out.transitions[0].intensity)).approx_eq(&Polynomial::var(y), 1e-15));
        // identity reset keeps y polynomial
        assert!(plan.new_states[0].dynamic);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let xv: f64 = rng.random_range(-5.0..5.0);
            let mut pt = vec![0.0; out.num_vars()];
            pt[0] = xv;
            pt[sys.indicators[0]] = 1.0;
            pt[y] = 1.0 / (1.0 + xv * xv);
            assert!(want_c.eval(&pt).abs() < 1e-10);
            let lam = poly(&out.transitions[0].intensity).eval(&pt);
            assert!((lam - lambda.eval(&pt)).abs() < 1e-10);
        }
    }

    #[test]
    fn worked_elementary_example() {
        let model = models::elementary_demo();
        let sys = reduce_modes(&model).unwrap();
        let (out, plan) = recast_elementary(&sys).unwrap();
        let defs: Vec<String> = plan
            .new_states
            .iter()
            .map(|s| s.definition.display_with(out.vars.names()).to_string())
            .collect();
        assert_eq!(defs, ["log(x)", "sin(log(x))", "exp(sin(log(x)))", "cos(log(x))", "1/x"]);
        let names: Vec<&str> = plan.new_states.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["y1", "y2", "y3", "y4", "y5"]);
        let id = |n: &str| out.vars.id(n).unwrap();
        let (x, y2, y3, y4, y5) = (0, id("y2"), id("y3"), id("y4"), id("y5"));
        let p = Polynomial::var;
        let one = Polynomial::constant(1.0);
        assert!(plan.eq_constraints.contains(&(&p(y2) * &p(y2) + &p(y4) * &p(y4) - one.clone())));
        assert!(plan.eq_constraints.contains(&(&p(x) * &p(y5) - one.clone())));
        let has = |v: usize, lo: Option<f64>, hi: Option<f64>| {
            plan.ineq_constraints
                .iter()
                .any(|c| poly(&c.expr) == p(v) && c.lower == lo && c.upper == hi)
        };
        assert!(has(y2, Some(-1.0), Some(1.0)));
        assert!(has(y4, Some(-1.0), Some(1.0)));
        assert!(has(y3, Some(DOMAIN_EPS), None));
        assert!(has(x, Some(DOMAIN_EPS), None));
        assert!(unit_b(&out, &poly(&out.drift[x])).approx_eq(&(-p(y3)), 0.0));
        assert!(out.is_polynomial());
    }

    /// Each state's drift agrees with the Itô formula applied symbolically
    /// to its closed-form definition.
    #[test]
    fn derivative_table_matches_symbolic_ito() {
        let model = models::elementary_demo();
        let sys = reduce_modes(&model).unwrap();
        let (out, plan) = recast_elementary(&sys).unwrap();
        let f = Expr::neg(Expr::call(Func::Exp, Expr::call(Func::Sin, Expr::call(Func::Log, Expr::Var(0)))));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let xv: f64 = rng.random_range(0.05..5.0);
            let pt = out.lift(0, &[xv]);
            for s in &plan.new_states {
                let d1 = s.definition.diff(0);
                let d2 = d1.diff(0);
                let want = d1.eval(&pt) * f.eval(&pt) + 0.5 * d2.eval(&pt);
                let got = s.drift.eval(&pt);
                assert!((got - want).abs() < 1e-9 * (1.0 + want.abs()), "{}: {got} vs {want}", s.name);
                let gwant = d1.eval(&pt);
                assert!((s.diffusion[0].eval(&pt) - gwant).abs() < 1e-9 * (1.0 + gwant.abs()));
            }
            for c in &plan.eq_constraints {
                assert!(c.eval(&pt).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn exp_with_shift_reset_is_closed() {
        let mut m = single(Expr::neg(Expr::call(Func::Exp, Expr::Var(0))), None);
        let r = m.add_transition("shift");
        m.set_transition(
            r,
            0,
            ModeTransition {
                target: 0,
                intensity: Expr::one(),
                reset: vec![Expr::sum(vec![Expr::Var(0), Expr::Const(0.3)])],
            },
        );
        let sys = reduce_modes(&m).unwrap();
        let (out, plan) = recast_elementary(&sys).unwrap();
        let y = plan.new_states[0].var;
        let img = unit_b(&out, &poly(&out.transitions[0].reset[y]));
        assert!(img.approx_eq(&Polynomial::var(y).scale(0.3f64.exp()), 1e-14));
    }

    #[test]
    fn non_closing_reset_is_rejected() {
        let mut m = single(Expr::neg(Expr::call(Func::Exp, Expr::Var(0))), None);
        let r = m.add_transition("square");
        m.set_transition(
            r,
            0,
            ModeTransition {
                target: 0,
                intensity: Expr::one(),
                reset: vec![Expr::pow(Expr::Var(0), 2)],
            },
        );
        let sys = reduce_modes(&m).unwrap();
        assert!(matches!(recast_elementary(&sys), Err(RecastError::UnclosedReset { .. })));
        assert!(matches!(recast_rational(&sys), Err(RecastError::NotRational(_))));
    }

    #[test]
    fn ito_examples() {
        // y = 1/x, dx = a dt
        let a = 0.7;
        let sys = reduce_modes(&single(Expr::Const(a), None)).unwrap();
        let img = ito_drift_for_state(&Expr::quotient(Expr::one(), Expr::Var(0)), &sys).unwrap();
        let y = img.system.vars.id("y1").unwrap();
        assert!(unit_b(&img.system, &img.drift).approx_eq(&Polynomial::var(y).pow(2).scale(-a), 1e-15));

        // y = exp(x), dx = σ dw
        let s = 0.4;
        let sys = reduce_modes(&single(Expr::zero(), Some(Expr::Const(s)))).unwrap();
        let img = ito_drift_for_state(&Expr::call(Func::Exp, Expr::Var(0)), &sys).unwrap();
        let y = img.system.vars.id("y1").unwrap();
        assert!(unit_b(&img.system, &img.drift).approx_eq(&Polynomial::var(y).scale(s * s / 2.0), 1e-15));
        assert!(unit_b(&img.system, &img.diffusion[0]).approx_eq(&Polynomial::var(y).scale(s), 1e-15));

        // y = 1/(v + v1) on the recast cell-division model
        let model = models::cell_division();
        let (cell, _) = recast(&reduce_modes(&model).unwrap()).unwrap();
        let def = Expr::quotient(Expr::one(), Expr::sum(vec![Expr::Var(0), Expr::Const(model.params["v1"])]));
        let img = ito_drift_for_state(&def, &cell).unwrap();
        assert_eq!(img.system.num_vars(), cell.num_vars());
        let y = cell.aux[0].var;
        let f = unit_b(&cell, &poly(&cell.drift[0]));
        let want = -(&f * &Polynomial::var(y).pow(2));
        assert!(unit_b(&cell, &img.drift).approx_eq(&want, 1e-14));
    }

    #[test]
    fn zero_denominator() {
        let e = Expr::Quotient(Box::new(Expr::Var(0)), Box::new(Expr::sub(Expr::Var(0), Expr::Var(0))));
        let sys = reduce_modes(&single(e, None)).unwrap();
        assert_eq!(recast(&sys).unwrap_err(), RecastError::ZeroDenominator);
    }
}
