//! Extended generator on monomial test functions and the linear moment
//! system it induces.

use std::collections::BTreeMap;
use std::fmt::Write;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::polyalg::{monomials_up_to, Monomial, Polynomial, VarTable};
use crate::shs::SingleModeShs;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MomentError {
    #[error("{0} is not polynomial; recast the model first")]
    NotPolynomial(String),
    #[error("order must be at least 1")]
    ZeroOrder,
    #[error("monomial {0} is not indexed at this order")]
    NotIndexed(String),
}

/// Indicator rewrites `b_i² → b_i`, `b_i b_j → 0`, and `b → 1` when there
/// is a single mode.
#[derive(Debug, Clone, PartialEq)]
pub struct Reducer {
    indicators: Vec<usize>,
}

impl Reducer {
    pub fn new(indicators: &[usize]) -> Self {
        Self {
            indicators: indicators.to_vec(),
        }
    }

    pub fn indicators(&self) -> &[usize] {
        &self.indicators
    }

    fn single(&self) -> bool {
        self.indicators.len() == 1
    }

    /// `None` when the monomial vanishes on one-hot indicator vectors.
    pub fn monomial(&self, m: &Monomial) -> Option<Monomial> {
        let mut seen = 0;
        let mut out = Vec::with_capacity(m.pairs().len());
        for &(v, e) in m.pairs() {
            if self.indicators.contains(&v) {
                seen += 1;
                if seen > 1 {
                    return None;
                }
                if !self.single() {
                    out.push((v, 1));
                }
            } else {
                out.push((v, e));
            }
        }
        Some(Monomial::from_pairs(out))
    }

    pub fn poly(&self, p: &Polynomial) -> Polynomial {
        p.map_monomials(|m| self.monomial(m))
    }
}

/// A single-mode system with all data as polynomials.
#[derive(Debug, Clone)]
pub struct PolySystem {
    pub vars: VarTable,
    pub drift: Vec<Polynomial>,
    /// Non-zero entries of `g gᵀ`, keyed by `(j, l)` with `j ≤ l`.
    pub ggt: BTreeMap<(usize, usize), Polynomial>,
    pub transitions: Vec<(Polynomial, BTreeMap<usize, Polynomial>)>,
    pub reducer: Reducer,
    /// Variables allowed in test functions (continuous variables and
    /// auxiliary states with dynamics).
    pub test_vars: Vec<usize>,
    /// Non-indicator variables that appear in moments.
    pub moment_vars: Vec<usize>,
    pub eq_constraints: Vec<Polynomial>,
    pub ineq_constraints: Vec<(Polynomial, Option<f64>, Option<f64>)>,
}

impl PolySystem {
    pub fn new(sys: &SingleModeShs) -> Result<Self, MomentError> {
        let name = |i: usize| sys.vars.name(i).to_string();
        let poly = |e: &crate::polyalg::Expr, what: String| e.to_polynomial().ok_or(MomentError::NotPolynomial(what));
        let reducer = Reducer::new(&sys.indicators);
        let algebraic = sys.algebraic_vars();
        let n = sys.num_vars();
        let mut drift = Vec::with_capacity(n);
        for (i, e) in sys.drift.iter().enumerate() {
            drift.push(reducer.poly(&poly(e, format!("drift of `{}`", name(i)))?));
        }
        let mut g: Vec<Vec<Polynomial>> = Vec::with_capacity(n);
        for (i, row) in sys.diffusion.iter().enumerate() {
            g.push(
                row.iter()
                    .map(|e| poly(e, format!("diffusion of `{}`", name(i))))
                    .collect::<Result<_, _>>()?,
            );
        }
        let mut ggt = BTreeMap::new();
        for j in 0..n {
            for l in j..n {
                let mut acc = Polynomial::zero();
                for k in 0..sys.noise_dim {
                    if !g[j][k].is_zero() && !g[l][k].is_zero() {
                        acc = acc + &g[j][k] * &g[l][k];
                    }
                }
                let acc = reducer.poly(&acc);
                if !acc.is_zero() {
                    ggt.insert((j, l), acc);
                }
            }
        }
        let mut transitions = Vec::new();
        for t in &sys.transitions {
            let lambda = reducer.poly(&poly(&t.intensity, format!("intensity of `{}`", t.name))?);
            let mut reset = BTreeMap::new();
            for (v, e) in t.reset.iter().enumerate() {
                if algebraic.contains(&v) {
                    continue;
                }
                let p = reducer.poly(&poly(e, format!("reset of `{}` by `{}`", name(v), t.name))?);
                if p != Polynomial::var(v) {
                    reset.insert(v, p);
                }
            }
            transitions.push((lambda, reset));
        }
        let moment_vars: Vec<usize> = (0..n).filter(|v| !sys.indicators.contains(v)).collect();
        let test_vars = moment_vars.iter().copied().filter(|v| !algebraic.contains(v)).collect();
        let eq_constraints = sys
            .eq_constraints
            .iter()
            .map(|p| reducer.poly(p))
            .filter(|p| !p.is_zero())
            .collect();
        let mut ineq_constraints = Vec::new();
        for c in &sys.ineq_constraints {
            let p = reducer.poly(&poly(&c.expr, "a constraint".into())?);
            if p.as_constant().is_none() {
                ineq_constraints.push((p, c.lower, c.upper));
            }
        }
        Ok(Self {
            vars: sys.vars.clone(),
            drift,
            ggt,
            transitions,
            reducer,
            test_vars,
            moment_vars,
            eq_constraints,
            ineq_constraints,
        })
    }

    /// `Lψ = ∇ψ·f + ½ Tr(∇²ψ ggᵀ) + Σ_r (ψ∘φ_r − ψ) λ_r`, reduced.
    pub fn generator(&self, psi: &Polynomial) -> Polynomial {
        let mut out = Polynomial::zero();
        for v in psi.variables() {
            let d = psi.diff(v);
            if !self.drift[v].is_zero() {
                out = out + &d * &self.drift[v];
            }
        }
        for (&(j, l), s) in &self.ggt {
            let h = psi.diff(j).diff(l);
            if h.is_zero() {
                continue;
            }
            let w = if j == l { 0.5 } else { 1.0 };
            out = out + (&h * s).scale(w);
        }
        for (lambda, reset) in &self.transitions {
            if lambda.is_zero() {
                continue;
            }
            let moved = self.reducer.poly(&psi.substitute(reset));
            let jump = moved - psi;
            if !jump.is_zero() {
                out = out + &jump * lambda;
            }
        }
        self.reducer.poly(&out)
    }

    pub fn num_modes(&self) -> usize {
        self.reducer.indicators.len()
    }
}

pub fn apply_generator(sys: &SingleModeShs, psi: &Monomial) -> Result<Polynomial, MomentError> {
    let ps = PolySystem::new(sys)?;
    Ok(ps.generator(&Polynomial::term(psi.clone(), 1.0)))
}

/// Reduced monomials over the moment variables, with indicators counted in
/// the degree.
fn reduced_monomials(vars: &[usize], indicators: &[usize], degree: u32) -> Vec<Monomial> {
    let mut out = monomials_up_to(vars, degree);
    if indicators.len() > 1 && degree >= 1 {
        let lower = monomials_up_to(vars, degree - 1);
        for &b in indicators {
            out.extend(lower.iter().map(|m| m.mul(&Monomial::var(b))));
        }
    }
    out.sort();
    out
}

/// Moment decision variables: every reduced monomial of degree ≤ `max_degree`.
#[derive(Debug, Clone)]
pub struct MomentIndex {
    pub monomials: Vec<Monomial>,
    pos: BTreeMap<Monomial, usize>,
    /// Relaxation order `d`.
    pub order: u32,
    /// Highest indexed degree `d + δ`.
    pub max_degree: u32,
    /// Number of indexed monomials of degree ≤ `d` (the columns of `A`).
    pub num_low: usize,
    pub reducer: Reducer,
    /// Non-indicator variables of the indexed monomials.
    pub moment_vars: Vec<usize>,
    pub names: Vec<String>,
}

impl MomentIndex {
    fn new(ps: &PolySystem, order: u32, max_degree: u32) -> Self {
        let monomials = reduced_monomials(&ps.moment_vars, ps.reducer.indicators(), max_degree);
        let pos = monomials.iter().enumerate().map(|(i, m)| (m.clone(), i)).collect();
        let num_low = monomials.iter().filter(|m| m.degree() <= order).count();
        Self {
            monomials,
            pos,
            order,
            max_degree,
            num_low,
            reducer: ps.reducer.clone(),
            moment_vars: ps.moment_vars.clone(),
            names: ps.vars.names().to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.monomials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monomials.is_empty()
    }

    pub fn position(&self, m: &Monomial) -> Option<usize> {
        self.pos.get(m).copied()
    }

    /// Position of the reduced form of `m`; `Ok(None)` when it reduces to zero.
    pub fn position_reduced(&self, m: &Monomial) -> Result<Option<usize>, MomentError> {
        match self.reducer.monomial(m) {
            None => Ok(None),
            Some(r) => self
                .position(&r)
                .map(Some)
                .ok_or_else(|| MomentError::NotIndexed(self.label(&r))),
        }
    }

    /// Sparse coefficient row of a polynomial over the indexed moments.
    pub fn row(&self, p: &Polynomial) -> Result<Vec<(usize, f64)>, MomentError> {
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for (m, c) in self.reducer.poly(p).terms() {
            let i = self.position(m).ok_or_else(|| MomentError::NotIndexed(self.label(m)))?;
            *acc.entry(i).or_insert(0.0) += c;
        }
        Ok(acc.into_iter().filter(|(_, c)| *c != 0.0).collect())
    }

    /// Reduced monomials of degree ≤ `degree` over the indexed variables.
    pub fn monomials_up_to(&self, degree: u32) -> Vec<Monomial> {
        reduced_monomials(&self.moment_vars, self.reducer.indicators(), degree)
    }

    pub fn label(&self, m: &Monomial) -> String {
        m.display_with(&self.names).to_string()
    }
}

/// `dX/dt = A X + B X̄` for the test monomials, plus `0 = C X + D X̄`.
#[derive(Debug, Clone)]
pub struct MomentLinearSystem {
    pub index: MomentIndex,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    /// Test monomial of each dynamics row.
    pub row_labels: Vec<Monomial>,
    /// `a_p · w` for each constraint row.
    pub constraint_labels: Vec<String>,
    pub images: Vec<Polynomial>,
    /// Modes in which a point mass at the origin is stationary.
    pub degenerate_modes: Vec<usize>,
    /// Reduced non-constant inequalities `lower ≤ p ≤ upper`.
    pub inequalities: Vec<(Polynomial, Option<f64>, Option<f64>)>,
    /// Characteristic magnitude of each variable.
    pub scales: Vec<f64>,
}

impl MomentLinearSystem {
    /// Full dynamics row `[A B]` of the given test monomial.
    pub fn dynamics_row(&self, psi: &Monomial) -> Option<DVector<f64>> {
        let i = self.row_labels.iter().position(|m| m == psi)?;
        let nl = self.index.num_low;
        let mut r = DVector::zeros(self.index.len());
        for j in 0..nl {
            r[j] = self.a[(i, j)];
        }
        for j in 0..self.b.ncols() {
            r[nl + j] = self.b[(i, j)];
        }
        Some(r)
    }

    /// `true` when the point-mass test flags trivial lower bounds.
    pub fn trivial_lower_bound(&self) -> bool {
        !self.degenerate_modes.is_empty()
    }

    /// One line per moment equation, `d E[ψ]/dt = Σ c·E[m]`.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for (psi, img) in self.row_labels.iter().zip(&self.images) {
            write!(s, "d E[{}]/dt =", self.index.label(psi)).unwrap();
            if img.is_zero() {
                s.push_str(" 0");
            }
            for (k, (m, c)) in img.terms().enumerate() {
                let sign = if c < 0.0 { "-" } else if k == 0 { "" } else { "+" };
                write!(s, " {sign} {:.17e}·E[{}]", c.abs(), self.index.label(m)).unwrap();
            }
            s.push('\n');
        }
        for l in &self.constraint_labels {
            writeln!(s, "0 = E[{l}]").unwrap();
        }
        s
    }
}

/// Test monomials of degree ≤ `order`.
fn test_monomials(ps: &PolySystem, order: u32) -> Vec<Monomial> {
    reduced_monomials(&ps.test_vars, ps.reducer.indicators(), order)
}

pub fn build_moment_system(sys: &SingleModeShs, order: u32) -> Result<MomentLinearSystem, MomentError> {
    if order == 0 {
        return Err(MomentError::ZeroOrder);
    }
    let ps = PolySystem::new(sys)?;
    let tests = test_monomials(&ps, order);
    let images: Vec<Polynomial> = map_images(&ps, &tests);
    let max_degree = images.iter().map(Polynomial::degree).max().unwrap_or(0).max(order);
    let index = MomentIndex::new(&ps, order, max_degree);
    let nl = index.num_low;
    let nh = index.len() - nl;

    let mut a = DMatrix::zeros(tests.len(), nl);
    let mut b = DMatrix::zeros(tests.len(), nh);
    for (i, img) in images.iter().enumerate() {
        for (j, c) in index.row(img)? {
            if j < nl {
                a[(i, j)] = c;
            } else {
                b[(i, j - nl)] = c;
            }
        }
    }

    let mut crow: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut clabels = Vec::new();
    for ap in &ps.eq_constraints {
        for w in &index.monomials {
            let p = index.reducer.poly(&ap.mul_monomial(w));
            if p.is_zero() || p.degree() > max_degree {
                continue;
            }
            crow.push(index.row(&p)?);
            let apw = if w.is_one() {
                format!("{}", ap.display_with(&index.names))
            } else {
                format!("({})·{}", ap.display_with(&index.names), index.label(w))
            };
            clabels.push(apw);
        }
    }
    let mut c = DMatrix::zeros(crow.len(), nl);
    let mut d = DMatrix::zeros(crow.len(), nh);
    for (i, r) in crow.iter().enumerate() {
        for &(j, v) in r {
            if j < nl {
                c[(i, j)] = v;
            } else {
                d[(i, j - nl)] = v;
            }
        }
    }

    let degenerate_modes = point_mass_modes(sys, &images);
    Ok(MomentLinearSystem {
        index,
        a,
        b,
        c,
        d,
        row_labels: tests,
        constraint_labels: clabels,
        images,
        degenerate_modes,
        inequalities: ps.ineq_constraints.clone(),
        scales: sys.scales.clone(),
    })
}

#[cfg(feature = "parallel")]
fn map_images(ps: &PolySystem, tests: &[Monomial]) -> Vec<Polynomial> {
    use rayon::prelude::*;
    tests
        .par_iter()
        .map(|m| ps.generator(&Polynomial::term(m.clone(), 1.0)))
        .collect()
}

#[cfg(not(feature = "parallel"))]
fn map_images(ps: &PolySystem, tests: &[Monomial]) -> Vec<Polynomial> {
    tests
        .iter()
        .map(|m| ps.generator(&Polynomial::term(m.clone(), 1.0)))
        .collect()
}

/// Modes `i` for which the point mass at `(b = e_i, x = 0)` is a feasible
/// stationary law for these test functions: every image vanishes there and
/// the point satisfies the constraints.
fn point_mass_modes(sys: &SingleModeShs, images: &[Polynomial]) -> Vec<usize> {
    let n_cont = sys.continuous_vars().len();
    let modes = sys.indicators.len().max(1);
    (0..modes)
        .filter(|&i| {
            let pt = sys.lift(i, &vec![0.0; n_cont]);
            if pt.iter().any(|x| !x.is_finite()) {
                return false;
            }
            let feasible = sys.ineq_constraints.iter().all(|c| {
                let v = c.expr.eval(&pt);
                c.lower.is_none_or(|l| v >= l - 1e-12) && c.upper.is_none_or(|u| v <= u + 1e-12)
            }) && sys.eq_constraints.iter().all(|p| p.eval(&pt).abs() < 1e-12);
            feasible && images.iter().all(|img| img.eval(&pt).abs() < 1e-12)
        })
        .collect()
}

/// Linear equalities `rows · y = rhs` over the indexed moments.
#[derive(Debug, Clone)]
pub struct LinearEqualities {
    pub rows: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

/// Stationarity `0 = A X + B X̄`, the constraint rows `0 = C X + D X̄`, and
/// `E(1) = 1`. Each row is scaled to unit max-abs coefficient and zero rows
/// are dropped.
pub fn stationary_constraints(sys: &MomentLinearSystem) -> LinearEqualities {
    let n = sys.index.len();
    let nl = sys.index.num_low;
    let mut rows: Vec<DVector<f64>> = Vec::new();
    let mut push = |get: &dyn Fn(usize) -> f64| {
        let r = DVector::from_fn(n, |j, _| get(j));
        let m = r.amax();
        if m > 0.0 {
            rows.push(r / m);
        }
    };
    for i in 0..sys.a.nrows() {
        push(&|j| if j < nl { sys.a[(i, j)] } else { sys.b[(i, j - nl)] });
    }
    for i in 0..sys.c.nrows() {
        push(&|j| if j < nl { sys.c[(i, j)] } else { sys.d[(i, j - nl)] });
    }
    let one = sys.index.position(&Monomial::one()).expect("constant monomial indexed");
    let mut rhs = vec![0.0; rows.len()];
    rows.push(DVector::from_fn(n, |j, _| if j == one { 1.0 } else { 0.0 }));
    rhs.push(1.0);
    let m = rows.len();
    let mut mat = DMatrix::zeros(m, n);
    for (i, r) in rows.iter().enumerate() {
        mat.row_mut(i).copy_from(&r.transpose());
    }
    LinearEqualities {
        rows: mat,
        rhs: DVector::from_vec(rhs),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;
    use crate::recast::recast;
    use crate::shs::reduce_modes;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn system(model: &crate::shs::ShsModel) -> SingleModeShs {
        recast(&reduce_modes(model).unwrap()).unwrap().0
    }

    fn x_pow(v: usize, k: u32) -> Monomial {
        Monomial::var_pow(v, k)
    }

    #[test]
    fn ou_generator() {
        let sys = system(&models::ou());
        let lx = apply_generator(&sys, &x_pow(0, 1)).unwrap();
        assert_eq!(lx, Polynomial::var(0).scale(-1.0));
        let lx2 = apply_generator(&sys, &x_pow(0, 2)).unwrap();
        let want = Polynomial::var(0).pow(2).scale(-2.0) + Polynomial::constant(2.0);
        assert!(lx2.approx_eq(&want, 1e-15));
    }

    #[test]
    fn constant_has_zero_image() {
        for (_, m) in models::all() {
            let sys = system(&m);
            assert!(apply_generator(&sys, &Monomial::one()).unwrap().is_zero());
        }
    }

    /// Closed affine systems: solve the square stationary equations directly.
    fn solve_closed(sys: &MomentLinearSystem) -> DVector<f64> {
        assert_eq!(sys.b.ncols(), 0, "system not closed");
        let n = sys.index.len();
        let eq = stationary_constraints(sys);
        let qr = eq.rows.clone().svd(true, true);
        let y = qr.solve(&eq.rhs, 1e-12).unwrap();
        assert_eq!(qr.rank(1e-10), n);
        y
    }

    #[test]
    fn ou_moments_are_pinned() {
        let ms = build_moment_system(&system(&models::ou()), 2).unwrap();
        assert_eq!(ms.index.max_degree, 2);
        assert!(ms.b.is_empty());
        let y = solve_closed(&ms);
        let at = |k| y[ms.index.position(&x_pow(0, k)).unwrap()];
        assert!(at(1).abs() < 1e-14);
        assert!((at(2) - 1.0).abs() < 1e-14);
        let dump = ms.dump();
        assert!(dump.contains("d E[x]/dt = - 1.00000000000000000e0·E[x]"), "{dump}");
    }

    #[test]
    fn birth_death_mean() {
        let ms = build_moment_system(&system(&models::birth_death()), 1).unwrap();
        let y = solve_closed(&ms);
        assert!((y[ms.index.position(&x_pow(0, 1)).unwrap()] - 10.0).abs() < 1e-12);
        let ms = build_moment_system(&system(&models::birth_death()), 3).unwrap();
        let y = solve_closed(&ms);
        // Poisson(10): E(x²) = 110, E(x³) = 1310
        assert!((y[ms.index.position(&x_pow(0, 2)).unwrap()] - 110.0).abs() < 1e-9);
        assert!((y[ms.index.position(&x_pow(0, 3)).unwrap()] - 1310.0).abs() < 1e-8);
    }

    #[test]
    fn affine_dynamics_give_empty_b() {
        for m in [models::ou(), models::birth_death(), models::pure_death()] {
            for d in 1..5 {
                let ms = build_moment_system(&system(&m), d).unwrap();
                assert_eq!(ms.b.ncols(), 0);
            }
        }
    }

    #[test]
    fn tcp_rows_match_hand_derivation() {
        let model = models::tcp_onoff();
        let sys = system(&model);
        let ps = PolySystem::new(&sys).unwrap();
        let id = |n: &str| sys.vars.id(n).unwrap();
        let (v, ss, ca, off) = (id("v"), id("b_ss"), id("b_ca"), id("b_off"));
        let p = |k: &str| model.params[k];
        let (r, tau, k, pd, v0, delta) = (p("R"), p("tau_off"), p("k"), p("p"), p("v0"), p("delta"));
        let bv = |b: usize, m: u32| Polynomial::var(b) * Polynomial::var(v).pow(m);
        for m in 0..=2u32 {
            let mf = m as f64;
            let l = |b| ps.generator(&bv(b, m));
            let mut want_ss = bv(ss, m).scale(mf * 2f64.ln() / r)
                + Polynomial::var(off).scale(v0.powi(m as i32) / tau)
                - bv(ss, m + 1).scale((pd + 1.0 / k) / r);
            if m > 0 {
                want_ss = want_ss + bv(ss, m - 1).scale(mf * delta);
            }
            assert!(l(ss).approx_eq(&want_ss, 1e-15), "ss m={m}: {:?}", l(ss));
            let two_m = 2f64.powi(m as i32);
            let mut want_ca = bv(ss, m + 1).scale(pd / (two_m * r))
                - bv(ca, m + 1).scale(pd * (two_m - 1.0) / (two_m * r) + 1.0 / (k * r));
            if m > 0 {
                want_ca = want_ca + bv(ca, m - 1).scale(mf / r);
            }
            assert!(l(ca).approx_eq(&want_ca, 1e-15), "ca m={m}: {:?}", l(ca));
            let mut want_off = -bv(off, m).scale(1.0 / tau);
            if m == 0 {
                want_off = want_off + (bv(ss, 1) + bv(ca, 1)).scale(1.0 / (k * r));
            }
            assert!(l(off).approx_eq(&want_off, 1e-15), "off m={m}: {:?}", l(off));
        }
    }

    #[test]
    fn tcp_coupling_rows_present() {
        let sys = system(&models::tcp_onoff());
        let ms = build_moment_system(&sys, 2).unwrap();
        assert!(ms.constraint_labels.iter().any(|l| l.contains("b_ss")));
        // Σ b_i − 1 with w = 1 ties E(Σb) to E(1)
        let one = ms.index.position(&Monomial::one()).unwrap();
        assert!((0..ms.c.nrows()).any(|i| ms.c[(i, one)] == -1.0));
    }

    #[test]
    fn degenerate_point_mass_detection() {
        let ms = build_moment_system(&system(&models::pure_death()), 3).unwrap();
        assert!(ms.trivial_lower_bound());
        assert!(ms.a.column(0).iter().all(|&c| c == 0.0));
        let ms = build_moment_system(&system(&models::birth_death()), 3).unwrap();
        assert!(!ms.trivial_lower_bound());
        assert!(ms.a.column(0).iter().any(|&c| c != 0.0));
    }

    #[test]
    fn cell_division_rows() {
        let model = models::cell_division();
        let sys = system(&model);
        let ps = PolySystem::new(&sys).unwrap();
        let y = sys.aux[0].var;
        assert_eq!(ps.test_vars, vec![0]);
        let (a1, a2, v2, n) = (
            model.params["alpha1"],
            model.params["alpha2"],
            model.params["v2"],
            model.params["n"] as u32,
        );
        for m in 1..=3u32 {
            let mf = m as f64;
            let img = ps.generator(&Polynomial::var(0).pow(m));
            let vy = Polynomial::var(0).pow(m) * Polynomial::var(y);
            let want = Polynomial::var(0).pow(m - 1).scale(mf * a1) + vy.scale(mf * a2)
                - Polynomial::var(0)
                    .pow(m + n)
                    .scale((2f64.powi(m as i32) - 1.0) / (2f64.powi(m as i32) * v2.powi(n as i32)));
            assert!(img.approx_eq(&want, 1e-14), "m={m}: {img:?}");
        }
        let ms = build_moment_system(&sys, 2).unwrap();
        assert_eq!(ms.index.max_degree, 2 + n);
        assert!(ms.row_labels.iter().all(|m| !m.contains(y)));
    }

    #[test]
    fn linearity_of_generator() {
        let sys = system(&models::tcp_onoff());
        let ps = PolySystem::new(&sys).unwrap();
        let a = Polynomial::var(0).pow(2) * Polynomial::var(sys.indicators[1]);
        let b = Polynomial::var(0) * Polynomial::var(sys.indicators[2]);
        let lhs = ps.generator(&(a.scale(2.5) + b.scale(-1.5)));
        let rhs = ps.generator(&a).scale(2.5) + ps.generator(&b).scale(-1.5);
        assert!(lhs.approx_eq(&rhs, 1e-14));
    }

    #[test]
    fn rewrite_soundness_on_one_hot_points() {
        let sys = system(&models::tcp_onoff());
        let ps = PolySystem::new(&sys).unwrap();
        // unreduced generator built by hand from the same data
        let raw = |psi: &Polynomial| {
            let mut out = Polynomial::zero();
            for v in psi.variables() {
                out = out + psi.diff(v) * sys.drift[v].to_polynomial().unwrap();
            }
            for t in &sys.transitions {
                let map: BTreeMap<usize, Polynomial> =
                    t.reset.iter().enumerate().map(|(i, e)| (i, e.to_polynomial().unwrap())).collect();
                out = out + (psi.substitute(&map) - psi) * t.intensity.to_polynomial().unwrap();
            }
            out
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let tests = test_monomials(&ps, 3);
        for _ in 0..1000 {
            let mode = rng.random_range(0..3);
            let x: f64 = rng.random_range(0.0..10.0);
            let pt = sys.lift(mode, &[x]);
            let psi = Polynomial::term(tests[rng.random_range(0..tests.len())].clone(), 1.0);
            let a = ps.generator(&psi).eval(&pt);
            let b = raw(&psi).eval(&pt);
            assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn moment_index_is_reduced_and_ordered() {
        let sys = system(&models::tcp_onoff());
        let ms = build_moment_system(&sys, 3).unwrap();
        let r = &ms.index.reducer;
        for w in ms.index.monomials.windows(2) {
            assert!(w[0] < w[1]);
        }
        for m in &ms.index.monomials {
            assert_eq!(r.monomial(m).as_ref(), Some(m));
        }
        assert_eq!(ms.index.monomials[0], Monomial::one());
        let one_row = ms.row_labels.iter().position(|m| m.is_one()).unwrap();
        assert!(ms.a.row(one_row).iter().all(|&c| c == 0.0));
    }

    proptest! {
        #[test]
        fn generator_is_linear_on_random_combinations(c in prop::collection::vec(-3i32..=3, 6)) {
            let sys = system(&models::birth_death());
            let ps = PolySystem::new(&sys).unwrap();
            let mut psi = Polynomial::zero();
            let mut sum = Polynomial::zero();
            for (k, &ck) in c.iter().enumerate() {
                let m = Polynomial::var(0).pow(k as u32);
                psi = psi + m.scale(ck as f64);
                sum = sum + ps.generator(&m).scale(ck as f64);
            }
            prop_assert!(ps.generator(&psi).approx_eq(&sum, 1e-9));
        }
    }
}
