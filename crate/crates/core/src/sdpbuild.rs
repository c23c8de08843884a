//! Moment and localizing matrices, the stationary-bound SDP and the
//! relaxation-order hierarchy.

use std::time::Duration;

use thiserror::Error;
use web_time::Instant;

use crate::momentgen::{build_moment_system, stationary_constraints, LinearEqualities, MomentError, MomentIndex, MomentLinearSystem};
use crate::polyalg::{parse_expr, Monomial, Polynomial, Scope};
use crate::recast::{recast, RecastError};
use crate::shs::{reduce_modes, ShsError, ShsModel, SingleModeShs};
use crate::solver::{Backend, BlockKind, ConeBlock, ConicStandardForm, SolveOptions, SolveReport, SolveStatus};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoundError {
    #[error(transparent)]
    Model(#[from] ShsError),
    #[error(transparent)]
    Recast(#[from] RecastError),
    #[error(transparent)]
    Moment(#[from] MomentError),
    #[error("unknown moment `{0}`: {1}")]
    UnknownMoment(String, String),
    #[error("moment {moment} has degree {degree}, above the relaxation order {order}")]
    AboveOrder { moment: String, degree: u32, order: u32 },
    #[error("moment basis of degree {0} needs moments above the indexed degree {1}")]
    BasisTooLarge(u32, u32),
    #[error("CV² needs a positive lower bound on the mean, got {0}")]
    NonPositiveMean(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Min,
    Max,
}

/// Mode reduction followed by recasting.
pub fn prepare(model: &ShsModel) -> Result<SingleModeShs, BoundError> {
    let sys = reduce_modes(model)?;
    Ok(recast(&sys)?.0)
}

/// Parses a product of variables such as `b_ss*v^2` into a reduced monomial.
pub fn parse_moment(sys: &SingleModeShs, text: &str) -> Result<Monomial, BoundError> {
    let unknown = |why: String| BoundError::UnknownMoment(text.to_string(), why);
    let params = Default::default();
    let e = parse_expr(text, &Scope::new(sys.vars.names(), &params)).map_err(|e| unknown(e.to_string()))?;
    let p = e.to_polynomial().ok_or_else(|| unknown("not a monomial".into()))?;
    let mut terms = p.terms();
    match (terms.next(), terms.next()) {
        (Some((m, c)), None) if c == 1.0 => {
            let r = crate::momentgen::Reducer::new(&sys.indicators);
            r.monomial(m).ok_or_else(|| unknown("vanishes identically".into()))
        }
        _ => Err(unknown("not a monomial".into())),
    }
}

/// `entries[i][j] = reduce(h·vᵢ·vⱼ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentMatrixSpec {
    pub basis: Vec<Monomial>,
    pub weight: Polynomial,
    pub entries: Vec<Vec<Polynomial>>,
}

impl MomentMatrixSpec {
    fn build(index: &MomentIndex, basis: Vec<Monomial>, weight: Polynomial) -> Self {
        let n = basis.len();
        let mut entries = vec![vec![Polynomial::zero(); n]; n];
        for i in 0..n {
            for j in i..n {
                let p = index.reducer.poly(&weight.mul_monomial(&basis[i].mul(&basis[j])));
                entries[j][i] = p.clone();
                entries[i][j] = p;
            }
        }
        Self { basis, weight, entries }
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }
}

pub fn moment_matrix(index: &MomentIndex, r: u32) -> Result<MomentMatrixSpec, BoundError> {
    if 2 * r > index.max_degree {
        return Err(BoundError::BasisTooLarge(r, index.max_degree));
    }
    Ok(MomentMatrixSpec::build(index, index.monomials_up_to(r), Polynomial::constant(1.0)))
}

/// Basis of degree ≤ `r` without the redundancy `1 = Σ bᵢ`: with several
/// modes, pure monomials below degree `r` are dropped since each equals
/// `Σ bᵢ·m`, which is already present. This leaves the matrix constraint
/// unchanged on the indicator variety while removing directions that are
/// forced to be singular.
pub fn independent_basis(index: &MomentIndex, r: u32) -> Vec<Monomial> {
    let full = index.monomials_up_to(r);
    let ind = index.reducer.indicators();
    if ind.len() <= 1 {
        return full;
    }
    full.into_iter()
        .filter(|m| m.degree() == r || m.vars().any(|v| ind.contains(&v)))
        .collect()
}

/// One-sided weights `p − l ≥ 0`, `u − p ≥ 0` from each inequality.
pub fn constraint_weights(cons: &[(Polynomial, Option<f64>, Option<f64>)]) -> Vec<Polynomial> {
    let mut out = Vec::new();
    for (p, lo, hi) in cons {
        if let Some(l) = lo {
            out.push(p - &Polynomial::constant(*l));
        }
        if let Some(u) = hi {
            out.push(&Polynomial::constant(*u) - p);
        }
    }
    out
}

/// One localizing matrix per weight at the largest admissible basis degree,
/// capped at `r` when given. With `products`, pairwise products of the
/// weights are added as well.
pub fn localizing_matrices(
    index: &MomentIndex,
    cons: &[(Polynomial, Option<f64>, Option<f64>)],
    r: Option<u32>,
    products: bool,
) -> Vec<MomentMatrixSpec> {
    let mut weights = constraint_weights(cons);
    if products {
        let n = weights.len();
        for a in 0..n {
            for b in a + 1..n {
                let p = index.reducer.poly(&(&weights[a] * &weights[b]));
                if p.as_constant().is_none() {
                    weights.push(p);
                }
            }
        }
    }
    let dmax = index.max_degree;
    weights
        .into_iter()
        .map(|h| index.reducer.poly(&h))
        .filter(|h| !h.is_zero() && h.degree() <= dmax)
        .map(|h| {
            let rh = (dmax - h.degree()) / 2;
            let rh = r.map_or(rh, |r| r.min(rh));
            MomentMatrixSpec::build(index, independent_basis(index, rh), h)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AssembleOptions {
    /// Also localize on pairwise products of constraint weights.
    pub products: bool,
    /// Rescale moments by the per-variable magnitudes.
    pub scaling: bool,
}

impl Default for AssembleOptions {
    fn default() -> Self {
        Self {
            products: false,
            scaling: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SdpProblem {
    pub index: MomentIndex,
    pub target: Monomial,
    pub target_pos: usize,
    pub sense: Sense,
    pub equalities: LinearEqualities,
    pub blocks: Vec<MomentMatrixSpec>,
    /// Magnitude of each indexed moment.
    pub scales: Vec<f64>,
}

pub fn assemble(
    sys: &MomentLinearSystem,
    mu: &Monomial,
    sense: Sense,
    opts: &AssembleOptions,
) -> Result<SdpProblem, BoundError> {
    let index = sys.index.clone();
    let label = index.label(mu);
    let target_pos = match index.position(mu) {
        Some(p) if mu.degree() <= index.order => p,
        _ => {
            return Err(BoundError::AboveOrder {
                moment: label,
                degree: mu.degree(),
                order: index.order,
            })
        }
    };
    let r = index.max_degree / 2;
    let mut blocks = vec![MomentMatrixSpec::build(&index, independent_basis(&index, r), Polynomial::constant(1.0))];
    blocks.extend(localizing_matrices(&index, &sys.inequalities, None, opts.products));
    let scales = index
        .monomials
        .iter()
        .map(|m| {
            if opts.scaling {
                m.pairs().iter().map(|&(v, e)| sys.scales[v].powi(e as i32)).product()
            } else {
                1.0
            }
        })
        .collect();
    Ok(SdpProblem {
        target: mu.clone(),
        target_pos,
        sense,
        equalities: stationary_constraints(sys),
        blocks,
        scales,
        index,
    })
}

impl SdpProblem {
    fn scale_of(&self, m: &Monomial) -> f64 {
        self.index.position(m).map_or(1.0, |p| self.scales[p])
    }

    /// Standard form over `x = y / s`. The objective is `±x_μ`.
    pub fn to_standard_form(&self) -> ConicStandardForm {
        let n = self.index.len();
        let mut f = ConicStandardForm::new(n);
        f.scales = self.scales.clone();
        f.c[self.target_pos] = match self.sense {
            Sense::Min => 1.0,
            Sense::Max => -1.0,
        };
        let mut a = self.equalities.rows.clone();
        let mut b = self.equalities.rhs.clone();
        for j in 0..n {
            let s = self.scales[j];
            a.column_mut(j).scale_mut(s);
        }
        for i in 0..a.nrows() {
            let m = a.row(i).amax();
            if m > 0.0 {
                a.row_mut(i).unscale_mut(m);
                b[i] /= m;
            }
        }
        f.a_eq = a;
        f.b_eq = b;
        let mut diag = ConeBlock::new(BlockKind::Diag, 0);
        for spec in &self.blocks {
            let d = spec.dim();
            let bs: Vec<f64> = spec.basis.iter().map(|m| self.scale_of(m)).collect();
            let mut entries = Vec::new();
            for i in 0..d {
                for j in i..d {
                    for (m, c) in spec.entries[i][j].terms() {
                        let p = self.index.position(m).expect("entry indexed");
                        entries.push((p + 1, i, j, c * self.scales[p] / (bs[i] * bs[j])));
                    }
                }
            }
            let big = entries.iter().map(|e| e.3.abs()).fold(0.0, f64::max);
            if big == 0.0 {
                continue;
            }
            if d == 1 {
                let row = diag.dim;
                diag.dim += 1;
                for (mat, _, _, v) in entries {
                    diag.push(mat, row, row, v / big);
                }
            } else {
                let mut blk = ConeBlock::new(BlockKind::Psd, d);
                for (mat, i, j, v) in entries {
                    blk.push(mat, i, j, v / big);
                }
                f.blocks.push(blk);
            }
        }
        if diag.dim > 0 {
            f.blocks.push(diag);
        }
        f
    }

    /// Moment vector from a standard-form solution.
    pub fn moments(&self, std: &ConicStandardForm, x: &[f64]) -> Vec<f64> {
        std.unpack(x)
    }

    pub fn label(&self) -> String {
        self.index.label(&self.target)
    }
}

/// Bound on the target moment from one solve.
#[derive(Debug, Clone)]
pub struct SideResult {
    pub value: f64,
    pub report: SolveReport,
}

pub fn solve_problem(problem: &SdpProblem, backend: &dyn Backend, opts: &SolveOptions) -> SideResult {
    let std = problem.to_standard_form();
    let report = backend.solve(&std, opts);
    let value = if report.status.has_value() {
        problem.moments(&std, &report.x)[problem.target_pos]
    } else {
        f64::NAN
    };
    SideResult { value, report }
}

#[derive(Debug, Clone)]
pub struct BoundResult {
    pub order: u32,
    pub max_degree: u32,
    pub lower: SideResult,
    pub upper: SideResult,
    /// A point mass at the origin of some mode is stationary.
    pub trivial_lower_bound: bool,
    pub wall_time: Duration,
}

impl BoundResult {
    pub fn lower_value(&self) -> f64 {
        self.lower.value
    }

    pub fn upper_value(&self) -> f64 {
        self.upper.value
    }

    pub fn both_optimal(&self) -> bool {
        self.lower.report.status.is_optimal() && self.upper.report.status.is_optimal()
    }

    pub fn status(&self) -> SolveStatus {
        let (a, b) = (self.lower.report.status, self.upper.report.status);
        if a == SolveStatus::Optimal {
            b
        } else {
            a
        }
    }
}

pub fn bound_at_order(
    sys: &SingleModeShs,
    mu: &Monomial,
    order: u32,
    backend: &dyn Backend,
    opts: &SolveOptions,
    asm: &AssembleOptions,
) -> Result<BoundResult, BoundError> {
    let start = Instant::now();
    let ms = build_moment_system(sys, order)?;
    let lo = assemble(&ms, mu, Sense::Min, asm)?;
    let hi = assemble(&ms, mu, Sense::Max, asm)?;
    let (lower, upper) = join(|| solve_problem(&lo, backend, opts), || solve_problem(&hi, backend, opts));
    Ok(BoundResult {
        order,
        max_degree: ms.index.max_degree,
        lower,
        upper,
        trivial_lower_bound: ms.trivial_lower_bound(),
        wall_time: start.elapsed(),
    })
}

#[cfg(feature = "parallel")]
fn join<A: Send, B: Send>(a: impl FnOnce() -> A + Send, b: impl FnOnce() -> B + Send) -> (A, B) {
    rayon::join(a, b)
}

#[cfg(not(feature = "parallel"))]
fn join<A, B>(a: impl FnOnce() -> A, b: impl FnOnce() -> B) -> (A, B) {
    (a(), b())
}

#[derive(Debug, Clone)]
pub struct Hierarchy {
    pub results: Vec<Result<BoundResult, BoundError>>,
    /// Lower bounds nondecreasing and upper bounds nonincreasing across the
    /// orders where both solves are optimal.
    pub monotone: bool,
}

pub const MONOTONE_SLACK: f64 = 1e-6;

pub fn bound_hierarchy(
    sys: &SingleModeShs,
    mu: &Monomial,
    orders: &[u32],
    backend: &dyn Backend,
    opts: &SolveOptions,
    asm: &AssembleOptions,
) -> Hierarchy {
    let results = map_orders(orders, |d| bound_at_order(sys, mu, d, backend, opts, asm));
    let monotone = is_monotone(&results);
    Hierarchy { results, monotone }
}

#[cfg(feature = "parallel")]
fn map_orders<T: Send>(orders: &[u32], f: impl Fn(u32) -> T + Sync) -> Vec<T> {
    use rayon::prelude::*;
    orders.par_iter().map(|&d| f(d)).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_orders<T>(orders: &[u32], f: impl Fn(u32) -> T) -> Vec<T> {
    orders.iter().map(|&d| f(d)).collect()
}

pub fn is_monotone(results: &[Result<BoundResult, BoundError>]) -> bool {
    let ok: Vec<&BoundResult> = results.iter().flatten().filter(|r| r.both_optimal()).collect();
    ok.windows(2).all(|w| {
        w[1].lower.value >= w[0].lower.value - MONOTONE_SLACK && w[1].upper.value <= w[0].upper.value + MONOTONE_SLACK
    })
}

/// Enclosure of `Var(v)/E(v)²` from intervals on `E(v)` and `E(v²)`.
pub fn cv2_bounds(mean: (f64, f64), second: (f64, f64)) -> Result<(f64, f64), BoundError> {
    let (m_lo, m_hi) = mean;
    if !(m_lo > 0.0) {
        return Err(BoundError::NonPositiveMean(m_lo));
    }
    let lower = (second.0 / (m_hi * m_hi) - 1.0).max(0.0);
    let upper = second.1 / (m_lo * m_lo) - 1.0;
    Ok((lower, upper))
}
