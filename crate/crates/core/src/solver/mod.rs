//! SDP standard form, a builtin interior-point method and SDPA-sparse
//! interchange.

mod ipm;
mod sdpa;

use std::time::Duration;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;
use web_time::Instant;

pub use ipm::{ipm_dual, IpmOutcome};
pub use sdpa::{export_sdpa, parse_sdpa, write_sdpa, EqualityMode, SdpaError};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 200;
pub const DEFAULT_PSD_CAP: usize = 200;
/// Post-solve acceptance thresholds.
pub const VERIFY_EQ_TOL: f64 = 1e-7;
pub const VERIFY_EIG_TOL: f64 = 1e-7;
pub const TOL_ENV: &str = "SHSMB_SOLVER_TOL";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Psd,
    /// Nonnegative orthant, written with a negative size in SDPA files.
    Diag,
}

/// One cone block `F₀ + Σ xₖ Fₖ`, stored as upper-triangle entries
/// `(mat, i, j, v)` where `mat = 0` is the constant and `mat = k + 1`
/// multiplies `xₖ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeBlock {
    pub kind: BlockKind,
    pub dim: usize,
    pub entries: Vec<(usize, usize, usize, f64)>,
}

impl ConeBlock {
    pub fn new(kind: BlockKind, dim: usize) -> Self {
        Self {
            kind,
            dim,
            entries: Vec::new(),
        }
    }

    /// Adds `v` at `(i, j)` of matrix `mat`, folding into upper triangle.
    pub fn push(&mut self, mat: usize, i: usize, j: usize, v: f64) {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        debug_assert!(self.kind == BlockKind::Psd || i == j);
        if v != 0.0 {
            self.entries.push((mat, i, j, v));
        }
    }

    /// Dense symmetric `F_mat`.
    pub fn matrix(&self, mat: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for &(k, i, j, v) in &self.entries {
            if k == mat {
                m[(i, j)] += v;
                if i != j {
                    m[(j, i)] += v;
                }
            }
        }
        m
    }

    /// Dense `F₀ + Σ xₖ Fₖ`.
    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for &(k, i, j, v) in &self.entries {
            let w = if k == 0 { v } else { v * x[k - 1] };
            m[(i, j)] += w;
            if i != j {
                m[(j, i)] += w;
            }
        }
        m
    }

    /// Sorts entries and merges duplicates.
    pub fn canonicalize(&mut self) {
        self.entries.sort_by(|a, b| (a.0, a.1, a.2).cmp(&(b.0, b.1, b.2)));
        let mut out: Vec<(usize, usize, usize, f64)> = Vec::with_capacity(self.entries.len());
        for e in self.entries.drain(..) {
            match out.last_mut() {
                Some(l) if (l.0, l.1, l.2) == (e.0, e.1, e.2) => l.3 += e.3,
                _ => out.push(e),
            }
        }
        out.retain(|e| e.3 != 0.0);
        self.entries = out;
    }
}

/// `min cᵀx + offset` subject to `A_eq x = b_eq` and `F_b(x) ⪰ 0` for every
/// block, with `x` free. `scales` is the packing map: `x = y / scales` for
/// problem variables `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConicStandardForm {
    pub num_vars: usize,
    pub c: Vec<f64>,
    pub offset: f64,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub blocks: Vec<ConeBlock>,
    pub scales: Vec<f64>,
}

impl ConicStandardForm {
    pub fn new(num_vars: usize) -> Self {
        Self {
            num_vars,
            c: vec![0.0; num_vars],
            offset: 0.0,
            a_eq: DMatrix::zeros(0, num_vars),
            b_eq: DVector::zeros(0),
            blocks: Vec::new(),
            scales: vec![1.0; num_vars],
        }
    }

    pub fn pack(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(&self.scales).map(|(v, s)| v / s).collect()
    }

    pub fn unpack(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.scales).map(|(v, s)| v * s).collect()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.offset + self.c.iter().zip(x).map(|(c, x)| c * x).sum::<f64>()
    }

    pub fn psd_dimension(&self) -> usize {
        self.blocks.iter().map(|b| b.dim).sum()
    }

    pub fn verify(&self, x: &[f64]) -> Verification {
        let xv = DVector::from_column_slice(x);
        let eq_residual = if self.a_eq.nrows() == 0 {
            0.0
        } else {
            (&self.a_eq * &xv - &self.b_eq).amax()
        };
        let min_eigenvalue = self
            .blocks
            .iter()
            .filter(|b| b.dim > 0)
            .map(|b| min_eig(&b.eval(x)))
            .fold(f64::INFINITY, f64::min);
        Verification {
            eq_residual,
            min_eigenvalue,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verification {
    pub eq_residual: f64,
    pub min_eigenvalue: f64,
}

impl Verification {
    pub fn passes(&self) -> bool {
        self.eq_residual <= VERIFY_EQ_TOL && self.min_eigenvalue >= -VERIFY_EIG_TOL
    }
}

pub(crate) fn min_eig(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    m.clone().symmetric_eigenvalues().min()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    /// Stopped early with residuals within a loose tolerance, or converged
    /// but failed the verification pass.
    NearOptimal,
    Infeasible,
    Unbounded,
    MaxIterations,
    NumericalFailure,
    TooLarge,
}

impl SolveStatus {
    pub fn name(self) -> &'static str {
        match self {
            Self::Optimal => "optimal",
            Self::NearOptimal => "near-optimal",
            Self::Infeasible => "infeasible",
            Self::Unbounded => "unbounded",
            Self::MaxIterations => "max-iterations",
            Self::NumericalFailure => "numerical-failure",
            Self::TooLarge => "too-large",
        }
    }

    pub fn is_optimal(self) -> bool {
        self == Self::Optimal
    }

    pub fn has_value(self) -> bool {
        matches!(self, Self::Optimal | Self::NearOptimal)
    }
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub objective: f64,
    /// Standard-form solution. Empty unless a value is available.
    pub x: Vec<f64>,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub dual_objective: f64,
    pub iterations: usize,
    pub wall_time: Duration,
    pub verification: Option<Verification>,
    pub message: String,
}

impl SolveReport {
    fn failed(status: SolveStatus, message: impl Into<String>, start: Instant) -> Self {
        Self {
            status,
            objective: f64::NAN,
            x: Vec::new(),
            primal_residual: f64::NAN,
            dual_residual: f64::NAN,
            gap: f64::NAN,
            dual_objective: f64::NAN,
            iterations: 0,
            wall_time: start.elapsed(),
            verification: None,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub psd_cap: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            psd_cap: DEFAULT_PSD_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{TOL_ENV} must be a positive number, got `{0}`")]
pub struct BadTolerance(pub String);

impl SolveOptions {
    /// Defaults with the tolerance taken from `SHSMB_SOLVER_TOL` when set.
    pub fn from_env() -> Result<Self, BadTolerance> {
        let mut o = Self::default();
        if let Ok(s) = std::env::var(TOL_ENV) {
            o.tol = parse_tol(&s)?;
        }
        Ok(o)
    }
}

fn parse_tol(s: &str) -> Result<f64, BadTolerance> {
    match s.trim().parse::<f64>() {
        Ok(t) if t.is_finite() && t > 0.0 => Ok(t),
        _ => Err(BadTolerance(s.to_string())),
    }
}

/// Anything that can solve a standard-form problem.
pub trait Backend: Sync {
    fn name(&self) -> &str;
    fn solve(&self, std: &ConicStandardForm, opts: &SolveOptions) -> SolveReport;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BuiltinIpm;

impl Backend for BuiltinIpm {
    fn name(&self) -> &str {
        "builtin"
    }

    fn solve(&self, std: &ConicStandardForm, opts: &SolveOptions) -> SolveReport {
        builtin_ipm(std, opts)
    }
}

/// Equality-free reformulation `x = x₀ + N z`.
#[derive(Debug, Clone)]
pub struct Eliminated {
    pub x0: DVector<f64>,
    pub null: DMatrix<f64>,
    pub reduced: ConicStandardForm,
}

impl Eliminated {
    pub fn recover(&self, z: &[f64]) -> Vec<f64> {
        (&self.x0 + &self.null * DVector::from_column_slice(z)).as_slice().to_vec()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EliminationError {
    #[error("equality constraints are inconsistent (residual {0:.3e})")]
    Inconsistent(f64),
}

/// Removes the equalities through an SVD nullspace basis.
pub fn eliminate_equalities(std: &ConicStandardForm) -> Result<Eliminated, EliminationError> {
    let n = std.num_vars;
    let (x0, null) = if std.a_eq.nrows() == 0 {
        (DVector::zeros(n), DMatrix::identity(n, n))
    } else {
        let svd = std.a_eq.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let eps = 1e-10 * smax.max(1.0);
        let x0 = svd.solve(&std.b_eq, eps).expect("svd with vectors");
        let res = (&std.a_eq * &x0 - &std.b_eq).amax();
        if res > 1e-8 * (1.0 + std.b_eq.amax()) {
            return Err(EliminationError::Inconsistent(res));
        }
        let rank = svd.singular_values.iter().filter(|&&s| s > eps).count();
        // right singular vectors beyond the rank span the nullspace
        let full = full_right_basis(&std.a_eq);
        let null = full.columns(rank, n - rank).into_owned();
        (x0, null)
    };
    let k = null.ncols();
    let mut reduced = ConicStandardForm::new(k);
    let cv = DVector::from_column_slice(&std.c);
    reduced.offset = std.offset + cv.dot(&x0);
    reduced.c = (null.transpose() * &cv).as_slice().to_vec();
    for b in &std.blocks {
        let mut nb = ConeBlock::new(b.kind, b.dim);
        let mut by_pos: std::collections::BTreeMap<(usize, usize), (f64, Vec<f64>)> = Default::default();
        for &(mat, i, j, v) in &b.entries {
            let e = by_pos.entry((i, j)).or_insert_with(|| (0.0, vec![0.0; k]));
            if mat == 0 {
                e.0 += v;
            } else {
                e.0 += v * x0[mat - 1];
                for (t, et) in e.1.iter_mut().enumerate() {
                    *et += v * null[(mat - 1, t)];
                }
            }
        }
        for ((i, j), (c0, cs)) in by_pos {
            nb.push(0, i, j, c0);
            for (t, v) in cs.into_iter().enumerate() {
                if v.abs() > 1e-15 {
                    nb.push(t + 1, i, j, v);
                }
            }
        }
        reduced.blocks.push(nb);
    }
    Ok(Eliminated { x0, null, reduced })
}

/// Facial reduction on zero diagonals: when a diagonal entry of a PSD block
/// vanishes on the equality manifold, its whole row must vanish. Those rows
/// become equalities and the index leaves the block, repeatedly.
pub fn reduce_zero_diagonals(std: &ConicStandardForm) -> Result<(ConicStandardForm, Eliminated), EliminationError> {
    let mut form = std.clone();
    loop {
        let elim = eliminate_equalities(&form)?;
        let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
        let mut changed = false;
        for (orig, red) in form.blocks.iter_mut().zip(&elim.reduced.blocks) {
            let scale = red.entries.iter().map(|e| e.3.abs()).fold(0.0, f64::max);
            let mut diag = vec![0.0f64; red.dim];
            for &(_, i, j, v) in &red.entries {
                if i == j {
                    diag[i] = diag[i].max(v.abs());
                }
            }
            let dead: Vec<usize> = (0..red.dim).filter(|&i| diag[i] <= 1e-12 * scale.max(1e-300)).collect();
            if dead.is_empty() {
                continue;
            }
            changed = true;
            if orig.kind == BlockKind::Psd {
                let mut by_pos: std::collections::BTreeMap<(usize, usize), (Vec<f64>, f64)> = Default::default();
                for &(mat, i, j, v) in &orig.entries {
                    if i != j && (dead.contains(&i) || dead.contains(&j)) {
                        let e = by_pos.entry((i, j)).or_insert_with(|| (vec![0.0; form.num_vars], 0.0));
                        if mat == 0 {
                            e.1 += v;
                        } else {
                            e.0[mat - 1] += v;
                        }
                    }
                }
                for (_, (a, a0)) in by_pos {
                    let m = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                    if m > 0.0 {
                        rows.push((a.iter().map(|v| v / m).collect(), -a0 / m));
                    }
                }
            }
            let mut map = vec![usize::MAX; orig.dim];
            let mut d = 0;
            for (i, slot) in map.iter_mut().enumerate() {
                if !dead.contains(&i) {
                    *slot = d;
                    d += 1;
                }
            }
            let mut nb = ConeBlock::new(orig.kind, d);
            for &(mat, i, j, v) in &orig.entries {
                if map[i] != usize::MAX && map[j] != usize::MAX {
                    nb.push(mat, map[i], map[j], v);
                }
            }
            *orig = nb;
        }
        if !changed {
            return Ok((form, elim));
        }
        form.blocks.retain(|b| b.dim > 0);
        if !rows.is_empty() {
            let m0 = form.a_eq.nrows();
            let n = form.num_vars;
            let mut a = DMatrix::zeros(m0 + rows.len(), n);
            a.rows_mut(0, m0).copy_from(&form.a_eq);
            let mut b = DVector::zeros(m0 + rows.len());
            b.rows_mut(0, m0).copy_from(&form.b_eq);
            for (r, (row, rhs)) in rows.into_iter().enumerate() {
                for k in 0..n {
                    a[(m0 + r, k)] = row[k];
                }
                b[m0 + r] = rhs;
            }
            form.a_eq = a;
            form.b_eq = b;
        }
    }
}

/// Full `n × n` orthonormal right basis `V` of `A = U Σ Vᵀ`, ordered by
/// decreasing singular value.
fn full_right_basis(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.ncols();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    // pad to at least n rows so the SVD returns every right vector
    let m = a.nrows().max(n);
    let mut padded = DMatrix::zeros(m, n);
    padded.rows_mut(0, a.nrows()).copy_from(a);
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("right vectors requested");
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let mut v = DMatrix::zeros(n, n);
    for (c, &i) in order.iter().enumerate() {
        v.set_column(c, &vt.row(i).transpose());
    }
    v
}

/// Dense data of an equality-free problem after facial reduction:
/// `G₀ + Σ wₖ Gₖ ⪰ 0` per block, restricted to the common range of the
/// block's matrices, over variables `w` with `z = map · w`.
#[derive(Debug, Clone)]
pub struct DenseLmi {
    pub c: DVector<f64>,
    pub g0: Vec<DMatrix<f64>>,
    /// `[var][block]`
    pub g: Vec<Vec<DMatrix<f64>>>,
    pub map: DMatrix<f64>,
    /// Objective weight on directions that leave every block unchanged.
    pub free_objective: f64,
}

impl DenseLmi {
    pub fn from_form(form: &ConicStandardForm) -> Self {
        let k = form.num_vars;
        let mut g0 = Vec::new();
        let mut g: Vec<Vec<DMatrix<f64>>> = vec![Vec::new(); k];
        for b in &form.blocks {
            let mats: Vec<DMatrix<f64>> = (0..=k).map(|m| b.matrix(m)).collect();
            let q = common_range(&mats);
            if q.ncols() == 0 {
                continue;
            }
            let qt = q.transpose();
            g0.push(symmetrize(&qt * &mats[0] * &q));
            for (t, gt) in g.iter_mut().enumerate() {
                gt.push(symmetrize(&qt * &mats[t + 1] * &q));
            }
        }
        // drop directions that no block sees
        let rows: usize = g0.iter().map(|m| m.nrows() * (m.nrows() + 1) / 2).sum();
        let mut lin = DMatrix::zeros(rows.max(1), k);
        for (t, gt) in g.iter().enumerate() {
            let mut r = 0;
            for m in gt {
                let n = m.nrows();
                for i in 0..n {
                    for j in i..n {
                        lin[(r, t)] = if i == j { m[(i, j)] } else { m[(i, j)] * std::f64::consts::SQRT_2 };
                        r += 1;
                    }
                }
            }
        }
        let c = DVector::from_column_slice(&form.c);
        let v = full_right_basis(&lin);
        let sv = (&lin * &v).column_iter().map(|col| col.norm()).collect::<Vec<_>>();
        let top = sv.iter().cloned().fold(0.0, f64::max);
        let rank = sv.iter().filter(|&&s| s > 1e-10 * top.max(1e-300)).count();
        let map = v.columns(0, rank).into_owned();
        let rest = v.columns(rank, k - rank);
        let free_objective = (rest.transpose() * &c).amax();
        let gw: Vec<Vec<DMatrix<f64>>> = (0..rank)
            .map(|w| {
                (0..g0.len())
                    .map(|blk| {
                        let mut acc = DMatrix::zeros(g0[blk].nrows(), g0[blk].ncols());
                        for t in 0..k {
                            let coef = map[(t, w)];
                            if coef != 0.0 {
                                acc += &g[t][blk] * coef;
                            }
                        }
                        acc
                    })
                    .collect()
            })
            .collect();
        Self {
            c: map.transpose() * &c,
            g0,
            g: gw,
            map,
            free_objective,
        }
    }

    pub fn dimension(&self) -> usize {
        self.g0.iter().map(|m| m.nrows()).sum()
    }

    pub fn recover(&self, w: &[f64]) -> Vec<f64> {
        if w.is_empty() {
            return vec![0.0; self.map.nrows()];
        }
        (&self.map * DVector::from_column_slice(w)).as_slice().to_vec()
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Orthonormal basis of the sum of the column spaces.
fn common_range(mats: &[DMatrix<f64>]) -> DMatrix<f64> {
    let n = mats[0].nrows();
    let mut acc = DMatrix::zeros(n, n);
    for m in mats {
        let f = m.norm();
        if f > 0.0 {
            acc += (m * m.transpose()) / (f * f);
        }
    }
    let eig = acc.symmetric_eigen();
    let top = eig.eigenvalues.max();
    if top <= 0.0 {
        return DMatrix::zeros(n, 0);
    }
    let keep: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > 1e-14 * top).collect();
    if keep.len() == n {
        return DMatrix::identity(n, n);
    }
    let mut q = DMatrix::zeros(n, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        q.set_column(c, &eig.eigenvectors.column(i));
    }
    q
}

/// Eliminates equalities, reduces each block to its essential range, runs
/// the interior-point method and verifies the recovered point.
pub fn builtin_ipm(std: &ConicStandardForm, opts: &SolveOptions) -> SolveReport {
    let start = Instant::now();
    let elim = match reduce_zero_diagonals(std) {
        Ok((_, e)) => e,
        Err(e) => {
            return SolveReport::failed(
                SolveStatus::Infeasible,
                format!("{e}; the model may lack a stationary distribution or its constraints conflict"),
                start,
            )
        }
    };
    let lmi = DenseLmi::from_form(&elim.reduced);
    if lmi.dimension() > opts.psd_cap {
        return SolveReport::failed(
            SolveStatus::TooLarge,
            format!("total PSD dimension {} exceeds the cap {}", lmi.dimension(), opts.psd_cap),
            start,
        );
    }
    if lmi.free_objective > 1e-9 * (1.0 + lmi.c.amax()) {
        return SolveReport::failed(
            SolveStatus::Unbounded,
            "the objective moment is not constrained by any matrix block",
            start,
        );
    }
    let out = ipm_dual(&lmi, opts);
    let mut status = out.status;
    let mut message = out.message;
    if !status.has_value() {
        if status == SolveStatus::Infeasible {
            message.push_str("; the model may lack a stationary distribution or its constraints conflict");
        }
        let mut r = SolveReport::failed(status, message, start);
        r.iterations = out.iterations;
        r.primal_residual = out.primal_residual;
        r.dual_residual = out.dual_residual;
        r.gap = out.gap;
        return r;
    }
    let x = elim.recover(&lmi.recover(&out.z));
    let verification = std.verify(&x);
    if status == SolveStatus::Optimal && !verification.passes() {
        status = SolveStatus::NearOptimal;
        message = format!(
            "verification failed: equality residual {:.2e}, min eigenvalue {:.2e}",
            verification.eq_residual, verification.min_eigenvalue
        );
    }
    SolveReport {
        status,
        objective: std.objective(&x),
        x,
        primal_residual: out.primal_residual,
        dual_residual: out.dual_residual,
        gap: out.gap,
        dual_objective: elim.reduced.offset + out.bound,
        iterations: out.iterations,
        wall_time: start.elapsed(),
        verification: Some(verification),
        message,
    }
}
