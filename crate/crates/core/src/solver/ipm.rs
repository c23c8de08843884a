//! Primal-dual path following with Nesterov–Todd scaling and a Mehrotra
//! predictor-corrector.
//!
//! The problem `min cᵀz  s.t.  G₀ + Σ zₖ Gₖ ⪰ 0` is read as the SDPA dual
//! `max bᵀy  s.t.  S = C − Σ yᵢ Aᵢ ⪰ 0` with `b = −c`, `C = G₀`,
//! `Aᵢ = −Gᵢ`, paired with the primal `min ⟨C, X⟩  s.t.  ⟨Aᵢ, X⟩ = bᵢ`.

use nalgebra::{DMatrix, DVector};

use super::{min_eig, DenseLmi, SolveOptions, SolveStatus};

#[derive(Debug, Clone)]
pub struct IpmOutcome {
    pub status: SolveStatus,
    pub z: Vec<f64>,
    /// `−⟨G₀, X⟩`: a lower bound on the optimum whenever `X` is feasible.
    pub bound: f64,
    /// Relative violation of `S = C − Σ yᵢ Aᵢ`.
    pub primal_residual: f64,
    /// Relative violation of `⟨Aᵢ, X⟩ = bᵢ`.
    pub dual_residual: f64,
    pub gap: f64,
    pub iterations: usize,
    pub message: String,
}

/// Loose acceptance for runs that stall short of the requested tolerance.
const NEAR_TOL: f64 = 1e-5;
const BLOWUP: f64 = 1e12;

type Blocks = Vec<DMatrix<f64>>;

fn inner(a: &Blocks, b: &Blocks) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn norm(a: &Blocks) -> f64 {
    inner(a, a).sqrt()
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest `α` keeping `D + α Δ ⪰ 0` for diagonal positive `D`.
fn max_step(d: &[DVector<f64>], delta: &Blocks) -> f64 {
    let mut alpha = f64::INFINITY;
    for (dv, dm) in d.iter().zip(delta) {
        let n = dv.len();
        let s = dv.map(|x| 1.0 / x.sqrt());
        let t = DMatrix::from_fn(n, n, |i, j| dm[(i, j)] * s[i] * s[j]);
        let lmin = min_eig(&t);
        if lmin < 0.0 {
            alpha = alpha.min(-1.0 / lmin);
        }
    }
    alpha
}

struct Scaling {
    g: Vec<DMatrix<f64>>,
    ginv: Vec<DMatrix<f64>>,
    d: Vec<DVector<f64>>,
}

/// `W = G Gᵀ` with `W S W = X`, `Gᵀ S G = G⁻¹ X G⁻ᵀ = D`.
fn nt_scaling(x: &Blocks, s: &Blocks) -> Option<Scaling> {
    let mut g = Vec::with_capacity(x.len());
    let mut ginv = Vec::with_capacity(x.len());
    let mut d = Vec::with_capacity(x.len());
    for (xb, sb) in x.iter().zip(s) {
        let lx = xb.clone().cholesky()?.l();
        let ls = sb.clone().cholesky()?.l();
        let svd = (ls.transpose() * &lx).svd(true, true);
        let v = svd.v_t?.transpose();
        let u = svd.u?;
        let dv = svd.singular_values;
        if dv.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            return None;
        }
        let n = dv.len();
        let dm = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 / dv[i].sqrt() } else { 0.0 });
        let gb = &lx * &v * &dm;
        // G⁻¹ = D^{-1/2} Uᵀ L_sᵀ
        let dinv = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 / dv[i].sqrt() } else { 0.0 });
        let gi = &dinv * u.transpose() * ls.transpose();
        g.push(gb);
        ginv.push(gi);
        d.push(dv);
    }
    Some(Scaling { g, ginv, d })
}

pub fn ipm_dual(lmi: &DenseLmi, opts: &SolveOptions) -> IpmOutcome {
    let m = lmi.c.len();
    let nb = lmi.g0.len();
    let fail = |status, message: String, iterations| IpmOutcome {
        status,
        z: Vec::new(),
        bound: f64::NAN,
        primal_residual: f64::NAN,
        dual_residual: f64::NAN,
        gap: f64::NAN,
        iterations,
        message,
    };

    if nb == 0 {
        return if lmi.c.amax() <= opts.tol {
            done(SolveStatus::Optimal, vec![0.0; m], 0.0, 0)
        } else {
            fail(SolveStatus::Unbounded, "objective is unconstrained".into(), 0)
        };
    }
    if m == 0 {
        let e = lmi.g0.iter().map(min_eig).fold(f64::INFINITY, f64::min);
        let scale = 1.0 + lmi.g0.iter().map(|g| g.amax()).fold(0.0, f64::max);
        return if e >= -opts.tol * scale {
            done(SolveStatus::Optimal, Vec::new(), 0.0, 0)
        } else {
            fail(
                SolveStatus::Infeasible,
                format!("moments are fully determined but a block has eigenvalue {e:.3e}"),
                0,
            )
        };
    }

    let b: DVector<f64> = -&lmi.c;
    let c = &lmi.g0;
    let a: Vec<Blocks> = lmi.g.iter().map(|gi| gi.iter().map(|x| -x).collect()).collect();
    let dims: Vec<usize> = c.iter().map(|x| x.nrows()).collect();
    let ntot: usize = dims.iter().sum();
    let norm_b = b.norm();
    let norm_c = norm(c);

    let a_op = |x: &Blocks| DVector::from_fn(m, |i, _| inner(&a[i], x));
    let a_adj = |y: &DVector<f64>| -> Blocks {
        let mut out: Blocks = dims.iter().map(|&n| DMatrix::zeros(n, n)).collect();
        for i in 0..m {
            if y[i] != 0.0 {
                for (o, ai) in out.iter_mut().zip(&a[i]) {
                    *o += ai * y[i];
                }
            }
        }
        out
    };

    // infeasible start in the style of SDPT3
    let mut x: Blocks = Vec::with_capacity(nb);
    let mut s: Blocks = Vec::with_capacity(nb);
    for (k, &n) in dims.iter().enumerate() {
        let nf = n as f64;
        let mut amax: f64 = 0.0;
        let mut ratio: f64 = 0.0;
        for i in 0..m {
            let f = a[i][k].norm();
            amax = amax.max(f);
            ratio = ratio.max((1.0 + b[i].abs()) / (1.0 + f));
        }
        let xi = 10f64.max(nf.sqrt()).max(nf * ratio);
        let eta = 10f64.max(nf.sqrt()).max((1.0 + amax.max(c[k].norm())) / nf.sqrt());
        x.push(DMatrix::identity(n, n) * xi);
        s.push(DMatrix::identity(n, n) * eta);
    }
    let mut y = DVector::zeros(m);
    let x0_trace: f64 = x.iter().map(|b| b.trace()).sum();

    let mut best: Option<(f64, DVector<f64>, f64, f64, f64, f64)> = None;
    let mut stalls = 0;
    for iter in 0..opts.max_iter {
        let ay = a_adj(&y);
        let rd: Blocks = c.iter().zip(&s).zip(&ay).map(|((c, s), a)| c - s - a).collect();
        let rp = &b - a_op(&x);
        let mu = inner(&x, &s) / ntot as f64;
        let pobj = inner(c, &x);
        let dobj = b.dot(&y);
        let pres = norm(&rd) / (1.0 + norm_c);
        let dres = rp.norm() / (1.0 + norm_b);
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
        let err = pres.max(dres).max(gap);
        if best.as_ref().is_none_or(|bst| err < bst.0) {
            best = Some((err, y.clone(), -pobj, pres, dres, gap));
        }
        if err <= opts.tol {
            return IpmOutcome {
                status: SolveStatus::Optimal,
                z: y.as_slice().to_vec(),
                bound: -pobj,
                primal_residual: pres,
                dual_residual: dres,
                gap,
                iterations: iter,
                message: String::new(),
            };
        }
        let xtr: f64 = x.iter().map(|b| b.trace()).sum();
        if xtr > BLOWUP * x0_trace.max(1.0) && pobj < 0.0 {
            return fail(
                SolveStatus::Infeasible,
                format!("no point satisfies the matrix constraints (‖X‖ diverged after {iter} iterations)"),
                iter,
            );
        }
        if y.amax() > BLOWUP && dobj > 0.0 {
            return fail(
                SolveStatus::Unbounded,
                format!("objective is unbounded below (‖z‖ diverged after {iter} iterations)"),
                iter,
            );
        }

        let Some(sc) = nt_scaling(&x, &s) else {
            return stop(best, iter, "lost positive definiteness");
        };
        // scaled data Ãᵢ = Gᵀ Aᵢ G, R̃ = Gᵀ R_d G
        let at: Vec<Blocks> = a
            .iter()
            .map(|ai| ai.iter().zip(&sc.g).map(|(ab, g)| g.transpose() * ab * g).collect())
            .collect();
        let rt: Blocks = rd.iter().zip(&sc.g).map(|(r, g)| sym(&(g.transpose() * r * g))).collect();
        let mut schur = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                let v = inner(&at[i], &at[j]);
                schur[(i, j)] = v;
                schur[(j, i)] = v;
            }
        }
        let solve = factor(&schur);
        let Some(solve) = solve else {
            return stop(best, iter, "Schur complement is singular");
        };
        let atr = DVector::from_fn(m, |i, _| inner(&at[i], &rt));

        // direction for a given complementarity target U (scaled space)
        let direction = |u: &Blocks| -> (DVector<f64>, Blocks, Blocks) {
            let rhs = &rp - DVector::from_fn(m, |i, _| inner(&at[i], u)) + &atr;
            let dy = solve(&rhs);
            let mut dst = rt.clone();
            for i in 0..m {
                for (d, ai) in dst.iter_mut().zip(&at[i]) {
                    *d -= ai * dy[i];
                }
            }
            let dxt: Blocks = u.iter().zip(&dst).map(|(u, d)| u - d).collect();
            (dy, dxt, dst)
        };
        let dmat: Blocks = sc.d.iter().map(|d| DMatrix::from_diagonal(d)).collect();
        let u_aff: Blocks = dmat.iter().map(|d| -d).collect();
        let (_, dxa, dsa) = direction(&u_aff);
        let ap = max_step(&sc.d, &dxa).min(1.0);
        let ad = max_step(&sc.d, &dsa).min(1.0);
        let mu_aff = {
            let xa: Blocks = dmat.iter().zip(&dxa).map(|(d, dx)| d + dx * ap).collect();
            let sa: Blocks = dmat.iter().zip(&dsa).map(|(d, ds)| d + ds * ad).collect();
            inner(&xa, &sa) / ntot as f64
        };
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
        let u: Blocks = sc
            .d
            .iter()
            .zip(dxa.iter().zip(&dsa))
            .map(|(d, (dx, ds))| {
                let n = d.len();
                let k = sym(&(dx * ds));
                DMatrix::from_fn(n, n, |i, j| {
                    let target = if i == j { sigma * mu - d[i] * d[i] } else { 0.0 };
                    2.0 * (target - k[(i, j)]) / (d[i] + d[j])
                })
            })
            .collect();
        let (dy, dxt, dst) = direction(&u);
        let gamma = 0.9 + 0.09 * (1.0 - sigma);
        let ap = (gamma * max_step(&sc.d, &dxt)).min(1.0);
        let ad = (gamma * max_step(&sc.d, &dst)).min(1.0);
        if ap < 1e-10 && ad < 1e-10 {
            stalls += 1;
            if stalls >= 3 {
                return stop(best, iter, "step lengths collapsed");
            }
        } else {
            stalls = 0;
        }
        let dx: Blocks = (0..nb).map(|k| &sc.g[k] * &dxt[k] * sc.g[k].transpose()).collect();
        // ΔS = G⁻ᵀ ΔS̃ G⁻¹
        let ds: Blocks = (0..nb).map(|k| sc.ginv[k].transpose() * &dst[k] * &sc.ginv[k]).collect();
        let (mut ap, mut ad) = (ap, ad);
        let mut moved = false;
        for _ in 0..30 {
            let xn: Blocks = (0..nb).map(|k| sym(&(&x[k] + &dx[k] * ap))).collect();
            let sn: Blocks = (0..nb).map(|k| sym(&(&s[k] + &ds[k] * ad))).collect();
            let pd = |b: &Blocks| b.iter().all(|m| m.clone().cholesky().is_some());
            let (okx, oks) = (pd(&xn), pd(&sn));
            if okx && oks {
                x = xn;
                s = sn;
                moved = true;
                break;
            }
            if !okx {
                ap *= 0.5;
            }
            if !oks {
                ad *= 0.5;
            }
        }
        if !moved {
            return stop(best, iter, "lost positive definiteness");
        }
        y += dy * ad;
    }
    stop(best, opts.max_iter, "iteration limit reached")
}

fn done(status: SolveStatus, z: Vec<f64>, bound: f64, iterations: usize) -> IpmOutcome {
    IpmOutcome {
        status,
        z,
        bound,
        primal_residual: 0.0,
        dual_residual: 0.0,
        gap: 0.0,
        iterations,
        message: String::new(),
    }
}

fn stop(best: Option<(f64, DVector<f64>, f64, f64, f64, f64)>, iter: usize, why: &str) -> IpmOutcome {
    match best {
        Some((err, y, bound, pres, dres, gap)) => IpmOutcome {
            status: if err <= NEAR_TOL {
                SolveStatus::NearOptimal
            } else if why.starts_with("iteration") {
                SolveStatus::MaxIterations
            } else {
                SolveStatus::NumericalFailure
            },
            z: if err <= NEAR_TOL { y.as_slice().to_vec() } else { Vec::new() },
            bound,
            primal_residual: pres,
            dual_residual: dres,
            gap,
            iterations: iter,
            message: format!(
                "{why} after {iter} iterations (residuals {pres:.2e} / {dres:.2e}, gap {gap:.2e})"
            ),
        },
        None => IpmOutcome {
            status: SolveStatus::NumericalFailure,
            z: Vec::new(),
            bound: f64::NAN,
            primal_residual: f64::NAN,
            dual_residual: f64::NAN,
            gap: f64::NAN,
            iterations: iter,
            message: why.to_string(),
        },
    }
}

/// Cholesky with a small diagonal shift as fallback, then LU.
fn factor(m: &DMatrix<f64>) -> Option<Box<dyn Fn(&DVector<f64>) -> DVector<f64>>> {
    if let Some(ch) = m.clone().cholesky() {
        return Some(Box::new(move |r| ch.solve(r)));
    }
    let shift = 1e-14 * m.diagonal().amax().max(1e-300);
    let shifted = m + DMatrix::identity(m.nrows(), m.nrows()) * shift;
    if let Some(ch) = shifted.cholesky() {
        return Some(Box::new(move |r| ch.solve(r)));
    }
    let lu = m.clone().lu();
    lu.solve(&DVector::zeros(m.nrows()))?;
    Some(Box::new(move |r| lu.solve(r).unwrap_or_else(|| DVector::zeros(r.len()))))
}
