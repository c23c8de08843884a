//! Monte Carlo simulation of stochastic hybrid systems, used as an
//! independent statistical check on moment bounds.
//!
//! Continuous motion uses Euler–Maruyama (or Milstein for scalar noise).
//! Transitions are thinned: each fires within a step with probability
//! `min(λ·dt, 1)`, and at most one fires per step.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::polyalg::{Expr, Monomial, Polynomial};
use crate::recast::{recast, RecastError};
use crate::shs::{reduce_modes, InitialState, ShsError, ShsModel, SingleModeShs};

/// Batch means below this effective sample size are not reported.
pub const MIN_ESS: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    EulerMaruyama,
    /// Strong order one; needs a single noise channel.
    Milstein,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub t_end: f64,
    /// Samples at times `≤ burn_in` are discarded.
    pub burn_in: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Overrides the model's `[initial]` section.
    pub initial: Option<InitialState>,
    /// Batches per path for the batch-means standard error.
    pub batches: usize,
    pub scheme: Scheme,
}

impl SimConfig {
    pub fn new(dt: f64, t_end: f64, burn_in: f64, n_paths: usize, seed: u64) -> Self {
        Self {
            dt,
            t_end,
            burn_in,
            n_paths,
            seed,
            initial: None,
            batches: 20,
            scheme: Scheme::EulerMaruyama,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::BadConfig(m.to_string()));
        if !(self.dt > 0.0 && self.dt <= self.t_end) {
            return bad("need 0 < dt <= t_end");
        }
        if !(self.burn_in >= 0.0 && self.burn_in < self.t_end) {
            return bad("need 0 <= burn_in < t_end");
        }
        if self.n_paths == 0 {
            return bad("need at least one path");
        }
        if self.batches < 2 {
            return bad("need at least two batches per path");
        }
        if self.sample_steps() < self.batches {
            return bad("fewer samples after burn-in than batches");
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    fn first_sample(&self) -> usize {
        // step j ends at time (j+1)·dt
        ((self.burn_in / self.dt).floor() as usize).min(self.steps())
    }

    fn sample_steps(&self) -> usize {
        self.steps() - self.first_sample()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulation settings: {0}")]
    BadConfig(String),
    #[error("the model has no [initial] section")]
    NoInitial,
    #[error("initial state has {got} values, the model has {want} variables")]
    InitialShape { got: usize, want: usize },
    #[error(transparent)]
    Model(#[from] ShsError),
    #[error(transparent)]
    Recast(#[from] RecastError),
    #[error("intensity of `{transition}` is {value} in mode `{mode}` at t = {t}, state {state}")]
    NegativeIntensity { transition: String, mode: String, value: f64, t: f64, state: String },
    #[error("state left the domain at t = {t} (path {path}): {state}")]
    NonFinite { t: f64, path: usize, state: String },
    #[error("Milstein steps need exactly one noise channel, the model has {0}")]
    MilsteinNoise(usize),
    #[error("effective sample size {ess:.1} for `{moment}` is below {MIN_ESS}")]
    InsufficientSamples { moment: String, ess: f64 },
    #[error("{0}")]
    Unsupported(String),
}

/// Drift, diffusion and (for Milstein) `Σ_k g_k ∂_k g_i` of one mode.
#[derive(Debug, Clone)]
struct Motion {
    drift: Vec<Expr>,
    diffusion: Vec<Vec<Expr>>,
    /// `jac[i][k] = ∂g_i/∂x_k` for scalar noise.
    jac: Option<Vec<Vec<Expr>>>,
}

impl Motion {
    fn new(drift: Vec<Expr>, diffusion: Vec<Vec<Expr>>, scheme: Scheme) -> Result<Self, SimError> {
        let n = drift.len();
        let jac = match scheme {
            Scheme::EulerMaruyama => None,
            Scheme::Milstein => {
                let channels = diffusion.first().map_or(0, Vec::len);
                if channels != 1 {
                    return Err(SimError::MilsteinNoise(channels));
                }
                Some(diffusion.iter().map(|g| (0..n).map(|k| g[0].diff(k)).collect()).collect())
            }
        };
        Ok(Self { drift, diffusion, jac })
    }

    /// Advances `x` by one step with Brownian increments `dw`; `point` is
    /// the full evaluation point and `slots[i]` is where `x[i]` lives in it.
    fn step(&self, point: &mut [f64], slots: &[usize], dw: &[f64], dt: f64) {
        let n = slots.len();
        let mut next = vec![0.0; n];
        for i in 0..n {
            let mut dx = self.drift[i].eval(point) * dt;
            for (k, g) in self.diffusion[i].iter().enumerate() {
                if !g.is_zero() {
                    dx += g.eval(point) * dw[k];
                }
            }
            next[i] = point[slots[i]] + dx;
        }
        if let Some(jac) = &self.jac {
            let g: Vec<f64> = (0..n).map(|i| self.diffusion[i][0].eval(point)).collect();
            let corr = 0.5 * (dw[0] * dw[0] - dt);
            for i in 0..n {
                let lg: f64 = (0..n).filter(|&k| g[k] != 0.0).map(|k| g[k] * jac[i][slots[k]].eval(point)).sum();
                next[i] += lg * corr;
            }
        }
        for i in 0..n {
            point[slots[i]] = next[i];
        }
    }
}

#[derive(Debug, Clone)]
struct Jump {
    name: String,
    target: usize,
    intensity: Expr,
    reset: Vec<Expr>,
}

/// A model prepared for repeated stepping.
#[derive(Debug, Clone)]
struct Compiled {
    modes: Vec<String>,
    var_names: Vec<String>,
    noise_dim: usize,
    motion: Vec<Motion>,
    jumps: Vec<Vec<Jump>>,
}

impl Compiled {
    fn new(model: &ShsModel, scheme: Scheme) -> Result<Self, SimError> {
        let mut motion = Vec::new();
        let mut jumps = Vec::new();
        for m in 0..model.num_modes() {
            motion.push(Motion::new(model.drift[m].clone(), model.diffusion[m].clone(), scheme)?);
            jumps.push(
                model
                    .transitions
                    .iter()
                    .filter(|t| !t.per_mode[m].is_inactive())
                    .map(|t| Jump {
                        name: t.name.clone(),
                        target: t.per_mode[m].target,
                        intensity: t.per_mode[m].intensity.clone(),
                        reset: t.per_mode[m].reset.clone(),
                    })
                    .collect(),
            );
        }
        Ok(Self {
            modes: model.modes.clone(),
            var_names: model.vars.names().to_vec(),
            noise_dim: model.noise_dim,
            motion,
            jumps,
        })
    }

    fn dump(&self, mode: usize, x: &[f64]) -> String {
        let vals: Vec<String> = self.var_names.iter().zip(x).map(|(n, v)| format!("{n}={v}")).collect();
        format!("mode {} {}", self.modes[mode], vals.join(" "))
    }
}

/// Maps the simulated `(mode, x)` to points of the mode-reduced, recast
/// system on which observables are monomials.
#[derive(Debug, Clone)]
pub struct Observer {
    sys: SingleModeShs,
    monomials: Vec<Monomial>,
    labels: Vec<String>,
    needs_aux: bool,
}

impl Observer {
    /// `monomials` refer to the variables of `sys` (see
    /// [`crate::sdpbuild::prepare`] and [`crate::sdpbuild::parse_moment`]).
    pub fn new(sys: &SingleModeShs, monomials: Vec<Monomial>) -> Self {
        let names = sys.vars.names().to_vec();
        let labels = monomials.iter().map(|m| m.display_with(&names).to_string()).collect();
        let aux: Vec<usize> = sys.aux.iter().map(|a| a.var).collect();
        let needs_aux = monomials.iter().any(|m| m.vars().any(|v| aux.contains(&v)));
        Self { sys: sys.clone(), monomials, labels, needs_aux }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    fn fill(&self, mode: usize, x: &[f64], out: &mut [f64]) {
        if self.needs_aux {
            let p = self.sys.lift(mode, x);
            for (o, m) in out.iter_mut().zip(&self.monomials) {
                *o = m.eval(&p);
            }
            return;
        }
        let mut p = vec![0.0; self.sys.num_vars()];
        for (k, v) in self.sys.continuous_vars().into_iter().enumerate() {
            p[v] = x[k];
        }
        if let Some(&b) = self.sys.indicators.get(mode) {
            p[b] = 1.0;
        }
        for (o, m) in out.iter_mut().zip(&self.monomials) {
            *o = m.eval(&p);
        }
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
struct Sum {
    s: f64,
    c: f64,
}

impl Sum {
    fn add(&mut self, v: f64) {
        let t = self.s + v;
        if self.s.abs() >= v.abs() {
            self.c += (self.s - t) + v;
        } else {
            self.c += (v - t) + self.s;
        }
        self.s = t;
    }

    fn value(&self) -> f64 {
        self.s + self.c
    }
}

/// Sum in a fixed binary-tree order.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n if n <= 8 => v.iter().sum(),
        n => pairwise_sum(&v[..n / 2]) + pairwise_sum(&v[n / 2..]),
    }
}

#[derive(Debug, Clone, PartialEq)]
struct PathStats {
    /// `[batch][obs]`
    mean: Vec<Vec<f64>>,
    mean_sq: Vec<Vec<f64>>,
    mode_counts: Vec<u64>,
}

/// Per-batch sample averages of every path.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub labels: Vec<String>,
    pub modes: Vec<String>,
    pub n_paths: usize,
    pub samples_per_path: usize,
    /// Samples in each batch (identical for all paths).
    pub batch_sizes: Vec<usize>,
    paths: Vec<PathStats>,
}

impl Ensemble {
    /// Number of samples spent in each mode.
    pub fn mode_counts(&self) -> Vec<u64> {
        let mut c = vec![0u64; self.modes.len()];
        for p in &self.paths {
            for (a, b) in c.iter_mut().zip(&p.mode_counts) {
                *a += b;
            }
        }
        c
    }

    /// Fraction of samples spent in each mode.
    pub fn occupancy(&self) -> Vec<f64> {
        let c = self.mode_counts();
        let total: u64 = c.iter().sum();
        c.iter().map(|&k| k as f64 / total as f64).collect()
    }

    pub fn total_samples(&self) -> usize {
        self.n_paths * self.samples_per_path
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentEstimate {
    pub moment: String,
    pub mean: f64,
    pub stderr: f64,
    pub ess: f64,
}

/// Simulates `cfg.n_paths` independent paths. Path `i` draws from a ChaCha
/// stream keyed by `(seed, i)`, so results do not depend on scheduling.
pub fn simulate(model: &ShsModel, cfg: &SimConfig, observer: &Observer) -> Result<Ensemble, SimError> {
    cfg.validate()?;
    let init = cfg.initial.clone().or_else(|| model.initial.clone()).ok_or(SimError::NoInitial)?;
    if init.state.len() != model.num_vars() {
        return Err(SimError::InitialShape { got: init.state.len(), want: model.num_vars() });
    }
    if init.mode >= model.num_modes() {
        return Err(SimError::BadConfig(format!("initial mode {} does not exist", init.mode)));
    }
    let comp = Compiled::new(model, cfg.scheme)?;
    let ns = cfg.sample_steps();
    let batch_sizes: Vec<usize> = (0..cfg.batches)
        .map(|b| (b + 1) * ns / cfg.batches - b * ns / cfg.batches)
        .collect();
    let run = |i: usize| simulate_path(&comp, cfg, observer, &init, i, &batch_sizes);
    #[cfg(feature = "parallel")]
    let paths: Result<Vec<PathStats>, SimError> = {
        use rayon::prelude::*;
        (0..cfg.n_paths).into_par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let paths: Result<Vec<PathStats>, SimError> = (0..cfg.n_paths).map(run).collect();
    Ok(Ensemble {
        labels: observer.labels.clone(),
        modes: model.modes.clone(),
        n_paths: cfg.n_paths,
        samples_per_path: ns,
        batch_sizes,
        paths: paths?,
    })
}

fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

fn simulate_path(
    comp: &Compiled,
    cfg: &SimConfig,
    observer: &Observer,
    init: &InitialState,
    path: usize,
    batch_sizes: &[usize],
) -> Result<PathStats, SimError> {
    let mut rng = path_rng(cfg.seed, path);
    let n = init.state.len();
    let slots: Vec<usize> = (0..n).collect();
    let nobs = observer.monomials.len();
    let mut x = init.state.clone();
    let mut q = init.mode;
    let sdt = cfg.dt.sqrt();
    let mut dw = vec![0.0; comp.noise_dim];
    let mut fired = Vec::new();
    let mut obs = vec![0.0; nobs];
    let mut stats = PathStats {
        mean: Vec::with_capacity(batch_sizes.len()),
        mean_sq: Vec::with_capacity(batch_sizes.len()),
        mode_counts: vec![0; comp.modes.len()],
    };
    let mut batch = 0;
    let mut in_batch = 0;
    let mut sums = vec![Sum::default(); nobs];
    let mut sq = vec![Sum::default(); nobs];
    let first = cfg.first_sample();
    for step in 0..cfg.steps() {
        let t = step as f64 * cfg.dt;
        fired.clear();
        for (r, j) in comp.jumps[q].iter().enumerate() {
            let lam = j.intensity.eval(&x);
            if lam < 0.0 {
                return Err(SimError::NegativeIntensity {
                    transition: j.name.clone(),
                    mode: comp.modes[q].clone(),
                    value: lam,
                    t,
                    state: comp.dump(q, &x),
                });
            }
            let u: f64 = rng.random();
            if u < (lam * cfg.dt).min(1.0) {
                fired.push(r);
            }
        }
        for w in dw.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *w = z * sdt;
        }
        let pre = x.clone();
        comp.motion[q].step(&mut x, &slots, &dw, cfg.dt);
        if !fired.is_empty() {
            let pick = if fired.len() == 1 { fired[0] } else { fired[rng.random_range(0..fired.len())] };
            let j = &comp.jumps[q][pick];
            x = j.reset.iter().map(|e| e.eval(&x)).collect();
            q = j.target;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SimError::NonFinite { t: t + cfg.dt, path, state: comp.dump(q, &pre) });
        }
        if step < first {
            continue;
        }
        observer.fill(q, &x, &mut obs);
        stats.mode_counts[q] += 1;
        for k in 0..nobs {
            sums[k].add(obs[k]);
            sq[k].add(obs[k] * obs[k]);
        }
        in_batch += 1;
        if in_batch == batch_sizes[batch] {
            let m = in_batch as f64;
            stats.mean.push(sums.iter().map(|s| s.value() / m).collect());
            stats.mean_sq.push(sq.iter().map(|s| s.value() / m).collect());
            sums.iter_mut().chain(sq.iter_mut()).for_each(|s| *s = Sum::default());
            in_batch = 0;
            batch += 1;
        }
    }
    Ok(stats)
}

/// Time-and-ensemble averages with batch-means standard errors. Fails when
/// any observable has fewer than [`MIN_ESS`] effective samples.
pub fn estimate_stationary(ens: &Ensemble) -> Result<Vec<MomentEstimate>, SimError> {
    let total = ens.total_samples() as f64;
    let mut out = Vec::new();
    for (k, label) in ens.labels.iter().enumerate() {
        let mut weighted = Vec::new();
        let mut weighted_sq = Vec::new();
        let mut means = Vec::new();
        for p in &ens.paths {
            for (b, &size) in ens.batch_sizes.iter().enumerate() {
                weighted.push(p.mean[b][k] * size as f64);
                weighted_sq.push(p.mean_sq[b][k] * size as f64);
                means.push(p.mean[b][k]);
            }
        }
        let mean = pairwise_sum(&weighted) / total;
        let var = (pairwise_sum(&weighted_sq) / total - mean * mean).max(0.0);
        let nb = means.len() as f64;
        let mbar = pairwise_sum(&means) / nb;
        let dev: Vec<f64> = means.iter().map(|m| (m - mbar) * (m - mbar)).collect();
        let stderr = (pairwise_sum(&dev) / (nb - 1.0) / nb).sqrt();
        let ess = if stderr > 0.0 { (var / (stderr * stderr)).min(total) } else { total };
        if ess < MIN_ESS {
            return Err(SimError::InsufficientSamples { moment: label.clone(), ess });
        }
        out.push(MomentEstimate { moment: label.clone(), mean, stderr, ess });
    }
    Ok(out)
}

pub const CSV_HEADER: &str = "moment,mean,stderr,ess";

pub fn write_csv(est: &[MomentEstimate]) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    for e in est {
        s.push_str(&format!("{},{},{},{}\n", e.moment, e.mean, e.stderr, e.ess.round()));
    }
    s
}

/// Direct simulation against simulation of the recast polynomial system,
/// both driven by the same Brownian increments.
#[derive(Debug, Clone, PartialEq)]
pub struct RecastComparison {
    /// `max_t max_i |x_i(t) − x̃_i(t)|` over the original variables.
    pub max_deviation: f64,
    /// Largest `|a_p(z̃)|` of the algebraic constraints along the recast path.
    pub max_residual: f64,
    pub steps: usize,
}

/// Simulates a transition-free model and its recast from the initial state
/// along one common noise path. With `project`, the auxiliary states are
/// pulled back onto the algebraic constraints after every step.
pub fn compare_recast(
    model: &ShsModel,
    dt: f64,
    t_end: f64,
    seed: u64,
    path: usize,
    scheme: Scheme,
    project: bool,
) -> Result<RecastComparison, SimError> {
    let init = model.initial.clone().ok_or(SimError::NoInitial)?;
    let comp = Compiled::new(model, scheme)?;
    if comp.jumps.iter().any(|j| !j.is_empty()) {
        return Err(SimError::Unsupported("recast comparison needs a model without transitions".into()));
    }
    let (sys, _) = recast(&reduce_modes(model)?)?;
    let cont = sys.continuous_vars();
    let aux: Vec<usize> = sys.aux.iter().map(|a| a.var).collect();
    let mut slots = cont.clone();
    slots.extend(&aux);
    let aug = Motion::new(
        slots.iter().map(|&v| sys.drift[v].clone()).collect(),
        slots.iter().map(|&v| sys.diffusion[v].clone()).collect(),
        scheme,
    )?;
    let aug = remap_jacobian(aug, &slots, sys.num_vars());
    let constraints: Vec<&Polynomial> =
        sys.eq_constraints.iter().filter(|p| p.variables().iter().any(|v| aux.contains(v))).collect();
    let grads: Vec<Vec<Polynomial>> = constraints.iter().map(|p| aux.iter().map(|&v| p.diff(v)).collect()).collect();

    let mut rng = path_rng(seed, path);
    let steps = (t_end / dt).round() as usize;
    let sdt = dt.sqrt();
    let direct_slots: Vec<usize> = (0..init.state.len()).collect();
    let mut x = init.state.clone();
    let mut z = sys.lift(init.mode, &x);
    let mut dw = vec![0.0; comp.noise_dim];
    let residual = |z: &[f64]| constraints.iter().map(|p| p.eval(z).abs()).fold(0.0, f64::max);
    let mut out = RecastComparison { max_deviation: 0.0, max_residual: residual(&z), steps };
    for step in 0..steps {
        for w in dw.iter_mut() {
            let g: f64 = rng.sample(StandardNormal);
            *w = g * sdt;
        }
        comp.motion[init.mode].step(&mut x, &direct_slots, &dw, dt);
        aug.step(&mut z, &slots, &dw, dt);
        if project {
            project_onto(&mut z, &aux, &constraints, &grads);
        }
        let t = (step + 1) as f64 * dt;
        if x.iter().chain(z.iter()).any(|v| !v.is_finite()) {
            return Err(SimError::NonFinite { t, path, state: comp.dump(init.mode, &x) });
        }
        for (k, &v) in cont.iter().enumerate() {
            out.max_deviation = out.max_deviation.max((x[k] - z[v]).abs());
        }
        out.max_residual = out.max_residual.max(residual(&z));
    }
    Ok(out)
}

/// Re-indexes Milstein derivatives from slot order to the full state.
fn remap_jacobian(mut m: Motion, slots: &[usize], nvars: usize) -> Motion {
    if m.jac.is_some() {
        let jac = m
            .diffusion
            .iter()
            .map(|g| (0..nvars).map(|v| if slots.contains(&v) { g[0].diff(v) } else { Expr::zero() }).collect())
            .collect();
        m.jac = Some(jac);
    }
    m
}

/// Gauss–Newton projection of the auxiliary coordinates onto the
/// constraint variety (minimum-norm correction).
fn project_onto(z: &mut [f64], aux: &[usize], cons: &[&Polynomial], grads: &[Vec<Polynomial>]) {
    if cons.is_empty() {
        return;
    }
    for _ in 0..8 {
        let g = DVector::from_iterator(cons.len(), cons.iter().map(|p| p.eval(z)));
        if g.amax() < 1e-14 {
            return;
        }
        let j = DMatrix::from_fn(cons.len(), aux.len(), |r, c| grads[r][c].eval(z));
        let Ok(pinv) = j.pseudo_inverse(1e-12) else { return };
        let delta = pinv * g;
        for (k, &v) in aux.iter().enumerate() {
            z[v] -= delta[k];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;
    use crate::sdpbuild::{parse_moment, prepare};

    fn observer(model: &ShsModel, moments: &[&str]) -> Observer {
        let sys = prepare(model).unwrap();
        let monos = moments.iter().map(|m| parse_moment(&sys, m).unwrap()).collect();
        Observer::new(&sys, monos)
    }

    fn run(model: &ShsModel, cfg: &SimConfig, moments: &[&str]) -> Vec<MomentEstimate> {
        estimate_stationary(&simulate(model, cfg, &observer(model, moments)).unwrap()).unwrap()
    }

    #[test]
    fn config_is_checked() {
        assert!(SimConfig::new(0.0, 1.0, 0.0, 1, 0).validate().is_err());
        assert!(SimConfig::new(0.1, 1.0, 1.0, 1, 0).validate().is_err());
        assert!(SimConfig::new(0.1, 1.0, 0.0, 0, 0).validate().is_err());
        assert!(SimConfig::new(0.01, 1.0, 0.5, 1, 0).validate().is_ok());
    }

    #[test]
    fn constant_process_is_exact() {
        let mut m = ShsModel::new(&["x"], &["main"], 1);
        m.initial = Some(InitialState { mode: 0, state: vec![1.5] });
        let e = run(&m, &SimConfig::new(0.01, 10.0, 1.0, 3, 7), &["x", "x^3"]);
        assert_eq!(e[0].mean, 1.5);
        assert_eq!(e[1].mean, 3.375);
        assert_eq!(e[0].stderr, 0.0);
    }

    #[test]
    fn ou_moments() {
        let cfg = SimConfig::new(0.01, 2000.0, 20.0, 8, 11);
        let e = run(&models::ou(), &cfg, &["x", "x^2"]);
        assert!(e[0].mean.abs() < 4.0 * e[0].stderr, "{:?}", e[0]);
        // Euler–Maruyama stationary variance is 1/(1 − dt/2)
        let exact = 1.0 / (1.0 - 0.005);
        assert!((e[1].mean - exact).abs() < 4.0 * e[1].stderr, "{:?}", e[1]);
    }

    #[test]
    fn birth_death_mean() {
        let cfg = SimConfig::new(0.005, 2000.0, 20.0, 4, 3);
        let e = run(&models::birth_death(), &cfg, &["x"]);
        assert!((e[0].mean - 10.0).abs() < 4.0 * e[0].stderr + 0.05, "{:?}", e[0]);
    }

    #[test]
    fn halving_dt_is_within_noise() {
        for (model, moment) in [(models::ou(), "x^2"), (models::birth_death(), "x")] {
            let coarse = SimConfig::new(0.02, 2000.0, 20.0, 8, 21);
            let fine = SimConfig { dt: 0.01, seed: 22, ..coarse.clone() };
            let a = &run(&model, &coarse, &[moment])[0];
            let b = &run(&model, &fine, &[moment])[0];
            let se = (a.stderr * a.stderr + b.stderr * b.stderr).sqrt();
            assert!((a.mean - b.mean).abs() < 3.0 * se, "{a:?} {b:?}");
        }
    }

    #[test]
    fn identical_seeds_are_bit_identical() {
        let m = models::tcp_onoff();
        let cfg = SimConfig::new(0.01, 200.0, 10.0, 4, 99);
        let obs = observer(&m, &["b_ss", "v"]);
        let a = simulate(&m, &cfg, &obs).unwrap();
        let b = simulate(&m, &cfg, &obs).unwrap();
        assert_eq!(a, b);
        let c = simulate(&m, &SimConfig { seed: 100, ..cfg }, &obs).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn occupancies_sum_to_one() {
        let m = models::tcp_onoff();
        let cfg = SimConfig::new(0.01, 500.0, 10.0, 3, 5);
        let ens = simulate(&m, &cfg, &observer(&m, &["b_off", "b_ss", "b_ca"])).unwrap();
        let counts = ens.mode_counts();
        assert_eq!(counts.iter().sum::<u64>() as usize, ens.total_samples());
        assert!((ens.occupancy().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let est = estimate_stationary(&ens).unwrap();
        let s: f64 = est.iter().map(|e| e.mean).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn negative_intensity_aborts() {
        let mut m = models::birth_death();
        m.initial = Some(InitialState { mode: 0, state: vec![-5.0] });
        let err = simulate(&m, &SimConfig::new(0.01, 1.0, 0.0, 1, 0), &observer(&m, &["x"])).unwrap_err();
        assert!(matches!(err, SimError::NegativeIntensity { .. }), "{err}");
        assert!(err.to_string().contains("x=-5"));
    }

    #[test]
    fn too_few_samples_is_refused() {
        let m = models::tcp_onoff();
        let mut cfg = SimConfig::new(0.1, 2.0, 0.0, 1, 0);
        cfg.batches = 2;
        assert!(matches!(
            estimate_stationary(&simulate(&m, &cfg, &observer(&m, &["v"])).unwrap()),
            Err(SimError::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn milstein_needs_scalar_noise() {
        let m = ShsModel::new(&["x"], &["main"], 2);
        assert!(matches!(Compiled::new(&m, Scheme::Milstein), Err(SimError::MilsteinNoise(2))));
    }

    #[test]
    fn recast_paths_agree() {
        let r = compare_recast(&models::elementary_demo(), 1e-3, 1.0, 1, 0, Scheme::Milstein, true).unwrap();
        assert!(r.max_deviation < 1e-2, "{r:?}");
        assert!(r.max_residual < 1e-8, "{r:?}");
    }

    #[test]
    fn pairwise_matches_exact_integers() {
        let v: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&v), 500500.0);
    }

    #[test]
    fn csv_header_is_fixed() {
        let s = write_csv(&[MomentEstimate { moment: "x".into(), mean: 1.0, stderr: 0.5, ess: 40.2 }]);
        assert_eq!(s, "moment,mean,stderr,ess\nx,1,0.5,40\n");
    }
}
