//! Derivative-free search over `(η, θ_QND)` with common random numbers.
//!
//! Every evaluation reuses the same master seed, so the objective surface is a
//! deterministic function of the parameters. A coarse grid (log-spaced in `η`)
//! seeds a bounded Nelder–Mead refinement in `(ln η, θ)`; the QND stage is
//! cached per `η` because it dominates the cost. The reported ξ is a fresh
//! evaluation at the optimum with an independent seed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hybrid::{self, HybridConfig, PostQnd};
use crate::phase_space::SqueezingEstimate;
use crate::qnd::{QndParams, MAX_ETA};
use crate::rng;

/// Salt for the independent re-evaluation seed.
const REEVALUATION_SALT: u64 = 0x7e5e_ed00;

/// Bracket width in `ln η` or `θ` at which 1-D searches stop.
const LINE_TOL: f64 = 1e-3;

/// Post-QND ensembles kept while refining.
const CACHE_SIZE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Refine {
    None,
    /// Nelder–Mead in `(ln η, θ)`, stopped after `max_evals` evaluations or
    /// once the vertex values agree to `shrink_tol` relative to the best.
    Simplex { max_evals: usize, shrink_tol: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizeSpec {
    pub eta_range: [f64; 2],
    pub theta_range: [f64; 2],
    /// `[n_eta, n_theta]`.
    pub coarse_grid: [usize; 2],
    pub refine: Refine,
    /// Trajectories per objective evaluation.
    pub objective_traj: usize,
    pub crn_seed: u64,
}

impl Default for OptimizeSpec {
    fn default() -> Self {
        OptimizeSpec {
            eta_range: [1e-3, 2.0],
            theta_range: [0.0, std::f64::consts::FRAC_PI_2],
            coarse_grid: [12, 12],
            refine: Refine::Simplex {
                max_evals: 200,
                shrink_tol: 1e-3,
            },
            objective_traj: 20_000,
            crn_seed: 1,
        }
    }
}

impl OptimizeSpec {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.eta_range;
        if !(lo > 0.0 && lo < hi && hi < MAX_ETA) {
            return Err(Error::config(format!("eta range must satisfy 0 < lo < hi < {MAX_ETA}, got [{lo}, {hi}]")));
        }
        let [tlo, thi] = self.theta_range;
        if !(tlo.is_finite() && thi.is_finite() && tlo < thi) {
            return Err(Error::config(format!("theta range must be ordered and finite, got [{tlo}, {thi}]")));
        }
        if self.coarse_grid.iter().any(|&n| n < 2) {
            return Err(Error::config("coarse grid sizes must be at least 2"));
        }
        if self.objective_traj < 2 {
            return Err(Error::config("objective needs at least 2 trajectories"));
        }
        if let Refine::Simplex { shrink_tol, .. } = self.refine {
            if !(shrink_tol > 0.0) {
                return Err(Error::config("simplex tolerance must be positive"));
            }
        }
        Ok(())
    }

    fn budget(&self) -> (usize, f64) {
        match self.refine {
            Refine::None => (0, f64::INFINITY),
            Refine::Simplex { max_evals, shrink_tol } => (max_evals, shrink_tol),
        }
    }

    fn etas(&self) -> Vec<f64> {
        let [lo, hi] = self.eta_range;
        log_space(lo, hi, self.coarse_grid[0])
    }

    fn thetas(&self) -> Vec<f64> {
        let [lo, hi] = self.theta_range;
        lin_space(lo, hi, self.coarse_grid[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Grid,
    Refine,
    Reevaluation,
}

/// One objective evaluation; `xi` is `None` where it is undefined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub phase: Phase,
    pub eta: f64,
    pub theta: f64,
    pub xi: Option<f64>,
    pub xi_se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeResult {
    pub eta_opt: f64,
    pub theta_opt: f64,
    /// Closed-form final rotation at the optimum (re-evaluation run).
    pub theta_oat: f64,
    /// Independent re-evaluation at the optimum.
    pub xi: SqueezingEstimate,
    /// Objective value at the optimum under the common random numbers.
    pub xi_crn: SqueezingEstimate,
    pub reeval_seed: u64,
    pub log: Vec<Evaluation>,
}

impl OptimizeResult {
    pub fn log_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&self.log).map_err(|e| Error::config(format!("cannot serialise log: {e}")))
    }
}

struct Objective<'a> {
    base: &'a HybridConfig,
    n_traj: usize,
    seed: u64,
    cache: Vec<(u64, PostQnd)>,
    log: Vec<Evaluation>,
    phase: Phase,
}

impl<'a> Objective<'a> {
    fn new(base: &'a HybridConfig, spec: &OptimizeSpec) -> Self {
        Objective {
            base,
            n_traj: spec.objective_traj,
            seed: spec.crn_seed,
            cache: Vec::new(),
            log: Vec::new(),
            phase: Phase::Grid,
        }
    }

    fn config(&self, eta: f64, theta: f64, seed: u64) -> HybridConfig {
        let mut cfg = self.base.clone();
        if let Some(q) = cfg.qnd.as_mut() {
            q.eta = eta;
        }
        cfg.theta_qnd = theta;
        cfg.n_traj = self.n_traj;
        cfg.seed = seed;
        cfg
    }

    fn post_qnd(&mut self, cfg: &HybridConfig) -> Result<Option<PostQnd>> {
        let key = cfg.qnd.map_or(0, |q| q.eta.to_bits());
        if let Some((_, p)) = self.cache.iter().find(|(k, _)| *k == key) {
            return Ok(Some(p.clone()));
        }
        let post = match hybrid::prepare(cfg) {
            Ok(p) => p,
            Err(Error::DegenerateState(_) | Error::DegenerateRecord(_)) => return Ok(None),
            Err(e) => return Err(e),
        };
        if self.cache.len() == CACHE_SIZE {
            self.cache.remove(0);
        }
        self.cache.push((key, post.clone()));
        Ok(Some(post))
    }

    /// ξ at `(eta, theta)`, or `+∞` where it is undefined.
    fn eval(&mut self, eta: f64, theta: f64) -> Result<f64> {
        let cfg = self.config(eta, theta, self.seed);
        let estimate = match self.post_qnd(&cfg)? {
            Some(post) => hybrid::finish_pipeline(post, &cfg)?.xi,
            None => None,
        };
        self.log.push(Evaluation {
            phase: self.phase,
            eta,
            theta,
            xi: estimate.map(|e| e.xi),
            xi_se: estimate.map(|e| e.se),
        });
        Ok(estimate.map_or(f64::INFINITY, |e| e.xi))
    }

    fn best(&self) -> Option<Evaluation> {
        self.log
            .iter()
            .filter(|e| e.xi.is_some())
            .min_by(|a, b| a.xi.partial_cmp(&b.xi).unwrap())
            .copied()
    }

    fn finish(mut self) -> Result<OptimizeResult> {
        let Some(best) = self.best() else {
            return Err(Error::OptimizationFailed {
                reason: "squeezing parameter undefined at every evaluated point".into(),
                evaluations: self.log.len(),
            });
        };
        let reeval_seed = rng::derive_seed(self.seed, REEVALUATION_SALT);
        let cfg = self.config(best.eta, best.theta, reeval_seed);
        let out = hybrid::run_hybrid(&cfg)?;
        let xi = out.xi;
        self.log.push(Evaluation {
            phase: Phase::Reevaluation,
            eta: best.eta,
            theta: best.theta,
            xi: xi.map(|e| e.xi),
            xi_se: xi.map(|e| e.se),
        });
        let Some(xi) = xi else {
            return Err(Error::OptimizationFailed {
                reason: "squeezing parameter undefined on re-evaluation at the optimum".into(),
                evaluations: self.log.len(),
            });
        };
        Ok(OptimizeResult {
            eta_opt: best.eta,
            theta_opt: best.theta,
            theta_oat: out.diagnostics.theta_oat,
            xi,
            xi_crn: SqueezingEstimate {
                xi: best.xi.unwrap(),
                se: best.xi_se.unwrap(),
            },
            reeval_seed,
            log: self.log,
        })
    }
}

/// Minimise the hybrid pipeline over `η` and `θ_QND`.
pub fn optimize_hybrid(base: &HybridConfig, spec: &OptimizeSpec) -> Result<OptimizeResult> {
    spec.validate()?;
    base.validate()?;
    if base.qnd.is_none() {
        return Err(Error::config("hybrid optimisation needs a QND stage"));
    }
    let mut obj = Objective::new(base, spec);
    let etas = spec.etas();
    let thetas = spec.thetas();
    let mut best = (f64::INFINITY, 0, 0);
    for (i, &eta) in etas.iter().enumerate() {
        for (j, &theta) in thetas.iter().enumerate() {
            let f = obj.eval(eta, theta)?;
            if f < best.0 {
                best = (f, i, j);
            }
        }
    }
    let (max_evals, tol) = spec.budget();
    if max_evals > 0 && best.0.is_finite() {
        obj.phase = Phase::Refine;
        let lo = [spec.eta_range[0].ln(), spec.theta_range[0]];
        let hi = [spec.eta_range[1].ln(), spec.theta_range[1]];
        let step = [
            (hi[0] - lo[0]) / (etas.len() - 1) as f64,
            (hi[1] - lo[1]) / (thetas.len() - 1) as f64,
        ];
        let start = [etas[best.1].ln(), thetas[best.2]];
        nelder_mead(
            |x| obj.eval(x[0].exp(), x[1]),
            start,
            best.0,
            step,
            lo,
            hi,
            max_evals,
            tol,
        )?;
    }
    obj.finish()
}

/// Minimise over `θ_QND` at the `η` already set in `base`.
pub fn optimize_theta(base: &HybridConfig, spec: &OptimizeSpec) -> Result<OptimizeResult> {
    spec.validate()?;
    base.validate()?;
    let eta = base.qnd.map_or(0.0, |q| q.eta);
    let mut obj = Objective::new(base, spec);
    let (max_evals, _) = spec.budget();
    line_search(|t, phase| {
        obj.phase = phase;
        obj.eval(eta, t)
    }, &spec.thetas(), max_evals)?;
    obj.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QndOptimum {
    pub eta_opt: f64,
    pub xi: SqueezingEstimate,
    pub xi_crn: SqueezingEstimate,
    pub reeval_seed: u64,
    pub log: Vec<Evaluation>,
}

/// Minimise the post-feedback ξ of a QND measurement alone over `η`.
pub fn optimize_qnd_only(n_atoms: u64, depth: f64, spec: &OptimizeSpec) -> Result<QndOptimum> {
    optimize_qnd_with(n_atoms, QndParams::new(depth, spec.eta_range[0]), spec)
}

/// As [`optimize_qnd_only`] with the probe settings of `template`; its `eta`
/// is ignored.
pub fn optimize_qnd_with(n_atoms: u64, template: QndParams, spec: &OptimizeSpec) -> Result<QndOptimum> {
    spec.validate()?;
    let base = HybridConfig::qnd_only(n_atoms, template, spec.objective_traj, spec.crn_seed);
    base.validate()?;
    let mut obj = Objective::new(&base, spec);
    let (max_evals, _) = spec.budget();
    let log_etas: Vec<f64> = spec.etas().iter().map(|e| e.ln()).collect();
    line_search(|x, phase| {
        obj.phase = phase;
        obj.eval(x.exp(), 0.0)
    }, &log_etas, max_evals)?;
    let r = obj.finish()?;
    Ok(QndOptimum {
        eta_opt: r.eta_opt,
        xi: r.xi,
        xi_crn: r.xi_crn,
        reeval_seed: r.reeval_seed,
        log: r.log,
    })
}

/// Grid scan then golden-section search in the bracket around the best point.
fn line_search<F>(mut f: F, grid: &[f64], max_evals: usize) -> Result<()>
where
    F: FnMut(f64, Phase) -> Result<f64>,
{
    let mut values = Vec::with_capacity(grid.len());
    for &x in grid {
        values.push(f(x, Phase::Grid)?);
    }
    let (k, best) = values
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
    if max_evals == 0 || !best.is_finite() {
        return Ok(());
    }
    let mut a = grid[k.saturating_sub(1)];
    let mut b = grid[(k + 1).min(grid.len() - 1)];
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let mut fc = f(c, Phase::Refine)?;
    let mut fd = f(d, Phase::Refine)?;
    let mut evals = 2;
    while (b - a).abs() > LINE_TOL && evals < max_evals {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c, Phase::Refine)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d, Phase::Refine)?;
        }
        evals += 1;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn nelder_mead<F>(
    mut f: F,
    start: [f64; 2],
    f_start: f64,
    step: [f64; 2],
    lo: [f64; 2],
    hi: [f64; 2],
    max_evals: usize,
    tol: f64,
) -> Result<()>
where
    F: FnMut([f64; 2]) -> Result<f64>,
{
    let clamp = |x: [f64; 2]| [x[0].clamp(lo[0], hi[0]), x[1].clamp(lo[1], hi[1])];
    let mut evals = 0;
    let mut simplex = vec![(start, f_start)];
    for axis in 0..2 {
        let mut x = start;
        x[axis] += if start[axis] + step[axis] <= hi[axis] { step[axis] } else { -step[axis] };
        let x = clamp(x);
        simplex.push((x, f(x)?));
        evals += 1;
    }
    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        if simplex[2].1 - simplex[0].1 < tol * simplex[0].1.abs() {
            break;
        }
        let centroid = [
            0.5 * (simplex[0].0[0] + simplex[1].0[0]),
            0.5 * (simplex[0].0[1] + simplex[1].0[1]),
        ];
        let along = |t: f64| clamp([
            centroid[0] + t * (simplex[2].0[0] - centroid[0]),
            centroid[1] + t * (simplex[2].0[1] - centroid[1]),
        ]);
        let xr = along(-1.0);
        let fr = f(xr)?;
        evals += 1;
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = f(xe)?;
            evals += 1;
            simplex[2] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[1].1 {
            simplex[2] = (xr, fr);
        } else {
            let xc = if fr < simplex[2].1 { along(-0.5) } else { along(0.5) };
            let fc = f(xc)?;
            evals += 1;
            if fc < simplex[2].1.min(fr) {
                simplex[2] = (xc, fc);
            } else {
                let best = simplex[0].0;
                for v in simplex.iter_mut().skip(1) {
                    let x = [0.5 * (best[0] + v.0[0]), 0.5 * (best[1] + v.0[1])];
                    *v = (x, f(x)?);
                    evals += 1;
                }
            }
        }
        let size = simplex
            .iter()
            .map(|v| ((v.0[0] - simplex[0].0[0]) / step[0]).abs().max(((v.0[1] - simplex[0].0[1]) / step[1]).abs()))
            .fold(0.0, f64::max);
        if size < 1e-6 {
            break;
        }
    }
    Ok(())
}

pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

pub fn lin_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}
