use std::io::Write;
use std::time::{Duration, Instant};

use ndarray::{Array2, Zip};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optics::{ForwardModel, VolumeGeometry};
use crate::prox::{
    prox_tv_complex, soft_threshold, tv_norm_complex, RegularizerWeights, DEFAULT_TV_INNER_ITERS,
};
use crate::sparsevol::{SparsePlane, SparseVolume};

/// Objective growth beyond this factor of the initial value aborts the solve.
const DIVERGENCE_FACTOR: f64 = 1e6;
const MAX_BACKTRACKS_PER_STEP: usize = 60;

/// How the gradient step size is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepPolicy {
    /// Constant step size.
    Fixed { step: f64 },
    /// Start from `initial_step` (default: `1 / (2 ||H||^2)` with `||H||^2`
    /// from power iteration) and multiply by `shrink` until the quadratic
    /// upper bound holds.
    Backtracking {
        #[serde(default)]
        initial_step: Option<f64>,
        shrink: f64,
    },
}

impl Default for StepPolicy {
    fn default() -> Self {
        StepPolicy::Backtracking {
            initial_step: None,
            shrink: 0.8,
        }
    }
}

/// Constraint set for the object field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectDomain {
    #[default]
    Complex,
    /// Real and non-negative; pair with a sign-flipped hologram for dark
    /// (absorbing) particles.
    RealNonNegative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub weights: RegularizerWeights,
    pub max_iters: usize,
    pub tv_inner_iters: usize,
    pub step_policy: StepPolicy,
    /// Stop once the relative objective change drops below this; 0 disables.
    pub stop_tol: f64,
    pub log_objective: bool,
    /// Power iterations used for the default initial step.
    pub power_iters: usize,
    pub domain: ObjectDomain,
    /// Dense planes processed at once; 0 picks twice the thread count.
    pub plane_concurrency: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            weights: RegularizerWeights::default(),
            max_iters: 100,
            tv_inner_iters: DEFAULT_TV_INNER_ITERS,
            step_policy: StepPolicy::default(),
            stop_tol: 0.0,
            log_objective: false,
            power_iters: 10,
            domain: ObjectDomain::Complex,
            plane_concurrency: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.max_iters == 0 {
            return bad("max_iters must be >= 1");
        }
        if self.tv_inner_iters == 0 {
            return bad("tv_inner_iters must be >= 1");
        }
        if !(self.stop_tol >= 0.0) {
            return bad("stop_tol must be >= 0");
        }
        match self.step_policy {
            StepPolicy::Fixed { step } if !(step > 0.0 && step.is_finite()) => {
                bad("fixed step must be > 0")
            }
            StepPolicy::Backtracking {
                initial_step,
                shrink,
            } => {
                if !(shrink > 0.0 && shrink < 1.0) {
                    return bad("backtracking shrink factor must lie in (0, 1)");
                }
                if let Some(s) = initial_step {
                    if !(s > 0.0 && s.is_finite()) {
                        return bad("initial step must be > 0");
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    /// Objective `||Hx - b||^2 + g(x)` after each iteration.
    pub objective_history: Vec<f64>,
    pub initial_objective: f64,
    pub final_sparsity: f64,
    pub iterations: usize,
    pub restarts: usize,
    pub backtracks: usize,
    pub final_step: f64,
    /// `rhs - lhs` of the quadratic upper bound at each accepted
    /// backtracking step (empty for fixed steps).
    pub surrogate_margins: Vec<f64>,
    pub wall_time: Duration,
}

/// Writes `iteration<TAB>objective` lines with a header.
pub fn write_objective_history<W: Write>(mut w: W, report: &SolveReport) -> std::io::Result<()> {
    writeln!(w, "iteration\tobjective")?;
    for (i, f) in report.objective_history.iter().enumerate() {
        writeln!(w, "{}\t{:.12e}", i + 1, f)?;
    }
    Ok(())
}

/// A candidate iterate together with its cached forward projection.
struct Iterate {
    x: SparseVolume,
    hx: Array2<f64>,
    data: f64,
    penalty: f64,
}

impl Iterate {
    fn objective(&self) -> f64 {
        self.data + self.penalty
    }
}

/// FISTA solver bound to one geometry; reusable across holograms.
pub struct Fista {
    model: ForwardModel,
    cfg: SolverConfig,
}

impl Fista {
    pub fn new(geom: VolumeGeometry, cfg: SolverConfig) -> Result<Self> {
        cfg.validate()?;
        let mut model = ForwardModel::new(geom)?;
        if cfg.plane_concurrency > 0 {
            model = model.with_plane_concurrency(cfg.plane_concurrency);
        }
        Ok(Self { model, cfg })
    }

    pub fn model(&self) -> &ForwardModel {
        &self.model
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    fn initial_step(&self) -> f64 {
        let from_norm = || {
            let n2 = self.model.norm_sqr_estimate(self.cfg.power_iters, 0x5eed);
            if n2 > 0.0 {
                1.0 / (2.0 * n2)
            } else {
                1.0
            }
        };
        match self.cfg.step_policy {
            StepPolicy::Fixed { step } => step,
            StepPolicy::Backtracking {
                initial_step: Some(s),
                ..
            } => s,
            StepPolicy::Backtracking {
                initial_step: None, ..
            } => from_norm(),
        }
    }

    /// Proximal map of one dense gradient-step plane. Returns the sparse
    /// result and its penalty value.
    fn prox_plane(&self, v: Array2<Complex64>, step: f64) -> (SparsePlane, f64) {
        let w = &self.cfg.weights;
        let tau_l1 = w.lambda_l1 * step;
        let tau_tv = w.lambda_tv * step;
        let mut v = v;
        if self.cfg.domain == ObjectDomain::RealNonNegative {
            v.mapv_inplace(|c| Complex64::new(c.re, 0.0));
        }

        let out = if tau_tv > 0.0 {
            // The exact TV prox obeys a maximum principle per real component,
            // so planes that soft thresholding would clear anyway skip the
            // inner iterations.
            let (mr, mi) = v.iter().fold((0.0f64, 0.0f64), |(a, b), c| {
                (a.max(c.re.abs()), b.max(c.im.abs()))
            });
            if mr.hypot(mi) <= tau_l1 {
                return (SparsePlane::empty(v.nrows(), v.ncols()), 0.0);
            }
            let mut s = prox_tv_complex(&v, tau_tv, self.cfg.tv_inner_iters);
            if tau_l1 > 0.0 {
                s.mapv_inplace(|c| soft_threshold(c, tau_l1));
            }
            s
        } else {
            v.mapv(|c| soft_threshold(c, tau_l1))
        };
        let mut out = out;
        if self.cfg.domain == ObjectDomain::RealNonNegative {
            out.mapv_inplace(|c| Complex64::new(c.re.max(0.0), 0.0));
        }
        let sparse = SparsePlane::from_dense(&out, 0.0);
        let mut penalty = 0.0;
        if w.lambda_l1 > 0.0 {
            penalty += w.lambda_l1 * sparse.l1_norm();
        }
        if w.lambda_tv > 0.0 && !sparse.is_empty() {
            penalty += w.lambda_tv * tv_norm_complex(&out);
        }
        (sparse, penalty)
    }

    /// `prox(y - step * grad)` where `grad_spec` is the spectrum of `2 (H y - b)`.
    fn prox_gradient(
        &self,
        y: &SparseVolume,
        grad_spec: &Array2<Complex64>,
        step: f64,
    ) -> (SparseVolume, f64) {
        let geom = *self.model.geom();
        let chunk = if self.cfg.plane_concurrency > 0 {
            self.cfg.plane_concurrency
        } else {
            rayon::current_num_threads().max(1) * 2
        };
        let mut planes = Vec::with_capacity(geom.nz);
        let mut penalty = 0.0;
        for start in (0..geom.nz).step_by(chunk) {
            let end = (start + chunk).min(geom.nz);
            let part: Vec<(SparsePlane, f64)> = (start..end)
                .into_par_iter()
                .map(|k| {
                    let mut v = self.model.adjoint_plane_scaled(grad_spec, k, -step);
                    y.plane(k).add_to_dense(&mut v, 1.0);
                    self.prox_plane(v, step)
                })
                .collect();
            for (p, g) in part {
                penalty += g;
                planes.push(p);
            }
        }
        let z = SparseVolume::from_planes(geom, planes).expect("plane shapes follow geometry");
        (z, penalty)
    }

    /// One proximal-gradient step from `y`, backtracking on `step` when the
    /// policy asks for it.
    fn step_from(
        &self,
        y: &SparseVolume,
        hy: &Array2<f64>,
        b: &Array2<f64>,
        step: &mut f64,
        report: &mut SolveReport,
    ) -> Result<Iterate> {
        let ry = hy - b;
        let fy: f64 = ry.iter().map(|v| v * v).sum();
        let grad_spec = self.model.sensor_spectrum(&(&ry * 2.0))?;
        let mut tries = 0;
        loop {
            let (z, penalty) = self.prox_gradient(y, &grad_spec, *step);
            let hz = self.model.forward(&z)?;
            let fz: f64 = Zip::from(&hz)
                .and(b)
                .fold(0.0, |acc, &h, &bb| acc + (h - bb) * (h - bb));
            let cand = Iterate {
                x: z,
                hx: hz,
                data: fz,
                penalty,
            };
            let shrink = match self.cfg.step_policy {
                StepPolicy::Fixed { .. } => return Ok(cand),
                StepPolicy::Backtracking { shrink, .. } => shrink,
            };
            // f(y) + <grad f(y), z - y> + |z - y|^2 / (2 step), with the inner
            // product evaluated on the sensor plane: <2 H*(Hy-b), z-y> = 2 <Hy-b, Hz-Hy>
            let lin: f64 = Zip::from(&ry)
                .and(&cand.hx)
                .and(hy)
                .fold(0.0, |acc, &r, &hz, &hy| acc + 2.0 * r * (hz - hy));
            let dist = SparseVolume::axpy(-1.0, y, &cand.x)?.norm_sqr();
            let bound = fy + lin + dist / (2.0 * *step);
            let margin = bound - fz;
            if margin >= -1e-12 * fy.abs().max(fz.abs()).max(1e-300) {
                report.surrogate_margins.push(margin);
                return Ok(cand);
            }
            tries += 1;
            report.backtracks += 1;
            if tries > MAX_BACKTRACKS_PER_STEP {
                return Err(Error::InvalidParameter(format!(
                    "backtracking failed to find a step after {tries} reductions"
                )));
            }
            *step *= shrink;
        }
    }

    /// Solves `min ||Hx - b||^2 + l1 ||x||_1 + tv ||x||_TV` from `x0 = 0`.
    pub fn solve(&self, b: &Array2<f64>) -> Result<(SparseVolume, SolveReport)> {
        let started = Instant::now();
        let geom = *self.model.geom();
        geom.check_plane(b.dim(), "hologram")?;
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "hologram contains non-finite values".into(),
            ));
        }

        let zero = Iterate {
            x: SparseVolume::zeros(geom),
            hx: Array2::zeros(geom.plane_shape()),
            data: b.iter().map(|v| v * v).sum(),
            penalty: 0.0,
        };
        let mut report = SolveReport {
            objective_history: Vec::with_capacity(self.cfg.max_iters),
            initial_objective: zero.objective(),
            final_sparsity: 1.0,
            iterations: 0,
            restarts: 0,
            backtracks: 0,
            final_step: 0.0,
            surrogate_margins: Vec::new(),
            wall_time: Duration::ZERO,
        };
        if zero.data == 0.0 {
            report.final_step = self.initial_step();
            report.objective_history = vec![0.0; self.cfg.max_iters];
            report.iterations = self.cfg.max_iters;
            report.wall_time = started.elapsed();
            return Ok((zero.x, report));
        }

        let mut step = self.initial_step();
        let mut current = zero;
        let mut previous: Option<(SparseVolume, Array2<f64>)> = None;
        let mut t = 1.0f64;

        for iter in 0..self.cfg.max_iters {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let beta = (t - 1.0) / t_next;
            let candidate = match (&previous, beta > 0.0) {
                (Some((x_prev, hx_prev)), true) => {
                    let diff = SparseVolume::axpy(-1.0, x_prev, &current.x)?;
                    let y = SparseVolume::axpy(beta, &diff, &current.x)?;
                    let mut hy = current.hx.clone();
                    Zip::from(&mut hy)
                        .and(&current.hx)
                        .and(hx_prev)
                        .for_each(|o, &a, &p| *o += beta * (a - p));
                    self.step_from(&y, &hy, b, &mut step, &mut report)?
                }
                _ => self.step_from(&current.x, &current.hx, b, &mut step, &mut report)?,
            };

            let mut t_after = t_next;
            let accepted = if candidate.objective() <= current.objective() {
                Some(candidate)
            } else {
                // objective went up: drop the momentum and retry from the
                // current point; keep the current point if even that fails
                report.restarts += 1;
                t_after = 1.0;
                if beta > 0.0 && previous.is_some() {
                    let retry =
                        self.step_from(&current.x, &current.hx, b, &mut step, &mut report)?;
                    (retry.objective() <= current.objective()).then_some(retry)
                } else {
                    None
                }
            };
            match accepted {
                Some(next) => {
                    let old = std::mem::replace(&mut current, next);
                    previous = Some((old.x, old.hx));
                }
                None => previous = None,
            }
            t = t_after;

            let obj = current.objective();
            if self.cfg.log_objective {
                log::info!(
                    "iter {:4} objective {:.6e} nnz {} step {:.3e}",
                    iter + 1,
                    obj,
                    current.x.nnz(),
                    step
                );
            }
            report.objective_history.push(obj);
            report.iterations = iter + 1;

            if !obj.is_finite() || obj > DIVERGENCE_FACTOR * report.initial_objective {
                return Err(Error::Diverged {
                    iteration: iter + 1,
                    objective: obj,
                });
            }
            if self.cfg.stop_tol > 0.0 && report.objective_history.len() >= 2 {
                let h = &report.objective_history;
                let prev = h[h.len() - 2];
                if prev > 0.0 && ((prev - obj) / prev).abs() < self.cfg.stop_tol {
                    break;
                }
            }
        }

        report.final_sparsity = current.x.sparsity();
        report.final_step = step;
        report.wall_time = started.elapsed();
        Ok((current.x, report))
    }
}

/// One-shot convenience wrapper around [`Fista`].
pub fn fista(
    b: &Array2<f64>,
    geom: &VolumeGeometry,
    cfg: &SolverConfig,
) -> Result<(SparseVolume, SolveReport)> {
    Fista::new(*geom, cfg.clone())?.solve(b)
}
