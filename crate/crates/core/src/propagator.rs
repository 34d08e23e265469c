//! Crank-Nicolson time stepping.
//!
//! Each step solves `(I + i dt/2 H) psi' = (I - i dt/2 H) psi` with restarted
//! GMRES, warm-started from `psi`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::SpinorField;
use crate::krylov::{gmres, GmresConfig, GmresWorkspace, LinearOperator};
use crate::operators::SparseOperator;

pub type ObserverError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Error)]
pub enum PropagatorError {
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("state has {state} entries but the operator acts on {operator}")]
    Dimension { state: usize, operator: usize },
    #[error("GMRES did not reach the tolerance after {cycles} cycles (relative residual {residual:.3e})")]
    Stagnation { residual: f64, cycles: usize },
    #[error("observer failed: {0}")]
    Observer(ObserverError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub dt: f64,
    pub rel_tol: f64,
    pub restart: usize,
    /// Maximum number of GMRES restart cycles per step.
    pub max_iter: usize,
    /// Right-precondition with the inverse diagonal.
    pub jacobi: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            rel_tol: 1e-8,
            restart: 30,
            max_iter: 1000,
            jacobi: false,
        }
    }
}

impl SolverConfig {
    pub fn with_dt(dt: f64) -> Self {
        Self {
            dt,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), PropagatorError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(PropagatorError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(PropagatorError::Config(format!(
                "rel_tol must lie in (0, 1), got {}",
                self.rel_tol
            )));
        }
        if self.restart < 2 {
            return Err(PropagatorError::Config(format!("restart must be at least 2, got {}", self.restart)));
        }
        if self.max_iter == 0 {
            return Err(PropagatorError::Config("max_iter must be positive".into()));
        }
        Ok(())
    }

    fn gmres(&self) -> GmresConfig {
        GmresConfig {
            rel_tol: self.rel_tol,
            restart: self.restart,
            max_cycles: self.max_iter,
        }
    }
}

/// `x + alpha H x`.
struct Shifted<'a> {
    h: &'a SparseOperator,
    alpha: Complex64,
}

impl LinearOperator for Shifted<'_> {
    fn dim(&self) -> usize {
        self.h.dim()
    }
    fn apply(&self, x: &[Complex64], y: &mut [Complex64]) {
        self.h.apply(x, y);
        y.iter_mut().zip(x).for_each(|(yi, xi)| *yi = xi + self.alpha * *yi);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub rel_residual: f64,
    pub iterations: usize,
}

/// Reusable Crank-Nicolson stepper bound to one operator.
pub struct CrankNicolson<'a> {
    h: &'a SparseOperator,
    cfg: SolverConfig,
    inv_diag: Option<Vec<Complex64>>,
    ws: GmresWorkspace,
    rhs: Vec<Complex64>,
}

impl<'a> CrankNicolson<'a> {
    pub fn new(h: &'a SparseOperator, cfg: SolverConfig) -> Result<Self, PropagatorError> {
        cfg.validate()?;
        let alpha = Complex64::new(0.0, 0.5 * cfg.dt);
        let inv_diag = cfg
            .jacobi
            .then(|| h.diagonal().iter().map(|d| 1.0 / (1.0 + alpha * d)).collect());
        Ok(Self {
            h,
            cfg,
            inv_diag,
            ws: GmresWorkspace::new(h.dim(), cfg.restart),
            rhs: vec![Complex64::default(); h.dim()],
        })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn operator(&self) -> &SparseOperator {
        self.h
    }

    /// Advance `psi` by one step into `out`.
    pub fn step(&mut self, psi: &[Complex64], out: &mut [Complex64]) -> Result<StepReport, PropagatorError> {
        let n = self.h.dim();
        if psi.len() != n || out.len() != n {
            return Err(PropagatorError::Dimension {
                state: psi.len(),
                operator: n,
            });
        }
        let alpha = Complex64::new(0.0, 0.5 * self.cfg.dt);
        self.h.apply(psi, &mut self.rhs);
        self.rhs.iter_mut().zip(psi).for_each(|(r, p)| *r = p - alpha * *r);
        out.copy_from_slice(psi);
        let a = Shifted { h: self.h, alpha };
        let outcome = gmres(&a, &self.rhs, out, self.inv_diag.as_deref(), &self.cfg.gmres(), &mut self.ws);
        if !outcome.converged {
            return Err(PropagatorError::Stagnation {
                residual: outcome.rel_residual,
                cycles: outcome.cycles,
            });
        }
        Ok(StepReport {
            rel_residual: outcome.rel_residual,
            iterations: outcome.iterations,
        })
    }

    /// Relative residual `||A out - B psi|| / ||B psi||` recomputed from scratch.
    pub fn verify(&self, psi: &[Complex64], out: &[Complex64]) -> f64 {
        let n = self.h.dim();
        let alpha = Complex64::new(0.0, 0.5 * self.cfg.dt);
        let mut b = vec![Complex64::default(); n];
        let mut a = vec![Complex64::default(); n];
        self.h.apply(psi, &mut b);
        self.h.apply(out, &mut a);
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..n {
            let bi = psi[i] - alpha * b[i];
            let ai = out[i] + alpha * a[i];
            num += (ai - bi).norm_sqr();
            den += bi.norm_sqr();
        }
        if den == 0.0 {
            num.sqrt()
        } else {
            (num / den).sqrt()
        }
    }
}

/// One Crank-Nicolson step of a field.
pub fn cn_step(psi: &SpinorField, h: &SparseOperator, cfg: &SolverConfig) -> Result<SpinorField, PropagatorError> {
    let mut stepper = CrankNicolson::new(h, *cfg)?;
    let mut out = psi.clone();
    stepper.step(psi.as_slice(), out.as_mut_slice())?;
    Ok(out)
}

/// Squared norm before the first step and after every step.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NormSeries {
    pub times: Vec<f64>,
    pub norm_sq: Vec<f64>,
}

impl NormSeries {
    pub fn push(&mut self, t: f64, n: f64) {
        self.times.push(t);
        self.norm_sq.push(n);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Whether no step increased the norm by more than `slack`.
    pub fn is_monotone(&self, slack: f64) -> bool {
        self.norm_sq.windows(2).all(|w| w[1] <= w[0] + slack)
    }

    /// Largest single-step increase of the squared norm.
    pub fn max_increase(&self) -> f64 {
        self.norm_sq.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    pub fn last(&self) -> Option<f64> {
        self.norm_sq.last().copied()
    }
}

/// Callback run synchronously after every step.
pub trait Observer {
    /// `step` counts from 0; `t` is the time before the step.
    fn observe(&mut self, step: usize, t: f64, dt: f64, before: &SpinorField, after: &SpinorField) -> Result<(), ObserverError>;

    /// Called once when propagation ends; `complete` is false after a failure.
    fn finish(&mut self, _complete: bool) -> Result<(), ObserverError> {
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Propagation {
    pub norms: NormSeries,
    pub field: SpinorField,
    pub steps: usize,
    pub max_residual: f64,
    /// Largest recomputed residual among the periodic spot checks.
    pub max_verified_residual: f64,
    pub gmres_iterations: usize,
}

#[derive(Debug, Error)]
#[error("propagation stopped at step {step}: {error}")]
pub struct PropagationFailure {
    pub step: usize,
    pub error: PropagatorError,
    pub partial: NormSeries,
}

/// Steps between full residual recomputations.
pub const VERIFY_EVERY: usize = 100;

/// Number of whole steps that fit in `t_cutoff`.
pub fn step_count(t_cutoff: f64, dt: f64) -> usize {
    (t_cutoff / dt * (1.0 + 1e-12)).floor() as usize
}

/// Evolve `psi0` up to `t_cutoff`, notifying `observers` after every step.
pub fn propagate(
    psi0: &SpinorField,
    h: &SparseOperator,
    cfg: &SolverConfig,
    t_cutoff: f64,
    observers: &mut [&mut dyn Observer],
) -> Result<Propagation, PropagationFailure> {
    let fail = |step, error, partial| PropagationFailure { step, error, partial };
    let mut norms = NormSeries::default();
    norms.push(0.0, psi0.norm_sq());
    let mut stepper = match CrankNicolson::new(h, *cfg) {
        Ok(s) => s,
        Err(e) => return Err(fail(0, e, norms)),
    };
    if psi0.as_slice().len() != h.dim() {
        let e = PropagatorError::Dimension {
            state: psi0.as_slice().len(),
            operator: h.dim(),
        };
        return Err(fail(0, e, norms));
    }
    let steps = step_count(t_cutoff, cfg.dt);
    let mut current = psi0.clone();
    let mut next = psi0.clone();
    let mut max_residual = 0.0f64;
    let mut max_verified = 0.0f64;
    let mut iterations = 0;
    for n in 0..steps {
        let t = n as f64 * cfg.dt;
        let report = stepper.step(current.as_slice(), next.as_mut_slice());
        let report = match report {
            Ok(r) => r,
            Err(e) => {
                finish_all(observers, false);
                return Err(fail(n, e, norms));
            }
        };
        max_residual = max_residual.max(report.rel_residual);
        iterations += report.iterations;
        if n % VERIFY_EVERY == 0 {
            let v = stepper.verify(current.as_slice(), next.as_slice());
            max_verified = max_verified.max(v);
        }
        norms.push(t + cfg.dt, next.norm_sq());
        for obs in observers.iter_mut() {
            if let Err(e) = obs.observe(n, t, cfg.dt, &current, &next) {
                finish_all(observers, false);
                return Err(fail(n, PropagatorError::Observer(e), norms));
            }
        }
        std::mem::swap(&mut current, &mut next);
    }
    for obs in observers.iter_mut() {
        if let Err(e) = obs.finish(true) {
            return Err(fail(steps, PropagatorError::Observer(e), norms));
        }
    }
    Ok(Propagation {
        norms,
        field: current,
        steps,
        max_residual,
        max_verified_residual: max_verified,
        gmres_iterations: iterations,
    })
}

fn finish_all(observers: &mut [&mut dyn Observer], complete: bool) {
    for obs in observers.iter_mut() {
        let _ = obs.finish(complete);
    }
}
