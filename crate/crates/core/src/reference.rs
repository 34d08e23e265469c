//! Reduced longitudinal solvers.
//!
//! For CAP and spinless ABC detectors the Hamiltonian separates into the
//! transverse oscillator and a line problem along `z`; every detection
//! statistic depends on the line problem alone. The same machinery without a
//! detector yields the free comparison curve and the free Bohmian arrivals.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bohmian::{
    sample_initial_in, ArrivalRecord, BohmianError, FactorizedGuidance, ParticleStatus, SamplingBounds, Termination,
    TrajectoryDriver, DEFAULT_CFL,
};
use crate::model::{BlochSpinor, CapModel, SLAB_WIDTH};
use crate::observables::CurrentKind;
use crate::operators::{assemble_laplacian_1d, FaceCondition, OperatorError, SparseOperator};
use crate::propagator::{step_count, CrankNicolson, NormSeries, ObserverError, PropagatorError, SolverConfig, VERIFY_EVERY};

#[derive(Debug, Error)]
pub enum ReferenceError {
    #[error("invalid line problem: {0}")]
    Config(String),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error("line propagation stopped at step {step}: {source}")]
    Propagator {
        step: usize,
        #[source]
        source: PropagatorError,
        partial: NormSeries,
    },
    #[error("far-wall probability {observed:.3e} exceeds {threshold:.1e}; the box is too short for this cutoff")]
    OracleInvalid { observed: f64, threshold: f64 },
    #[error(transparent)]
    Bohmian(#[from] BohmianError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TopBoundary {
    Dirichlet,
    Robin { kappa: f64 },
}

/// Linear solver for the line problem's implicit step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineSolver {
    /// Restarted GMRES, as in the full solver.
    #[default]
    Gmres,
    /// Direct tridiagonal elimination.
    Tridiagonal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line1DProblem {
    pub nz: usize,
    pub hz: f64,
    pub top: TopBoundary,
    pub absorber: Option<CapModel>,
    pub solver: LineSolver,
    pub cfg: SolverConfig,
}

impl Line1DProblem {
    /// Line of length `length` with `nz` nodes; the last node is one spacing
    /// below `length`.
    pub fn new(
        length: f64,
        nz: usize,
        top: TopBoundary,
        absorber: Option<CapModel>,
        cfg: SolverConfig,
    ) -> Result<Self, ReferenceError> {
        if !(length > SLAB_WIDTH) {
            return Err(ReferenceError::Config(format!("length {length} must exceed the slab width")));
        }
        if nz < 3 {
            return Err(ReferenceError::Config(format!("need at least 3 nodes, got {nz}")));
        }
        cfg.validate().map_err(|e| ReferenceError::Config(e.to_string()))?;
        if let TopBoundary::Robin { kappa } = top {
            if !(kappa > 0.0) {
                return Err(ReferenceError::Config(format!("kappa must be positive, got {kappa}")));
            }
        }
        Ok(Self {
            nz,
            hz: length / nz as f64,
            top,
            absorber,
            solver: LineSolver::Gmres,
            cfg,
        })
    }

    pub fn with_solver(mut self, solver: LineSolver) -> Self {
        self.solver = solver;
        self
    }

    /// Height of the last node.
    pub fn counting_plane(&self) -> f64 {
        (self.nz - 1) as f64 * self.hz
    }

    pub fn operator(&self) -> Result<SparseOperator, ReferenceError> {
        let face = match self.top {
            TopBoundary::Dirichlet => FaceCondition::DirichletBoth,
            TopBoundary::Robin { kappa } => FaceCondition::DirichletBottomRobinTop { kappa },
        };
        let lap = assemble_laplacian_1d(self.nz, self.hz, face)?;
        let Some(cap) = self.absorber else {
            return Ok(lap);
        };
        let mut t = Vec::with_capacity(lap.nnz() + self.nz);
        for r in 0..self.nz {
            let active = lap.row(r).count() > 0;
            t.extend(lap.row(r).map(|(c, v)| (r, c, v)));
            if active {
                let w = cap.strength(r as f64 * self.hz);
                t.push((r, r, Complex64::new(0.0, -w)));
            }
        }
        Ok(SparseOperator::from_triplets(self.nz, t))
    }

    /// `sqrt(2) sin(pi z)` on the slab, scaled to unit discrete norm.
    pub fn initial_profile(&self) -> Vec<Complex64> {
        let mut psi: Vec<Complex64> = (0..self.nz)
            .map(|k| {
                let z = k as f64 * self.hz;
                let v = if z > 0.0 && z < SLAB_WIDTH {
                    (2.0 / SLAB_WIDTH).sqrt() * (PI * z / SLAB_WIDTH).sin()
                } else {
                    0.0
                };
                Complex64::new(v, 0.0)
            })
            .collect();
        let n = line_norm_sq(&psi, self.hz).sqrt();
        psi.iter_mut().for_each(|c| *c /= n);
        psi
    }

    /// Detection-time density of the configured detector for state `psi`.
    pub fn model_density(&self, psi: &[Complex64]) -> f64 {
        let mut rho = 0.0;
        if let TopBoundary::Robin { kappa } = self.top {
            rho += kappa * psi[self.nz - 1].norm_sqr();
        }
        if let Some(cap) = self.absorber {
            let s: f64 = psi
                .iter()
                .enumerate()
                .map(|(k, c)| cap.strength(k as f64 * self.hz) * c.norm_sqr())
                .sum();
            rho += 2.0 * s * self.hz;
        }
        rho
    }
}

pub fn line_norm_sq(psi: &[Complex64], hz: f64) -> f64 {
    psi.iter().map(|c| c.norm_sqr()).sum::<f64>() * hz
}

/// Flux `Im(conj(psi) dpsi/dz)` at node `k` by central differences.
pub fn node_flux(psi: &[Complex64], hz: f64, k: usize) -> f64 {
    (psi[k].conj() * (psi[k + 1] - psi[k - 1])).im / (2.0 * hz)
}

/// Probability below node `k`, counting node `k` with half weight.
pub fn probability_below(psi: &[Complex64], hz: f64, k: usize) -> f64 {
    (psi[..k].iter().map(|c| c.norm_sqr()).sum::<f64>() + 0.5 * psi[k].norm_sqr()) * hz
}

/// Precomputed elimination of a constant tridiagonal system.
#[derive(Debug, Clone)]
struct Tridiagonal {
    sub: Vec<Complex64>,
    inv_pivot: Vec<Complex64>,
    sup_scaled: Vec<Complex64>,
}

impl Tridiagonal {
    fn new(sub: Vec<Complex64>, diag: Vec<Complex64>, sup: Vec<Complex64>) -> Self {
        let n = diag.len();
        let mut inv_pivot = vec![Complex64::default(); n];
        let mut sup_scaled = vec![Complex64::default(); n];
        let mut prev = Complex64::default();
        for i in 0..n {
            let m = diag[i] - if i > 0 { sub[i] * prev } else { Complex64::default() };
            inv_pivot[i] = 1.0 / m;
            sup_scaled[i] = sup[i] * inv_pivot[i];
            prev = sup_scaled[i];
        }
        Self {
            sub,
            inv_pivot,
            sup_scaled,
        }
    }

    fn solve(&self, rhs: &[Complex64], x: &mut [Complex64]) {
        let n = rhs.len();
        let mut prev = Complex64::default();
        for i in 0..n {
            let d = rhs[i] - if i > 0 { self.sub[i] * prev } else { Complex64::default() };
            x[i] = d * self.inv_pivot[i];
            prev = x[i];
        }
        for i in (0..n - 1).rev() {
            let next = x[i + 1];
            x[i] -= self.sup_scaled[i] * next;
        }
    }
}

/// One step of a line evolution, handed to callbacks.
pub struct LineStep<'a> {
    pub step: usize,
    /// Time before the step.
    pub t: f64,
    pub dt: f64,
    pub before: &'a [Complex64],
    pub after: &'a [Complex64],
}

/// Flux through a probe height and probability below it.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ProbeSeries {
    pub node: usize,
    pub height: f64,
    pub flux: Vec<f64>,
    pub prob_below: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LineEvolution {
    pub norms: NormSeries,
    pub rho_model: Vec<f64>,
    pub probe: Option<ProbeSeries>,
    pub final_state: Vec<Complex64>,
    pub steps: usize,
    pub max_residual: f64,
    /// Largest probability in the last free cell below the top wall.
    pub far_wall_max: f64,
}

pub type LineCallback<'a> = &'a mut dyn FnMut(&LineStep<'_>) -> Result<(), ObserverError>;

/// Crank-Nicolson evolution of the line problem up to `t_cutoff`.
///
/// With `probe = Some(L)` the flux at, and probability below, the node
/// nearest to `L` are recorded at every stored time.
pub fn evolve_1d(
    problem: &Line1DProblem,
    t_cutoff: f64,
    probe: Option<f64>,
    mut callback: Option<LineCallback<'_>>,
) -> Result<LineEvolution, ReferenceError> {
    let h = problem.operator()?;
    let hz = problem.hz;
    let dt = problem.cfg.dt;
    let mut psi = problem.initial_profile();
    let mut next = psi.clone();

    let mut probe_series = match probe {
        Some(l) => {
            let node = (l / hz).round() as usize;
            if node < 1 || node + 1 >= problem.nz {
                return Err(ReferenceError::Config(format!("probe height {l} is not an interior node")));
            }
            Some(ProbeSeries {
                node,
                height: node as f64 * hz,
                ..ProbeSeries::default()
            })
        }
        None => None,
    };
    let record_probe = |p: &mut Option<ProbeSeries>, psi: &[Complex64]| {
        if let Some(p) = p {
            p.flux.push(node_flux(psi, hz, p.node));
            p.prob_below.push(probability_below(psi, hz, p.node));
        }
    };

    let mut norms = NormSeries::default();
    norms.push(0.0, line_norm_sq(&psi, hz));
    let mut rho_model = vec![problem.model_density(&psi)];
    record_probe(&mut probe_series, &psi);
    let wall = problem.nz - 2;
    let mut far_wall_max = psi[wall].norm_sqr() * hz;

    let alpha = Complex64::new(0.0, 0.5 * dt);
    let mut stepper = CrankNicolson::new(&h, problem.cfg).map_err(|source| ReferenceError::Propagator {
        step: 0,
        source,
        partial: norms.clone(),
    })?;
    let direct = match problem.solver {
        LineSolver::Tridiagonal => {
            let (sub, diag, sup) = h.tridiagonal_bands();
            let scale = |v: Vec<Complex64>| v.into_iter().map(|x| alpha * x).collect::<Vec<_>>();
            let diag = diag.into_iter().map(|d| 1.0 + alpha * d).collect();
            Some(Tridiagonal::new(scale(sub), diag, scale(sup)))
        }
        LineSolver::Gmres => None,
    };
    let mut rhs = vec![Complex64::default(); problem.nz];
    let mut hx = vec![Complex64::default(); problem.nz];

    let steps = step_count(t_cutoff, dt);
    let mut max_residual = 0.0f64;
    for n in 0..steps {
        let t = n as f64 * dt;
        match &direct {
            Some(tri) => {
                h.apply(&psi, &mut hx);
                rhs.iter_mut()
                    .zip(psi.iter().zip(&hx))
                    .for_each(|(r, (p, q))| *r = p - alpha * q);
                tri.solve(&rhs, &mut next);
                if n % VERIFY_EVERY == 0 {
                    max_residual = max_residual.max(stepper.verify(&psi, &next));
                }
            }
            None => {
                let report = stepper.step(&psi, &mut next).map_err(|source| ReferenceError::Propagator {
                    step: n,
                    source,
                    partial: norms.clone(),
                })?;
                max_residual = max_residual.max(report.rel_residual);
            }
        }
        norms.push(t + dt, line_norm_sq(&next, hz));
        rho_model.push(problem.model_density(&next));
        record_probe(&mut probe_series, &next);
        far_wall_max = far_wall_max.max(next[wall].norm_sqr() * hz);
        if let Some(cb) = callback.as_mut() {
            let step = LineStep {
                step: n,
                t,
                dt,
                before: &psi,
                after: &next,
            };
            cb(&step).map_err(|e| ReferenceError::Propagator {
                step: n,
                source: PropagatorError::Observer(e),
                partial: norms.clone(),
            })?;
        }
        std::mem::swap(&mut psi, &mut next);
    }
    Ok(LineEvolution {
        norms,
        rho_model,
        probe: probe_series,
        final_state: psi,
        steps,
        max_residual,
        far_wall_max,
    })
}

/// Resolution and validity settings of the free comparison run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FreeResolution {
    pub hz: f64,
    pub dt: f64,
    /// Minimum box length in units of the probe height.
    pub box_factor: f64,
    /// Speed bound used to size the box; defaults to `1/hz`, the largest
    /// group velocity the lattice supports.
    pub max_group_velocity: Option<f64>,
    /// Largest tolerated probability in the last cell before the far wall.
    pub wall_threshold: f64,
    pub solver: LineSolver,
    pub rel_tol: f64,
}

impl Default for FreeResolution {
    fn default() -> Self {
        Self {
            hz: 0.02,
            dt: 1e-3,
            box_factor: 4.0,
            max_group_velocity: None,
            wall_threshold: 1e-10,
            solver: LineSolver::Tridiagonal,
            rel_tol: 1e-10,
        }
    }
}

impl FreeResolution {
    /// Length of the line for probe height `l` and cutoff `t_cutoff`.
    ///
    /// Nothing launched from the slab can reach the far wall before the
    /// cutoff, so no reflection can return to the probe.
    pub fn box_length(&self, l: f64, t_cutoff: f64) -> f64 {
        let v = self.max_group_velocity.unwrap_or(1.0 / self.hz);
        (self.box_factor * l).max(l + v * t_cutoff)
    }

    fn problem(&self, l: f64, t_cutoff: f64) -> Result<Line1DProblem, ReferenceError> {
        let length = self.box_length(l, t_cutoff);
        let nz = (length / self.hz).round() as usize;
        let cfg = SolverConfig {
            dt: self.dt,
            rel_tol: self.rel_tol,
            ..SolverConfig::default()
        };
        Ok(Line1DProblem::new(nz as f64 * self.hz, nz, TopBoundary::Dirichlet, None, cfg)?.with_solver(self.solver))
    }
}

/// Free arrival-time density at height `L`, by two routes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoFreeCurve {
    pub times: Vec<f64>,
    /// Flux through the probe.
    pub flux: Vec<f64>,
    /// `-d/dt` of the probability below the probe.
    pub loss: Vec<f64>,
    pub probe_height: f64,
    pub box_length: f64,
    pub far_wall_max: f64,
    pub final_norm_sq: f64,
}

impl RhoFreeCurve {
    /// `max |flux - loss| / max |flux|`.
    pub fn route_gap(&self) -> f64 {
        let peak = self.flux.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let gap = self.flux.iter().zip(&self.loss).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        gap / peak
    }
}

fn curve_from(evo: &LineEvolution, box_length: f64, res: &FreeResolution) -> Result<RhoFreeCurve, ReferenceError> {
    if evo.far_wall_max > res.wall_threshold {
        return Err(ReferenceError::OracleInvalid {
            observed: evo.far_wall_max,
            threshold: res.wall_threshold,
        });
    }
    let probe = evo.probe.as_ref().expect("probe requested");
    let below: NormSeries = NormSeries {
        times: evo.norms.times.clone(),
        norm_sq: probe.prob_below.clone(),
    };
    Ok(RhoFreeCurve {
        times: evo.norms.times.clone(),
        flux: probe.flux.clone(),
        loss: crate::observables::normloss_density(&below.times, &below.norm_sq),
        probe_height: probe.height,
        box_length,
        far_wall_max: evo.far_wall_max,
        final_norm_sq: evo.norms.last().unwrap_or(1.0),
    })
}

/// Free comparison curve at height `l`.
pub fn rho_free(l: f64, t_cutoff: f64, res: &FreeResolution) -> Result<RhoFreeCurve, ReferenceError> {
    let problem = res.problem(l, t_cutoff)?;
    let evo = evolve_1d(&problem, t_cutoff, Some(l), None)?;
    curve_from(&evo, problem.nz as f64 * problem.hz, res)
}

/// Free Bohmian arrivals at height `l` together with the free curve.
#[derive(Debug, Clone)]
pub struct FreeArrivals {
    pub curve: RhoFreeCurve,
    pub records: Vec<ArrivalRecord>,
    pub ensemble_size: usize,
    pub max_tau: Option<f64>,
}

impl FreeArrivals {
    pub fn fraction(&self) -> f64 {
        self.records.len() as f64 / self.ensemble_size as f64
    }

    pub fn taus(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.time).collect()
    }
}

/// Settings of the free trajectory run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreeTrajectorySettings {
    pub n: usize,
    pub seed: u64,
    pub cfl: f64,
    /// RK2 steps per field step.
    pub substeps: usize,
}

impl Default for FreeTrajectorySettings {
    fn default() -> Self {
        Self {
            n: 3000,
            seed: 1,
            cfl: DEFAULT_CFL,
            substeps: 4,
        }
    }
}

/// Arrival times at `z = l` of Pauli-guided trajectories without detector.
///
/// The state is the product of the spinor, the exact transverse ground state
/// and the free line evolution.
pub fn free_bohmian_arrivals(
    l: f64,
    theta: f64,
    omega: f64,
    t_cutoff: f64,
    res: &FreeResolution,
    traj: &FreeTrajectorySettings,
) -> Result<FreeArrivals, ReferenceError> {
    let chi = BlochSpinor::new(theta, 0.0).map_err(|e| ReferenceError::Config(e.to_string()))?;
    let problem = res.problem(l, t_cutoff)?;
    let bounds = SamplingBounds::line(problem.nz, problem.hz);
    let ensemble = sample_initial_in(traj.n, &bounds, omega, CurrentKind::Pauli, traj.seed)?;
    let mut driver = TrajectoryDriver::new(ensemble, Termination::FirstHit { plane: l }, traj.cfl)?;
    let spin = Some(chi.bloch_vector());
    let hz = problem.hz;
    let sub = traj.substeps.max(1);
    let mut advance = |s: &LineStep<'_>| -> Result<(), ObserverError> {
        let field = FactorizedGuidance::new(s.after, hz, omega, [0.0, 0.0], spin);
        let h = s.dt / sub as f64;
        for i in 0..sub {
            driver.advance(&field, s.t + i as f64 * h, h)?;
        }
        Ok(())
    };
    let evo = evolve_1d(&problem, t_cutoff, Some(l), Some(&mut advance))?;
    driver.finalize();
    let curve = curve_from(&evo, problem.nz as f64 * problem.hz, res)?;
    let records: Vec<ArrivalRecord> = driver
        .records
        .iter()
        .copied()
        .filter(|r| r.status == ParticleStatus::Arrived)
        .collect();
    let max_tau = records.iter().map(|r| r.time).fold(None, |m: Option<f64>, t| Some(m.map_or(t, |m| m.max(t))));
    Ok(FreeArrivals {
        curve,
        records,
        ensemble_size: traj.n,
        max_tau,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tridiagonal_matches_gmres() {
        let cfg = SolverConfig {
            dt: 2e-3,
            rel_tol: 1e-12,
            ..SolverConfig::default()
        };
        let p = Line1DProblem::new(3.0, 150, TopBoundary::Robin { kappa: PI }, None, cfg).unwrap();
        let a = evolve_1d(&p, 0.2, Some(2.0), None).unwrap();
        let b = evolve_1d(&p.with_solver(LineSolver::Tridiagonal), 0.2, Some(2.0), None).unwrap();
        let d = a
            .final_state
            .iter()
            .zip(&b.final_state)
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max);
        assert!(d < 1e-9, "{d}");
        assert!(b.max_residual < 1e-12);
    }

    #[test]
    fn initial_profile_is_normalized() {
        let p = Line1DProblem::new(2.0, 200, TopBoundary::Dirichlet, None, SolverConfig::default()).unwrap();
        assert!((line_norm_sq(&p.initial_profile(), p.hz) - 1.0).abs() < 1e-14);
        assert!(Line1DProblem::new(0.5, 200, TopBoundary::Dirichlet, None, SolverConfig::default()).is_err());
    }

    #[test]
    fn short_box_is_flagged() {
        let res = FreeResolution {
            hz: 0.05,
            dt: 5e-3,
            max_group_velocity: Some(0.1),
            box_factor: 1.2,
            ..FreeResolution::default()
        };
        let err = rho_free(2.0, 3.0, &res);
        assert!(matches!(err, Err(ReferenceError::OracleInvalid { .. })), "{err:?}");
    }
}
