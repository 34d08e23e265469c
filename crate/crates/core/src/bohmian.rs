//! Bohmian trajectories: Born sampling, guidance velocities, capped RK2
//! integration, first hits on the counting plane and CAP absorption.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Axis, GridError, GridSpec, SpinorField};
use crate::model::{CapModel, PhysicsConfig, SLAB_WIDTH};
use crate::observables::{current, CurrentKind, ObservablesError};
use crate::propagator::{Observer, ObserverError};

/// Density floor relative to the instantaneous maximum.
pub const FLOOR_FRACTION: f64 = 1e-6;

/// Default fraction of a cell a particle may cover per RK2 stage.
pub const DEFAULT_CFL: f64 = 0.8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BohmianError {
    #[error("invalid trajectory configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Observables(#[from] ObservablesError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParticleStatus {
    Alive,
    Arrived,
    Absorbed,
    TimedOut,
}

impl ParticleStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ParticleStatus::Alive => "alive",
            ParticleStatus::Arrived => "arrived",
            ParticleStatus::Absorbed => "absorbed",
            ParticleStatus::TimedOut => "timed_out",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub position: [f64; 3],
    /// Position at the start of the latest step.
    pub previous: [f64; 3],
    pub status: ParticleStatus,
    /// First-hit or absorption time.
    pub time: Option<f64>,
    /// First-hit or absorption place.
    pub place: Option<[f64; 3]>,
    /// Accumulated `int 2 W(Q(t)) dt`.
    pub survival_integral: f64,
    /// Uniform threshold `Xi` in `(0, 1]`.
    pub threshold: f64,
}

impl Particle {
    pub fn is_alive(&self) -> bool {
        self.status == ParticleStatus::Alive
    }
}

/// Terminal event of one particle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrivalRecord {
    pub particle_id: usize,
    pub time: f64,
    pub place: [f64; 3],
    pub status: ParticleStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryEnsemble {
    pub particles: Vec<Particle>,
    pub guidance: CurrentKind,
    pub seed: u64,
}

impl TrajectoryEnsemble {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn alive_positions(&self) -> Vec<[f64; 3]> {
        self.particles.iter().filter(|p| p.is_alive()).map(|p| p.position).collect()
    }

    pub fn count(&self, status: ParticleStatus) -> usize {
        self.particles.iter().filter(|p| p.status == status).count()
    }

    /// Terminal times of particles with the given status.
    pub fn times(&self, status: ParticleStatus) -> Vec<f64> {
        self.particles
            .iter()
            .filter(|p| p.status == status)
            .filter_map(|p| p.time)
            .collect()
    }
}

/// Region in which initial positions are drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingBounds {
    pub lower: [f64; 3],
    pub upper: [f64; 3],
    pub center: [f64; 2],
    /// Minimum distance kept from every face.
    pub offset: f64,
}

impl SamplingBounds {
    pub fn from_grid(grid: &GridSpec) -> Self {
        Self {
            lower: [0.0; 3],
            upper: [grid.last_node(Axis::X), grid.last_node(Axis::Y), grid.last_node(Axis::Z)],
            center: grid.trap_center(),
            offset: 0.5 * grid.h_min(),
        }
    }

    /// Unbounded transverse plane centred on the origin above a line of
    /// `nz` nodes with spacing `hz`.
    pub fn line(nz: usize, hz: f64) -> Self {
        Self {
            lower: [f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0],
            upper: [f64::INFINITY, f64::INFINITY, (nz - 1) as f64 * hz],
            center: [0.0, 0.0],
            offset: 0.5 * hz,
        }
    }

    fn inside(&self, axis: usize, v: f64) -> bool {
        v >= self.lower[axis] + self.offset && v <= self.upper[axis] - self.offset
    }
}

/// Random stream of one particle, independent of ensemble iteration order.
pub fn particle_rng(seed: u64, id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id as u64);
    rng
}

/// Draw `n` initial positions from the initial Born density.
pub fn sample_initial(
    n: usize,
    grid: &GridSpec,
    physics: &PhysicsConfig,
    guidance: CurrentKind,
    seed: u64,
) -> Result<TrajectoryEnsemble, BohmianError> {
    sample_initial_in(n, &SamplingBounds::from_grid(grid), physics.omega, guidance, seed)
}

/// [`sample_initial`] over explicit bounds.
///
/// Transverse coordinates are normal with variance `1/(2 omega)` about the
/// trap axis; draws outside the bounds are redrawn. The longitudinal
/// coordinate follows `2 sin^2(pi z)` on the slab by accept-reject.
pub fn sample_initial_in(
    n: usize,
    bounds: &SamplingBounds,
    omega: f64,
    guidance: CurrentKind,
    seed: u64,
) -> Result<TrajectoryEnsemble, BohmianError> {
    if n == 0 {
        return Err(BohmianError::Config("ensemble size must be at least 1".into()));
    }
    if !(omega > 0.0 && omega.is_finite()) {
        return Err(BohmianError::Config(format!("Born sampling needs omega > 0, got {omega}")));
    }
    for a in 0..3 {
        if bounds.upper[a] - bounds.lower[a] <= 2.0 * bounds.offset {
            return Err(BohmianError::Config("sampling box is thinner than its face offset".into()));
        }
    }
    let sd = (0.5 / omega).sqrt();
    let normals = [
        Normal::new(bounds.center[0], sd).map_err(|e| BohmianError::Config(e.to_string()))?,
        Normal::new(bounds.center[1], sd).map_err(|e| BohmianError::Config(e.to_string()))?,
    ];
    let particles = (0..n)
        .map(|id| {
            let mut rng = particle_rng(seed, id);
            let mut q = [0.0; 3];
            for a in 0..2 {
                q[a] = loop {
                    let v = normals[a].sample(&mut rng);
                    if bounds.inside(a, v) {
                        break v;
                    }
                };
            }
            q[2] = loop {
                let u: f64 = rng.random::<f64>() * SLAB_WIDTH;
                let r: f64 = 2.0 * rng.random::<f64>();
                if r < 2.0 * (PI * u / SLAB_WIDTH).sin().powi(2) && bounds.inside(2, u) {
                    break u;
                }
            };
            let threshold = 1.0 - rng.random::<f64>();
            Particle {
                position: q,
                previous: q,
                status: ParticleStatus::Alive,
                time: None,
                place: None,
                survival_integral: 0.0,
                threshold,
            }
        })
        .collect();
    Ok(TrajectoryEnsemble {
        particles,
        guidance,
        seed,
    })
}

/// Guidance velocity `v = j / max(rho, floor)` at arbitrary positions.
pub trait VelocityField {
    fn velocity(&self, q: [f64; 3]) -> Result<[f64; 3], BohmianError>;
    /// Smallest lattice spacing, for the step cap.
    fn h_min(&self) -> f64;
    /// Longitudinal spacing, for the near-roof sub-stepping rule.
    fn hz(&self) -> f64;
    /// Project a position back into the node-covered region.
    fn clamp(&self, q: [f64; 3]) -> [f64; 3];
}

/// Nodal density and current of a full 3D field, trilinearly interpolated.
#[derive(Debug, Clone)]
pub struct GuidanceField {
    grid: GridSpec,
    rho: Vec<f64>,
    j: [Vec<f64>; 3],
    floor: f64,
}

impl GuidanceField {
    pub fn new(psi: &SpinorField, kind: CurrentKind) -> Result<Self, BohmianError> {
        let rho = psi.density();
        let rho_max = rho.iter().copied().fold(0.0, f64::max);
        let j = current(psi, kind)?.j;
        Ok(Self {
            grid: *psi.grid(),
            rho,
            j,
            floor: FLOOR_FRACTION * rho_max,
        })
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }
}

impl VelocityField for GuidanceField {
    fn velocity(&self, q: [f64; 3]) -> Result<[f64; 3], BohmianError> {
        let st = self.grid.locate(q)?;
        let rho = st.interpolate(&self.grid, &self.rho).max(self.floor);
        if rho <= 0.0 {
            return Ok([0.0; 3]);
        }
        Ok([
            st.interpolate(&self.grid, &self.j[0]) / rho,
            st.interpolate(&self.grid, &self.j[1]) / rho,
            st.interpolate(&self.grid, &self.j[2]) / rho,
        ])
    }
    fn h_min(&self) -> f64 {
        self.grid.h_min()
    }
    fn hz(&self) -> f64 {
        self.grid.hz()
    }
    fn clamp(&self, q: [f64; 3]) -> [f64; 3] {
        self.grid.clamp_to_nodes(q)
    }
}

/// Guidance velocity of `psi` at `q`.
pub fn velocity_at(q: [f64; 3], psi: &SpinorField, kind: CurrentKind) -> Result<[f64; 3], BohmianError> {
    GuidanceField::new(psi, kind)?.velocity(q)
}

/// Velocity field of a product state `|chi> g(x, y) psi(z)` with the exact
/// transverse ground state `g`.
///
/// Only the longitudinal profile is sampled on a grid. With a spin vector
/// `s` the curl term of the Pauli current is `-(1/2) s x grad rho`.
#[derive(Debug, Clone)]
pub struct FactorizedGuidance {
    hz: f64,
    rho_z: Vec<f64>,
    jz_z: Vec<f64>,
    drho_z: Vec<f64>,
    omega: f64,
    center: [f64; 2],
    spin: Option<[f64; 3]>,
    floor: f64,
}

impl FactorizedGuidance {
    pub fn new(psi_z: &[Complex64], hz: f64, omega: f64, center: [f64; 2], spin: Option<[f64; 3]>) -> Self {
        let n = psi_z.len();
        let deriv = |f: &dyn Fn(usize) -> Complex64, k: usize| -> Complex64 {
            if k == 0 {
                (f(1) - f(0)) / hz
            } else if k == n - 1 {
                (f(n - 1) - f(n - 2)) / hz
            } else {
                (f(k + 1) - f(k - 1)) / (2.0 * hz)
            }
        };
        let psi = |k: usize| psi_z[k];
        let rho_z: Vec<f64> = psi_z.iter().map(|c| c.norm_sqr()).collect();
        let rho_c = |k: usize| Complex64::new(rho_z[k], 0.0);
        let jz_z = (0..n).map(|k| (psi_z[k].conj() * deriv(&psi, k)).im).collect();
        let drho_z = (0..n).map(|k| deriv(&rho_c, k).re).collect();
        let rho_max = omega / PI * rho_z.iter().copied().fold(0.0, f64::max);
        Self {
            hz,
            rho_z,
            jz_z,
            drho_z,
            omega,
            center,
            spin,
            floor: FLOOR_FRACTION * rho_max,
        }
    }

    fn last(&self) -> f64 {
        (self.rho_z.len() - 1) as f64 * self.hz
    }

    fn interp(&self, f: &[f64], z: f64) -> f64 {
        let s = (z / self.hz).clamp(0.0, (f.len() - 1) as f64);
        let b = (s.floor() as usize).min(f.len() - 2);
        let t = s - b as f64;
        f[b] * (1.0 - t) + f[b + 1] * t
    }
}

impl VelocityField for FactorizedGuidance {
    fn velocity(&self, q: [f64; 3]) -> Result<[f64; 3], BohmianError> {
        let z = q[2];
        if !(z >= -self.hz && z <= self.last() + self.hz) {
            return Err(GridError::OutOfDomain(q).into());
        }
        let (dx, dy) = (q[0] - self.center[0], q[1] - self.center[1]);
        let g2 = self.omega / PI * (-self.omega * (dx * dx + dy * dy)).exp();
        let rz = self.interp(&self.rho_z, z);
        let rho = (g2 * rz).max(self.floor);
        if rho <= 0.0 {
            return Ok([0.0; 3]);
        }
        let mut j = [0.0, 0.0, g2 * self.interp(&self.jz_z, z)];
        if let Some(s) = self.spin {
            let grad = [
                -2.0 * self.omega * dx * g2 * rz,
                -2.0 * self.omega * dy * g2 * rz,
                g2 * self.interp(&self.drho_z, z),
            ];
            let sxg = [
                s[1] * grad[2] - s[2] * grad[1],
                s[2] * grad[0] - s[0] * grad[2],
                s[0] * grad[1] - s[1] * grad[0],
            ];
            for a in 0..3 {
                j[a] -= 0.5 * sxg[a];
            }
        }
        Ok([j[0] / rho, j[1] / rho, j[2] / rho])
    }
    fn h_min(&self) -> f64 {
        self.hz
    }
    fn hz(&self) -> f64 {
        self.hz
    }
    fn clamp(&self, q: [f64; 3]) -> [f64; 3] {
        [q[0], q[1], q[2].clamp(0.0, self.last())]
    }
}

/// Scale `k` down to speed `v_max` if it is faster.
pub fn cap_speed(k: [f64; 3], v_max: f64) -> [f64; 3] {
    let s = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).sqrt();
    if s <= v_max {
        k
    } else {
        let f = v_max / s;
        [k[0] * f, k[1] * f, k[2] * f]
    }
}

/// One explicit midpoint step with per-stage speed caps.
pub fn rk2_step<F: VelocityField + ?Sized>(field: &F, q: [f64; 3], dt: f64, cfl: f64) -> Result<[f64; 3], BohmianError> {
    let h = field.h_min();
    let k1 = cap_speed(field.velocity(q)?, cfl * h / (0.5 * dt));
    let mid = [q[0] + 0.5 * dt * k1[0], q[1] + 0.5 * dt * k1[1], q[2] + 0.5 * dt * k1[2]];
    let k2 = cap_speed(field.velocity(mid)?, cfl * h / dt);
    Ok([q[0] + dt * k2[0], q[1] + dt * k2[1], q[2] + dt * k2[2]])
}

/// Advance every alive particle by one RK2 step.
pub fn rk2_advance<F: VelocityField + ?Sized>(
    ensemble: &mut TrajectoryEnsemble,
    field: &F,
    dt: f64,
    cfl: f64,
) -> Result<(), BohmianError> {
    for p in ensemble.particles.iter_mut().filter(|p| p.is_alive()) {
        p.previous = p.position;
        p.position = rk2_step(field, p.position, dt, cfl)?;
    }
    Ok(())
}

/// Record the crossing of the plane `z = plane` along the latest segment.
fn first_hit(p: &mut Particle, id: usize, plane: f64, t: f64, dt: f64) -> Option<ArrivalRecord> {
    let (z0, z1) = (p.previous[2], p.position[2]);
    if !(p.is_alive() && z0 < plane && z1 >= plane) {
        return None;
    }
    let m = (plane - z0) / (z1 - z0);
    let mut hit = [0.0; 3];
    for a in 0..3 {
        hit[a] = p.previous[a] + m * (p.position[a] - p.previous[a]);
    }
    hit[2] = plane;
    let tau = t + m * dt;
    p.status = ParticleStatus::Arrived;
    p.time = Some(tau);
    p.place = Some(hit);
    p.position = hit;
    Some(ArrivalRecord {
        particle_id: id,
        time: tau,
        place: hit,
        status: ParticleStatus::Arrived,
    })
}

/// First crossings of the counting plane during `[t, t + dt]`.
pub fn detect_first_hit(ensemble: &mut TrajectoryEnsemble, plane: f64, t: f64, dt: f64) -> Vec<ArrivalRecord> {
    ensemble
        .particles
        .iter_mut()
        .enumerate()
        .filter_map(|(id, p)| first_hit(p, id, plane, t, dt))
        .collect()
}

/// Accumulate the absorption exponent along the latest segment and absorb
/// the particle once it reaches `-ln Xi`.
fn absorb(p: &mut Particle, id: usize, cap: &CapModel, t: f64, dt: f64) -> Option<ArrivalRecord> {
    if !p.is_alive() {
        return None;
    }
    let z_mid = 0.5 * (p.previous[2] + p.position[2]);
    let inc = 2.0 * cap.strength(z_mid) * dt;
    let target = -p.threshold.ln();
    let before = p.survival_integral;
    p.survival_integral += inc;
    if p.survival_integral < target || inc <= 0.0 {
        return None;
    }
    let frac = ((target - before) / inc).clamp(0.0, 1.0);
    let time = t + frac * dt;
    p.status = ParticleStatus::Absorbed;
    p.time = Some(time);
    p.place = Some(p.position);
    Some(ArrivalRecord {
        particle_id: id,
        time,
        place: p.position,
        status: ParticleStatus::Absorbed,
    })
}

/// Survival-threshold absorption during `[t, t + dt]`.
pub fn cap_terminate(ensemble: &mut TrajectoryEnsemble, cap: &CapModel, t: f64, dt: f64) -> Vec<ArrivalRecord> {
    ensemble
        .particles
        .iter_mut()
        .enumerate()
        .filter_map(|(id, p)| absorb(p, id, cap, t, dt))
        .collect()
}

/// How particles end.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Termination {
    /// First crossing of the plane `z = plane`.
    FirstHit { plane: f64 },
    /// Survival-threshold absorption in a CAP.
    Absorption(CapModel),
    /// No termination; particles only move.
    None,
}

/// Field snapshot used to guide particles over a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldChoice {
    #[default]
    PostStep,
    PreStep,
}

/// Alive positions recorded at a checkpoint time.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub time: f64,
    pub positions: Vec<[f64; 3]>,
}

/// Sampled trajectory point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub particle_id: usize,
    pub time: f64,
    pub position: [f64; 3],
}

/// Moves an ensemble through a sequence of field snapshots.
#[derive(Debug, Clone)]
pub struct TrajectoryDriver {
    pub ensemble: TrajectoryEnsemble,
    pub termination: Termination,
    pub cfl: f64,
    pub records: Vec<ArrivalRecord>,
    pub checkpoints: Vec<Checkpoint>,
    pending_checkpoints: Vec<f64>,
    trace_every: usize,
    trace_particles: usize,
    pub trace: Vec<TracePoint>,
    steps: usize,
}

impl TrajectoryDriver {
    pub fn new(ensemble: TrajectoryEnsemble, termination: Termination, cfl: f64) -> Result<Self, BohmianError> {
        if !(cfl > 0.0 && cfl < 1.0) {
            return Err(BohmianError::Config(format!("cfl must lie in (0, 1), got {cfl}")));
        }
        Ok(Self {
            ensemble,
            termination,
            cfl,
            records: Vec::new(),
            checkpoints: Vec::new(),
            pending_checkpoints: Vec::new(),
            trace_every: 0,
            trace_particles: 0,
            trace: Vec::new(),
            steps: 0,
        })
    }

    /// Record alive positions when the clock first reaches each time.
    pub fn with_checkpoints(mut self, mut times: Vec<f64>) -> Self {
        times.sort_by(f64::total_cmp);
        self.pending_checkpoints = times;
        self.take_checkpoints(0.0, 0.0);
        self
    }

    /// Record the first `particles` trajectories every `every` steps.
    pub fn with_trace(mut self, every: usize, particles: usize) -> Self {
        self.trace_every = every;
        self.trace_particles = particles;
        self.record_trace(0.0);
        self
    }

    fn take_checkpoints(&mut self, now: f64, dt: f64) {
        while let Some(&t) = self.pending_checkpoints.first() {
            if t > now + 0.5 * dt {
                break;
            }
            self.pending_checkpoints.remove(0);
            self.checkpoints.push(Checkpoint {
                time: now,
                positions: self.ensemble.alive_positions(),
            });
        }
    }

    fn record_trace(&mut self, now: f64) {
        if self.trace_every == 0 || self.steps % self.trace_every != 0 {
            return;
        }
        for (id, p) in self.ensemble.particles.iter().enumerate().take(self.trace_particles) {
            if p.is_alive() {
                self.trace.push(TracePoint {
                    particle_id: id,
                    time: now,
                    position: p.position,
                });
            }
        }
    }

    /// Move all alive particles over `[t, t + dt]` in `field`.
    pub fn advance<F: VelocityField + ?Sized>(&mut self, field: &F, t: f64, dt: f64) -> Result<(), BohmianError> {
        let cfl = self.cfl;
        let hz = field.hz();
        for (id, p) in self.ensemble.particles.iter_mut().enumerate() {
            if !p.is_alive() {
                continue;
            }
            match self.termination {
                Termination::FirstHit { plane } => {
                    let parts = if plane - p.position[2] < 2.0 * hz { 2 } else { 1 };
                    let sub = dt / parts as f64;
                    for s in 0..parts {
                        p.previous = p.position;
                        p.position = rk2_step(field, p.position, sub, cfl)?;
                        let t_sub = t + s as f64 * sub;
                        if let Some(r) = first_hit(p, id, plane, t_sub, sub) {
                            self.records.push(r);
                            break;
                        }
                        p.position = field.clamp(p.position);
                    }
                }
                Termination::Absorption(cap) => {
                    p.previous = p.position;
                    p.position = rk2_step(field, p.position, dt, cfl)?;
                    if let Some(r) = absorb(p, id, &cap, t, dt) {
                        self.records.push(r);
                    }
                    p.position = field.clamp(p.position);
                }
                Termination::None => {
                    p.previous = p.position;
                    p.position = field.clamp(rk2_step(field, p.position, dt, cfl)?);
                }
            }
        }
        self.steps += 1;
        self.take_checkpoints(t + dt, dt);
        self.record_trace(t + dt);
        Ok(())
    }

    /// Mark every particle still alive as timed out.
    pub fn finalize(&mut self) {
        for p in self.ensemble.particles.iter_mut() {
            if p.is_alive() {
                p.status = ParticleStatus::TimedOut;
            }
        }
    }
}

/// Advances a [`TrajectoryDriver`] alongside a 3D propagation.
pub struct BohmianObserver {
    pub driver: TrajectoryDriver,
    pub kind: CurrentKind,
    pub field_choice: FieldChoice,
    /// RK2 steps per field step.
    pub substeps: usize,
}

impl BohmianObserver {
    pub fn new(driver: TrajectoryDriver, kind: CurrentKind, field_choice: FieldChoice) -> Self {
        Self {
            driver,
            kind,
            field_choice,
            substeps: 1,
        }
    }

    pub fn with_substeps(mut self, substeps: usize) -> Self {
        self.substeps = substeps.max(1);
        self
    }
}

impl Observer for BohmianObserver {
    fn observe(&mut self, _: usize, t: f64, dt: f64, before: &SpinorField, after: &SpinorField) -> Result<(), ObserverError> {
        let psi = match self.field_choice {
            FieldChoice::PostStep => after,
            FieldChoice::PreStep => before,
        };
        let field = GuidanceField::new(psi, self.kind)?;
        let h = dt / self.substeps as f64;
        for i in 0..self.substeps {
            self.driver.advance(&field, t + i as f64 * h, h)?;
        }
        Ok(())
    }

    fn finish(&mut self, _complete: bool) -> Result<(), ObserverError> {
        self.driver.finalize();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Uniform([f64; 3], f64);

    impl VelocityField for Uniform {
        fn velocity(&self, _: [f64; 3]) -> Result<[f64; 3], BohmianError> {
            Ok(self.0)
        }
        fn h_min(&self) -> f64 {
            self.1
        }
        fn hz(&self) -> f64 {
            self.1
        }
        fn clamp(&self, q: [f64; 3]) -> [f64; 3] {
            q
        }
    }

    fn one_particle(z: f64) -> TrajectoryEnsemble {
        TrajectoryEnsemble {
            particles: vec![Particle {
                position: [0.0, 0.0, z],
                previous: [0.0, 0.0, z],
                status: ParticleStatus::Alive,
                time: None,
                place: None,
                survival_integral: 0.0,
                threshold: 0.25,
            }],
            guidance: CurrentKind::Convective,
            seed: 0,
        }
    }

    #[test]
    fn constant_field_step_is_exact() {
        let f = Uniform([0.1, -0.2, 0.3], 1.0);
        let q = rk2_step(&f, [1.0, 2.0, 3.0], 0.01, 0.8).unwrap();
        assert_eq!(q, [1.0 + 0.001, 2.0 - 0.002, 3.0 + 0.003]);
    }

    #[test]
    fn capped_displacement_is_bounded() {
        let f = Uniform([1e6, 0.0, 0.0], 0.1);
        let q = rk2_step(&f, [0.0; 3], 0.01, 0.8).unwrap();
        assert!(q[0] <= 1.5 * 0.8 * 0.1 + 1e-12);
    }

    #[test]
    fn first_hit_examples() {
        let mut e = one_particle(0.0);
        e.particles[0].previous[2] = 9.9;
        e.particles[0].position[2] = 10.1;
        let r = detect_first_hit(&mut e, 10.0, 2.0, 0.1);
        assert_eq!(r.len(), 1);
        assert!((r[0].time - 2.05).abs() < 1e-12);
        assert_eq!(r[0].place[2], 10.0);
        assert!(detect_first_hit(&mut e, 10.0, 2.0, 0.1).is_empty());

        let mut e = one_particle(0.0);
        e.particles[0].previous[2] = 9.9;
        e.particles[0].position[2] = 10.0;
        let r = detect_first_hit(&mut e, 10.0, 1.0, 0.1);
        assert!((r[0].time - 1.1).abs() < 1e-12);

        let mut e = one_particle(9.5);
        assert!(detect_first_hit(&mut e, 10.0, 1.0, 0.1).is_empty());
    }

    #[test]
    fn constant_absorber_inverts_survival() {
        let cap = CapModel::new(crate::model::CapProfile::Sharp, 1.0, 3.0, 10.0).unwrap();
        let mut e = one_particle(5.0);
        let dt = 0.01;
        let mut t = 0.0;
        let mut rec = Vec::new();
        while rec.is_empty() {
            rec = cap_terminate(&mut e, &cap, t, dt);
            t += dt;
        }
        let expect = -(0.25f64).ln() / (2.0 * 3.0);
        assert!((rec[0].time - expect).abs() < 1e-12);
    }

    #[test]
    fn sampling_is_deterministic_and_in_bounds() {
        let g = GridSpec::new([2.0, 2.0, 5.0], [10, 10, 50]).unwrap();
        let p = PhysicsConfig::scalar(20.0);
        let a = sample_initial(500, &g, &p, CurrentKind::Convective, 9).unwrap();
        let b = sample_initial(500, &g, &p, CurrentKind::Convective, 9).unwrap();
        assert_eq!(a, b);
        for q in a.alive_positions() {
            assert!(q[2] > 0.0 && q[2] < 1.0);
            assert!(q[0] >= 0.1 && q[0] <= 1.7);
        }
        assert!(sample_initial(0, &g, &p, CurrentKind::Convective, 9).is_err());
        assert!(sample_initial(1, &g, &PhysicsConfig::scalar(0.0), CurrentKind::Convective, 9).is_err());
    }
}
