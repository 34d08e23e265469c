//! Single runs.

use std::path::{Path, PathBuf};

use qdetect_core::bohmian::{
    sample_initial, BohmianObserver, Checkpoint, FactorizedGuidance, FieldChoice, Particle, ParticleStatus,
    Termination, TracePoint, TrajectoryDriver, TrajectoryEnsemble,
};
use qdetect_core::grid::GridSpec;
use qdetect_core::model::{initial_state, to_si, DetectorKind, DetectorModel, QuantityKind};
use qdetect_core::observables::{histogram, restricted_mean, DetectionSeries, Histogram, ModelDensityRecorder};
use qdetect_core::operators::assemble_hamiltonian;
use qdetect_core::propagator::{propagate, NormSeries, Observer, ObserverError};
use qdetect_core::reference::{
    evolve_1d, free_bohmian_arrivals, rho_free, FreeResolution, FreeTrajectorySettings, Line1DProblem,
    LineStep, ReferenceError, TopBoundary,
};
use serde::{Deserialize, Serialize};

use crate::config::{GeometryMode, Resolved, RunConfig};
use crate::error::CliError;
use crate::output::{
    write_arrivals, write_checkpoints, write_histogram, write_series, write_trace, SnapshotWriter, WallMonitor,
};

/// Summary document written as `summary.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub run: RunSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub si: Option<SiSummary>,
    /// Fully resolved configuration, sufficient to repeat the run.
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunSummary {
    /// `detector` for detector-model runs, `validation` for the free scenario.
    pub scenario: String,
    pub detector: String,
    pub geometry_mode: String,
    pub complete: bool,
    pub steps: usize,
    pub t_cutoff: f64,
    pub detection_fraction: f64,
    pub mu_star: f64,
    /// Restricted mean as the time integral of the survival probability.
    pub mu_star_survival: f64,
    pub dual_route_gap: f64,
    pub max_residual: f64,
    pub max_verified_residual: f64,
    pub max_wall_amplitude: f64,
    pub n_trajectories: usize,
    pub arrived: usize,
    pub absorbed: usize,
    pub timed_out: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_star_tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub box_length: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub far_wall_max: Option<f64>,
    #[serde(default)]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiSummary {
    pub mass_kg: f64,
    pub length_unit_m: f64,
    /// Time unit `m d^2 / hbar`.
    pub t_star_s: f64,
    pub t_cutoff_s: f64,
    pub mu_star_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_tau_s: Option<f64>,
    /// Trap angular frequency in rad/s.
    pub omega_si: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa_per_m: Option<f64>,
}

/// In-memory results of a run, alongside the files written.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: Summary,
    pub series: DetectionSeries,
    pub particles: Vec<Particle>,
    pub histogram: Option<Histogram>,
    pub checkpoints: Vec<Checkpoint>,
    pub directory: PathBuf,
}

/// Execute one configuration and write its artifacts.
pub fn run(config: &RunConfig) -> Result<RunOutcome, CliError> {
    let r = config.resolve()?;
    let dir = config.outputs.directory.clone();
    std::fs::create_dir_all(&dir)?;
    match (r.detector.kind(), config.geometry.mode) {
        (DetectorKind::Free, _) => run_free(config, &r, &dir),
        (_, GeometryMode::Full) => run_full(config, &r, &dir),
        (_, GeometryMode::Line) => run_line(config, &r, &dir),
    }
}

fn trajectory_driver(
    config: &RunConfig,
    r: &Resolved,
    ensemble: TrajectoryEnsemble,
) -> Result<TrajectoryDriver, CliError> {
    let termination = match r.detector {
        DetectorModel::Cap(cap) => Termination::Absorption(cap),
        _ => Termination::FirstHit {
            plane: r.grid.counting_plane(),
        },
    };
    let out = &config.outputs;
    Ok(TrajectoryDriver::new(ensemble, termination, config.numerics.cfl)
        .map_err(|e| CliError::Config(e.to_string()))?
        .with_checkpoints(out.checkpoint_times.clone())
        .with_trace(out.trace_every, out.trace_particles))
}

/// Everything needed to finish a run after the field evolution.
struct Evolution {
    norms: NormSeries,
    rho_model: Vec<f64>,
    steps: usize,
    max_residual: f64,
    max_verified_residual: f64,
    max_wall_amplitude: f64,
    driver: Option<TrajectoryDriver>,
    warnings: Vec<String>,
    failure: Option<String>,
}

fn run_full(config: &RunConfig, r: &Resolved, dir: &Path) -> Result<RunOutcome, CliError> {
    let init = initial_state(&r.grid, &r.physics, r.strictness).map_err(|e| CliError::Config(e.to_string()))?;
    let h = assemble_hamiltonian(&r.grid, &r.physics, &r.detector).map_err(|e| CliError::Config(e.to_string()))?;
    let mut recorder =
        ModelDensityRecorder::new(r.detector, &init.field).map_err(|e| CliError::Config(e.to_string()))?;
    let mut wall = WallMonitor {
        max: init.wall_amplitude,
    };
    let mut bohm = match r.guidance {
        Some(kind) => {
            let n = &config.numerics;
            let ensemble = sample_initial(n.n_trajectories, &r.grid, &r.physics, kind, n.seed)
                .map_err(|e| CliError::Config(e.to_string()))?;
            let driver = trajectory_driver(config, r, ensemble)?;
            Some(BohmianObserver::new(driver, kind, n.guidance_field).with_substeps(n.trajectory_substeps))
        }
        None => None,
    };
    let mut snaps = snapshot_writer(config, dir)?;

    let mut observers: Vec<&mut dyn Observer> = vec![&mut recorder, &mut wall];
    if let Some(b) = bohm.as_mut() {
        observers.push(b);
    }
    if let Some(s) = snaps.as_mut() {
        observers.push(s);
    }
    let result = propagate(&init.field, &h, &r.solver, config.numerics.t_cutoff, &mut observers);
    drop(observers);

    let mut evo = Evolution {
        norms: NormSeries::default(),
        rho_model: Vec::new(),
        steps: 0,
        max_residual: 0.0,
        max_verified_residual: 0.0,
        max_wall_amplitude: wall.max,
        driver: bohm.map(|b| b.driver),
        warnings: init.warnings,
        failure: None,
    };
    match result {
        Ok(p) => {
            evo.norms = p.norms;
            evo.steps = p.steps;
            evo.max_residual = p.max_residual;
            evo.max_verified_residual = p.max_verified_residual;
        }
        Err(f) => {
            evo.steps = f.step;
            evo.norms = f.partial;
            evo.failure = Some(f.error.to_string());
        }
    }
    evo.rho_model = recorder.values;
    finish(config, r, dir, evo)
}

fn snapshot_writer(config: &RunConfig, dir: &Path) -> Result<Option<SnapshotWriter>, CliError> {
    let out = &config.outputs;
    if out.snapshot_times.is_empty() {
        return Ok(None);
    }
    Ok(Some(SnapshotWriter::new(dir.join("snapshots"), out.snapshot_format, out.snapshot_times.clone())?))
}

/// Relative amplitude of the exact transverse ground state on the first
/// interior lateral layer.
fn analytic_wall_amplitude(grid: &GridSpec, omega: f64) -> f64 {
    let [cx, cy] = grid.trap_center();
    let d = (cx - grid.hx()).min(cy - grid.hy());
    (-0.5 * omega * d * d).exp()
}

fn run_line(config: &RunConfig, r: &Resolved, dir: &Path) -> Result<RunOutcome, CliError> {
    let g = &r.grid;
    let top = match r.detector {
        DetectorModel::SpinlessAbc { kappa } => TopBoundary::Robin { kappa },
        _ => TopBoundary::Dirichlet,
    };
    let problem = Line1DProblem::new(g.lz(), g.nz(), top, r.detector.cap().copied(), r.solver)
        .map_err(|e| CliError::Config(e.to_string()))?
        .with_solver(config.numerics.line_solver);

    let n = &config.numerics;
    let mut driver = match r.guidance {
        Some(kind) => {
            let ensemble = sample_initial(n.n_trajectories, g, &r.physics, kind, n.seed)
                .map_err(|e| CliError::Config(e.to_string()))?;
            Some(trajectory_driver(config, r, ensemble)?)
        }
        None => None,
    };
    let spin = match r.guidance {
        Some(qdetect_core::observables::CurrentKind::Pauli) => r.physics.spinor.map(|c| c.bloch_vector()),
        _ => None,
    };
    let mut snaps = snapshot_writer(config, dir)?;
    let (hz, omega, center) = (g.hz(), r.physics.omega, g.trap_center());
    let substeps = n.trajectory_substeps;
    let field_choice = n.guidance_field;

    let mut callback = |s: &LineStep<'_>| -> Result<(), ObserverError> {
        if let Some(d) = driver.as_mut() {
            let psi = match field_choice {
                FieldChoice::PostStep => s.after,
                FieldChoice::PreStep => s.before,
            };
            let field = FactorizedGuidance::new(psi, hz, omega, center, spin);
            let h = s.dt / substeps as f64;
            for i in 0..substeps {
                d.advance(&field, s.t + i as f64 * h, h)?;
            }
        }
        if let Some(w) = snaps.as_mut() {
            let density = |psi: &[qdetect_core::Complex64]| psi.iter().map(|c| c.norm_sqr()).collect::<Vec<_>>();
            if s.step == 0 {
                w.offer(s.t, s.dt, || density(s.before), |k| [center[0], center[1], k as f64 * hz])?;
            }
            w.offer(s.t + s.dt, s.dt, || density(s.after), |k| [center[0], center[1], k as f64 * hz])?;
        }
        Ok(())
    };
    let result = evolve_1d(&problem, n.t_cutoff, None, Some(&mut callback));
    if let Some(d) = driver.as_mut() {
        d.finalize();
    }

    let mut evo = Evolution {
        norms: NormSeries::default(),
        rho_model: Vec::new(),
        steps: 0,
        max_residual: 0.0,
        max_verified_residual: 0.0,
        max_wall_amplitude: analytic_wall_amplitude(g, omega),
        driver,
        warnings: Vec::new(),
        failure: None,
    };
    match result {
        Ok(e) => {
            evo.steps = e.steps;
            evo.max_residual = e.max_residual;
            evo.max_verified_residual = e.max_residual;
            evo.norms = e.norms;
            evo.rho_model = e.rho_model;
        }
        Err(ReferenceError::Propagator { step, source, partial }) => {
            evo.steps = step;
            evo.failure = Some(source.to_string());
            // the model density is recomputable only for stored states; keep the norm record
            evo.rho_model = vec![f64::NAN; partial.len()];
            evo.norms = partial;
        }
        Err(e) => return Err(CliError::Config(e.to_string())),
    }
    finish(config, r, dir, evo)
}

fn trajectory_stats(particles: &[Particle], t_cutoff: f64) -> (Option<f64>, Option<f64>, Option<f64>) {
    if particles.is_empty() {
        return (None, None, None);
    }
    let terminal: Vec<f64> = particles
        .iter()
        .filter(|p| matches!(p.status, ParticleStatus::Arrived | ParticleStatus::Absorbed))
        .filter_map(|p| p.time)
        .collect();
    let mean = (!terminal.is_empty()).then(|| terminal.iter().sum::<f64>() / terminal.len() as f64);
    let restricted = particles
        .iter()
        .map(|p| p.time.map_or(t_cutoff, |t| t.min(t_cutoff)))
        .sum::<f64>()
        / particles.len() as f64;
    let max = terminal.iter().copied().fold(None, |m: Option<f64>, t| Some(m.map_or(t, |m| m.max(t))));
    (mean, Some(restricted), max)
}

fn si_summary(config: &RunConfig, r: &Resolved, run: &RunSummary) -> Result<Option<SiSummary>, CliError> {
    let Some(si) = &config.si else {
        return Ok(None);
    };
    let m = si.mass_kg()?;
    let d = si.d_phys;
    let conv = |v: f64, k: QuantityKind| to_si(v, k, d, m).map_err(|e| CliError::Config(e.to_string()));
    Ok(Some(SiSummary {
        mass_kg: m,
        length_unit_m: conv(1.0, QuantityKind::Length)?,
        t_star_s: conv(1.0, QuantityKind::Time)?,
        t_cutoff_s: conv(config.numerics.t_cutoff, QuantityKind::Time)?,
        mu_star_s: conv(run.mu_star, QuantityKind::Time)?,
        mean_tau_s: run.mean_tau.map(|t| conv(t, QuantityKind::Time)).transpose()?,
        omega_si: conv(r.physics.omega, QuantityKind::Frequency)?,
        kappa_per_m: r.detector.kappa().map(|k| conv(k, QuantityKind::Kappa)).transpose()?,
    }))
}

fn finish(config: &RunConfig, r: &Resolved, dir: &Path, evo: Evolution) -> Result<RunOutcome, CliError> {
    let tc = config.numerics.t_cutoff;
    let mut rho_model = evo.rho_model;
    rho_model.resize(evo.norms.len(), f64::NAN);
    let series = DetectionSeries::new(&evo.norms, rho_model).map_err(|e| CliError::Solver(e.to_string()))?;
    write_series(&dir.join("series.csv"), &series, None)?;

    let (particles, checkpoints, trace): (Vec<Particle>, Vec<Checkpoint>, Vec<TracePoint>) = match evo.driver {
        Some(d) => (d.ensemble.particles, d.checkpoints, d.trace),
        None => (Vec::new(), Vec::new(), Vec::new()),
    };
    let mut hist = None;
    if !particles.is_empty() {
        write_arrivals(&dir.join("arrivals.csv"), &particles)?;
        let times: Vec<f64> = particles
            .iter()
            .filter(|p| matches!(p.status, ParticleStatus::Arrived | ParticleStatus::Absorbed))
            .filter_map(|p| p.time)
            .collect();
        let h = histogram(&times, particles.len(), config.outputs.histogram_bins, (0.0, tc))
            .map_err(|e| CliError::Config(e.to_string()))?;
        write_histogram(&dir.join("histogram.csv"), &h)?;
        hist = Some(h);
    }
    if !checkpoints.is_empty() {
        write_checkpoints(&dir.join("checkpoints.csv"), &checkpoints)?;
    }
    if !trace.is_empty() {
        write_trace(&dir.join("trajectories.csv"), &trace)?;
    }

    let (mean_tau, mu_star_tau, max_tau) = trajectory_stats(&particles, tc);
    let count = |s: ParticleStatus| particles.iter().filter(|p| p.status == s).count();
    let complete = evo.failure.is_none();
    let mut run = RunSummary {
        scenario: "detector".into(),
        detector: r.detector.kind().to_string(),
        geometry_mode: mode_name(config.geometry.mode).into(),
        complete,
        steps: evo.steps,
        t_cutoff: tc,
        detection_fraction: series.detection_fraction(),
        mu_star: series.mu_star(tc),
        mu_star_survival: series.mu_star_survival(tc),
        dual_route_gap: series.dual_route_gap(),
        max_residual: evo.max_residual,
        max_verified_residual: evo.max_verified_residual,
        max_wall_amplitude: evo.max_wall_amplitude,
        n_trajectories: particles.len(),
        arrived: count(ParticleStatus::Arrived),
        absorbed: count(ParticleStatus::Absorbed),
        timed_out: count(ParticleStatus::TimedOut),
        mean_tau,
        mu_star_tau,
        max_tau,
        box_length: None,
        far_wall_max: None,
        warnings: evo.warnings,
        error: evo.failure.clone(),
    };
    if !complete {
        // the partial series does not reach the cutoff
        run.mu_star = f64::NAN;
        run.mu_star_survival = f64::NAN;
    }
    let summary = Summary {
        si: si_summary(config, r, &run)?,
        run,
        config: config.clone(),
    };
    write_summary(dir, &summary)?;
    if let Some(msg) = evo.failure {
        return Err(CliError::Solver(format!("{msg}; partial artifacts in {}", dir.display())));
    }
    Ok(RunOutcome {
        summary,
        series,
        particles,
        histogram: hist,
        checkpoints,
        directory: dir.to_path_buf(),
    })
}

fn mode_name(m: GeometryMode) -> &'static str {
    match m {
        GeometryMode::Full => "full",
        GeometryMode::Line => "line",
    }
}

pub fn write_summary(dir: &Path, summary: &Summary) -> Result<(), CliError> {
    let text = toml::to_string(summary).map_err(|e| CliError::Config(e.to_string()))?;
    std::fs::write(dir.join("summary.toml"), text)?;
    Ok(())
}

pub fn read_summary(dir: &Path) -> Result<Summary, CliError> {
    let text = std::fs::read_to_string(dir.join("summary.toml"))?;
    toml::from_str(&text).map_err(|e| CliError::Config(e.to_string()))
}

/// Free comparison curve and, when trajectories are requested, the free
/// Pauli-guided arrivals. A validation scenario, not a detector model.
fn run_free(config: &RunConfig, r: &Resolved, dir: &Path) -> Result<RunOutcome, CliError> {
    let g = &r.grid;
    let n = &config.numerics;
    let probe = config.detector.probe.unwrap_or(g.counting_plane());
    let res = FreeResolution {
        hz: g.hz(),
        dt: n.dt,
        rel_tol: n.rel_tol,
        solver: n.line_solver,
        max_group_velocity: config.detector.max_group_velocity,
        ..FreeResolution::default()
    };
    let map_err = |e: ReferenceError| match e {
        ReferenceError::OracleInvalid { .. } => CliError::OracleInvalid(e.to_string()),
        ReferenceError::Propagator { .. } => CliError::Solver(e.to_string()),
        other => CliError::Config(other.to_string()),
    };
    let (curve, arrivals) = if n.n_trajectories > 0 {
        let settings = FreeTrajectorySettings {
            n: n.n_trajectories,
            seed: n.seed,
            cfl: n.cfl,
            substeps: n.trajectory_substeps,
        };
        let theta = r.physics.spinor.map_or(0.0, |c| c.theta);
        let a = free_bohmian_arrivals(probe, theta, r.physics.omega, n.t_cutoff, &res, &settings).map_err(map_err)?;
        (a.curve.clone(), Some(a))
    } else {
        (rho_free(probe, n.t_cutoff, &res).map_err(map_err)?, None)
    };

    let mut acc = 0.0;
    let below: Vec<f64> = (0..curve.times.len())
        .map(|i| {
            if i > 0 {
                acc += 0.5 * (curve.loss[i - 1] + curve.loss[i]) * (curve.times[i] - curve.times[i - 1]);
            }
            1.0 - acc
        })
        .collect();
    let series = DetectionSeries {
        times: curve.times.clone(),
        norm_sq: below.clone(),
        rho_normloss: curve.loss.clone(),
        rho_model: curve.flux.clone(),
        cum_fraction: below.iter().map(|b| 1.0 - b).collect(),
    };
    write_series(&dir.join("series.csv"), &series, Some("free"))?;

    let mut particles = Vec::new();
    let mut run = RunSummary {
        scenario: "validation".into(),
        detector: "free".into(),
        geometry_mode: "line".into(),
        complete: true,
        steps: curve.times.len() - 1,
        t_cutoff: n.t_cutoff,
        detection_fraction: series.detection_fraction(),
        mu_star: restricted_mean(&curve.times, &curve.flux, n.t_cutoff),
        mu_star_survival: series.mu_star_survival(n.t_cutoff),
        dual_route_gap: curve.route_gap(),
        max_wall_amplitude: analytic_wall_amplitude(g, r.physics.omega),
        box_length: Some(curve.box_length),
        far_wall_max: Some(curve.far_wall_max),
        ..RunSummary::default()
    };
    let mut hist = None;
    if let Some(a) = arrivals {
        particles = vec![None; a.ensemble_size];
        for rec in &a.records {
            particles[rec.particle_id] = Some(*rec);
        }
        let mut w = csv::Writer::from_path(dir.join("arrivals.csv"))?;
        w.write_record(["particle_id", "tau", "x", "y", "z", "status"])?;
        for (id, rec) in particles.iter().enumerate() {
            match rec {
                Some(r) => w.write_record([
                    id.to_string(),
                    format!("{:.12e}", r.time),
                    format!("{:.12e}", r.place[0]),
                    format!("{:.12e}", r.place[1]),
                    format!("{:.12e}", r.place[2]),
                    "arrived".into(),
                ])?,
                None => {
                    let mut row = vec![id.to_string()];
                    row.extend(std::iter::repeat_n(String::new(), 4));
                    row.push("timed_out".into());
                    w.write_record(row)?
                }
            }
        }
        w.flush()?;
        let taus = a.taus();
        let h = histogram(&taus, a.ensemble_size, config.outputs.histogram_bins, (0.0, n.t_cutoff))
            .map_err(|e| CliError::Config(e.to_string()))?;
        write_histogram(&dir.join("histogram.csv"), &h)?;
        hist = Some(h);
        run.n_trajectories = a.ensemble_size;
        run.arrived = taus.len();
        run.timed_out = a.ensemble_size - taus.len();
        run.mean_tau = (!taus.is_empty()).then(|| taus.iter().sum::<f64>() / taus.len() as f64);
        run.mu_star_tau = Some(
            (taus.iter().map(|t| t.min(n.t_cutoff)).sum::<f64>() + run.timed_out as f64 * n.t_cutoff)
                / a.ensemble_size as f64,
        );
        run.max_tau = a.max_tau;
    }
    let summary = Summary {
        si: si_summary(config, r, &run)?,
        run,
        config: config.clone(),
    };
    write_summary(dir, &summary)?;
    let particles = particles
        .into_iter()
        .map(|rec| match rec {
            Some(r) => Particle {
                position: r.place,
                previous: r.place,
                status: ParticleStatus::Arrived,
                time: Some(r.time),
                place: Some(r.place),
                survival_integral: 0.0,
                threshold: 1.0,
            },
            None => Particle {
                position: [f64::NAN; 3],
                previous: [f64::NAN; 3],
                status: ParticleStatus::TimedOut,
                time: None,
                place: None,
                survival_integral: 0.0,
                threshold: 1.0,
            },
        })
        .collect();
    Ok(RunOutcome {
        summary,
        series,
        particles,
        histogram: hist,
        checkpoints: Vec::new(),
        directory: dir.to_path_buf(),
    })
}
