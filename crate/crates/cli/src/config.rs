//! Run configuration, read from TOML.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use qdetect_core::bohmian::{FieldChoice, DEFAULT_CFL};
use qdetect_core::grid::{GridSpec, SpinMode};
use qdetect_core::model::{
    BlochSpinor, CapModel, CapProfile, DetectorKind, DetectorModel, PhysicsConfig, Strictness, RB87_MASS_KG,
};
use qdetect_core::observables::CurrentKind;
use qdetect_core::propagator::SolverConfig;
use qdetect_core::reference::LineSolver;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: Geometry,
    pub physics: Physics,
    pub detector: DetectorSection,
    pub numerics: Numerics,
    #[serde(default)]
    pub outputs: Outputs,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub si: Option<SiSection>,
}

/// Whether to evolve the full box or only the longitudinal line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryMode {
    #[default]
    Full,
    /// Longitudinal line with the exact transverse ground state; valid for
    /// detectors that do not couple to the transverse motion.
    Line,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    #[serde(rename = "Lx")]
    pub lx: f64,
    #[serde(rename = "Ly")]
    pub ly: f64,
    #[serde(rename = "Lz")]
    pub lz: f64,
    #[serde(rename = "Nx")]
    pub nx: usize,
    #[serde(rename = "Ny")]
    pub ny: usize,
    #[serde(rename = "Nz")]
    pub nz: usize,
    #[serde(default)]
    pub mode: GeometryMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Physics {
    pub omega: f64,
    #[serde(default = "scalar_mode")]
    pub spin_mode: SpinMode,
    #[serde(default)]
    pub theta: f64,
    #[serde(default)]
    pub phi: f64,
}

fn scalar_mode() -> SpinMode {
    SpinMode::Scalar
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileName {
    Tanh,
    Sharp,
    CubicRamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSection {
    pub kind: DetectorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<ProfileName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_max: Option<f64>,
    /// Probe height of the free comparison run; defaults to the counting plane.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<f64>,
    /// Speed used to size the free box; defaults to the grid speed `1/hz`.
    /// The far-wall check still rejects a box that turns out too short.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_group_velocity: Option<f64>,
}

/// Current used to guide trajectories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceChoice {
    /// Convective for spin-blind detectors, Pauli for the spinor roof.
    #[default]
    Matched,
    Convective,
    Pauli,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Numerics {
    pub dt: f64,
    pub t_cutoff: f64,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_restart")]
    pub restart: usize,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub jacobi: bool,
    #[serde(default = "default_cfl")]
    pub cfl: f64,
    #[serde(default)]
    pub n_trajectories: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub guidance: GuidanceChoice,
    #[serde(default)]
    pub guidance_field: FieldChoice,
    /// RK2 steps per field step.
    #[serde(default = "default_substeps")]
    pub trajectory_substeps: usize,
    #[serde(default)]
    pub line_solver: LineSolver,
    #[serde(default)]
    pub strict: bool,
}

fn default_rel_tol() -> f64 {
    1e-8
}
fn default_restart() -> usize {
    30
}
fn default_max_iter() -> usize {
    1000
}
fn default_cfl() -> f64 {
    DEFAULT_CFL
}
fn default_seed() -> u64 {
    1
}
fn default_substeps() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotFormat {
    #[default]
    Csv,
    /// Little-endian `f64` densities in flat-index order.
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(default = "default_directory")]
    pub directory: PathBuf,
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    #[serde(default)]
    pub snapshot_format: SnapshotFormat,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
    /// Times at which alive trajectory positions are written.
    #[serde(default)]
    pub checkpoint_times: Vec<f64>,
    /// Record trajectories every this many steps (0 disables).
    #[serde(default)]
    pub trace_every: usize,
    #[serde(default = "default_trace_particles")]
    pub trace_particles: usize,
}

fn default_directory() -> PathBuf {
    PathBuf::from("out")
}
fn default_bins() -> usize {
    200
}
fn default_trace_particles() -> usize {
    50
}

impl Default for Outputs {
    fn default() -> Self {
        Self {
            directory: default_directory(),
            snapshot_times: Vec::new(),
            snapshot_format: SnapshotFormat::Csv,
            histogram_bins: default_bins(),
            checkpoint_times: Vec::new(),
            trace_every: 0,
            trace_particles: default_trace_particles(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiSection {
    /// Slab width in metres.
    pub d_phys: f64,
    /// Particle mass in kg; takes precedence over `species`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub species: Option<String>,
}

impl SiSection {
    pub fn mass_kg(&self) -> Result<f64, CliError> {
        if let Some(m) = self.mass {
            return Ok(m);
        }
        match self.species.as_deref().map(str::to_ascii_lowercase).as_deref() {
            Some("rb87") | Some("87rb") | None => Ok(RB87_MASS_KG),
            Some(other) => Err(CliError::Config(format!("unknown species `{other}`; give si.mass instead"))),
        }
    }
}

/// Validated model objects derived from a [`RunConfig`].
#[derive(Debug, Clone)]
pub struct Resolved {
    pub grid: GridSpec,
    pub physics: PhysicsConfig,
    pub detector: DetectorModel,
    pub solver: SolverConfig,
    pub guidance: Option<CurrentKind>,
    pub strictness: Strictness,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Check cross-field consistency and build the model objects.
    pub fn resolve(&self) -> Result<Resolved, CliError> {
        let g = &self.geometry;
        let grid = GridSpec::new([g.lx, g.ly, g.lz], [g.nx, g.ny, g.nz]).map_err(cfg)?;

        let p = &self.physics;
        let physics = match p.spin_mode {
            SpinMode::Scalar => {
                if p.theta != 0.0 || p.phi != 0.0 {
                    return Err(CliError::Config("theta and phi need spin_mode = \"spinor\"".into()));
                }
                PhysicsConfig::scalar(p.omega)
            }
            SpinMode::Spinor => PhysicsConfig::spinor(p.omega, BlochSpinor::new(p.theta, p.phi).map_err(cfg)?),
        };
        physics.validate(&grid).map_err(cfg)?;
        if !(p.omega > 0.0) {
            return Err(CliError::Config("omega must be positive".into()));
        }

        let detector = self.detector.to_model(g.lz)?;
        detector.validate(&grid, physics.spin_mode()).map_err(cfg)?;
        if g.mode == GeometryMode::Line && detector.kind() == DetectorKind::AbcSpinor {
            return Err(CliError::Config(
                "the spinor roof couples to the transverse motion; use geometry.mode = \"full\"".into(),
            ));
        }
        if detector.kind() == DetectorKind::Free && g.mode != GeometryMode::Line {
            return Err(CliError::Config("the free scenario runs on the line; set geometry.mode = \"line\"".into()));
        }
        if let Some(v) = self.detector.max_group_velocity {
            if !(v.is_finite() && v > 0.0) {
                return Err(CliError::Config(format!("detector.max_group_velocity must be positive, got {v}")));
            }
        }

        let n = &self.numerics;
        let solver = SolverConfig {
            dt: n.dt,
            rel_tol: n.rel_tol,
            restart: n.restart,
            max_iter: n.max_iter,
            jacobi: n.jacobi,
        };
        solver.validate().map_err(cfg)?;
        if !(n.t_cutoff > 0.0) {
            return Err(CliError::Config(format!("t_cutoff must be positive, got {}", n.t_cutoff)));
        }
        if !(n.cfl > 0.0 && n.cfl < 1.0) {
            return Err(CliError::Config(format!("cfl must lie in (0, 1), got {}", n.cfl)));
        }
        if n.trajectory_substeps == 0 {
            return Err(CliError::Config("trajectory_substeps must be at least 1".into()));
        }
        let guidance = if n.n_trajectories == 0 {
            None
        } else {
            let kind = match (n.guidance, detector.kind()) {
                (GuidanceChoice::Matched, DetectorKind::AbcSpinor | DetectorKind::Free) => CurrentKind::Pauli,
                (GuidanceChoice::Matched, _) | (GuidanceChoice::Convective, _) => CurrentKind::Convective,
                (GuidanceChoice::Pauli, _) => CurrentKind::Pauli,
            };
            if kind == CurrentKind::Pauli && physics.spin_mode() != SpinMode::Spinor {
                return Err(CliError::Config("Pauli guidance needs spin_mode = \"spinor\"".into()));
            }
            Some(kind)
        };
        if self.outputs.histogram_bins == 0 {
            return Err(CliError::Config("histogram_bins must be at least 1".into()));
        }
        if let Some(si) = &self.si {
            if !(si.d_phys > 0.0) {
                return Err(CliError::Config("si.d_phys must be positive".into()));
            }
            si.mass_kg()?;
        }
        Ok(Resolved {
            grid,
            physics,
            detector,
            solver,
            guidance,
            strictness: if n.strict { Strictness::Strict } else { Strictness::Warn },
        })
    }

    /// Set a sweepable scalar parameter.
    pub fn set_parameter(&mut self, axis: SweepAxis, value: f64) {
        match axis {
            SweepAxis::Omega => self.physics.omega = value,
            SweepAxis::Theta => self.physics.theta = value,
            SweepAxis::W => self.detector.w = Some(value),
            SweepAxis::Kappa => self.detector.kappa = Some(value),
        }
    }
}

fn cfg(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

impl DetectorSection {
    fn need(&self, v: Option<f64>, name: &str) -> Result<f64, CliError> {
        v.ok_or_else(|| CliError::Config(format!("detector.{name} is required for kind = \"{}\"", self.kind)))
    }

    pub fn to_model(&self, lz: f64) -> Result<DetectorModel, CliError> {
        Ok(match self.kind {
            DetectorKind::Free => DetectorModel::Free,
            DetectorKind::AbcSpinless => DetectorModel::SpinlessAbc {
                kappa: self.kappa.unwrap_or(PI),
            },
            DetectorKind::AbcSpinor => DetectorModel::SpinorAbc {
                kappa: self.kappa.unwrap_or(PI),
            },
            DetectorKind::Cap => {
                let profile = match self.profile {
                    Some(ProfileName::Tanh) => CapProfile::Tanh {
                        a: self.need(self.a, "a")?,
                    },
                    Some(ProfileName::Sharp) => CapProfile::Sharp,
                    Some(ProfileName::CubicRamp) => CapProfile::CubicRamp {
                        w: self.need(self.w, "w")?,
                    },
                    None => return Err(CliError::Config("detector.profile is required for kind = \"cap\"".into())),
                };
                let cap = CapModel::new(profile, self.need(self.z0, "z0")?, self.need(self.w_max, "w_max")?, lz)
                    .map_err(cfg)?;
                DetectorModel::Cap(cap)
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Omega,
    W,
    Theta,
    Kappa,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Omega => "omega",
            SweepAxis::W => "w",
            SweepAxis::Theta => "theta",
            SweepAxis::Kappa => "kappa",
        }
    }
}
