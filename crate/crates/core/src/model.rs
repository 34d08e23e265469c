//! Physical configuration: initial state, spin orientation, trap, absorbers
//! and unit conversion.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridError, GridSpec, SpinMode, SpinorField};

/// Width of the slab holding the initial state, the unit of length.
pub const SLAB_WIDTH: f64 = 1.0;

/// Reduced Planck constant in J s (CODATA 2018, exact).
pub const HBAR_SI: f64 = 1.054_571_817e-34;

/// Atomic mass of rubidium-87 in kg.
pub const RB87_MASS_KG: f64 = 1.443_160_60e-25;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("initial state rejected in strict mode: {0}")]
    Strict(String),
    #[error("unknown quantity kind `{0}` (expected length, time, frequency or kappa)")]
    UnknownKind(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

fn config_err(msg: impl Into<String>) -> ModelError {
    ModelError::Config(msg.into())
}

/// Constant spin state parametrized by Bloch angles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlochSpinor {
    pub theta: f64,
    pub phi: f64,
}

impl BlochSpinor {
    pub fn new(theta: f64, phi: f64) -> Result<Self, ModelError> {
        if !(0.0..=PI).contains(&theta) {
            return Err(config_err(format!("theta must lie in [0, pi], got {theta}")));
        }
        if !(0.0..2.0 * PI).contains(&phi) {
            return Err(config_err(format!("phi must lie in [0, 2pi), got {phi}")));
        }
        Ok(Self { theta, phi })
    }

    pub fn up() -> Self {
        Self { theta: 0.0, phi: 0.0 }
    }

    /// `(cos(theta/2), sin(theta/2) e^{i phi})`.
    pub fn components(&self) -> [Complex64; 2] {
        let (s, c) = (0.5 * self.theta).sin_cos();
        [Complex64::new(c, 0.0), Complex64::from_polar(s, self.phi)]
    }

    /// Unit vector with spherical angles `(theta, phi)`.
    pub fn bloch_vector(&self) -> [f64; 3] {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        [st * cp, st * sp, ct]
    }
}

/// Trap strength and optional spin state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicsConfig {
    pub omega: f64,
    pub spinor: Option<BlochSpinor>,
}

impl PhysicsConfig {
    pub fn scalar(omega: f64) -> Self {
        Self { omega, spinor: None }
    }

    pub fn spinor(omega: f64, chi: BlochSpinor) -> Self {
        Self {
            omega,
            spinor: Some(chi),
        }
    }

    pub fn spin_mode(&self) -> SpinMode {
        if self.spinor.is_some() {
            SpinMode::Spinor
        } else {
            SpinMode::Scalar
        }
    }

    /// Standard deviation of the transverse ground-state amplitude, `1/sqrt(omega)`.
    pub fn transverse_width(&self) -> f64 {
        1.0 / self.omega.sqrt()
    }

    pub fn validate(&self, grid: &GridSpec) -> Result<(), ModelError> {
        if !(self.omega.is_finite() && self.omega >= 0.0) {
            return Err(config_err(format!("omega must be non-negative, got {}", self.omega)));
        }
        if grid.lz() <= SLAB_WIDTH {
            return Err(config_err(format!(
                "detector distance Lz = {} must exceed the slab width",
                grid.lz()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "snake_case")]
pub enum CapProfile {
    /// Smooth step of half-width `a` centred at `z0`.
    Tanh { a: f64 },
    /// Constant strength on `(z0, end)`.
    Sharp,
    /// Cubic rise reaching full strength after a fraction `w` of `(z0, end)`.
    CubicRamp { w: f64 },
}

/// Static complex absorbing potential `-i W(z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapModel {
    pub profile: CapProfile,
    pub z0: f64,
    pub w_max: f64,
    /// Upper end of the absorbing layer, normally the box height.
    pub end: f64,
}

impl CapModel {
    pub fn new(profile: CapProfile, z0: f64, w_max: f64, end: f64) -> Result<Self, ModelError> {
        let cap = Self {
            profile,
            z0,
            w_max,
            end,
        };
        cap.validate()?;
        Ok(cap)
    }

    fn validate(&self) -> Result<(), ModelError> {
        if !(self.w_max.is_finite() && self.w_max > 0.0) {
            return Err(config_err(format!("W_max must be positive, got {}", self.w_max)));
        }
        if !(self.z0 > 0.0 && self.z0 < self.end) {
            return Err(config_err(format!(
                "CAP onset z0 = {} must lie in (0, {})",
                self.z0, self.end
            )));
        }
        match self.profile {
            CapProfile::Tanh { a } if !(a > 0.0) => {
                Err(config_err(format!("tanh half-width must be positive, got {a}")))
            }
            CapProfile::CubicRamp { w } if !(w > 0.0 && w <= 1.0) => {
                Err(config_err(format!("ramp fraction w must lie in (0, 1], got {w}")))
            }
            _ => Ok(()),
        }
    }

    /// Absorption strength `W(z) >= 0`.
    pub fn strength(&self, z: f64) -> f64 {
        match self.profile {
            CapProfile::Tanh { a } => 0.5 * self.w_max * (1.0 + ((z - self.z0) / a).tanh()),
            CapProfile::Sharp => {
                if z > self.z0 && z < self.end {
                    self.w_max
                } else {
                    0.0
                }
            }
            CapProfile::CubicRamp { w } => {
                let s = ((z - self.z0) / ((self.end - self.z0) * w)).clamp(0.0, 1.0);
                s * s * s * self.w_max
            }
        }
    }
}

/// Absorption strength of a CAP at height `z`.
pub fn cap_profile(z: f64, cap: &CapModel) -> f64 {
    cap.strength(z)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    Free,
    Cap,
    AbcSpinless,
    AbcSpinor,
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DetectorKind::Free => "free",
            DetectorKind::Cap => "cap",
            DetectorKind::AbcSpinless => "abc_spinless",
            DetectorKind::AbcSpinor => "abc_spinor",
        })
    }
}

/// Detector attached to the top of the waveguide.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DetectorModel {
    /// No absorber; the roof is a hard wall.
    Free,
    Cap(CapModel),
    /// Robin roof `dpsi/dz = i kappa psi` acting on each spin component alike.
    SpinlessAbc { kappa: f64 },
    /// Spin-coupled roof condition `sigma . grad Psi = i kappa sigma_z Psi`.
    SpinorAbc { kappa: f64 },
}

impl DetectorModel {
    pub fn kind(&self) -> DetectorKind {
        match self {
            DetectorModel::Free => DetectorKind::Free,
            DetectorModel::Cap(_) => DetectorKind::Cap,
            DetectorModel::SpinlessAbc { .. } => DetectorKind::AbcSpinless,
            DetectorModel::SpinorAbc { .. } => DetectorKind::AbcSpinor,
        }
    }

    pub fn kappa(&self) -> Option<f64> {
        match *self {
            DetectorModel::SpinlessAbc { kappa } | DetectorModel::SpinorAbc { kappa } => Some(kappa),
            _ => None,
        }
    }

    pub fn cap(&self) -> Option<&CapModel> {
        match self {
            DetectorModel::Cap(c) => Some(c),
            _ => None,
        }
    }

    pub fn is_abc(&self) -> bool {
        self.kappa().is_some()
    }

    pub fn validate(&self, grid: &GridSpec, mode: SpinMode) -> Result<(), ModelError> {
        match self {
            DetectorModel::Free => Ok(()),
            DetectorModel::Cap(cap) => {
                cap.validate()?;
                if cap.z0 >= grid.lz() {
                    return Err(config_err(format!(
                        "CAP onset z0 = {} must lie below Lz = {}",
                        cap.z0,
                        grid.lz()
                    )));
                }
                Ok(())
            }
            DetectorModel::SpinlessAbc { kappa } | DetectorModel::SpinorAbc { kappa } => {
                if !(kappa.is_finite() && *kappa > 0.0) {
                    return Err(config_err(format!("kappa must be positive, got {kappa}")));
                }
                if matches!(self, DetectorModel::SpinorAbc { .. }) && mode != SpinMode::Spinor {
                    return Err(config_err("the spinor ABC needs a two-component state"));
                }
                Ok(())
            }
        }
    }
}

/// How initial-state diagnostics are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strictness {
    #[default]
    Warn,
    Strict,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialState {
    pub field: SpinorField,
    /// Discrete squared norm of the sampled continuum state before rescaling.
    pub raw_norm_sq: f64,
    /// Largest lateral-wall amplitude relative to the peak.
    pub wall_amplitude: f64,
    pub warnings: Vec<String>,
}

/// Ground-state Gaussian times the lowest slab mode, times the spinor.
///
/// Sampled at the nodes and rescaled to unit discrete norm.
pub fn initial_state(
    grid: &GridSpec,
    physics: &PhysicsConfig,
    strictness: Strictness,
) -> Result<InitialState, ModelError> {
    physics.validate(grid)?;
    if !(physics.omega > 0.0) {
        return Err(config_err("a finite box needs a confining trap, omega > 0"));
    }
    let omega = physics.omega;
    let [cx, cy] = grid.trap_center();
    let amp = (2.0 * omega / (PI * SLAB_WIDTH)).sqrt();
    // the outermost lateral layers are Dirichlet walls
    let wall = |i: usize, n: usize| i == 0 || i + 1 == n;
    let gx: Vec<f64> = (0..grid.nx())
        .map(|i| if wall(i, grid.nx()) { 0.0 } else { (-0.5 * omega * (i as f64 * grid.hx() - cx).powi(2)).exp() })
        .collect();
    let gy: Vec<f64> = (0..grid.ny())
        .map(|j| if wall(j, grid.ny()) { 0.0 } else { (-0.5 * omega * (j as f64 * grid.hy() - cy).powi(2)).exp() })
        .collect();
    let fz: Vec<f64> = (0..grid.nz())
        .map(|k| {
            let z = k as f64 * grid.hz();
            if z > 0.0 && z < SLAB_WIDTH {
                (PI * z / SLAB_WIDTH).sin()
            } else {
                0.0
            }
        })
        .collect();

    let mut base = vec![Complex64::default(); grid.len()];
    for i in 0..grid.nx() {
        for j in 0..grid.ny() {
            let t = amp * gx[i] * gy[j];
            for k in 0..grid.nz() {
                base[grid.index(i, j, k)] = Complex64::new(t * fz[k], 0.0);
            }
        }
    }

    let mut field = match physics.spinor {
        None => SpinorField::scalar(*grid, base)?,
        Some(chi) => {
            let [a, b] = chi.components();
            let up = base.iter().map(|v| v * a).collect();
            let down = base.iter().map(|v| v * b).collect();
            SpinorField::spinor(*grid, up, down)?
        }
    };
    let raw_norm_sq = field.norm_sq();
    field.normalize();

    let mut warnings = Vec::new();
    let sigma = physics.transverse_width();
    let half_box = 0.5 * grid.lx().min(grid.ly());
    if 6.0 * sigma > half_box {
        warnings.push(format!(
            "transverse Gaussian (6 sigma = {:.4}) exceeds the half-box {:.4}",
            6.0 * sigma,
            half_box
        ));
    }
    let wall_amplitude = lateral_wall_amplitude(&field);
    if let (Strictness::Strict, Some(w)) = (strictness, warnings.first()) {
        return Err(ModelError::Strict(w.clone()));
    }
    Ok(InitialState {
        field,
        raw_norm_sq,
        wall_amplitude,
        warnings,
    })
}

/// Largest `|Psi|` on the first interior layers next to the lateral walls,
/// relative to the largest `|Psi|` anywhere.
///
/// The outermost layers are pinned to zero by the walls, so the first layer
/// inside them measures how much of the state reaches the boundary.
pub fn lateral_wall_amplitude(field: &SpinorField) -> f64 {
    let g = field.grid();
    let rho = field.density();
    let peak = rho.iter().copied().fold(0.0, f64::max);
    if peak == 0.0 {
        return 0.0;
    }
    let (nx, ny) = (g.nx(), g.ny());
    let mut wall = 0.0f64;
    for i in 1..nx - 1 {
        for j in 1..ny - 1 {
            if i == 1 || i == nx - 2 || j == 1 || j == ny - 2 {
                for k in 0..g.nz() {
                    wall = wall.max(rho[g.index(i, j, k)]);
                }
            }
        }
    }
    (wall / peak).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantityKind {
    Length,
    Time,
    Frequency,
    Kappa,
}

impl FromStr for QuantityKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "length" => Ok(Self::Length),
            "time" => Ok(Self::Time),
            "frequency" => Ok(Self::Frequency),
            "kappa" => Ok(Self::Kappa),
            _ => Err(ModelError::UnknownKind(s.to_owned())),
        }
    }
}

/// Time unit `m d^2 / hbar` in seconds.
pub fn time_unit(d_phys: f64, m_phys: f64) -> f64 {
    m_phys * d_phys * d_phys / HBAR_SI
}

/// Convert an internal quantity to SI units.
pub fn to_si(value: f64, kind: QuantityKind, d_phys: f64, m_phys: f64) -> Result<f64, ModelError> {
    if !(d_phys > 0.0 && m_phys > 0.0) {
        return Err(config_err("physical length and mass must be positive"));
    }
    Ok(match kind {
        QuantityKind::Length => value * d_phys,
        QuantityKind::Time => value * time_unit(d_phys, m_phys),
        QuantityKind::Frequency => value / time_unit(d_phys, m_phys),
        QuantityKind::Kappa => value / d_phys,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spinor_components() {
        let up = BlochSpinor::up().components();
        assert_eq!(up[1], Complex64::new(0.0, 0.0));
        let chi = BlochSpinor::new(1.1, 4.0).unwrap();
        let [a, b] = chi.components();
        assert!((a.norm_sqr() + b.norm_sqr() - 1.0).abs() < 1e-15);
        assert!(BlochSpinor::new(-0.1, 0.0).is_err());
        assert!(BlochSpinor::new(0.1, 2.0 * PI).is_err());
    }

    #[test]
    fn cap_profile_examples() {
        let tanh = CapModel::new(CapProfile::Tanh { a: 0.165 }, 10.0, 40.0, 11.0).unwrap();
        assert_eq!(cap_profile(10.0, &tanh), 20.0);
        let cubic = CapModel::new(CapProfile::CubicRamp { w: 0.5 }, 10.0, 40.0, 11.0).unwrap();
        assert!((cap_profile(10.5, &cubic) - 40.0).abs() < 1e-12);
        assert!((cap_profile(10.9, &cubic) - 40.0).abs() < 1e-12);
        assert!((cap_profile(10.25, &cubic) - 5.0).abs() < 1e-12);
        assert_eq!(cap_profile(9.0, &cubic), 0.0);
        let sharp = CapModel::new(CapProfile::Sharp, 10.0, 40.0, 11.0).unwrap();
        assert_eq!(cap_profile(10.0, &sharp), 0.0);
        assert_eq!(cap_profile(10.01, &sharp), 40.0);
    }

    #[test]
    fn cap_validation() {
        assert!(CapModel::new(CapProfile::Sharp, 10.0, 0.0, 11.0).is_err());
        assert!(CapModel::new(CapProfile::Sharp, 11.0, 1.0, 11.0).is_err());
        assert!(CapModel::new(CapProfile::Tanh { a: 0.0 }, 10.0, 1.0, 11.0).is_err());
        assert!(CapModel::new(CapProfile::CubicRamp { w: 1.5 }, 10.0, 1.0, 11.0).is_err());
    }

    #[test]
    fn detector_validation() {
        let g = GridSpec::new([1.0, 1.0, 10.0], [4, 4, 40]).unwrap();
        let abc = DetectorModel::SpinorAbc { kappa: PI };
        assert!(abc.validate(&g, SpinMode::Scalar).is_err());
        assert!(abc.validate(&g, SpinMode::Spinor).is_ok());
        assert!(DetectorModel::SpinlessAbc { kappa: 0.0 }
            .validate(&g, SpinMode::Scalar)
            .is_err());
    }

    #[test]
    fn si_examples() {
        let t = to_si(1.0, QuantityKind::Time, 2e-6, RB87_MASS_KG).unwrap();
        assert!((t - 5.47e-3).abs() < 0.005 * 5.47e-3, "{t}");
        let t = to_si(5.921, QuantityKind::Time, 2e-6, RB87_MASS_KG).unwrap();
        assert!((t - 32.4e-3).abs() < 0.05e-3, "{t}");
        assert_eq!(to_si(3.0, QuantityKind::Length, 2e-6, 1.0).unwrap(), 6e-6);
        assert!(to_si(1.0, QuantityKind::Length, 0.0, 1.0).is_err());
        assert!("speed".parse::<QuantityKind>().is_err());
        assert_eq!("Kappa".parse::<QuantityKind>().unwrap(), QuantityKind::Kappa);
    }

    #[test]
    fn initial_state_support_and_norm() {
        let g = GridSpec::new([3.0, 3.0, 4.0], [12, 12, 40]).unwrap();
        let chi = BlochSpinor::new(0.0, 0.0).unwrap();
        let st = initial_state(&g, &PhysicsConfig::spinor(25.0, chi), Strictness::Strict).unwrap();
        assert!((st.field.norm_sq() - 1.0).abs() < 1e-12);
        assert!(st.field.down().unwrap().iter().all(|c| c.norm() == 0.0));
        for l in 0..g.len() {
            if g.node_of(l)[2] > 1.0 {
                assert_eq!(st.field.up()[l].norm(), 0.0);
            }
        }
    }

    #[test]
    fn leaking_gaussian_warns_or_fails() {
        let g = GridSpec::new([1.0, 1.0, 4.0], [8, 8, 40]).unwrap();
        let p = PhysicsConfig::scalar(1.0);
        let st = initial_state(&g, &p, Strictness::Warn).unwrap();
        assert_eq!(st.warnings.len(), 1);
        assert!(matches!(
            initial_state(&g, &p, Strictness::Strict),
            Err(ModelError::Strict(_))
        ));
    }
}
