//! Probability currents, detection-time densities and their statistics.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{grad_component, Axis, GridError, GridSpec, SpinMode, SpinorField};
use crate::model::{DetectorKind, DetectorModel};
use crate::propagator::{NormSeries, Observer, ObserverError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObservablesError {
    #[error("{0} needs a two-component state")]
    ScalarState(&'static str),
    #[error("{op} is not defined for the {kind} detector")]
    Contract { op: &'static str, kind: DetectorKind },
    #[error("histogram range [{0}, {1}] is empty")]
    EmptyRange(f64, f64),
    #[error("histogram needs at least one bin")]
    NoBins,
    #[error("series too short: {0}")]
    ShortSeries(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurrentKind {
    Convective,
    Pauli,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurrentField {
    pub kind: CurrentKind,
    pub j: [Vec<f64>; 3],
}

/// `Im(conj(a) * b)` summed into `acc`.
fn add_im_product(acc: &mut [f64], a: &[Complex64], b: &[Complex64]) {
    for ((o, x), d) in acc.iter_mut().zip(a).zip(b) {
        *o += (x.conj() * d).im;
    }
}

/// `Im(Psi^dagger grad Psi)`, summed over spin components.
pub fn convective_current(psi: &SpinorField) -> Result<CurrentField, ObservablesError> {
    let g = psi.grid();
    let mut j = [vec![0.0; g.len()], vec![0.0; g.len()], vec![0.0; g.len()]];
    for comp in psi.components() {
        for a in Axis::ALL {
            let d = grad_component(comp, g, a)?;
            add_im_product(&mut j[a.index()], comp, &d);
        }
    }
    Ok(CurrentField {
        kind: CurrentKind::Convective,
        j,
    })
}

/// Spin density `Psi^dagger sigma Psi`.
pub fn spin_density(psi: &SpinorField) -> Result<[Vec<f64>; 3], ObservablesError> {
    let down = psi.down().ok_or(ObservablesError::ScalarState("spin density"))?;
    let up = psi.up();
    let mut s = [Vec::with_capacity(up.len()), Vec::with_capacity(up.len()), Vec::with_capacity(up.len())];
    for (u, d) in up.iter().zip(down) {
        let ud = u.conj() * d;
        s[0].push(2.0 * ud.re);
        s[1].push(2.0 * ud.im);
        s[2].push(u.norm_sqr() - d.norm_sqr());
    }
    Ok(s)
}

/// Curl of a nodal vector field using [`grad_component`] stencils.
pub fn curl(v: &[Vec<f64>; 3], grid: &GridSpec) -> Result<[Vec<f64>; 3], ObservablesError> {
    let d = |c: usize, a: Axis| grad_component(&v[c], grid, a);
    let (dy_vz, dz_vy) = (d(2, Axis::Y)?, d(1, Axis::Z)?);
    let (dz_vx, dx_vz) = (d(0, Axis::Z)?, d(2, Axis::X)?);
    let (dx_vy, dy_vx) = (d(1, Axis::X)?, d(0, Axis::Y)?);
    let sub = |a: Vec<f64>, b: Vec<f64>| a.iter().zip(&b).map(|(p, q)| p - q).collect::<Vec<_>>();
    Ok([sub(dy_vz, dz_vy), sub(dz_vx, dx_vz), sub(dx_vy, dy_vx)])
}

/// Convective current plus half the curl of the spin density.
pub fn pauli_current(psi: &SpinorField) -> Result<CurrentField, ObservablesError> {
    if psi.spin_mode() != SpinMode::Spinor {
        return Err(ObservablesError::ScalarState("the Pauli current"));
    }
    let mut c = convective_current(psi)?;
    let rot = curl(&spin_density(psi)?, psi.grid())?;
    for a in 0..3 {
        c.j[a].iter_mut().zip(&rot[a]).for_each(|(j, r)| *j += 0.5 * r);
    }
    c.kind = CurrentKind::Pauli;
    Ok(c)
}

pub fn current(psi: &SpinorField, kind: CurrentKind) -> Result<CurrentField, ObservablesError> {
    match kind {
        CurrentKind::Convective => convective_current(psi),
        CurrentKind::Pauli => pauli_current(psi),
    }
}

/// `sum over layer k of f * hx * hy`.
pub fn layer_integral(f: &[f64], grid: &GridSpec, k: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..grid.nx() {
        for j in 0..grid.ny() {
            s += f[grid.index(i, j, k)];
        }
    }
    s * grid.layer_area()
}

/// `kappa * sum over the roof layer of |Psi|^2 hx hy`.
pub fn rho_t_flux(psi: &SpinorField, detector: &DetectorModel) -> Result<f64, ObservablesError> {
    let kappa = detector.kappa().ok_or(ObservablesError::Contract {
        op: "roof flux",
        kind: detector.kind(),
    })?;
    let g = psi.grid();
    Ok(kappa * layer_integral(&psi.density(), g, g.nz() - 1))
}

/// `2 sum W |Psi|^2 hx hy hz`.
pub fn rho_t_capvolume(psi: &SpinorField, detector: &DetectorModel) -> Result<f64, ObservablesError> {
    let cap = detector.cap().ok_or(ObservablesError::Contract {
        op: "absorbed-volume rate",
        kind: detector.kind(),
    })?;
    let g = psi.grid();
    let w: Vec<f64> = (0..g.nz()).map(|k| cap.strength(k as f64 * g.hz())).collect();
    let rho = psi.density();
    let s: f64 = rho.iter().enumerate().map(|(l, r)| w[l % g.nz()] * r).sum();
    Ok(2.0 * s * g.cell_volume())
}

/// Detection-time density of the configured detector at one instant.
pub fn rho_t_model(psi: &SpinorField, detector: &DetectorModel) -> Result<f64, ObservablesError> {
    match detector.kind() {
        DetectorKind::Cap => rho_t_capvolume(psi, detector),
        DetectorKind::AbcSpinless | DetectorKind::AbcSpinor => rho_t_flux(psi, detector),
        DetectorKind::Free => Ok(0.0),
    }
}

/// Plane integral of a stenciled current's `z` component over the roof layer.
pub fn roof_current_flux(psi: &SpinorField, kind: CurrentKind) -> Result<f64, ObservablesError> {
    let c = current(psi, kind)?;
    let g = psi.grid();
    Ok(layer_integral(&c.j[2], g, g.nz() - 1))
}

/// `-d/dt` of the squared norm by centred differences, one-sided at the ends.
pub fn normloss_density(times: &[f64], norm_sq: &[f64]) -> Vec<f64> {
    let n = times.len();
    if n < 2 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|i| {
            let (a, b) = if i == 0 {
                (0, 1)
            } else if i == n - 1 {
                (n - 2, n - 1)
            } else {
                (i - 1, i + 1)
            };
            -(norm_sq[b] - norm_sq[a]) / (times[b] - times[a])
        })
        .collect()
}

/// Trapezoidal integral of samples on `[times[0], upper]`, with linear
/// interpolation when `upper` falls between samples.
pub fn trapezoid_until(times: &[f64], f: &[f64], upper: f64) -> f64 {
    let mut s = 0.0;
    for i in 1..times.len() {
        let (t0, t1) = (times[i - 1], times[i]);
        if t0 >= upper {
            break;
        }
        if t1 <= upper {
            s += 0.5 * (f[i - 1] + f[i]) * (t1 - t0);
        } else {
            let fu = f[i - 1] + (f[i] - f[i - 1]) * (upper - t0) / (t1 - t0);
            s += 0.5 * (f[i - 1] + fu) * (upper - t0);
        }
    }
    s
}

/// Restricted mean `E[min(T, t_cutoff)]` of a detection-time density.
pub fn restricted_mean(times: &[f64], rho: &[f64], t_cutoff: f64) -> f64 {
    let trho: Vec<f64> = times.iter().zip(rho).map(|(t, r)| t * r).collect();
    let first = trapezoid_until(times, &trho, t_cutoff);
    let mass = trapezoid_until(times, rho, t_cutoff);
    first + t_cutoff * (1.0 - mass)
}

/// Detection statistics of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSeries {
    pub times: Vec<f64>,
    pub norm_sq: Vec<f64>,
    pub rho_normloss: Vec<f64>,
    /// Roof flux (ABC) or absorbed-volume rate (CAP).
    pub rho_model: Vec<f64>,
    /// `1 - ||Psi||^2`.
    pub cum_fraction: Vec<f64>,
}

impl DetectionSeries {
    pub fn new(norms: &NormSeries, rho_model: Vec<f64>) -> Result<Self, ObservablesError> {
        if rho_model.len() != norms.len() {
            return Err(ObservablesError::ShortSeries(format!(
                "{} model samples for {} norm samples",
                rho_model.len(),
                norms.len()
            )));
        }
        Ok(Self {
            times: norms.times.clone(),
            norm_sq: norms.norm_sq.clone(),
            rho_normloss: normloss_density(&norms.times, &norms.norm_sq),
            rho_model,
            cum_fraction: norms.norm_sq.iter().map(|n| 1.0 - n).collect(),
        })
    }

    pub fn detection_fraction(&self) -> f64 {
        self.cum_fraction.last().copied().unwrap_or(0.0)
    }

    /// Restricted mean from the norm-loss density.
    pub fn mu_star(&self, t_cutoff: f64) -> f64 {
        restricted_mean(&self.times, &self.rho_normloss, t_cutoff)
    }

    /// Restricted mean computed as the integral of the survival probability.
    pub fn mu_star_survival(&self, t_cutoff: f64) -> f64 {
        trapezoid_until(&self.times, &self.norm_sq, t_cutoff)
    }

    /// `max |rho_normloss - rho_model| / max |rho_model|`.
    pub fn dual_route_gap(&self) -> f64 {
        let peak = self.rho_model.iter().map(|r| r.abs()).fold(0.0, f64::max);
        let gap = self
            .rho_normloss
            .iter()
            .zip(&self.rho_model)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        gap / peak
    }
}

/// Records the model detection-time density before the first step and after
/// every step.
pub struct ModelDensityRecorder {
    detector: DetectorModel,
    pub values: Vec<f64>,
}

impl ModelDensityRecorder {
    pub fn new(detector: DetectorModel, psi0: &SpinorField) -> Result<Self, ObservablesError> {
        Ok(Self {
            detector,
            values: vec![rho_t_model(psi0, &detector)?],
        })
    }
}

impl Observer for ModelDensityRecorder {
    fn observe(&mut self, _: usize, _: f64, _: f64, _: &SpinorField, after: &SpinorField) -> Result<(), ObserverError> {
        self.values.push(rho_t_model(after, &self.detector)?);
        Ok(())
    }
}

/// Binned density of arrival samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Heights normalized so that the total area is `arrived / ensemble_size`.
    pub density: Vec<f64>,
    pub ensemble_size: usize,
}

impl Histogram {
    pub fn bin_width(&self) -> f64 {
        self.edges[1] - self.edges[0]
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn area(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.bin_width()
    }
}

/// Histogram of `samples` over `range`, normalized by the ensemble size.
///
/// Samples outside the range are not counted; a sample equal to the upper
/// edge goes into the last bin.
pub fn histogram(samples: &[f64], ensemble_size: usize, bins: usize, range: (f64, f64)) -> Result<Histogram, ObservablesError> {
    if bins == 0 {
        return Err(ObservablesError::NoBins);
    }
    let (lo, hi) = range;
    if !(hi > lo) {
        return Err(ObservablesError::EmptyRange(lo, hi));
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &s in samples {
        if s < lo || s > hi {
            continue;
        }
        let b = (((s - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let norm = 1.0 / (ensemble_size.max(1) as f64 * width);
    Ok(Histogram {
        edges: (0..=bins).map(|i| lo + i as f64 * width).collect(),
        density: counts.iter().map(|&c| c as f64 * norm).collect(),
        counts,
        ensemble_size,
    })
}

/// Pearson statistic of histogram counts against expected bin probabilities.
///
/// Bins with expected count below `min_expected` are pooled into their
/// neighbour. Returns `(chi2, degrees of freedom)`.
pub fn chi_square(counts: &[usize], expected_prob: &[f64], ensemble_size: usize, min_expected: f64) -> (f64, usize) {
    let n = ensemble_size as f64;
    let mut pooled: Vec<(f64, f64)> = Vec::new();
    let (mut o, mut e) = (0.0, 0.0);
    for (c, p) in counts.iter().zip(expected_prob) {
        o += *c as f64;
        e += p * n;
        if e >= min_expected {
            pooled.push((o, e));
            o = 0.0;
            e = 0.0;
        }
    }
    if e > 0.0 || o > 0.0 {
        match pooled.last_mut() {
            Some(last) => {
                last.0 += o;
                last.1 += e;
            }
            None => pooled.push((o, e)),
        }
    }
    let chi2 = pooled.iter().map(|(o, e)| (o - e).powi(2) / e.max(f64::MIN_POSITIVE)).sum();
    (chi2, pooled.len().saturating_sub(1))
}

/// Centred moving average over `window` samples, shrinking at the ends.
pub fn moving_average(x: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    let mut prefix = vec![0.0; x.len() + 1];
    for (i, v) in x.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
    }
    (0..x.len())
        .map(|i| {
            let a = i.saturating_sub(half);
            let b = (i + half + 1).min(x.len());
            (prefix[b] - prefix[a]) / (b - a) as f64
        })
        .collect()
}

/// First oscillation after the main peak of a smoothed density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FirstOscillation {
    pub t_peak: f64,
    pub t_trough: f64,
    pub trough: f64,
    pub t_crest: f64,
    pub crest: f64,
}

impl FirstOscillation {
    /// Crest-to-trough ratio, `>= 1`.
    pub fn ratio(&self) -> f64 {
        self.crest / self.trough
    }
}

/// Locate the global maximum of `rho` smoothed over `window` samples, the
/// next local minimum and the following local maximum.
pub fn first_oscillation(times: &[f64], rho: &[f64], window: usize) -> Option<FirstOscillation> {
    let s = moving_average(rho, window);
    let p = s
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))?
        .0;
    let mut i = p;
    while i + 1 < s.len() && s[i + 1] <= s[i] {
        i += 1;
    }
    let m = i;
    while i + 1 < s.len() && s[i + 1] >= s[i] {
        i += 1;
    }
    if m == p || i == m {
        return None;
    }
    Some(FirstOscillation {
        t_peak: times[p],
        t_trough: times[m],
        trough: s[m],
        t_crest: times[i],
        crest: s[i],
    })
}

/// Dominant oscillation period of a density after its main peak.
///
/// The density is smoothed over `smooth` samples, the slow envelope (a moving
/// average over `trend` time units) is removed, and the strongest non-zero
/// frequency of the Hann-windowed remainder on `[t_peak, t_peak + span]` is
/// returned as a period.
pub fn dominant_period(times: &[f64], rho: &[f64], smooth: usize, trend: f64, span: f64) -> Option<f64> {
    if times.len() < 4 {
        return None;
    }
    let dt = times[1] - times[0];
    let s = moving_average(rho, smooth);
    let trend_window = ((trend / dt).round() as usize) | 1;
    let env = moving_average(rho, trend_window);
    let p = s
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))?
        .0;
    let d: Vec<f64> = (p..s.len())
        .take_while(|&i| times[i] <= times[p] + span)
        .map(|i| s[i] - env[i])
        .collect();
    let n = d.len();
    if n < 8 {
        return None;
    }
    let mean = d.iter().sum::<f64>() / n as f64;
    let w: Vec<f64> = d
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let hann = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos();
            (v - mean) * hann
        })
        .collect();
    let mut best = (0.0, 0usize);
    for k in 1..=n / 2 {
        let (mut re, mut im) = (0.0, 0.0);
        let omega = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
        for (i, v) in w.iter().enumerate() {
            let (sn, cs) = (omega * i as f64).sin_cos();
            re += v * cs;
            im -= v * sn;
        }
        let amp = re * re + im * im;
        if amp > best.0 {
            best = (amp, k);
        }
    }
    (best.1 > 0).then(|| n as f64 * dt / best.1 as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn restricted_mean_examples() {
        let t: Vec<f64> = (0..=1000).map(|i| i as f64 * 0.01).collect();
        let none = vec![0.0; t.len()];
        assert!((restricted_mean(&t, &none, 10.0) - 10.0).abs() < 1e-12);
        // triangular spike of unit mass at t = 2
        let mut spike = vec![0.0; t.len()];
        spike[200] = 100.0;
        assert!((restricted_mean(&t, &spike, 10.0) - 2.0).abs() < 1e-9);
        let half: Vec<f64> = spike.iter().map(|v| 0.5 * v).collect();
        assert!((restricted_mean(&t, &half, 10.0) - 6.0).abs() < 1e-9);
    }

    #[test]
    fn histogram_examples() {
        let h = histogram(&[0.55; 7], 7, 10, (0.0, 1.0)).unwrap();
        assert!((h.density[5] - 1.0 / 0.1).abs() < 1e-12);
        let h = histogram(&[0.1, 0.2, 0.3], 6, 4, (0.0, 1.0)).unwrap();
        assert!((h.area() - 0.5).abs() < 1e-12);
        assert!(histogram(&[], 1, 0, (0.0, 1.0)).is_err());
        assert!(histogram(&[], 1, 3, (1.0, 1.0)).is_err());
    }

    #[test]
    fn normloss_of_linear_decay() {
        let t: Vec<f64> = (0..5).map(|i| i as f64 * 0.5).collect();
        let n: Vec<f64> = t.iter().map(|t| 1.0 - 0.1 * t).collect();
        for r in normloss_density(&t, &n) {
            assert!((r - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn contract_errors() {
        let g = GridSpec::new([1.0, 1.0, 2.0], [4, 4, 8]).unwrap();
        let f = SpinorField::zeros(g, SpinMode::Scalar);
        assert!(rho_t_flux(&f, &DetectorModel::Free).is_err());
        assert!(rho_t_capvolume(&f, &DetectorModel::SpinlessAbc { kappa: 1.0 }).is_err());
        assert_eq!(rho_t_flux(&f, &DetectorModel::SpinlessAbc { kappa: 1.0 }).unwrap(), 0.0);
        assert!(pauli_current(&f).is_err());
    }

    #[test]
    fn chi_square_pools_sparse_bins() {
        let (chi2, dof) = chi_square(&[10, 10, 0, 0], &[0.5, 0.5, 0.0, 0.0], 20, 5.0);
        assert_eq!(dof, 1);
        assert!(chi2.abs() < 1e-12);
    }

    #[test]
    fn oscillation_of_damped_cosine() {
        let t: Vec<f64> = (0..4000).map(|i| i as f64 * 1e-3).collect();
        let r: Vec<f64> = t
            .iter()
            .map(|t| (-((t - 1.0f64) / 3.0).powi(2)).exp() * (1.0 + 0.1 * (2.0 * std::f64::consts::PI * t / 0.2).cos()))
            .collect();
        let p = dominant_period(&t, &r, 11, 1.0, 2.0).unwrap();
        assert!((p - 0.2).abs() < 0.02, "{p}");
        let o = first_oscillation(&t, &r, 5).unwrap();
        assert!(o.ratio() > 1.0);
    }
}
