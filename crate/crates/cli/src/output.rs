//! Artifact writers.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use qdetect_core::bohmian::{Checkpoint, Particle, TracePoint};
use qdetect_core::grid::SpinorField;
use qdetect_core::observables::{DetectionSeries, Histogram};
use qdetect_core::propagator::{Observer, ObserverError};

use crate::config::SnapshotFormat;
use crate::error::CliError;

pub fn write_series(path: &Path, s: &DetectionSeries, model_tag: Option<&str>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t", "norm_sq", "rho_T_normloss", "rho_T_model", "cum_fraction"];
    if model_tag.is_some() {
        header.push("model");
    }
    w.write_record(&header)?;
    for i in 0..s.times.len() {
        let mut rec = vec![
            fmt(s.times[i]),
            fmt(s.norm_sq[i]),
            fmt(s.rho_normloss[i]),
            fmt(s.rho_model[i]),
            fmt(s.cum_fraction[i]),
        ];
        if let Some(tag) = model_tag {
            rec.push(tag.to_owned());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn fmt(v: f64) -> String {
    format!("{v:.12e}")
}

/// One row per particle: `particle_id, tau, x, y, z, status`.
///
/// Position columns hold the hit or absorption place, or the last position
/// of particles that never terminated.
pub fn write_arrivals(path: &Path, particles: &[Particle]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["particle_id", "tau", "x", "y", "z", "status"])?;
    for (id, p) in particles.iter().enumerate() {
        let place = p.place.unwrap_or(p.position);
        w.write_record([
            id.to_string(),
            p.time.map(fmt).unwrap_or_default(),
            fmt(place[0]),
            fmt(place[1]),
            fmt(place[2]),
            p.status.as_str().to_owned(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_histogram(path: &Path, h: &Histogram) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t_lo", "t_hi", "count", "density"])?;
    for i in 0..h.counts.len() {
        w.write_record([fmt(h.edges[i]), fmt(h.edges[i + 1]), h.counts[i].to_string(), fmt(h.density[i])])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_checkpoints(path: &Path, cps: &[Checkpoint]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "x", "y", "z"])?;
    for cp in cps {
        for q in &cp.positions {
            w.write_record([fmt(cp.time), fmt(q[0]), fmt(q[1]), fmt(q[2])])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace(path: &Path, trace: &[TracePoint]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["particle_id", "t", "x", "y", "z"])?;
    for p in trace {
        w.write_record([
            p.particle_id.to_string(),
            fmt(p.time),
            fmt(p.position[0]),
            fmt(p.position[1]),
            fmt(p.position[2]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `|Psi|^2` whenever the clock first reaches a scheduled time.
pub struct SnapshotWriter {
    dir: PathBuf,
    format: SnapshotFormat,
    pending: Vec<f64>,
    pub written: Vec<PathBuf>,
}

impl SnapshotWriter {
    pub fn new(dir: PathBuf, format: SnapshotFormat, mut times: Vec<f64>) -> Result<Self, CliError> {
        times.sort_by(f64::total_cmp);
        std::fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            format,
            pending: times,
            written: Vec::new(),
        })
    }

    /// Dump `density` (node `l` at `coords(l)`) if a snapshot is due at `t`.
    pub fn offer(&mut self, t: f64, dt: f64, density: impl Fn() -> Vec<f64>, coords: impl Fn(usize) -> [f64; 3]) -> Result<(), CliError> {
        while let Some(&due) = self.pending.first() {
            if due > t + 0.5 * dt {
                break;
            }
            self.pending.remove(0);
            let rho = density();
            let stem = format!("density_t{t:010.4}");
            let path = match self.format {
                SnapshotFormat::Csv => {
                    let path = self.dir.join(format!("{stem}.csv"));
                    let mut w = csv::Writer::from_path(&path)?;
                    w.write_record(["x", "y", "z", "density"])?;
                    for (l, r) in rho.iter().enumerate() {
                        let q = coords(l);
                        w.write_record([fmt(q[0]), fmt(q[1]), fmt(q[2]), fmt(*r)])?;
                    }
                    w.flush()?;
                    path
                }
                SnapshotFormat::Binary => {
                    let path = self.dir.join(format!("{stem}.bin"));
                    let mut w = BufWriter::new(File::create(&path)?);
                    for r in &rho {
                        w.write_all(&r.to_le_bytes())?;
                    }
                    w.flush()?;
                    path
                }
            };
            self.written.push(path);
        }
        Ok(())
    }
}

impl Observer for SnapshotWriter {
    fn observe(&mut self, step: usize, t: f64, dt: f64, before: &SpinorField, after: &SpinorField) -> Result<(), ObserverError> {
        let g = *after.grid();
        if step == 0 {
            self.offer(t, dt, || before.density(), |l| g.node_of(l))?;
        }
        self.offer(t + dt, dt, || after.density(), |l| g.node_of(l))?;
        Ok(())
    }
}

/// Tracks the largest lateral-wall amplitude over a run.
pub struct WallMonitor {
    pub max: f64,
}

impl Observer for WallMonitor {
    fn observe(&mut self, _: usize, _: f64, _: f64, _: &SpinorField, after: &SpinorField) -> Result<(), ObserverError> {
        self.max = self.max.max(qdetect_core::model::lateral_wall_amplitude(after));
        Ok(())
    }
}
