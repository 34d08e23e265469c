//! Parameter sweeps and convergence checks.

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use qdetect_core::model::DetectorKind;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, SweepAxis};
use crate::error::CliError;
use crate::run::{read_summary, run, RunSummary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepMember {
    pub index: usize,
    pub value: f64,
    pub directory: PathBuf,
    pub run: RunSummary,
}

/// Least-squares fit `mu* = a + b sqrt(omega)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SqrtFit {
    pub a: f64,
    pub b: f64,
    pub rms_residual: f64,
    pub max_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub members: Vec<SweepMember>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<SqrtFit>,
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub parallelism: usize,
    /// For omega sweeps, rescale `Lx`, `Ly` by `sqrt(omega_base / omega)` at
    /// fixed node counts so the box keeps its size in trap widths.
    pub scale_transverse: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            parallelism: 1,
            scale_transverse: false,
        }
    }
}

/// Configuration of sweep member `index`, written under `member_<index>`.
pub fn member_config(base: &RunConfig, axis: SweepAxis, value: f64, index: usize, opts: &SweepOptions) -> RunConfig {
    let mut c = base.clone();
    if axis == SweepAxis::Omega && opts.scale_transverse {
        let s = (base.physics.omega / value).sqrt();
        c.geometry.lx *= s;
        c.geometry.ly *= s;
    }
    c.set_parameter(axis, value);
    c.outputs.directory = base.outputs.directory.join(format!("member_{index}"));
    c
}

/// Run every value, then collate from the member summaries on disk.
///
/// Members run on up to `opts.parallelism` threads. A failing member aborts
/// collation after all started members finish; completed artifacts stay.
pub fn sweep(base: &RunConfig, axis: SweepAxis, values: &[f64], opts: &SweepOptions) -> Result<SweepReport, CliError> {
    if values.is_empty() {
        return Err(CliError::Config("sweep needs at least one value".into()));
    }
    let configs: Vec<RunConfig> = values
        .iter()
        .enumerate()
        .map(|(i, &v)| member_config(base, axis, v, i, opts))
        .collect();
    for c in &configs {
        c.resolve()?;
    }
    std::fs::create_dir_all(&base.outputs.directory)?;

    let next = Mutex::new(0usize);
    let first_error: Mutex<Option<(usize, CliError)>> = Mutex::new(None);
    let workers = opts.parallelism.clamp(1, configs.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = {
                    let mut n = next.lock().unwrap();
                    if *n >= configs.len() || first_error.lock().unwrap().is_some() {
                        return;
                    }
                    *n += 1;
                    *n - 1
                };
                if let Err(e) = run(&configs[i]) {
                    let mut slot = first_error.lock().unwrap();
                    if slot.as_ref().is_none_or(|(j, _)| i < *j) {
                        *slot = Some((i, e));
                    }
                }
            });
        }
    });
    if let Some((i, e)) = first_error.into_inner().unwrap() {
        return Err(match e {
            CliError::Config(m) => CliError::Config(format!("member {i}: {m}")),
            CliError::Solver(m) => CliError::Solver(format!("member {i}: {m}")),
            CliError::OracleInvalid(m) => CliError::OracleInvalid(format!("member {i}: {m}")),
            other => other,
        });
    }

    let mut members = Vec::with_capacity(configs.len());
    for (i, (c, &v)) in configs.iter().zip(values).enumerate() {
        let s = read_summary(&c.outputs.directory)?;
        members.push(SweepMember {
            index: i,
            value: v,
            directory: c.outputs.directory.clone(),
            run: s.run,
        });
    }
    let fit = (axis == SweepAxis::Omega && base.detector.kind == DetectorKind::AbcSpinor && members.len() >= 2)
        .then(|| {
            let x: Vec<f64> = members.iter().map(|m| m.value.sqrt()).collect();
            let y: Vec<f64> = members.iter().map(|m| m.run.mu_star).collect();
            fit_linear(&x, &y)
        })
        .flatten();
    let report = SweepReport { axis, members, fit };
    write_sweep(&base.outputs.directory, &report)?;
    Ok(report)
}

/// Ordinary least squares `y = a + b x`; `None` when all `x` coincide.
pub fn fit_linear(x: &[f64], y: &[f64]) -> Option<SqrtFit> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let res: Vec<f64> = x.iter().zip(y).map(|(xi, yi)| yi - (a + b * xi)).collect();
    Some(SqrtFit {
        a,
        b,
        rms_residual: (res.iter().map(|r| r * r).sum::<f64>() / n).sqrt(),
        max_residual: res.iter().fold(0.0, |m, r| m.max(r.abs())),
    })
}

fn write_sweep(dir: &Path, report: &SweepReport) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(dir.join("sweep.csv"))?;
    w.write_record([
        "index",
        report.axis.name(),
        "detection_fraction",
        "mu_star",
        "mean_tau",
        "complete",
        "directory",
    ])?;
    for m in &report.members {
        w.write_record([
            m.index.to_string(),
            format!("{:.12e}", m.value),
            format!("{:.12e}", m.run.detection_fraction),
            format!("{:.12e}", m.run.mu_star),
            m.run.mean_tau.map(|t| format!("{t:.12e}")).unwrap_or_default(),
            m.run.complete.to_string(),
            m.directory.display().to_string(),
        ])?;
    }
    w.flush()?;
    let text = toml::to_string(report).map_err(|e| CliError::Config(e.to_string()))?;
    std::fs::write(dir.join("sweep.toml"), text)?;
    Ok(())
}

/// Which resolution to refine in a convergence check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Refinement {
    /// Halve `dt`.
    Dt,
    /// Double `Nz` at fixed `Lz`.
    Nz,
    /// Multiply `Nx` and `Ny` by the factor.
    Nxy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub dt: f64,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub mu_star: f64,
    pub detection_fraction: f64,
    /// `|mu*_fine - mu*_coarse| / mu*_fine`, absent on the base row.
    pub eps_rel: Option<f64>,
}

/// Rerun `base` at successively refined resolution and report the relative
/// change of mu* between neighbouring levels.
pub fn converge(base: &RunConfig, refine: Refinement, levels: usize, factor: usize) -> Result<Vec<ConvergenceRow>, CliError> {
    if levels < 2 {
        return Err(CliError::Config("a convergence check needs at least two levels".into()));
    }
    if factor < 2 {
        return Err(CliError::Config("the refinement factor must be at least 2".into()));
    }
    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(levels);
    let mut cfg = base.clone();
    for level in 0..levels {
        cfg.outputs.directory = base.outputs.directory.join(format!("level_{level}"));
        let out = run(&cfg)?;
        let mu = out.summary.run.mu_star;
        let eps_rel = rows.last().map(|r| (mu - r.mu_star).abs() / mu.abs());
        rows.push(ConvergenceRow {
            dt: cfg.numerics.dt,
            nx: cfg.geometry.nx,
            ny: cfg.geometry.ny,
            nz: cfg.geometry.nz,
            mu_star: mu,
            detection_fraction: out.summary.run.detection_fraction,
            eps_rel,
        });
        match refine {
            Refinement::Dt => cfg.numerics.dt /= factor as f64,
            Refinement::Nz => cfg.geometry.nz *= factor,
            Refinement::Nxy => {
                cfg.geometry.nx *= factor;
                cfg.geometry.ny *= factor;
            }
        }
    }
    let mut w = csv::Writer::from_path(base.outputs.directory.join("convergence.csv"))?;
    w.write_record(["dt", "Nx", "Ny", "Nz", "mu_star", "detection_fraction", "eps_rel"])?;
    for r in &rows {
        w.write_record([
            format!("{:.12e}", r.dt),
            r.nx.to_string(),
            r.ny.to_string(),
            r.nz.to_string(),
            format!("{:.12e}", r.mu_star),
            format!("{:.12e}", r.detection_fraction),
            r.eps_rel.map(|e| format!("{e:.12e}")).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(rows)
}
