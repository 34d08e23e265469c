use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qdetect::config::{RunConfig, SiSection, SweepAxis};
use qdetect::error::CliError;
use qdetect::run::run;
use qdetect::sweep::{converge, sweep, Refinement, SweepOptions};
use qdetect_core::model::{to_si, QuantityKind};

#[derive(Parser)]
#[command(name = "qdetect", version, about = "Detection-time statistics for a particle leaving a trapped slab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration.
    Run {
        config: PathBuf,
        /// Override `outputs.directory`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a configuration over several values of one parameter.
    Sweep {
        config: PathBuf,
        #[arg(long, value_enum)]
        axis: SweepAxis,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Rescale Lx, Ly with the trap width in omega sweeps.
        #[arg(long)]
        scale_transverse: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rerun at refined resolution and report the relative change of mu*.
    Converge {
        config: PathBuf,
        #[arg(long, value_enum, default_value = "dt")]
        refine: Refinement,
        #[arg(long, default_value_t = 2)]
        levels: usize,
        #[arg(long, default_value_t = 2)]
        factor: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Translate a dimensionless value to SI units.
    Units {
        value: f64,
        /// length, time, frequency or kappa.
        #[arg(long)]
        kind: String,
        /// Slab width in metres.
        #[arg(long)]
        d_phys: f64,
        /// Mass in kg; defaults to the species mass.
        #[arg(long)]
        mass: Option<f64>,
        #[arg(long)]
        species: Option<String>,
    },
}

fn load(path: &PathBuf, out: Option<PathBuf>) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(dir) = out {
        cfg.outputs.directory = dir;
    }
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, out } => {
            let o = run(&load(&config, out)?)?;
            let s = &o.summary.run;
            println!(
                "detection_fraction = {:.6}\nmu_star = {:.6}\nsummary = \"{}\"",
                s.detection_fraction,
                s.mu_star,
                o.directory.join("summary.toml").display()
            );
            if let Some(si) = &o.summary.si {
                println!("mu_star_s = {:.6e}", si.mu_star_s);
            }
        }
        Command::Sweep {
            config,
            axis,
            values,
            jobs,
            scale_transverse,
            out,
        } => {
            let opts = SweepOptions {
                parallelism: jobs,
                scale_transverse,
            };
            let r = sweep(&load(&config, out)?, axis, &values, &opts)?;
            for m in &r.members {
                println!(
                    "{} = {:.6}: detection_fraction = {:.6}, mu_star = {:.6}",
                    axis.name(),
                    m.value,
                    m.run.detection_fraction,
                    m.run.mu_star
                );
            }
            if let Some(f) = r.fit {
                println!("fit: mu_star = {:.6} + {:.6} sqrt(omega), rms residual {:.3e}", f.a, f.b, f.rms_residual);
            }
        }
        Command::Converge {
            config,
            refine,
            levels,
            factor,
            out,
        } => {
            for r in converge(&load(&config, out)?, refine, levels, factor)? {
                let eps = r.eps_rel.map(|e| format!("{e:.3e}")).unwrap_or_else(|| "-".into());
                println!(
                    "dt = {:.3e}, N = {}x{}x{}: mu_star = {:.6}, eps_rel = {eps}",
                    r.dt, r.nx, r.ny, r.nz, r.mu_star
                );
            }
        }
        Command::Units {
            value,
            kind,
            d_phys,
            mass,
            species,
        } => {
            let k: QuantityKind = kind.parse().map_err(|e: qdetect_core::model::ModelError| CliError::Config(e.to_string()))?;
            let m = SiSection { d_phys, mass, species }.mass_kg()?;
            let v = to_si(value, k, d_phys, m).map_err(|e| CliError::Config(e.to_string()))?;
            println!("{v:.6e}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.diagnostic());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
