//! `fde-lab` — desk-scale experiments on the fast diffusion equation:
//! extinction runs, stationary profiles, the rescaled flow, stability
//! probes, the thin-annulus symmetry-breaking pipeline, Łojasiewicz fits
//! and built-in invariant checks.
//!
//! Exit codes: 0 success, 1 solver failure, 2 configuration error.

use clap::{Parser, Subcommand};
use fde_lab::config::ExperimentConfig;
use fde_lab::runner;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "fde-lab", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,

    /// Configuration file (TOML); flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Diffusion exponent m (> 2).
    #[arg(long, global = true)]
    m: Option<f64>,

    /// Spatial dimension N.
    #[arg(long = "N", global = true)]
    dim: Option<u32>,

    /// Domain shape: interval, radial or polar2d.
    #[arg(long, global = true)]
    domain: Option<String>,

    /// Inner endpoint / radius.
    #[arg(long, global = true)]
    a: Option<f64>,

    /// Outer endpoint / radius.
    #[arg(long, global = true)]
    b: Option<f64>,

    /// Interior nodes per radial direction.
    #[arg(long, global = true)]
    n: Option<usize>,

    /// Alias of --n for polar grids.
    #[arg(long, global = true)]
    nr: Option<usize>,

    /// Angular nodes of a polar grid (even).
    #[arg(long, global = true)]
    ntheta: Option<usize>,

    /// Initial physical step size.
    #[arg(long, global = true)]
    dt: Option<f64>,

    /// Rescaled-time horizon.
    #[arg(long = "s-horizon", global = true)]
    s_horizon: Option<f64>,

    /// Probe perturbation radius in H^1_0.
    #[arg(long, global = true)]
    delta: Option<f64>,

    /// Probe departure threshold in H^1_0.
    #[arg(long, global = true)]
    epsilon: Option<f64>,

    /// Number of probe samples.
    #[arg(long, global = true)]
    samples: Option<usize>,

    /// Seed for reproducible perturbations.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (default runs/<experiment>).
    #[arg(long, global = true)]
    out: Option<String>,

    /// Initial data kind for evolve/rescaled: profile or random.
    #[arg(long, global = true)]
    init: Option<String>,

    /// Amplitude applied to the initial data.
    #[arg(long, global = true)]
    scale: Option<f64>,

    /// Retain per-sample probe trajectories as CSV.
    #[arg(long = "keep-trajectories", global = true)]
    keep_trajectories: bool,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Cmd {
    /// Physical flow to extinction with rate fitting.
    Evolve,
    /// Least-energy stationary profile (plus shooting cross-check in 1-D).
    Profile,
    /// Rescaled flow from projected initial data.
    Rescaled,
    /// Stability probe of the least-energy profile.
    #[command(name = "stability-probe")]
    StabilityProbe,
    /// Thin-annulus symmetry-breaking pipeline.
    Annulus,
    /// Łojasiewicz exponent fit near the profile.
    #[command(name = "ls-fit")]
    LsFit,
    /// Built-in discretization and scaling self-checks.
    Invariants,
}

impl Cmd {
    fn name(self) -> &'static str {
        match self {
            Cmd::Evolve => "evolve",
            Cmd::Profile => "profile",
            Cmd::Rescaled => "rescaled",
            Cmd::StabilityProbe => "stability-probe",
            Cmd::Annulus => "annulus",
            Cmd::LsFit => "ls-fit",
            Cmd::Invariants => "invariants",
        }
    }
}

fn build_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => {
            let mut cfg = ExperimentConfig::default();
            // the annulus pipeline needs an annulus; give it one when the
            // user provided neither file nor endpoints
            if matches!(cli.cmd, Cmd::Annulus) {
                cfg.params.dim = 2;
                cfg.grid.domain = "polar2d".into();
                cfg.grid.a = 1.0;
                cfg.grid.b = 1.1;
                cfg.grid.n = 32;
                cfg.grid.n_theta = 128;
            }
            cfg
        }
    };
    if let Some(m) = cli.m {
        cfg.params.m = m;
    }
    if let Some(dim) = cli.dim {
        cfg.params.dim = dim;
    }
    if let Some(domain) = &cli.domain {
        cfg.grid.domain = domain.clone();
    }
    if let Some(a) = cli.a {
        cfg.grid.a = a;
    }
    if let Some(b) = cli.b {
        cfg.grid.b = b;
    }
    if let Some(n) = cli.n.or(cli.nr) {
        cfg.grid.n = n;
    }
    if let Some(nt) = cli.ntheta {
        cfg.grid.n_theta = nt;
    }
    if let Some(dt) = cli.dt {
        cfg.evolution.dt_init = dt;
    }
    if let Some(s) = cli.s_horizon {
        cfg.experiment.s_horizon = s;
    }
    if let Some(d) = cli.delta {
        cfg.experiment.delta = d;
    }
    if let Some(e) = cli.epsilon {
        cfg.experiment.epsilon = e;
    }
    if let Some(s) = cli.samples {
        cfg.experiment.samples = s;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = Some(out.clone());
    }
    if let Some(init) = &cli.init {
        cfg.experiment.init = init.clone();
    }
    if let Some(scale) = cli.scale {
        cfg.experiment.scale = scale;
    }
    cfg.experiment.keep_trajectories |= cli.keep_trajectories;

    // validate the configuration up front so bad input exits with 2
    cfg.fde_params()?;
    if matches!(cli.cmd, Cmd::Annulus) {
        if !(cfg.grid.a > 0.0 && cfg.grid.b > cfg.grid.a) {
            anyhow::bail!(
                "annulus requires 0 < a < b (got a = {}, b = {})",
                cfg.grid.a,
                cfg.grid.b
            );
        }
        fde_core::geometry::build_grid(
            fde_core::geometry::GridShape::Polar2d {
                a: cfg.grid.a,
                b: cfg.grid.b,
                n_theta: cfg.grid.n_theta,
            },
            cfg.grid.n,
        )?;
    } else {
        cfg.build_grid()?;
    }
    cfg.physical_evolution().validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match build_config(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("fde-lab: configuration error: {e:#}");
            return ExitCode::from(2);
        }
    };
    match runner::dispatch(cli.cmd.name(), cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fde-lab: {e:#}");
            ExitCode::from(1)
        }
    }
}
