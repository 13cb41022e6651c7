//! Experiment configuration: a TOML file with one section per concern,
//! overridable field by field from the command line.

use anyhow::{bail, Context};
use fde_core::evolution::EvolutionConfig;
use fde_core::geometry::{build_grid, Grid, GridShape};
use fde_core::params::FdeParams;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Arc;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ParamsSection {
    pub m: f64,
    pub dim: u32,
}

impl Default for ParamsSection {
    fn default() -> Self {
        ParamsSection { m: 3.0, dim: 1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSection {
    /// One of `interval`, `radial`, `polar2d`.
    pub domain: String,
    pub a: f64,
    pub b: f64,
    /// Interior nodes per radial direction.
    pub n: usize,
    /// Angular nodes (polar only).
    pub n_theta: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection { domain: "interval".into(), a: 0.0, b: 1.0, n: 256, n_theta: 128 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvolutionSection {
    pub dt_init: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub newton_tol: f64,
    pub extinction_norm_floor: f64,
    pub max_steps: usize,
    pub snapshot_stride: usize,
    /// Largest relative Lᵐ drop per accepted step.
    pub drop_max: f64,
    /// Maximum step of the rescaled flow (its time variable is `s`).
    pub ds_max: f64,
}

impl Default for EvolutionSection {
    fn default() -> Self {
        let d = EvolutionConfig::default();
        EvolutionSection {
            dt_init: d.dt_init,
            dt_min: d.dt_min,
            dt_max: d.dt_max,
            newton_tol: d.newton_tol,
            extinction_norm_floor: d.extinction_norm_floor,
            max_steps: d.max_steps,
            snapshot_stride: d.snapshot_stride,
            drop_max: d.drop_max,
            ds_max: 0.05,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSection {
    /// Rescaled-time horizon of probes and rescaled runs.
    pub s_horizon: f64,
    /// Probe perturbation radius; `0` means `1e-2 · ‖φ‖_{H¹₀}`.
    pub delta: f64,
    /// Probe departure threshold; `0` means `10 · delta`.
    pub epsilon: f64,
    pub samples: usize,
    /// Initial data of `evolve`/`rescaled`: `profile` or `random`.
    pub init: String,
    /// Amplitude applied to the initial data.
    pub scale: f64,
    /// Retain per-sample probe trajectories as CSV.
    pub keep_trajectories: bool,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            s_horizon: 20.0,
            delta: 0.0,
            epsilon: 0.0,
            samples: 8,
            init: "profile".into(),
            scale: 1.0,
            keep_trajectories: false,
        }
    }
}

/// Full experiment configuration; this struct is the manifest echo.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub params: ParamsSection,
    pub grid: GridSection,
    pub evolution: EvolutionSection,
    pub experiment: ExperimentSection,
    pub seed: u64,
    pub output_dir: Option<String>,
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("read {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parse {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).unwrap_or_default()
    }

    pub fn fde_params(&self) -> anyhow::Result<FdeParams> {
        FdeParams::new(self.params.m, self.params.dim).map_err(Into::into)
    }

    pub fn build_grid(&self) -> anyhow::Result<Arc<Grid>> {
        let g = &self.grid;
        let shape = match g.domain.as_str() {
            "interval" => GridShape::Interval { a: g.a, b: g.b },
            "radial" => GridShape::Radial { dim: self.params.dim, a: g.a, b: g.b },
            "polar2d" => GridShape::Polar2d { a: g.a, b: g.b, n_theta: g.n_theta },
            other => bail!("unknown domain {other:?} (expected interval, radial or polar2d)"),
        };
        build_grid(shape, g.n).map_err(Into::into)
    }

    /// Step policy for the physical flow.
    pub fn physical_evolution(&self) -> EvolutionConfig {
        let e = &self.evolution;
        EvolutionConfig {
            dt_init: e.dt_init,
            dt_min: e.dt_min,
            dt_max: e.dt_max,
            newton_tol: e.newton_tol,
            extinction_norm_floor: e.extinction_norm_floor,
            norm_reference: 1.0,
            max_steps: e.max_steps,
            snapshot_stride: e.snapshot_stride,
            drop_max: e.drop_max,
        }
    }

    /// Step policy for the rescaled flow (larger cap, `s` units).
    pub fn rescaled_evolution(&self) -> EvolutionConfig {
        let mut cfg = self.physical_evolution();
        cfg.dt_init = cfg.dt_init.min(self.evolution.ds_max);
        cfg.dt_max = self.evolution.ds_max;
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.params.m, 3.0);
        assert_eq!(back.grid.n, 256);
        assert_eq!(back.seed, 0);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let text = "[params]\nm = 4.0\n\n[grid]\ndomain = \"radial\"\na = 1.0\nb = 2.0\nn = 64\n";
        let cfg: ExperimentConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.params.m, 4.0);
        assert_eq!(cfg.params.dim, 1); // default
        assert_eq!(cfg.grid.n, 64);
        assert_eq!(cfg.evolution.max_steps, 200_000);
    }

    #[test]
    fn grid_construction_honors_domain() {
        let mut cfg = ExperimentConfig::default();
        cfg.grid.domain = "polar2d".into();
        cfg.grid.a = 1.0;
        cfg.grid.b = 1.1;
        cfg.grid.n = 16;
        cfg.grid.n_theta = 32;
        let grid = cfg.build_grid().unwrap();
        assert!(grid.is_polar());
        cfg.grid.domain = "nonsense".into();
        assert!(cfg.build_grid().is_err());
    }
}
