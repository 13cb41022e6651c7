//! Experiment harness for the fast diffusion laboratory: configuration,
//! file formats and the drivers behind the `fde-lab` CLI.

pub mod config;
pub mod io;
pub mod runner;
