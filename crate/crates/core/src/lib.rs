//! Numerical core for the fast diffusion equation `∂_t(|u|^{m-2}u) = Δu`
//! with homogeneous Dirichlet data and supercritical-homogeneity exponent
//! `m > 2`, where every solution vanishes in finite time.
//!
//! The crate provides the pieces needed to study extinction and the
//! asymptotic shape of vanishing solutions at desk scale:
//!
//! * [`geometry`] — uniform grids on intervals, radial balls/annuli and a
//!   2-D polar annulus, with quadrature weights and a discrete Laplacian
//!   that is exactly symmetric and negative semidefinite under the
//!   quadrature inner product.
//! * [`functionals`] — norms, the energy `J`, the Rayleigh quotient `R`,
//!   Nehari/phase-set scalings and the scalar inequalities used by the
//!   monitors.
//! * [`evolution`] — implicit physical-time stepping with extinction-time
//!   estimation and extinction-rate fitting.
//! * [`rescaled`] — the rescaled flow `v(s) = (t*-t)^{-1/(m-2)} u(t)`,
//!   `s = log(t*/(t*-t))`, with Lyapunov monitors, a-priori-bound checks
//!   and continuous-dependence diagnostics.
//! * [`profiles`] — stationary solutions of `-Δφ = λ_m |φ|^{m-2}φ` by
//!   radial shooting and constrained Rayleigh minimization.
//! * [`experiments`] — stability probes, instability certificates and the
//!   Łojasiewicz exponent fit built on top of the solvers.
//!
//! The crate is `no_std` + `alloc`; all transcendental math goes through
//! `libm` so results are bit-reproducible across std and no-std builds.

#![cfg_attr(not(test), no_std)]
#![allow(clippy::too_many_arguments)]

extern crate alloc;

pub mod error;
pub mod evolution;
pub mod experiments;
mod fitting;
pub mod functionals;
pub mod geometry;
pub mod params;
pub mod profiles;
pub mod rescaled;

pub use error::{Error, Result};
pub use geometry::{build_grid, Field, Grid, GridShape, LaplaceOperator};
pub use params::FdeParams;
