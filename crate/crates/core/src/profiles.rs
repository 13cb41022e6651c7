//! Stationary profiles: nontrivial solutions of
//!
//! ```text
//! -Δφ = λ_m |φ|^{m-2} φ,   φ = 0 on the boundary.
//! ```
//!
//! Two deliberately independent routes are provided.
//!
//! * [`shoot_radial`] integrates the radial ODE with RK4 on a fine
//!   auxiliary mesh and bisects the shooting parameter until the far
//!   boundary value vanishes. Its `residual` reports how well the ODE was
//!   solved on that mesh (boundary mismatch plus a step-doubling error
//!   estimate), so the result can serve as a continuum-accurate oracle for
//!   the grid solvers without being one of them.
//! * [`minimize_rayleigh`] minimizes the Rayleigh quotient `R` over the
//!   discrete unit `Lᵐ` sphere by preconditioned projected gradient descent
//!   (an Armijo-backtracked inverse iteration) and rescales the minimizer
//!   onto the stationary equation. Its `residual` is the discrete
//!   `‖J'(φ)‖_{H⁻¹}` on the grid. By construction `R(φ) = inf R = 1/C_m`
//!   on the grid.
//!
//! On a polar annulus the minimizer may break radial symmetry: when the
//! thinness condition `(b/a)^{(N-3)_+}((b-a)/(πa))² < (m-2)/(N-1)` holds,
//! the least-energy state is non-radial and the positive radial solution is
//! only a saddle. [`instability_threshold`] evaluates that condition and
//! [`is_radial`] measures the angular variance of a polar field.

use crate::error::{Error, Result};
use crate::functionals::{
    energy_j, jprime_hminus1, l2_norm, lm_norm, mass_field, rayleigh_r,
};
use crate::geometry::{Field, GridShape, LaplaceOperator};
use crate::params::{abs_pow, signed_pow, FdeParams};
use alloc::format;
use alloc::vec::Vec;

/// Solver that produced a profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileMethod {
    Shooting,
    RayleighMin,
    RescaledFlowLimit,
}

/// A stationary profile with its quality measures.
#[derive(Debug, Clone)]
pub struct ProfileResult {
    pub phi: Field,
    /// Shooting: ODE accuracy on the fine mesh (boundary mismatch plus
    /// step-doubling estimate). Minimization: discrete `‖J'(φ)‖_{H⁻¹}`.
    pub residual: f64,
    pub energy: f64,
    pub rayleigh: f64,
    /// Angular-variance verdict on polar grids, `None` elsewhere.
    pub is_radial: Option<bool>,
    pub method: ProfileMethod,
}

/// Acceptance bound for profile residuals.
pub const PROFILE_RESIDUAL_TOL: f64 = 1e-8;
/// Target driven past the acceptance bound during minimization.
const MINIMIZE_TARGET: f64 = 1e-9;
/// Angular-variance tolerance below which a polar field counts as radial.
pub const RADIAL_VARIANCE_TOL: f64 = 1e-6;

/// Smooth positive initializer: a few rounds of power iteration on the
/// Poisson solve, converging toward the first Dirichlet eigenvector.
pub fn default_initializer(op: &LaplaceOperator) -> Result<Field> {
    let grid = op.grid();
    let ones: Vec<f64> = core::iter::repeat_n(1.0, grid.interior_count()).collect();
    let mut v = Field::from_values(grid, ones)?;
    for _ in 0..15 {
        v = op.solve_poisson(&v)?;
        let norm = l2_norm(&v);
        if norm == 0.0 {
            return Err(Error::ZeroField);
        }
        v = v.scale(1.0 / norm);
    }
    Ok(v)
}

/// Radial ODE right-hand side for `(φ, ψ = φ')` with reaction coefficient
/// `lambda`; the origin uses the regular limit `φ''(0) = -λ M(φ)/N`.
#[inline]
fn radial_rhs(r: f64, phi: f64, psi: f64, dim: f64, lambda: f64, q: f64) -> (f64, f64) {
    let react = -lambda * signed_pow(phi, q);
    if r == 0.0 {
        (psi, react / dim)
    } else {
        (psi, react - (dim - 1.0) * psi / r)
    }
}

/// RK4 sweep of the radial ODE from `r0` with initial data `(phi0, psi0)`,
/// sampling at every `sample_every`-th fine node. Returns the samples and
/// the terminal `φ(b)`.
fn integrate_radial(
    r0: f64,
    b: f64,
    phi0: f64,
    psi0: f64,
    steps: usize,
    sample_every: usize,
    dim: f64,
    lambda: f64,
    q: f64,
) -> (Vec<f64>, f64) {
    let hf = (b - r0) / steps as f64;
    let mut phi = phi0;
    let mut psi = psi0;
    let mut samples = Vec::with_capacity(steps / sample_every.max(1) + 1);
    for k in 0..steps {
        if sample_every > 0 && k % sample_every == 0 {
            samples.push(phi);
        }
        let r = r0 + k as f64 * hf;
        let (k1p, k1s) = radial_rhs(r, phi, psi, dim, lambda, q);
        let (k2p, k2s) =
            radial_rhs(r + 0.5 * hf, phi + 0.5 * hf * k1p, psi + 0.5 * hf * k1s, dim, lambda, q);
        let (k3p, k3s) =
            radial_rhs(r + 0.5 * hf, phi + 0.5 * hf * k2p, psi + 0.5 * hf * k2s, dim, lambda, q);
        let (k4p, k4s) = radial_rhs(r + hf, phi + hf * k3p, psi + hf * k3s, dim, lambda, q);
        phi += hf / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
        psi += hf / 6.0 * (k1s + 2.0 * k2s + 2.0 * k3s + k4s);
    }
    if sample_every > 0 {
        samples.push(phi);
    }
    (samples, phi)
}

/// Shooting solve with an explicit reaction coefficient (the public entry
/// fixes `lambda = λ_m`; tests use other values to check homogeneity).
fn shoot_with_lambda(
    op: &LaplaceOperator,
    p: &FdeParams,
    lambda: f64,
) -> Result<ProfileResult> {
    let grid = op.grid();
    let shape = grid.shape();
    let (dim, a, b) = match shape {
        GridShape::Interval { a, b } => (1.0, a, b),
        GridShape::Radial { dim, a, b } => (dim as f64, a, b),
        GridShape::Polar2d { .. } => return Err(Error::WrongGridShape),
    };
    let q = p.m() - 2.0;
    let ball = grid.is_ball();
    let cells = grid.r_nodes().len() - 1;
    // fine mesh: a multiple of the grid cells, at least ~8k RK4 steps
    let sub = 8192_usize.div_ceil(cells);
    let steps = cells * sub;

    // terminal boundary value as a function of the shooting parameter
    let terminal = |param: f64| -> f64 {
        if ball {
            integrate_radial(0.0, b, param, 0.0, steps, 0, dim, lambda, q).1
        } else {
            integrate_radial(a, b, 0.0, param, steps, 0, dim, lambda, q).1
        }
    };

    // bracket [lo, hi] with terminal(lo) > 0 > terminal(hi)
    let mut lo = 1.0;
    let mut glo = terminal(lo);
    let mut halvings = 0;
    while glo <= 0.0 {
        lo *= 0.5;
        glo = terminal(lo);
        halvings += 1;
        if halvings > 200 {
            return Err(Error::ShootingBracketFailure);
        }
    }
    let mut hi = lo;
    let mut ghi = glo;
    let mut doublings = 0;
    while ghi > 0.0 {
        hi *= 2.0;
        ghi = terminal(hi);
        doublings += 1;
        if doublings > 200 {
            return Err(Error::ShootingBracketFailure);
        }
    }

    // bisection to machine resolution of the parameter
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if terminal(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let param = 0.5 * (lo + hi);

    // converged sweep, sampled at the grid nodes, plus step-doubled error estimate
    let (r0, phi0, psi0) =
        if ball { (0.0, param, 0.0) } else { (a, 0.0, param) };
    let (coarse, mismatch) =
        integrate_radial(r0, b, phi0, psi0, steps, sub, dim, lambda, q);
    let (fine, _) = integrate_radial(r0, b, phi0, psi0, 2 * steps, 2 * sub, dim, lambda, q);
    let mut amplitude = 0.0f64;
    let mut rk4_err = 0.0f64;
    for (c, f) in coarse.iter().zip(&fine) {
        amplitude = amplitude.max(libm::fabs(*c));
        rk4_err = rk4_err.max(libm::fabs(c - f));
    }
    rk4_err /= 15.0; // RK4 step-doubling: error ~ (coarse - fine)/(2^4 - 1)
    if amplitude == 0.0 {
        return Err(Error::ShootingBracketFailure);
    }
    let boundary_rel = libm::fabs(mismatch) / amplitude;
    if boundary_rel > 1e-10 {
        return Err(Error::NonConvergence { iterations: 200, residual: boundary_rel });
    }

    // nodal values: samples align with r_nodes; interior slice per shape
    let values: Vec<f64> = if ball {
        (0..grid.resolution()).map(|j| coarse[j]).collect()
    } else {
        (0..grid.resolution()).map(|j| coarse[j + 1]).collect()
    };
    let phi = Field::from_values(grid, values)?;
    if phi.values().iter().any(|&v| v < -1e-12 * amplitude) {
        return Err(Error::NonConvergence { iterations: 0, residual: f64::NAN });
    }

    let energy = energy_j(op, &phi, p)?;
    let rayleigh = rayleigh_r(op, &phi, p)?;
    Ok(ProfileResult {
        phi,
        residual: boundary_rel + rk4_err / amplitude,
        energy,
        rayleigh,
        is_radial: None,
        method: ProfileMethod::Shooting,
    })
}

/// Positive radial profile by shooting: bisection on the inner slope
/// (annulus, interval) or the center value (ball), RK4 integration on a
/// fine mesh, boundary mismatch at most `1e-10` relative.
pub fn shoot_radial(op: &LaplaceOperator, p: &FdeParams) -> Result<ProfileResult> {
    shoot_with_lambda(op, p, p.lambda_m())
}

/// Least-energy profile by Rayleigh minimization on the unit `Lᵐ` sphere.
///
/// The descent direction is the Poisson-preconditioned constrained
/// gradient, so a unit Armijo step is one inverse iteration
/// `w ← μ (-Δ)⁻¹ M(w)`; backtracking halves the step while the Rayleigh
/// value fails to decrease. The minimizer `ψ` is rescaled by
/// `c = (‖∇ψ‖²/λ_m)^{1/(m-2)}` so that `φ = cψ` solves the stationary
/// equation; the returned residual is the discrete `‖J'(φ)‖_{H⁻¹}`.
pub fn minimize_rayleigh(
    op: &LaplaceOperator,
    p: &FdeParams,
    init: &Field,
) -> Result<ProfileResult> {
    let grid = op.grid();
    if !init.on_grid(grid) {
        return Err(Error::GridMismatch);
    }
    init.assert_finite()?;
    let init_norm = lm_norm(init, p);
    if init_norm == 0.0 {
        return Err(Error::ZeroField);
    }

    let exponent = 1.0 / (p.m() - 2.0);
    let mut w = init.scale(1.0 / init_norm);
    let mut mu = op.h10_inner(&w, &w)?;
    let max_iter = 4000;
    let mut converged = false;

    for _ in 0..max_iter {
        // preconditioned constrained gradient: d = mu * (-Δ)^{-1} M(w) - w
        let y = op.solve_poisson(&mass_field(&w, p))?;
        let d = y.scale(mu).add_scaled(-1.0, &w)?;
        // stationarity in the units of the rescaled profile phi = c w:
        // ||J'(c w)||_{H^-1} = c ||d||_{H^1_0} exactly
        let c = abs_pow(mu / p.lambda_m(), exponent);
        let d_h10 = libm::sqrt(op.h10_inner(&d, &d)?.max(0.0));
        let stop = MINIMIZE_TARGET.max(5e-14 * c * libm::sqrt(mu));
        if c * d_h10 <= stop {
            converged = true;
            break;
        }

        // Armijo backtracking from a full inverse-iteration step
        let r_now = libm::sqrt(mu); // R(w) on the unit sphere
        let mut alpha = 1.0;
        let mut advanced = false;
        for _ in 0..40 {
            let trial = w.add_scaled(alpha, &d)?;
            let tn = lm_norm(&trial, p);
            if tn > 0.0 {
                let trial = trial.scale(1.0 / tn);
                let mu_trial = op.h10_inner(&trial, &trial)?;
                if libm::sqrt(mu_trial) <= r_now * (1.0 + 1e-14) {
                    w = trial;
                    mu = mu_trial;
                    advanced = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !advanced {
            break; // at the numerical floor; the residual check decides
        }
    }

    // rescale onto the stationary equation
    let c = abs_pow(mu / p.lambda_m(), exponent);
    let mut phi = w.scale(c);
    // settle the sign convention: profiles are returned nonnegative
    let mean: f64 = phi.values().iter().sum();
    if mean < 0.0 {
        phi = phi.scale(-1.0);
    }
    let residual = jprime_hminus1(op, &phi, p)?;
    if !converged && residual > PROFILE_RESIDUAL_TOL {
        return Err(Error::NonConvergence { iterations: max_iter, residual });
    }
    let energy = energy_j(op, &phi, p)?;
    let rayleigh = rayleigh_r(op, &phi, p)?;
    let radial_flag = if grid.is_polar() {
        Some(is_radial(&phi, RADIAL_VARIANCE_TOL)?)
    } else {
        None
    };
    Ok(ProfileResult {
        phi,
        residual,
        energy,
        rayleigh,
        is_radial: radial_flag,
        method: ProfileMethod::RayleighMin,
    })
}

/// Left-hand side and verdict of the thin-annulus instability condition
/// `(b/a)^{(N-3)_+} ((b-a)/(πa))² < (m-2)/(N-1)`.
pub fn instability_threshold(a: f64, b: f64, dim: u32, m: f64) -> Result<(f64, bool)> {
    if !(a > 0.0 && b > a) {
        return Err(Error::InvalidGeometry(format!("need 0 < a < b, got a = {a}, b = {b}")));
    }
    if dim < 2 {
        return Err(Error::InvalidGeometry(format!("annulus dimension must be >= 2, got {dim}")));
    }
    let n = dim as f64;
    let ratio = (b - a) / (core::f64::consts::PI * a);
    let lhs = libm::pow(b / a, (n - 3.0).max(0.0)) * ratio * ratio;
    Ok((lhs, lhs < (m - 2.0) / (n - 1.0)))
}

/// Quadrature-weighted angular variance of a polar field, normalized by
/// `‖φ‖²_{L²}`: zero exactly for `θ`-independent fields.
pub fn angular_variance(phi: &Field) -> Result<f64> {
    let grid = phi.grid();
    if !grid.is_polar() {
        return Err(Error::WrongGridShape);
    }
    let nt = grid.theta_nodes().len();
    let n = grid.resolution();
    let w = grid.interior_weights();
    let v = phi.values();
    let mut variance = 0.0;
    let mut norm2 = 0.0;
    for i in 0..n {
        let row = i * nt;
        let mean: f64 = v[row..row + nt].iter().sum::<f64>() / nt as f64;
        for k in 0..nt {
            let idx = row + k;
            let dev = v[idx] - mean;
            variance += w[idx] * dev * dev;
            norm2 += w[idx] * v[idx] * v[idx];
        }
    }
    if norm2 == 0.0 {
        return Ok(0.0);
    }
    Ok(variance / norm2)
}

/// `true` when the normalized angular variance is below `tol`.
pub fn is_radial(phi: &Field, tol: f64) -> Result<bool> {
    Ok(angular_variance(phi)? < tol)
}
