//! Norms, the energy `J`, the Rayleigh quotient `R` and the scalar
//! inequalities used by the flow monitors.
//!
//! With `λ_m = (m-1)/(m-2)` the energy is
//!
//! ```text
//! J(w) = ½ ‖w‖²_{H¹₀} − (λ_m/m) ‖w‖ᵐ_{Lᵐ},
//! ```
//!
//! a Lyapunov functional of the rescaled flow whose critical points are the
//! stationary profiles. The `H¹₀` norm is evaluated as `√⟨-Δw, w⟩` with the
//! discrete operator, so norm and operator are compatible by construction.
//! `R(w) = ‖w‖_{H¹₀}/‖w‖_{Lᵐ}` is scale-invariant and nonincreasing along
//! both flows; its infimum over nonzero fields is the reciprocal of the
//! Sobolev–Poincaré constant `C_m`.

use crate::error::{Error, Result};
use crate::evolution::{estimate_extinction_time, EvolutionConfig};
use crate::geometry::{Field, LaplaceOperator};
use crate::params::{abs_pow, signed_pow, FdeParams};

/// `‖w‖_{Lᵐ}` with quadrature weights.
pub fn lm_norm(w: &Field, p: &FdeParams) -> f64 {
    abs_pow(lm_norm_pow(w, p), 1.0 / p.m())
}

/// `‖w‖ᵐ_{Lᵐ}` (the quantity the energy identities track directly).
pub fn lm_norm_pow(w: &Field, p: &FdeParams) -> f64 {
    let m = p.m();
    w.values()
        .iter()
        .zip(w.grid().interior_weights())
        .map(|(&v, &wj)| wj * abs_pow(v, m))
        .sum()
}

/// `‖w‖_{L²}` with quadrature weights.
pub fn l2_norm(w: &Field) -> f64 {
    let acc: f64 = w
        .values()
        .iter()
        .zip(w.grid().interior_weights())
        .map(|(&v, &wj)| wj * v * v)
        .sum();
    libm::sqrt(acc)
}

/// Max-norm over the nodes.
pub fn linf_norm(w: &Field) -> f64 {
    w.values().iter().fold(0.0, |acc, &v| acc.max(libm::fabs(v)))
}

/// `‖w‖_{H¹₀} = √⟨-Δw, w⟩`.
pub fn h10_norm(op: &LaplaceOperator, w: &Field) -> Result<f64> {
    Ok(libm::sqrt(op.h10_inner(w, w)?.max(0.0)))
}

/// Nodal mass nonlinearity `|w|^{m-2} w`.
pub fn mass_field(w: &Field, p: &FdeParams) -> Field {
    let q = p.m() - 2.0;
    w.map(|v| signed_pow(v, q))
}

/// Nodal half-power transform `|w|^{(m-2)/2} w` (dissipation density).
pub fn half_mass_field(w: &Field, p: &FdeParams) -> Field {
    let q = 0.5 * (p.m() - 2.0);
    w.map(|v| signed_pow(v, q))
}

/// Energy `J(w) = ½‖w‖²_{H¹₀} − (λ_m/m)‖w‖ᵐ_{Lᵐ}`.
pub fn energy_j(op: &LaplaceOperator, w: &Field, p: &FdeParams) -> Result<f64> {
    let dirichlet = op.h10_inner(w, w)?;
    Ok(0.5 * dirichlet - p.lambda_m() / p.m() * lm_norm_pow(w, p))
}

/// Rayleigh quotient `R(w) = ‖w‖_{H¹₀}/‖w‖_{Lᵐ}`; errors on the zero field.
pub fn rayleigh_r(op: &LaplaceOperator, w: &Field, p: &FdeParams) -> Result<f64> {
    let lm = lm_norm(w, p);
    if lm == 0.0 {
        return Err(Error::ZeroField);
    }
    Ok(h10_norm(op, w)? / lm)
}

/// Fréchet derivative of `J` under the quadrature pairing:
/// `J'(w) = -Δw - λ_m |w|^{m-2} w`.
pub fn frechet_jprime(op: &LaplaceOperator, w: &Field, p: &FdeParams) -> Result<Field> {
    let lap = op.apply(w)?;
    let lambda = p.lambda_m();
    let q = p.m() - 2.0;
    let values = lap
        .values()
        .iter()
        .zip(w.values())
        .map(|(&l, &v)| -l - lambda * signed_pow(v, q))
        .collect();
    Field::from_values(w.grid(), values)
}

/// Dual norm `‖f‖_{H⁻¹} = √⟨(-Δ)⁻¹ f, f⟩`.
pub fn hminus1_norm(op: &LaplaceOperator, f: &Field) -> Result<f64> {
    let g = op.solve_poisson(f)?;
    Ok(libm::sqrt(g.dot(f)?.max(0.0)))
}

/// `‖J'(w)‖_{H⁻¹}`, the residual monitor of the stationary problem.
pub fn jprime_hminus1(op: &LaplaceOperator, w: &Field, p: &FdeParams) -> Result<f64> {
    let jp = frechet_jprime(op, w, p)?;
    hminus1_norm(op, &jp)
}

/// Scaling `n(w) = (‖w‖²_{H¹₀} / (λ_m ‖w‖ᵐ_{Lᵐ}))^{1/(m-2)}` that places
/// `n(w)·w` on the discrete Nehari manifold `‖∇w‖² = λ_m ‖w‖ᵐ_m`.
pub fn nehari_scale(op: &LaplaceOperator, w: &Field, p: &FdeParams) -> Result<f64> {
    let lm_m = lm_norm_pow(w, p);
    if lm_m == 0.0 {
        return Err(Error::ZeroField);
    }
    let dirichlet = op.h10_inner(w, w)?;
    Ok(abs_pow(dirichlet / (p.lambda_m() * lm_m), 1.0 / (p.m() - 2.0)))
}

/// Scaling `x(w) = t*(w)^{-1/(m-2)}` that places `x(w)·w` on the phase set
/// of fields with unit extinction time. The extinction time is estimated by
/// evolving the physical flow, so this is as accurate as the estimator.
pub fn phase_scale(
    op: &LaplaceOperator,
    w: &Field,
    p: &FdeParams,
    cfg: &EvolutionConfig,
) -> Result<f64> {
    if lm_norm_pow(w, p) == 0.0 {
        return Err(Error::ZeroField);
    }
    let t_star = estimate_extinction_time(op, w, p, cfg)?;
    if t_star <= 0.0 || t_star.is_nan() {
        return Err(Error::ProjectionFailure(alloc::format!(
            "nonpositive extinction estimate {t_star}"
        )));
    }
    Ok(abs_pow(t_star, -1.0 / (p.m() - 2.0)))
}

/// Tartar gap `(|a|^{m-2}a − |b|^{m-2}b)(a−b) − ω_m |a−b|ᵐ` with
/// `ω_m = 2^{2-m}`; nonnegative for all real `a, b`.
pub fn tartar_gap(a: f64, b: f64, p: &FdeParams) -> f64 {
    let q = p.m() - 2.0;
    let omega = libm::pow(2.0, -q);
    (signed_pow(a, q) - signed_pow(b, q)) * (a - b) - omega * abs_pow(a - b, p.m())
}

/// Verifies the chain-rule inequality between the two time-derivative
/// densities at one instant,
///
/// ```text
/// ‖∂_s(|v|^{m-2}v)‖²_{L²} ≤ κ_m ‖v‖^{m-2}_{L∞} ‖∂_s(|v|^{(m-2)/2}v)‖²_{L²},
/// ```
///
/// evaluating both derivatives by the nodal chain rule from `v` and `v_t`.
/// A 1% slack absorbs quadrature roundoff.
pub fn chain_rule_check(v_t: &Field, v: &Field, p: &FdeParams) -> Result<bool> {
    if !v_t.same_grid(v) {
        return Err(Error::GridMismatch);
    }
    let q = p.m() - 2.0;
    let w = v.grid().interior_weights();
    let mut lhs = 0.0;
    let mut rhs_int = 0.0;
    for ((&vv, &vt), &wj) in v.values().iter().zip(v_t.values()).zip(w) {
        // d/ds |v|^{m-2}v = (m-1)|v|^{m-2} v_s
        let d_full = (p.m() - 1.0) * abs_pow(vv, q) * vt;
        // d/ds |v|^{(m-2)/2}v = (m/2)|v|^{(m-2)/2} v_s
        let d_half = 0.5 * p.m() * abs_pow(vv, 0.5 * q) * vt;
        lhs += wj * d_full * d_full;
        rhs_int += wj * d_half * d_half;
    }
    let rhs = p.kappa_m() * abs_pow(linf_norm(v), q) * rhs_int;
    Ok(lhs <= rhs * 1.01 + 1e-300)
}

/// Estimate of the Sobolev–Poincaré constant `C_m = 1/inf R` on the given
/// operator's grid, computed by the Rayleigh minimizer of the profile
/// module. Grid-dependent; converges at second order under refinement.
pub fn estimate_sobolev_constant(op: &LaplaceOperator, p: &FdeParams) -> Result<f64> {
    let init = crate::profiles::default_initializer(op)?;
    let prof = crate::profiles::minimize_rayleigh(op, p, &init)?;
    Ok(1.0 / prof.rayleigh)
}

/// Scalar monitor row recorded once per accepted step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyReport {
    pub j: f64,
    pub rayleigh: f64,
    pub h10: f64,
    pub lm: f64,
    pub linf: f64,
}

impl EnergyReport {
    pub fn compute(op: &LaplaceOperator, w: &Field, p: &FdeParams) -> Result<Self> {
        let dirichlet = op.h10_inner(w, w)?;
        let h10 = libm::sqrt(dirichlet.max(0.0));
        let lm_m = lm_norm_pow(w, p);
        let lm = abs_pow(lm_m, 1.0 / p.m());
        let j = 0.5 * dirichlet - p.lambda_m() / p.m() * lm_m;
        let rayleigh = if lm > 0.0 { h10 / lm } else { f64::INFINITY };
        Ok(EnergyReport { j, rayleigh, h10, lm, linf: linf_norm(w) })
    }
}
