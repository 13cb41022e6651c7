//! Problem parameters and the constants derived from the exponent `m`.

use crate::error::{Error, Result};
use alloc::format;

/// Exponent and dimension of the fast diffusion problem, together with the
/// derived constants that appear throughout the flow and its monitors.
///
/// Admissible range: `2 < m < 2N/(N-2)` for `N >= 3` and `2 < m < ∞` for
/// `N ∈ {1, 2}` (the subcritical window in which extinction happens in
/// finite time and stationary profiles exist).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdeParams {
    m: f64,
    dim: u32,
}

impl FdeParams {
    pub fn new(m: f64, dim: u32) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidExponent(format!("dimension must be >= 1, got {dim}")));
        }
        if m <= 2.0 || !m.is_finite() {
            return Err(Error::InvalidExponent(format!("need m > 2, got {m}")));
        }
        if dim >= 3 {
            let critical = 2.0 * dim as f64 / (dim as f64 - 2.0);
            if m >= critical {
                return Err(Error::InvalidExponent(format!(
                    "need m < 2N/(N-2) = {critical} for N = {dim}, got {m}"
                )));
            }
        }
        Ok(Self { m, dim })
    }

    #[inline]
    pub fn m(&self) -> f64 {
        self.m
    }

    #[inline]
    pub fn dim(&self) -> u32 {
        self.dim
    }

    /// `λ_m = (m-1)/(m-2) > 1`, the coefficient of the rescaled reaction term.
    #[inline]
    pub fn lambda_m(&self) -> f64 {
        (self.m - 1.0) / (self.m - 2.0)
    }

    /// `κ = 2N - Nm + 2m > 0` on the admissible range; exponent of the
    /// uniform sup bound for rescaled solutions.
    #[inline]
    pub fn kappa(&self) -> f64 {
        let n = self.dim as f64;
        2.0 * n - n * self.m + 2.0 * self.m
    }

    /// `κ_m = 4(m-1)²/m²`, the chain-rule constant relating the two
    /// time-derivative densities `∂_s(|v|^{m-2}v)` and `∂_s(|v|^{(m-2)/2}v)`.
    #[inline]
    pub fn kappa_m(&self) -> f64 {
        let r = (self.m - 1.0) / self.m;
        4.0 * r * r
    }

    /// Hölder conjugate `m' = m/(m-1)`.
    #[inline]
    pub fn m_conj(&self) -> f64 {
        self.m / (self.m - 1.0)
    }

    /// `μ_m = 4/(m m') = 4(m-1)/m²`, the dissipation coefficient of the
    /// energy inequality for the rescaled flow.
    #[inline]
    pub fn mu_m(&self) -> f64 {
        4.0 * (self.m - 1.0) / (self.m * self.m)
    }

    /// Extinction-rate exponent `1/(m-2)`.
    #[inline]
    pub fn rate_exponent(&self) -> f64 {
        1.0 / (self.m - 2.0)
    }
}

/// `|x|^{q}` with fast paths for the small integer powers that dominate the
/// stepping hot loops (`q = m - 2` with `m = 3, 4`).
#[inline]
pub(crate) fn abs_pow(x: f64, q: f64) -> f64 {
    if q == 1.0 {
        libm::fabs(x)
    } else if q == 2.0 {
        x * x
    } else if q == 0.5 {
        libm::sqrt(libm::fabs(x))
    } else {
        libm::pow(libm::fabs(x), q)
    }
}

/// Odd power `|x|^{q} x` (the mass nonlinearity is `q = m - 2`).
#[inline]
pub(crate) fn signed_pow(x: f64, q: f64) -> f64 {
    abs_pow(x, q) * x
}
