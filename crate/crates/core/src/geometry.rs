//! Grids, fields and the discrete Laplacian.
//!
//! All grids are uniform in each direction and carry homogeneous Dirichlet
//! data on the domain boundary. The Laplacian is discretized in
//! conservative (flux) form,
//!
//! ```text
//! (Δu)_j = [ β_{j+1/2} (u_{j+1}-u_j)/h − β_{j-1/2} (u_j-u_{j-1})/h ] / w_j,
//! ```
//!
//! where `β` are face weights (`r^{N-1}` for radial reductions, `r` for the
//! polar annulus) and `w_j` is the exact cell integral of the same weight.
//! Summation by parts then makes the operator exactly symmetric and
//! negative semidefinite with respect to the quadrature inner product, and
//! `⟨-Δu, u⟩` coincides with the discrete Dirichlet energy by construction
//! rather than up to truncation error.
//!
//! Supported shapes:
//!
//! * `Interval { a, b }` — 1-D interval, Dirichlet at both ends.
//! * `Radial { dim, a, b }` — radial reduction of a ball (`a = 0`, with the
//!   regular-at-origin stencil) or an annulus (`a > 0`) in dimension `dim`.
//! * `Polar2d { a, b, n_theta }` — full 2-D annulus in polar coordinates,
//!   periodic in `θ`, Dirichlet at `r = a, b`; this is the only shape that
//!   can represent non-radial states.

use crate::error::{Error, Result};
use crate::params::abs_pow;
use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

/// Smallest admissible number of interior nodes per direction.
pub const MIN_RESOLUTION: usize = 8;

/// Domain shape descriptor. Radial resolution is passed separately to
/// [`build_grid`]; the angular node count is part of the polar shape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridShape {
    Interval { a: f64, b: f64 },
    Radial { dim: u32, a: f64, b: f64 },
    Polar2d { a: f64, b: f64, n_theta: usize },
}

impl GridShape {
    pub fn a(&self) -> f64 {
        match *self {
            GridShape::Interval { a, .. } => a,
            GridShape::Radial { a, .. } => a,
            GridShape::Polar2d { a, .. } => a,
        }
    }

    pub fn b(&self) -> f64 {
        match *self {
            GridShape::Interval { b, .. } => b,
            GridShape::Radial { b, .. } => b,
            GridShape::Polar2d { b, .. } => b,
        }
    }

    /// Power of `r` in the radial measure (`0` on intervals, `N-1` for
    /// radial reductions, `1` on the polar annulus).
    fn weight_power(&self) -> f64 {
        match *self {
            GridShape::Interval { .. } => 0.0,
            GridShape::Radial { dim, .. } => dim as f64 - 1.0,
            GridShape::Polar2d { .. } => 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let (a, b) = (self.a(), self.b());
        if !(a.is_finite() && b.is_finite()) || a < 0.0 || a >= b {
            return Err(Error::InvalidGeometry(format!("need 0 <= a < b, got a = {a}, b = {b}")));
        }
        match *self {
            GridShape::Radial { dim, .. } if dim == 0 => {
                Err(Error::InvalidGeometry(format!("radial dimension must be >= 1, got {dim}")))
            }
            GridShape::Polar2d { .. } if self.a() == 0.0 => Err(Error::InvalidGeometry(
                "polar annulus requires a > 0".into(),
            )),
            GridShape::Polar2d { n_theta, .. } if n_theta < MIN_RESOLUTION || n_theta % 2 != 0 => {
                Err(Error::InvalidGeometry(format!(
                    "n_theta must be even and >= {MIN_RESOLUTION}, got {n_theta}"
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Exact integral of `r^p` over `[lo, hi]`.
fn cell_integral(p: f64, lo: f64, hi: f64) -> f64 {
    if p == 0.0 {
        hi - lo
    } else if p == 1.0 {
        0.5 * (hi * hi - lo * lo)
    } else if p == 2.0 {
        (hi * hi * hi - lo * lo * lo) / 3.0
    } else {
        (abs_pow(hi, p + 1.0) - abs_pow(lo, p + 1.0)) / (p + 1.0)
    }
}

/// Discretized domain: node coordinates, quadrature weights and the
/// Dirichlet bookkeeping shared by every field and operator on it.
#[derive(Debug, Clone)]
pub struct Grid {
    shape: GridShape,
    /// Interior (unknown) nodes per radial direction.
    n: usize,
    /// Radial mesh spacing.
    h: f64,
    /// Angular spacing (polar only, else 0).
    h_theta: f64,
    /// All radial node coordinates, boundary included.
    r_nodes: Vec<f64>,
    /// Angular node coordinates (polar only).
    theta_nodes: Vec<f64>,
    /// Quadrature weight of every node, boundary included; their sum is the
    /// measure of the domain (radial measure for 1-D reductions, area for
    /// the polar annulus).
    node_weights: Vec<f64>,
    /// Quadrature weight per unknown, aligned with `Field::values`.
    interior_weights: Vec<f64>,
}

impl Grid {
    pub fn shape(&self) -> GridShape {
        self.shape
    }

    /// Interior node count per radial direction.
    pub fn resolution(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn h_theta(&self) -> f64 {
        self.h_theta
    }

    /// `true` for the radial reduction of a ball (`a = 0`), where the origin
    /// is a regular unknown rather than a Dirichlet node.
    pub fn is_ball(&self) -> bool {
        matches!(self.shape, GridShape::Radial { a, .. } if a == 0.0)
    }

    pub fn is_polar(&self) -> bool {
        matches!(self.shape, GridShape::Polar2d { .. })
    }

    /// All radial nodes including Dirichlet endpoints.
    pub fn r_nodes(&self) -> &[f64] {
        &self.r_nodes
    }

    pub fn theta_nodes(&self) -> &[f64] {
        &self.theta_nodes
    }

    /// Quadrature weights over all nodes (boundary included).
    pub fn quad_weights(&self) -> &[f64] {
        &self.node_weights
    }

    /// Quadrature weights aligned with the interior unknowns of a [`Field`].
    pub fn interior_weights(&self) -> &[f64] {
        &self.interior_weights
    }

    /// Number of interior unknowns.
    pub fn interior_count(&self) -> usize {
        self.interior_weights.len()
    }

    /// Global radial index of interior unknown `j` (1-D shapes).
    #[inline]
    fn radial_offset(&self) -> usize {
        if self.is_ball() {
            0
        } else {
            1
        }
    }

    /// Radial coordinate of 1-D interior unknown `j`.
    #[inline]
    pub fn interior_r(&self, j: usize) -> f64 {
        self.r_nodes[j + self.radial_offset()]
    }

    /// `(ring, angle)` coordinates of polar interior unknown `idx`.
    #[inline]
    pub fn polar_coords(&self, idx: usize) -> (f64, f64) {
        let nt = self.theta_nodes.len();
        (self.r_nodes[idx / nt + 1], self.theta_nodes[idx % nt])
    }

    /// Sum of all quadrature weights.
    pub fn total_measure(&self) -> f64 {
        self.node_weights.iter().sum()
    }

    /// Closed-form measure of the continuum domain in the same convention
    /// as the weights: `∫_a^b r^{N-1} dr` for 1-D reductions (the angular
    /// constant is omitted), `π(b²-a²)` for the polar annulus.
    pub fn exact_measure(&self) -> f64 {
        let (a, b) = (self.shape.a(), self.shape.b());
        match self.shape {
            GridShape::Polar2d { .. } => PI * (b * b - a * a),
            _ => cell_integral(self.shape.weight_power(), a, b),
        }
    }

    /// Structural equality: same shape parameters and resolution.
    pub fn layout_eq(&self, other: &Grid) -> bool {
        self.shape == other.shape && self.n == other.n
    }
}

/// Builds a grid with `resolution` interior nodes per radial direction.
pub fn build_grid(shape: GridShape, resolution: usize) -> Result<Arc<Grid>> {
    shape.validate()?;
    if resolution < MIN_RESOLUTION {
        return Err(Error::ResolutionTooSmall { requested: resolution, minimum: MIN_RESOLUTION });
    }
    let (a, b) = (shape.a(), shape.b());
    let n = resolution;
    let p = shape.weight_power();

    // Radial nodes. A ball has unknowns at r = 0, h, ..., (n-1)h and a
    // Dirichlet node at b; every other shape carries Dirichlet nodes at
    // both ends.
    let ball = matches!(shape, GridShape::Radial { a, .. } if a == 0.0);
    let (h, r_nodes): (f64, Vec<f64>) = if ball {
        let h = b / n as f64;
        (h, (0..=n).map(|j| j as f64 * h).collect())
    } else {
        let h = (b - a) / (n + 1) as f64;
        (h, (0..=n + 1).map(|j| a + j as f64 * h).collect())
    };

    // Exact cell integrals of r^p; cells are clipped to [a, b].
    let radial_weight = |r: f64| -> f64 {
        let lo = (r - 0.5 * h).max(a);
        let hi = (r + 0.5 * h).min(b);
        cell_integral(p, lo, hi)
    };

    let grid = match shape {
        GridShape::Polar2d { n_theta, .. } => {
            let h_theta = 2.0 * PI / n_theta as f64;
            let theta_nodes: Vec<f64> = (0..n_theta).map(|k| k as f64 * h_theta).collect();
            let mut node_weights = Vec::with_capacity(r_nodes.len() * n_theta);
            for &r in &r_nodes {
                let w = radial_weight(r) * h_theta;
                node_weights.extend(core::iter::repeat_n(w, n_theta));
            }
            let mut interior_weights = Vec::with_capacity(n * n_theta);
            for i in 0..n {
                let w = radial_weight(r_nodes[i + 1]) * h_theta;
                interior_weights.extend(core::iter::repeat_n(w, n_theta));
            }
            Grid {
                shape,
                n,
                h,
                h_theta,
                r_nodes,
                theta_nodes,
                node_weights,
                interior_weights,
            }
        }
        _ => {
            let node_weights: Vec<f64> = r_nodes.iter().map(|&r| radial_weight(r)).collect();
            let off = if ball { 0 } else { 1 };
            let interior_weights = node_weights[off..off + n].to_vec();
            Grid {
                shape,
                n,
                h,
                h_theta: 0.0,
                r_nodes,
                theta_nodes: Vec::new(),
                node_weights,
                interior_weights,
            }
        }
    };
    Ok(Arc::new(grid))
}

/// Nodal values of a scalar function on the interior of a [`Grid`];
/// boundary values are identically zero and not stored.
#[derive(Debug, Clone)]
pub struct Field {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: &Arc<Grid>) -> Self {
        Field { grid: grid.clone(), values: vec![0.0; grid.interior_count()] }
    }

    pub fn from_values(grid: &Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.interior_count() {
            return Err(Error::GridMismatch);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteField);
        }
        Ok(Field { grid: grid.clone(), values })
    }

    /// Samples `f(r)` at the interior nodes of a 1-D grid.
    pub fn from_radial_fn(grid: &Arc<Grid>, f: impl Fn(f64) -> f64) -> Result<Self> {
        if grid.is_polar() {
            return Err(Error::WrongGridShape);
        }
        let values = (0..grid.interior_count()).map(|j| f(grid.interior_r(j))).collect();
        Field::from_values(grid, values)
    }

    /// Samples `f(r, θ)` at the interior nodes of a polar grid.
    pub fn from_polar_fn(grid: &Arc<Grid>, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if !grid.is_polar() {
            return Err(Error::WrongGridShape);
        }
        let values = (0..grid.interior_count())
            .map(|idx| {
                let (r, theta) = grid.polar_coords(idx);
                f(r, theta)
            })
            .collect();
        Field::from_values(grid, values)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scale(&self, c: f64) -> Field {
        Field { grid: self.grid.clone(), values: self.values.iter().map(|v| c * v).collect() }
    }

    /// `self + c * other`.
    pub fn add_scaled(&self, c: f64, other: &Field) -> Result<Field> {
        if !self.same_grid(other) {
            return Err(Error::GridMismatch);
        }
        let values =
            self.values.iter().zip(&other.values).map(|(a, b)| a + c * b).collect();
        Ok(Field { grid: self.grid.clone(), values })
    }

    /// Nodal map `f(v_j)`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field { grid: self.grid.clone(), values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn same_grid(&self, other: &Field) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || self.grid.layout_eq(&other.grid)
    }

    pub fn on_grid(&self, grid: &Arc<Grid>) -> bool {
        Arc::ptr_eq(&self.grid, grid) || self.grid.layout_eq(grid)
    }

    pub fn assert_finite(&self) -> Result<()> {
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteField);
        }
        Ok(())
    }

    /// Quadrature-weighted inner product `Σ w_j a_j b_j`.
    pub fn dot(&self, other: &Field) -> Result<f64> {
        if !self.same_grid(other) {
            return Err(Error::GridMismatch);
        }
        let w = self.grid.interior_weights();
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .zip(w)
            .map(|((a, b), w)| w * a * b)
            .sum())
    }
}

/// Lifts nodal values of a 1-D radial field onto a polar grid with the same
/// annulus and radial resolution (constant in `θ`).
pub fn lift_radial(radial: &Field, polar: &Arc<Grid>) -> Result<Field> {
    let rg = radial.grid();
    if rg.is_polar() || !polar.is_polar() {
        return Err(Error::WrongGridShape);
    }
    if rg.resolution() != polar.resolution()
        || rg.shape().a() != polar.shape().a()
        || rg.shape().b() != polar.shape().b()
        || rg.is_ball()
    {
        return Err(Error::GridMismatch);
    }
    let nt = polar.theta_nodes().len();
    let mut values = Vec::with_capacity(polar.interior_count());
    for i in 0..polar.resolution() {
        values.extend(core::iter::repeat_n(radial.values()[i], nt));
    }
    Field::from_values(polar, values)
}

/// Interior-node stencil for `Δ` with homogeneous Dirichlet data, in the
/// flux form described in the module docs, plus the direct/iterative solves
/// built on it.
#[derive(Debug, Clone)]
pub struct LaplaceOperator {
    grid: Arc<Grid>,
    /// Face weights between consecutive radial nodes (`β_{g+1/2}`), global
    /// indexing; `face[g]` couples radial nodes `g` and `g+1`.
    faces: Vec<f64>,
    /// Per-ring coefficient of the periodic θ-stencil, `1/(r_i² h_θ²)`.
    theta_coeff: Vec<f64>,
}

impl LaplaceOperator {
    pub fn new(grid: &Arc<Grid>) -> Self {
        let p = grid.shape().weight_power();
        let r = grid.r_nodes();
        let faces: Vec<f64> =
            r.windows(2).map(|w| abs_pow(0.5 * (w[0] + w[1]), p)).collect();
        let theta_coeff = if grid.is_polar() {
            let ht = grid.h_theta();
            (0..grid.resolution())
                .map(|i| {
                    let ri = r[i + 1];
                    1.0 / (ri * ri * ht * ht)
                })
                .collect()
        } else {
            Vec::new()
        };
        LaplaceOperator { grid: grid.clone(), faces, theta_coeff }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    fn check(&self, w: &Field) -> Result<()> {
        if !w.on_grid(&self.grid) {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }

    /// `Δw` at the interior nodes (second-order accurate).
    pub fn apply(&self, w: &Field) -> Result<Field> {
        self.check(w)?;
        let mut out = vec![0.0; w.len()];
        self.apply_into(w.values(), &mut out);
        Ok(Field { grid: self.grid.clone(), values: out })
    }

    /// Raw-slice version of [`Self::apply`] used by the inner solvers.
    pub(crate) fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        let grid = &*self.grid;
        let h = grid.h();
        let iw = grid.interior_weights();
        if grid.is_polar() {
            let nt = grid.theta_nodes().len();
            let n = grid.resolution();
            let ht = grid.h_theta();
            for i in 0..n {
                // radial faces carry the angular extent h_theta
                let bl = self.faces[i] * ht / h;
                let br = self.faces[i + 1] * ht / h;
                let tc = self.theta_coeff[i];
                let row = i * nt;
                for k in 0..nt {
                    let idx = row + k;
                    let u = v[idx];
                    let u_in = if i > 0 { v[idx - nt] } else { 0.0 };
                    let u_out = if i + 1 < n { v[idx + nt] } else { 0.0 };
                    let u_prev = v[row + (k + nt - 1) % nt];
                    let u_next = v[row + (k + 1) % nt];
                    let radial = (br * (u_out - u) - bl * (u - u_in)) / iw[idx];
                    let angular = tc * (u_next - 2.0 * u + u_prev);
                    out[idx] = radial + angular;
                }
            }
        } else {
            let n = grid.resolution();
            let off = grid.radial_offset();
            for j in 0..n {
                let g = j + off;
                let u = v[j];
                let u_r = if j + 1 < n { v[j + 1] } else { 0.0 };
                let flux_r = self.faces[g] * (u_r - u) / h;
                // the origin cell of a ball has zero flux on its left face
                let flux_l = if g == 0 {
                    0.0
                } else {
                    let u_l = if j > 0 { v[j - 1] } else { 0.0 };
                    self.faces[g - 1] * (u - u_l) / h
                };
                out[j] = (flux_r - flux_l) / iw[j];
            }
        }
    }

    /// Discrete Dirichlet inner product `⟨∇a, ∇b⟩ = ⟨-Δa, b⟩`.
    pub fn h10_inner(&self, a: &Field, b: &Field) -> Result<f64> {
        self.check(a)?;
        let lap = self.apply(a)?;
        let mut acc = 0.0;
        let w = self.grid.interior_weights();
        for ((l, bv), wj) in lap.values().iter().zip(b.values()).zip(w) {
            acc -= wj * l * bv;
        }
        Ok(acc)
    }

    /// Solves `-Δ g = f` with zero Dirichlet data.
    ///
    /// 1-D shapes use a direct tridiagonal solve; the polar annulus uses
    /// conjugate gradients preconditioned by radial line relaxation. The
    /// returned field satisfies `‖-Δg - f‖_w ≤ 1e-10 ‖f‖_w`.
    pub fn solve_poisson(&self, f: &Field) -> Result<Field> {
        self.check(f)?;
        let sol = self.solve_shifted(None, f.values())?;
        Ok(Field { grid: self.grid.clone(), values: sol })
    }

    /// Solves `(D - Δ) x = rhs` for a nonnegative nodal diagonal `D`
    /// (`None` means `D = 0`). This is the inner solve of both the Poisson
    /// problem and every Newton iteration of the implicit steppers.
    pub(crate) fn solve_shifted(&self, diag: Option<&[f64]>, rhs: &[f64]) -> Result<Vec<f64>> {
        const REL_TOL: f64 = 1e-12;
        const CONTRACT_TOL: f64 = 1e-10;
        let sol = if self.grid.is_polar() {
            self.solve_pcg(diag, rhs, REL_TOL)?
        } else {
            self.solve_tridiag(diag, rhs)
        };
        // verify the advertised residual contract
        let w = self.grid.interior_weights();
        let mut lap = vec![0.0; sol.len()];
        self.apply_into(&sol, &mut lap);
        let mut rnorm2 = 0.0;
        let mut fnorm2 = 0.0;
        for j in 0..sol.len() {
            let d = diag.map_or(0.0, |d| d[j]);
            let res = rhs[j] - (d * sol[j] - lap[j]);
            rnorm2 += w[j] * res * res;
            fnorm2 += w[j] * rhs[j] * rhs[j];
        }
        let rel = if fnorm2 > 0.0 { libm::sqrt(rnorm2 / fnorm2) } else { libm::sqrt(rnorm2) };
        if !rel.is_finite() || rel > CONTRACT_TOL {
            return Err(Error::SolverFailure { residual: rel, tolerance: CONTRACT_TOL });
        }
        Ok(sol)
    }

    /// Thomas algorithm on the interior rows of `(D - Δ)`.
    fn solve_tridiag(&self, diag: Option<&[f64]>, rhs: &[f64]) -> Vec<f64> {
        let grid = &*self.grid;
        let n = grid.resolution();
        let h = grid.h();
        let iw = grid.interior_weights();
        let off = grid.radial_offset();

        let mut sub = vec![0.0; n];
        let mut main = vec![0.0; n];
        let mut sup = vec![0.0; n];
        for j in 0..n {
            let g = j + off;
            let br = self.faces[g] / (h * iw[j]);
            let bl = if g == 0 { 0.0 } else { self.faces[g - 1] / (h * iw[j]) };
            main[j] = bl + br + diag.map_or(0.0, |d| d[j]);
            if j > 0 {
                sub[j] = -bl;
            }
            if j + 1 < n {
                sup[j] = -br;
            }
        }

        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        c[0] = sup[0] / main[0];
        d[0] = rhs[0] / main[0];
        for j in 1..n {
            let denom = main[j] - sub[j] * c[j - 1];
            c[j] = sup[j] / denom;
            d[j] = (rhs[j] - sub[j] * d[j - 1]) / denom;
        }
        let mut x = vec![0.0; n];
        x[n - 1] = d[n - 1];
        for j in (0..n - 1).rev() {
            x[j] = d[j] - c[j] * x[j + 1];
        }
        x
    }

    /// Preconditioned conjugate gradients in the quadrature inner product.
    ///
    /// The preconditioner solves, for every angular index, the tridiagonal
    /// system formed by the radial coupling plus the full diagonal. On thin
    /// annuli the radial direction carries almost all of the stiffness, so
    /// this line relaxation brings the iteration count down to a few dozen.
    fn solve_pcg(&self, diag: Option<&[f64]>, rhs: &[f64], rel_tol: f64) -> Result<Vec<f64>> {
        let grid = &*self.grid;
        let n = grid.resolution();
        let nt = grid.theta_nodes().len();
        let dim = n * nt;
        let h = grid.h();
        let ht = grid.h_theta();
        let w = grid.interior_weights();

        // row coefficients of A = D - Δ
        let mut a_diag = vec![0.0; dim];
        // coupling across radial face i (rows divided by w later)
        let a_radial: Vec<f64> = (0..=n).map(|i| self.faces[i] * ht / h).collect();
        for i in 0..n {
            let tc = self.theta_coeff[i];
            for k in 0..nt {
                let idx = i * nt + k;
                a_diag[idx] = (a_radial[i] + a_radial[i + 1]) / w[idx]
                    + 2.0 * tc
                    + diag.map_or(0.0, |d| d[idx]);
            }
        }

        // Line preconditioner factorization: for each k a tridiagonal in i
        // with sub/sup = -a_radial/w and the full diagonal. Factor once.
        let mut pre_c = vec![0.0; dim]; // forward-elimination multipliers per (i,k)
        let mut pre_inv = vec![0.0; dim]; // inverted pivots
        for k in 0..nt {
            let mut prev_c = 0.0;
            for i in 0..n {
                let idx = i * nt + k;
                let sub = if i > 0 { -a_radial[i] / w[idx] } else { 0.0 };
                let sup = if i + 1 < n { -a_radial[i + 1] / w[idx] } else { 0.0 };
                let denom = a_diag[idx] - sub * prev_c;
                let inv = 1.0 / denom;
                pre_inv[idx] = inv;
                prev_c = sup * inv;
                pre_c[idx] = prev_c;
            }
        }
        #[allow(clippy::needless_range_loop)]
        let precond = |r: &[f64], z: &mut [f64], scratch: &mut [f64]| {
            for k in 0..nt {
                let mut prev = 0.0;
                for i in 0..n {
                    let idx = i * nt + k;
                    let sub = if i > 0 { -a_radial[i] / w[idx] } else { 0.0 };
                    prev = (r[idx] - sub * prev) * pre_inv[idx];
                    scratch[idx] = prev;
                }
                let mut next = 0.0;
                for i in (0..n).rev() {
                    let idx = i * nt + k;
                    let x = scratch[idx] - pre_c[idx] * next;
                    z[idx] = x;
                    next = x;
                }
            }
        };

        let apply_a = |x: &[f64], out: &mut [f64]| {
            self.apply_into(x, out);
            for idx in 0..dim {
                let d = diag.map_or(0.0, |d| d[idx]);
                out[idx] = d * x[idx] - out[idx];
            }
        };

        let wdot = |a: &[f64], b: &[f64]| -> f64 {
            a.iter().zip(b).zip(w).map(|((x, y), wj)| wj * x * y).sum()
        };

        let mut x = vec![0.0; dim];
        let mut r = rhs.to_vec();
        let rhs_norm2 = wdot(&r, &r);
        if rhs_norm2 == 0.0 {
            return Ok(x);
        }
        let stop2 = rhs_norm2 * rel_tol * rel_tol;

        let mut z = vec![0.0; dim];
        let mut scratch = vec![0.0; dim];
        precond(&r, &mut z, &mut scratch);
        let mut p = z.clone();
        let mut rz = wdot(&r, &z);
        let mut ap = vec![0.0; dim];

        let max_iter = 40 * (libm::sqrt(dim as f64) as usize + 10);
        for _ in 0..max_iter {
            apply_a(&p, &mut ap);
            let pap = wdot(&p, &ap);
            if pap <= 0.0 || !pap.is_finite() {
                return Err(Error::SolverFailure { residual: f64::NAN, tolerance: rel_tol });
            }
            let alpha = rz / pap;
            for idx in 0..dim {
                x[idx] += alpha * p[idx];
                r[idx] -= alpha * ap[idx];
            }
            let rnorm2 = wdot(&r, &r);
            if rnorm2 <= stop2 {
                return Ok(x);
            }
            precond(&r, &mut z, &mut scratch);
            let rz_new = wdot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for idx in 0..dim {
                p[idx] = z[idx] + beta * p[idx];
            }
        }
        let rel = libm::sqrt(wdot(&r, &r) / rhs_norm2);
        Err(Error::SolverFailure { residual: rel, tolerance: rel_tol })
    }

    /// Lowest `k` Dirichlet eigenpairs `-Δ e = λ e` by subspace iteration on
    /// the Poisson solve with Rayleigh-Ritz extraction. Eigenvectors are
    /// orthonormal in the quadrature inner product, eigenvalues ascending.
    pub fn lowest_eigenpairs(&self, k: usize) -> Result<(Vec<f64>, Vec<Field>)> {
        let dim = self.grid.interior_count();
        let k = k.min(dim);
        let w = self.grid.interior_weights();
        let wdot = |a: &[f64], b: &[f64]| -> f64 {
            a.iter().zip(b).zip(w).map(|((x, y), wj)| wj * x * y).sum()
        };

        // deterministic smooth-ish start: shifted powers of the hat profile
        let mut basis: Vec<Vec<f64>> = (0..k)
            .map(|q| {
                (0..dim)
                    .map(|j| {
                        let t = (j % dim) as f64 / dim as f64;
                        libm::sin((q + 1) as f64 * PI * t) + 1e-3 * ((j + q) % 7) as f64
                    })
                    .collect()
            })
            .collect();

        let orthonormalize = |basis: &mut Vec<Vec<f64>>| {
            for i in 0..basis.len() {
                for j in 0..i {
                    let proj = wdot(&basis[i], &basis[j]);
                    let (head, tail) = basis.split_at_mut(i);
                    let bj = &head[j];
                    for (vi, vj) in tail[0].iter_mut().zip(bj) {
                        *vi -= proj * vj;
                    }
                }
                let norm = libm::sqrt(wdot(&basis[i], &basis[i]));
                if norm > 0.0 {
                    for v in basis[i].iter_mut() {
                        *v /= norm;
                    }
                }
            }
        };

        orthonormalize(&mut basis);
        let sweeps = 80;
        for _ in 0..sweeps {
            for vec_i in basis.iter_mut() {
                let solved = self.solve_shifted(None, vec_i)?;
                *vec_i = solved;
            }
            orthonormalize(&mut basis);
        }

        // Rayleigh-Ritz on the k-dimensional subspace
        let mut hmat = vec![0.0; k * k];
        let mut tmp = vec![0.0; dim];
        for i in 0..k {
            self.apply_into(&basis[i], &mut tmp);
            for j in 0..k {
                hmat[i * k + j] = -wdot(&tmp, &basis[j]);
            }
        }
        let (evals, evecs) = jacobi_eigen(&mut hmat, k);
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_unstable_by(|&i, &j| evals[i].partial_cmp(&evals[j]).unwrap());

        let mut lambdas = Vec::with_capacity(k);
        let mut fields = Vec::with_capacity(k);
        for &col in &order {
            lambdas.push(evals[col]);
            let mut v = vec![0.0; dim];
            for (i, b) in basis.iter().enumerate() {
                let c = evecs[i * k + col];
                for (vj, bj) in v.iter_mut().zip(b) {
                    *vj += c * bj;
                }
            }
            let norm = libm::sqrt(wdot(&v, &v));
            for x in v.iter_mut() {
                *x /= norm;
            }
            fields.push(Field { grid: self.grid.clone(), values: v });
        }
        Ok((lambdas, fields))
    }
}

/// Cyclic Jacobi eigensolver for a small symmetric matrix (row-major,
/// overwritten). Returns eigenvalues and the column-eigenvector matrix.
fn jacobi_eigen(a: &mut [f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _ in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[i * n + j] * a[i * n + j];
            }
        }
        if off < 1e-28 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if libm::fabs(apq) < 1e-300 {
                    continue;
                }
                let tau = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + libm::sqrt(1.0 + tau * tau))
                } else {
                    -1.0 / (-tau + libm::sqrt(1.0 + tau * tau))
                };
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = t * c;
                for i in 0..n {
                    let aip = a[i * n + p];
                    let aiq = a[i * n + q];
                    a[i * n + p] = c * aip - s * aiq;
                    a[i * n + q] = s * aip + c * aiq;
                }
                for j in 0..n {
                    let apj = a[p * n + j];
                    let aqj = a[q * n + j];
                    a[p * n + j] = c * apj - s * aqj;
                    a[q * n + j] = s * apj + c * aqj;
                }
                for i in 0..n {
                    let vip = v[i * n + p];
                    let viq = v[i * n + q];
                    v[i * n + p] = c * vip - s * viq;
                    v[i * n + q] = s * vip + c * viq;
                }
            }
        }
    }
    let evals = (0..n).map(|i| a[i * n + i]).collect();
    (evals, v)
}
