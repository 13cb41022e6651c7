//! High-level numerical probes: stability of profiles under the rescaled
//! flow, energy-descent certificates for radial profiles on thin annuli,
//! the Łojasiewicz exponent fit, and the Nehari/phase-set consistency
//! check.
//!
//! A profile `φ` is probed for stability by sampling perturbed states
//! `φ + δ·dir`, projecting them onto the discrete phase set (unit
//! estimated extinction time), evolving the rescaled flow over a horizon
//! and recording `sup_s ‖v(s) − φ‖_{H¹₀}` per sample. Finite random
//! probing yields *evidence*, never proof: the verdict names are chosen
//! accordingly.
//!
//! Extinction-time estimation carries a small systematic bias from time
//! discretization. Since the discrete stationary profile has unit
//! extinction time exactly in semi-discrete arithmetic, estimating
//! `t*(φ)` once per grid and dividing it out of subsequent estimates
//! cancels the bias to first order; the probes use this calibrated
//! projection throughout.

use crate::error::{Error, Result};
use crate::evolution::{estimate_extinction_time, EvolutionConfig};
use crate::fitting::linear_fit;
use crate::functionals::{energy_j, h10_norm, lm_norm, nehari_scale, rayleigh_r};
use crate::geometry::{Field, LaplaceOperator};
use crate::params::{abs_pow, FdeParams};
use crate::profiles::ProfileResult;
use crate::rescaled::{evolve_rescaled_observed, Gauge, RescaledTrajectory};

use alloc::vec::Vec;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Number of low Dirichlet eigenvectors spanning the perturbation space.
pub const PROBE_MODES: usize = 10;

/// Perturbation and horizon policy of a stability probe.
#[derive(Debug, Clone, Copy)]
pub struct StabilityProbeConfig {
    /// Perturbation radius in `H¹₀`.
    pub delta: f64,
    /// Number of random perturbation directions.
    pub num_samples: usize,
    /// Rescaled-time horizon per sample.
    pub s_horizon: f64,
    /// Departure threshold on `sup_s ‖v(s) − φ‖_{H¹₀}`.
    pub epsilon: f64,
}

impl StabilityProbeConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.delta > 0.0
            && self.epsilon > self.delta
            && self.num_samples >= 4
            && self.s_horizon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(alloc::format!("{self:?}")))
        }
    }

    /// Defaults from the profile scale: `δ = 1e-2 ‖φ‖_{H¹₀}`, `ε = 10 δ`.
    pub fn for_profile_norm(phi_h10: f64) -> Self {
        let delta = 1e-2 * phi_h10;
        StabilityProbeConfig { delta, num_samples: 8, s_horizon: 20.0, epsilon: 10.0 * delta }
    }
}

/// Probe verdict over all samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeVerdict {
    /// Every sampled trajectory stayed within `ε` of the profile.
    StableEvidence,
    /// Some sample left the `ε` ball.
    DepartureObserved,
}

/// One probed trajectory.
#[derive(Debug, Clone)]
pub struct ProbeSample {
    /// `‖v(0) − φ‖_{H¹₀}` after projection.
    pub initial_deviation: f64,
    /// `sup_s ‖v(s) − φ‖_{H¹₀}` over the horizon.
    pub sup_deviation: f64,
    pub terminal_energy: f64,
    pub terminal_residual: f64,
    pub converged: bool,
    /// Full monitored history (snapshots thinned by the caller's stride).
    pub trajectory: RescaledTrajectory,
}

/// Aggregated probe result.
#[derive(Debug, Clone)]
pub struct ProbeReport {
    pub samples: Vec<ProbeSample>,
    pub verdict: ProbeVerdict,
    pub phi_energy: f64,
    /// Grid calibration factor: estimated `t*` of the profile itself.
    pub calibration: f64,
}

impl ProbeReport {
    /// Lowest terminal energy among the samples.
    pub fn min_terminal_energy(&self) -> f64 {
        self.samples.iter().map(|s| s.terminal_energy).fold(f64::INFINITY, f64::min)
    }
}

/// Estimated extinction time of the profile itself; the systematic bias of
/// the estimator, since the exact value is 1.
pub fn probe_calibration(
    op: &LaplaceOperator,
    phi: &Field,
    p: &FdeParams,
    evo: &EvolutionConfig,
) -> Result<f64> {
    estimate_extinction_time(op, phi, p, evo)
}

/// Random `H¹₀`-normalized direction in the span of the lowest Dirichlet
/// eigenvectors.
pub fn probe_direction(
    op: &LaplaceOperator,
    basis: &[Field],
    rng: &mut ChaCha8Rng,
) -> Result<Field> {
    let mut dir = Field::zeros(op.grid());
    for mode in basis {
        let c: f64 = rng.gen_range(-1.0..1.0);
        dir = dir.add_scaled(c, mode)?;
    }
    let norm = h10_norm(op, &dir)?;
    if norm == 0.0 {
        return Err(Error::ZeroField);
    }
    Ok(dir.scale(1.0 / norm))
}

/// Projects `w` onto the discrete phase set with the calibrated estimator
/// and returns `x(w)·w`.
pub fn project_to_phase_set(
    op: &LaplaceOperator,
    w: &Field,
    p: &FdeParams,
    evo: &EvolutionConfig,
    calibration: f64,
) -> Result<Field> {
    let t_est = estimate_extinction_time(op, w, p, evo)?;
    if !(t_est > 0.0 && calibration > 0.0) {
        return Err(Error::ProjectionFailure(alloc::format!(
            "estimates t = {t_est}, calibration = {calibration}"
        )));
    }
    let x = abs_pow(t_est / calibration, -p.rate_exponent());
    Ok(w.scale(x))
}

/// Evolves one perturbed, projected sample and records its deviation
/// history. Exposed so that drivers can fan samples out across tasks.
pub fn probe_one(
    op: &LaplaceOperator,
    phi: &Field,
    dir: &Field,
    cfg: &StabilityProbeConfig,
    p: &FdeParams,
    evo: &EvolutionConfig,
    calibration: f64,
) -> Result<ProbeSample> {
    let w = phi.add_scaled(cfg.delta, dir)?;
    let v0 = project_to_phase_set(op, &w, p, evo, calibration)?;
    let diff0 = v0.add_scaled(-1.0, phi)?;
    let initial_deviation = h10_norm(op, &diff0)?;

    let mut sup = initial_deviation;
    let mut traj_err: Option<Error> = None;
    let traj = {
        let mut observer = |_s: f64, v: &Field| -> bool {
            match v.add_scaled(-1.0, phi).and_then(|d| h10_norm(op, &d)) {
                Ok(dev) => {
                    if dev > sup {
                        sup = dev;
                    }
                    true
                }
                Err(e) => {
                    traj_err = Some(e);
                    false
                }
            }
        };
        evolve_rescaled_observed(op, &v0, cfg.s_horizon, p, evo, Gauge::default(), &mut observer)?
    };
    if let Some(e) = traj_err {
        return Err(e);
    }
    let terminal_energy = energy_j(op, &traj.terminal, p)?;
    Ok(ProbeSample {
        initial_deviation,
        sup_deviation: sup,
        terminal_energy,
        terminal_residual: traj.terminal_residual,
        converged: traj.converged,
        trajectory: traj,
    })
}

/// Runs the full probe: perturbation directions drawn from the lowest
/// Dirichlet eigenvectors with a seeded generator (sample `i` uses seed
/// `seed ⊕ i`, so fan-out order cannot change the result).
pub fn stability_probe(
    op: &LaplaceOperator,
    phi: &ProfileResult,
    cfg: &StabilityProbeConfig,
    p: &FdeParams,
    evo: &EvolutionConfig,
    seed: u64,
) -> Result<ProbeReport> {
    cfg.validate()?;
    if phi.residual > crate::profiles::PROFILE_RESIDUAL_TOL {
        return Err(Error::InvalidConfig(alloc::format!(
            "profile residual {} above acceptance bound",
            phi.residual
        )));
    }
    let (_lams, basis) = op.lowest_eigenpairs(PROBE_MODES)?;
    let calibration = probe_calibration(op, &phi.phi, p, evo)?;
    let mut samples = Vec::with_capacity(cfg.num_samples);
    for i in 0..cfg.num_samples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ i as u64);
        let dir = probe_direction(op, &basis, &mut rng)?;
        samples.push(probe_one(op, &phi.phi, &dir, cfg, p, evo, calibration)?);
    }
    let departed = samples.iter().any(|s| s.sup_deviation >= cfg.epsilon);
    Ok(ProbeReport {
        samples,
        verdict: if departed {
            ProbeVerdict::DepartureObserved
        } else {
            ProbeVerdict::StableEvidence
        },
        phi_energy: phi.energy,
        calibration,
    })
}

/// One tested descent candidate of the instability certificate.
#[derive(Debug, Clone, Copy)]
pub struct CertificateCandidate {
    /// Angular harmonic `k` of the perturbation `φ(1 + a·cos kθ)`.
    pub harmonic: u32,
    pub amplitude: f64,
    /// Energy of the projected candidate.
    pub energy: f64,
    /// `J(φ) − J(v₀)`; positive means descent inside the phase set.
    pub gap: f64,
}

/// Energy-descent search around a radial profile on a polar annulus.
#[derive(Debug, Clone)]
pub struct CertificateReport {
    pub phi_energy: f64,
    pub candidates: Vec<CertificateCandidate>,
    /// Best positive gap over all candidates, if any.
    pub best_gap: Option<f64>,
    /// Whether any candidate descended. `false` is reported, not fatal:
    /// the search is inconclusive evidence, not a proof of minimality.
    pub descent_found: bool,
}

/// Default amplitudes of the angular perturbations.
pub const CERTIFICATE_AMPLITUDES: [f64; 3] = [0.05, 0.1, 0.2];

/// Searches for phase-set states of lower energy near a radial profile by
/// perturbing it with low angular harmonics `cos(kθ)`, `k = 1..3`, and
/// projecting back onto the discrete phase set.
pub fn instability_certificate(
    op: &LaplaceOperator,
    phi_radial: &Field,
    p: &FdeParams,
    evo: &EvolutionConfig,
) -> Result<CertificateReport> {
    let grid = op.grid();
    if !grid.is_polar() {
        return Err(Error::WrongGridShape);
    }
    if !phi_radial.on_grid(grid) {
        return Err(Error::GridMismatch);
    }
    let phi_energy = energy_j(op, phi_radial, p)?;
    let calibration = probe_calibration(op, phi_radial, p, evo)?;
    let nt = grid.theta_nodes().len();

    let mut candidates = Vec::new();
    for harmonic in 1..=3u32 {
        for &amplitude in &CERTIFICATE_AMPLITUDES {
            let mut w = phi_radial.clone();
            for idx in 0..w.len() {
                let theta = grid.theta_nodes()[idx % nt];
                w.values_mut()[idx] *= 1.0 + amplitude * libm::cos(harmonic as f64 * theta);
            }
            let v0 = project_to_phase_set(op, &w, p, evo, calibration)?;
            let energy = energy_j(op, &v0, p)?;
            candidates.push(CertificateCandidate {
                harmonic,
                amplitude,
                energy,
                gap: phi_energy - energy,
            });
        }
    }
    let best_gap = candidates.iter().map(|c| c.gap).fold(f64::NEG_INFINITY, f64::max);
    let descent_found = best_gap > 0.0;
    Ok(CertificateReport {
        phi_energy,
        candidates,
        best_gap: descent_found.then_some(best_gap),
        descent_found,
    })
}

/// Łojasiewicz-fit result: `|J(v)−J(φ)|^{1-θ} ≤ ω ‖J'(v)‖_{H⁻¹}` fitted in
/// log-log coordinates on a trajectory cloud near `φ`.
#[derive(Debug, Clone, Copy)]
pub struct LojasiewiczFit {
    /// Raw fitted exponent `1 − 1/slope`.
    pub theta_raw: f64,
    /// Reported exponent, clamped into `(0, 1/2]`.
    pub theta: f64,
    pub omega: f64,
    /// Log-log slope `d log ΔJ / d log ‖J'‖`.
    pub slope: f64,
    pub points: usize,
    /// Whether the raw exponent already lay in `(0, 1/2]`.
    pub in_range: bool,
}

/// Energy-gap window admitted into the fit; below the floor the gap is
/// dominated by floating-point noise, above the cap by far-field curvature.
pub const LS_WINDOW: (f64, f64) = (1e-10, 1e-2);
/// Minimum number of admitted points.
pub const LS_MIN_POINTS: usize = 20;

/// Least-squares fit of `log ΔJ = α + β log ‖J'‖`; `θ = 1 − 1/β` and
/// `ω = exp(α/β)` back out the Łojasiewicz constants.
pub fn fit_lojasiewicz_cloud(delta_j: &[f64], jprime: &[f64]) -> Result<LojasiewiczFit> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (&dj, &g) in delta_j.iter().zip(jprime) {
        if dj >= LS_WINDOW.0 && dj <= LS_WINDOW.1 && g > 0.0 {
            xs.push(libm::log(g));
            ys.push(libm::log(dj));
        }
    }
    if xs.len() < LS_MIN_POINTS {
        return Err(Error::InsufficientPoints { points: xs.len(), required: LS_MIN_POINTS });
    }
    let (slope, intercept) =
        linear_fit(&xs, &ys).ok_or(Error::InsufficientPoints { points: 0, required: LS_MIN_POINTS })?;
    let theta_raw = 1.0 - 1.0 / slope;
    let in_range = theta_raw > 0.0 && theta_raw <= 0.5;
    let theta = theta_raw.clamp(f64::MIN_POSITIVE, 0.5);
    let omega = libm::exp(intercept / slope);
    Ok(LojasiewiczFit { theta_raw, theta, omega, slope, points: xs.len(), in_range })
}

/// Generates a trajectory cloud near `φ` and fits the Łojasiewicz
/// exponent from the recorded `(J(v) − J(φ), ‖J'(v)‖_{H⁻¹})` pairs.
pub fn fit_lojasiewicz(
    op: &LaplaceOperator,
    phi: &ProfileResult,
    p: &FdeParams,
    evo: &EvolutionConfig,
    seed: u64,
) -> Result<(LojasiewiczFit, Vec<RescaledTrajectory>)> {
    let j_phi = phi.energy;
    let phi_norm = h10_norm(op, &phi.phi)?;
    let (_lams, basis) = op.lowest_eigenpairs(PROBE_MODES)?;
    let calibration = probe_calibration(op, &phi.phi, p, evo)?;

    let mut delta_j = Vec::new();
    let mut jprime = Vec::new();
    let mut trajs = Vec::new();
    for (i, rel) in [0.02, 0.05, 0.1].iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64) << 8);
        let dir = probe_direction(op, &basis, &mut rng)?;
        let w = phi.phi.add_scaled(rel * phi_norm, &dir)?;
        let v0 = project_to_phase_set(op, &w, p, evo, calibration)?;
        let traj = crate::rescaled::evolve_rescaled(op, &v0, 25.0, p, evo, Gauge::default())?;
        for (rep, g) in traj.monitors.iter().zip(&traj.jprime) {
            delta_j.push(rep.j - j_phi);
            jprime.push(*g);
        }
        trajs.push(traj);
    }
    let fit = fit_lojasiewicz_cloud(&delta_j, &jprime)?;
    Ok((fit, trajs))
}

/// Per-sample outcome of the Nehari/phase-set consistency check.
#[derive(Debug, Clone, Copy)]
pub struct NehariPhaseSample {
    /// Nehari scaling `n(w)`.
    pub n: f64,
    /// Phase scaling `x(w)` from the raw extinction estimate.
    pub x: f64,
    /// Estimated extinction time of the projected state `x(w)·w`
    /// (should be 1 within the estimator tolerance).
    pub t_star_projected: f64,
    /// `|J(n(w)w) − ((m-2)/2m) λ_m^{-2/(m-2)} R(w)^{2m/(m-2)}|`.
    pub identity_residual: f64,
    /// Nehari-manifold residual of `n(w)·w`, relative.
    pub manifold_residual: f64,
}

/// Aggregate of [`nehari_vs_phase_check`].
#[derive(Debug, Clone)]
pub struct NehariPhaseReport {
    pub samples: Vec<NehariPhaseSample>,
    pub all_pass: bool,
}

/// Tolerances of the four per-sample checks.
pub const NEHARI_IDENTITY_TOL: f64 = 1e-8;
pub const NEHARI_MANIFOLD_TOL: f64 = 1e-10;
pub const PHASE_TIME_TOL: f64 = 0.02;
/// Slack on `x ≤ n` absorbing extinction-estimator noise.
pub const PHASE_ORDER_SLACK: f64 = 0.01;

/// For each sample verifies: `n(w)·w` lies on the Nehari manifold, the
/// projected state has unit estimated extinction time, `x(w) ≤ n(w)`, and
/// the energy–Rayleigh identity on the manifold.
pub fn nehari_vs_phase_check(
    op: &LaplaceOperator,
    samples: &[Field],
    p: &FdeParams,
    evo: &EvolutionConfig,
) -> Result<NehariPhaseReport> {
    let mut out = Vec::with_capacity(samples.len());
    let mut all_pass = true;
    for w in samples {
        if lm_norm(w, p) == 0.0 {
            return Err(Error::ZeroField);
        }
        let n = nehari_scale(op, w, p)?;
        let x = crate::functionals::phase_scale(op, w, p, evo)?;
        let projected = w.scale(x);
        let t_star_projected = estimate_extinction_time(op, &projected, p, evo)?;

        let scaled = w.scale(n);
        let dirichlet = op.h10_inner(&scaled, &scaled)?;
        let lm_m = crate::functionals::lm_norm_pow(&scaled, p);
        let manifold_residual =
            libm::fabs(dirichlet - p.lambda_m() * lm_m) / dirichlet.abs().max(1e-300);

        let j = energy_j(op, &scaled, p)?;
        let r = rayleigh_r(op, w, p)?;
        let m = p.m();
        let predicted = (m - 2.0) / (2.0 * m)
            * abs_pow(p.lambda_m(), -2.0 / (m - 2.0))
            * abs_pow(r, 2.0 * m / (m - 2.0));
        let identity_residual = libm::fabs(j - predicted);

        let pass = manifold_residual <= NEHARI_MANIFOLD_TOL
            && libm::fabs(t_star_projected - 1.0) <= PHASE_TIME_TOL
            && x <= n * (1.0 + PHASE_ORDER_SLACK)
            && identity_residual <= NEHARI_IDENTITY_TOL * predicted.abs().max(1.0);
        all_pass &= pass;
        out.push(NehariPhaseSample {
            n,
            x,
            t_star_projected,
            identity_residual,
            manifold_residual,
        });
    }
    Ok(NehariPhaseReport { samples: out, all_pass })
}

/// Deterministic smooth positive sample fields for consistency checks:
/// mixtures of the low Dirichlet eigenvectors, shifted positive.
pub fn smooth_positive_samples(
    op: &LaplaceOperator,
    count: usize,
    seed: u64,
) -> Result<Vec<Field>> {
    let (_lams, basis) = op.lowest_eigenpairs(4.min(PROBE_MODES))?;
    let ground = &basis[0];
    let ground_max = crate::functionals::linf_norm(ground);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let mut w = ground.scale(1.0 / ground_max);
        for mode in basis.iter().skip(1) {
            let c: f64 = rng.gen_range(-0.2..0.2);
            w = w.add_scaled(c / ground_max, mode)?;
        }
        // positive part of the mixture keeps samples sign-definite
        let amp: f64 = rng.gen_range(0.5..3.0);
        let w = w.map(|v| amp * v.max(0.0));
        if lm_norm(&w, &FdeParams::new(3.0, 1).unwrap()) == 0.0 {
            return Err(Error::ZeroField);
        }
        out.push(w);
    }
    Ok(out)
}
