//! Cross-module integration checks: the phase-set bounds, a-priori
//! estimates and consistency properties that tie the solvers together.

use fde_lab::runner::prelude::*;
use std::sync::Arc;

/// Fine-grid oracle values for the 1-D stationary problem on (0,1) with
/// m = 3, frozen from the n = 16384 shooting run (`-φ'' = 2φ²`, Dirichlet):
/// the closed-form first integral gives max φ = B(1/3,1/2)²/3.
const ORACLE_MAX_PHI: f64 = 5.8983438;
/// Sobolev–Poincaré constant 1/inf R on the same domain, Richardson-settled
/// across n = 4096 and 8192 (both agree to 8 digits).
const ORACLE_C3: f64 = 0.33919020;

fn interval_setup(n: usize) -> (Arc<Grid>, LaplaceOperator, FdeParams) {
    let g = build_grid(GridShape::Interval { a: 0.0, b: 1.0 }, n).unwrap();
    let op = LaplaceOperator::new(&g);
    let p = FdeParams::new(3.0, 1).unwrap();
    (g, op, p)
}

fn rescaled_cfg() -> EvolutionConfig {
    EvolutionConfig { dt_init: 1e-3, dt_max: 0.05, snapshot_stride: 0, ..EvolutionConfig::default() }
}

#[test]
fn separable_round_trip_recovers_profile() {
    // physical evolution from the profile, rescaled back with the fitted
    // extinction time: t* = 1 within 2% and the rescaled states track the
    // profile to 1e-3 relative in H^1_0 (tight stepping; the trajectory is
    // first-order in the step, so the recovery floor scales with it)
    let (_g, op, p) = interval_setup(256);
    let prof = minimize_rayleigh(&op, &p, &default_initializer(&op).unwrap()).unwrap();
    let phi = &prof.phi;
    let phi_h10 = h10_norm(&op, phi).unwrap();
    let cfg = EvolutionConfig {
        snapshot_stride: 8,
        dt_max: 6.25e-4,
        drop_max: 2.5e-3,
        ..EvolutionConfig::default()
    };
    let (traj, est) = evolve_fde(&op, phi, &p, &cfg, 1.0 / prof.rayleigh).unwrap();
    assert!((est.t_star - 1.0).abs() <= 0.02, "t* = {}", est.t_star);

    let resc = rescale_from_physical(&op, &traj, &est, &p).unwrap();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (k, (_i, v)) in resc.snapshots.iter().enumerate() {
        if resc.s_times[k] <= 6.0 {
            let rel = h10_norm(&op, &v.add_scaled(-1.0, phi).unwrap()).unwrap() / phi_h10;
            worst = worst.max(rel);
            checked += 1;
        }
    }
    assert!(checked > 50);
    assert!(worst <= 1e-3, "profile recovery {worst:.3e}");
}

#[test]
fn phase_set_rayleigh_and_norm_bounds() {
    // projected states obey R >= 1/C_m, ||w||_m >= (lambda C^2)^{-1/(m-2)}
    // and R <= (lambda C^2)^{1/(m-2)} ||w||_{H^1_0}, within the projection
    // tolerance of the extinction estimator
    let (_g, op, p) = interval_setup(96);
    let c_m = estimate_sobolev_constant(&op, &p).unwrap();
    let evo = EvolutionConfig::default();
    let lambda = p.lambda_m();
    let slack = 1.02;
    for seed in 0..10u64 {
        let w = positive_samples(&op, 1, 300 + seed).unwrap().remove(0);
        let x = phase_scale(&op, &w, &p, &evo).unwrap();
        let v0 = w.scale(x);
        let r = rayleigh_r(&op, &v0, &p).unwrap();
        assert!(r * c_m * slack >= 1.0, "R = {r} below 1/C_m = {}", 1.0 / c_m);
        let lm = lm_norm(&v0, &p);
        let lm_floor = (lambda * c_m * c_m).powf(-1.0 / (p.m() - 2.0));
        assert!(lm * slack >= lm_floor, "||w||_m = {lm} below {lm_floor}");
        let h10 = h10_norm(&op, &v0).unwrap();
        let cap = (lambda * c_m * c_m).powf(1.0 / (p.m() - 2.0)) * h10;
        assert!(r <= cap * slack, "R = {r} above the H^1_0 cap {cap}");
    }
}

#[test]
fn apriori_bound_for_solutions_on_phase_set() {
    // sup_s ||v(s)||^2_{H^1_0} <= 2 J(v0) + 2 R(v0)^{2m/(m-2)} / (m lambda^{2/(m-2)})
    let (_g, op, p) = interval_setup(96);
    let evo = rescaled_cfg();
    let m = p.m();
    let lambda = p.lambda_m();
    for seed in 0..3u64 {
        let w = positive_samples(&op, 1, 50 + seed).unwrap().remove(0);
        let x = phase_scale(&op, &w, &p, &evo).unwrap();
        let v0 = w.scale(x);
        let j0 = energy_j(&op, &v0, &p).unwrap();
        let r0 = rayleigh_r(&op, &v0, &p).unwrap();
        let bound = 2.0 * j0 + 2.0 * r0.powf(2.0 * m / (m - 2.0)) / (m * lambda.powf(2.0 / (m - 2.0)));
        let traj = evolve_rescaled(&op, &v0, 12.0, &p, &evo, Gauge::default()).unwrap();
        let sup = traj.monitors.iter().map(|r| r.h10 * r.h10).fold(0.0f64, f64::max);
        assert!(sup <= bound * 1.05, "sup {sup} vs bound {bound}");
    }
}

#[test]
fn phase_set_is_invariant_along_the_flow() {
    // raw (ungauged) flow from a projected state: estimated t* of the
    // resampled states stays 1 within 3% at small s
    let (_g, op, p) = interval_setup(96);
    let evo = rescaled_cfg();
    let w = positive_samples(&op, 1, 77).unwrap().remove(0);
    let x = phase_scale(&op, &w, &p, &evo).unwrap();
    let v0 = w.scale(x);
    let t0 = estimate_extinction_time(&op, &v0, &p, &evo).unwrap();
    assert!((t0 - 1.0).abs() <= 0.02, "projected t* = {t0}");

    let samples_at = [0.3, 0.6, 1.0];
    let mut captured: Vec<Field> = Vec::new();
    let mut next = 0usize;
    let mut observer = |s: f64, v: &Field| -> bool {
        if next < samples_at.len() && s >= samples_at[next] {
            captured.push(v.clone());
            next += 1;
        }
        next < samples_at.len()
    };
    let _ = evolve_rescaled_observed(&op, &v0, 1.2, &p, &evo, Gauge::None, &mut observer).unwrap();
    assert_eq!(captured.len(), 3);
    for (s, v) in samples_at.iter().zip(&captured) {
        let t = estimate_extinction_time(&op, v, &p, &evo).unwrap();
        assert!((t - 1.0).abs() <= 0.03, "t*(v({s})) = {t}");
    }
}

#[test]
fn uniform_bound_ratios_form_a_band() {
    // the sup-norm tail against the structural bound: empirical constants
    // across a family of projected starts agree within a factor of 10
    let (_g, op, p) = interval_setup(96);
    let evo = rescaled_cfg();
    let mut ratios = Vec::new();
    for seed in 0..10u64 {
        let w = positive_samples(&op, 1, 900 + seed).unwrap().remove(0);
        let x = phase_scale(&op, &w, &p, &evo).unwrap();
        let traj = evolve_rescaled(&op, &w.scale(x), 4.0, &p, &evo, Gauge::default()).unwrap();
        let rep = check_uniform_linf(&traj, 0.3, &p).unwrap();
        assert!(rep.sup_linf.is_finite() && rep.sup_linf > 0.0);
        ratios.push(rep.ratio);
    }
    let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().cloned().fold(0.0f64, f64::max);
    assert!(hi / lo <= 10.0, "constant band [{lo:.3e}, {hi:.3e}] wider than 10x");
}

#[test]
fn extinction_time_converges_first_order_in_the_step() {
    // halving the step cap halves the t* error against a fine reference
    let (_g, op, p) = interval_setup(128);
    let prof = minimize_rayleigh(&op, &p, &default_initializer(&op).unwrap()).unwrap();
    let estimate = |tighten: f64| -> f64 {
        let cfg = EvolutionConfig {
            dt_max: 5e-3 / tighten,
            drop_max: 0.02 / tighten,
            ..EvolutionConfig::default()
        };
        estimate_extinction_time(&op, &prof.phi, &p, &cfg).unwrap()
    };
    // Richardson-extrapolated reference removes the fine run's own
    // first-order bias, which would otherwise skew the ratio
    let reference = 2.0 * estimate(16.0) - estimate(8.0);
    let e1 = (estimate(1.0) - reference).abs();
    let e2 = (estimate(2.0) - reference).abs();
    let ratio = e1 / e2;
    assert!((1.5..=2.5).contains(&ratio), "t* error ratio {ratio} (e1 {e1:.2e}, e2 {e2:.2e})");
}

#[test]
fn separable_one_step_accuracy_is_second_order() {
    // one implicit step from separable data matches the exact solution to
    // O(dt^2): quartering the error when dt halves
    let (_g, op, p) = interval_setup(128);
    let prof = minimize_rayleigh(&op, &p, &default_initializer(&op).unwrap()).unwrap();
    let phi = &prof.phi;
    let rate = p.rate_exponent();
    let t0 = 0.3;
    let u = phi.scale((1.0 - t0_f(t0)).powf(rate));
    let cfg = EvolutionConfig { dt_max: 1e-2, ..EvolutionConfig::default() };
    let err_at = |dt: f64| -> f64 {
        let stepped = fde_core::evolution::step_fde(&op, &u, dt, &p, &cfg).unwrap();
        let exact = phi.scale((1.0 - t0 - dt).powf(rate));
        stepped
            .values()
            .iter()
            .zip(exact.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max)
    };
    let e1 = err_at(4e-3);
    let e2 = err_at(2e-3);
    let ratio = e1 / e2;
    assert!((3.4..=4.6).contains(&ratio), "one-step error ratio {ratio}");
}

// identity helper so the closure above reads clearly
fn t0_f(t0: f64) -> f64 {
    t0
}

#[test]
fn profile_peak_converges_second_order_to_the_oracle() {
    let p = FdeParams::new(3.0, 1).unwrap();
    let peak_err = |n: usize| -> f64 {
        let g = build_grid(GridShape::Interval { a: 0.0, b: 1.0 }, n).unwrap();
        let op = LaplaceOperator::new(&g);
        let prof = minimize_rayleigh(&op, &p, &default_initializer(&op).unwrap()).unwrap();
        let peak = prof.phi.values().iter().cloned().fold(0.0f64, f64::max);
        (peak - ORACLE_MAX_PHI).abs()
    };
    // odd n keeps the midpoint on the grid so the nodal max is the peak
    let e1 = peak_err(127);
    let e2 = peak_err(255);
    let ratio = e1 / e2;
    assert!((3.0..=5.0).contains(&ratio), "peak error ratio {ratio} (e1 {e1:.2e}, e2 {e2:.2e})");
}

#[test]
fn sobolev_constant_matches_oracle_and_dominates_quotients() {
    let (_g, op, p) = interval_setup(512);
    let c_m = estimate_sobolev_constant(&op, &p).unwrap();
    assert!((c_m - ORACLE_C3).abs() <= 2e-5, "C_3 = {c_m} vs oracle {ORACLE_C3}");

    // 1 = C_m R(least-energy) by construction of the minimizer
    let prof = minimize_rayleigh(&op, &p, &default_initializer(&op).unwrap()).unwrap();
    assert!((c_m * prof.rayleigh - 1.0).abs() <= 1e-6);

    // definition of the supremum: C_m >= ||w||_m / ||w||_{H^1_0}
    let (_l, basis) = op.lowest_eigenpairs(6).unwrap();
    let mut state = 123u64;
    let mut coeff = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    };
    for _ in 0..100 {
        let mut w = Field::zeros(op.grid());
        for mode in &basis {
            w = w.add_scaled(coeff(), mode).unwrap();
        }
        let lm = lm_norm(&w, &p);
        if lm == 0.0 {
            continue;
        }
        let ratio = lm / h10_norm(&op, &w).unwrap();
        assert!(ratio <= c_m * (1.0 + 1e-12), "quotient {ratio} above C_m = {c_m}");
    }
}

#[test]
fn nehari_and_phase_scalings_are_consistent_on_random_states() {
    // n(w)w on the manifold, x(w)w at unit extinction time, x <= n, and
    // the energy identity, for 20 random positive smooth fields
    let (_g, op, p) = interval_setup(64);
    let evo = EvolutionConfig::default();
    let samples = positive_samples(&op, 20, 4242).unwrap();
    let report = nehari_vs_phase_check(&op, &samples, &p, &evo).unwrap();
    assert!(report.all_pass, "failing samples: {:#?}", report.samples);
    // the stationary profile has n = x = 1 up to estimator tolerance
    let prof = minimize_rayleigh(&op, &p, &default_initializer(&op).unwrap()).unwrap();
    let n_phi = nehari_scale(&op, &prof.phi, &p).unwrap();
    let x_phi = phase_scale(&op, &prof.phi, &p, &evo).unwrap();
    assert!((n_phi - 1.0).abs() <= 1e-9, "n(phi) = {n_phi}");
    assert!((x_phi - 1.0).abs() <= 0.02, "x(phi) = {x_phi}");
}

#[test]
fn certificate_projection_is_exact_at_zero_amplitude() {
    // the calibrated projection of the reference state is the identity, so
    // a zero-amplitude perturbation has exactly zero energy gap
    let (_g, op, p) = interval_setup(64);
    let evo = EvolutionConfig::default();
    let prof = minimize_rayleigh(&op, &p, &default_initializer(&op).unwrap()).unwrap();
    let cal = probe_calibration(&op, &prof.phi, &p, &evo).unwrap();
    let projected = project_to_phase_set(&op, &prof.phi, &p, &evo, cal).unwrap();
    for (a, b) in projected.values().iter().zip(prof.phi.values()) {
        assert_eq!(a, b, "zero-amplitude projection moved a node");
    }
}

#[test]
fn moderately_thick_annulus_still_prefers_non_radial_states() {
    // at b/a = 4 the thinness condition is still (barely) satisfied:
    // ((b-a)/(pi a))^2 = 0.912 < 1, and the 2-D minimizer indeed beats the
    // radial profile; the certificate is report-only either way
    let p = FdeParams::new(3.0, 2).unwrap();
    let (lhs, satisfied) = instability_threshold(1.0, 4.0, 2, p.m()).unwrap();
    assert!((lhs - 0.9119).abs() < 1e-3);
    assert!(satisfied);

    let rg = build_grid(GridShape::Radial { dim: 2, a: 1.0, b: 4.0 }, 16).unwrap();
    let rop = LaplaceOperator::new(&rg);
    let rmin = minimize_rayleigh(&rop, &p, &default_initializer(&rop).unwrap()).unwrap();
    let pg = build_grid(GridShape::Polar2d { a: 1.0, b: 4.0, n_theta: 32 }, 16).unwrap();
    let pop = LaplaceOperator::new(&pg);
    let lifted = lift_radial(&rmin.phi, &pg).unwrap();
    let j_radial = energy_j(&pop, &lifted, &p).unwrap();

    let mut init = default_initializer(&pop).unwrap();
    let nt = 32usize;
    for idx in 0..init.len() {
        let th = pg.theta_nodes()[idx % nt];
        init.values_mut()[idx] *= 1.0 + 0.25 * th.cos();
    }
    let min2 = minimize_rayleigh(&pop, &p, &init).unwrap();
    assert!(min2.energy < j_radial, "J(min) = {} vs J(radial) = {}", min2.energy, j_radial);
    assert_eq!(min2.is_radial, Some(false));

    let evo = EvolutionConfig::default();
    let cert = instability_certificate(&pop, &lifted, &p, &evo).unwrap();
    // report-only: with the condition satisfied descent is expected here
    assert!(cert.descent_found);
    assert!(cert.best_gap.unwrap() > 0.0);
}
