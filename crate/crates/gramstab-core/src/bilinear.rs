//! Full bilinear closed loop `i a' = (D - u M) a` with the Gramian feedback
//! evaluated on the gap to the ground state.
//!
//! The truncated Hamiltonian `D - u M` is real symmetric, so the exact flow is
//! unitary between control updates and the L^2 norm of the modal vector is a
//! conserved quantity. The stepper is built to inherit that conservation to
//! roundoff: a Strang split with the exact phase rotation for D and a Cayley
//! (Crank-Nicolson) form for the `u M` kick, `u` frozen at the half-step
//! state. Plain RK4 would leak norm at the 1e-6 level over desk horizons.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fit::{linear_fit, median};
use crate::gramian::{sharp_control_vector, GramianMatrix};
use crate::spectral::{DipoleCoupling, SobolevWeights, SpectralState};
use crate::feedback::{Trajectory, TrajectoryMeta};

/// Configuration of one nonlinear stabilization run.
#[derive(Debug, Clone)]
pub struct NonlinearRunConfig {
    /// Initial H-distance to the ground state.
    pub epsilon: f64,
    /// Feedback gain.
    pub lambda: f64,
    /// Target certified rate, 0 < lambda_hat < lambda.
    pub lambda_hat: f64,
    /// Horizon.
    pub horizon: f64,
    /// Step size; must satisfy dt <= min(1e-2, 0.1/omega_N).
    pub dt: f64,
    pub n_modes: usize,
    /// Rescale a slightly off-normalized initial state instead of erroring.
    pub normalize: bool,
}

impl NonlinearRunConfig {
    pub fn validate(&self, coupling: &DipoleCoupling) -> Result<()> {
        if self.n_modes != coupling.n_modes() {
            return Err(Error::Dimension {
                expected: coupling.n_modes(),
                got: self.n_modes,
            });
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Domain("epsilon must be positive".into()));
        }
        if !(0.0 < self.lambda_hat && self.lambda_hat < self.lambda) {
            return Err(Error::Domain(format!(
                "need 0 < lambda_hat < lambda, got {} vs {}",
                self.lambda_hat, self.lambda
            )));
        }
        if !(self.horizon > 0.0) || !(self.dt > 0.0) {
            return Err(Error::Domain("horizon and dt must be positive".into()));
        }
        let dt_max = (0.1 / coupling.omega_max()).min(1e-2);
        if self.dt > dt_max {
            return Err(Error::Domain(format!(
                "dt = {} exceeds the stiffness bound {dt_max:.3e}",
                self.dt
            )));
        }
        Ok(())
    }
}

/// A bilinear run: the sampled trajectory plus the conservation and
/// ground-state-gap columns.
#[derive(Debug, Clone)]
pub struct BilinearRun {
    pub traj: Trajectory,
    pub l2_norms: Vec<f64>,
    pub b_components: Vec<f64>,
    pub h3_gaps: Vec<f64>,
    pub max_l2_drift: f64,
}

/// Decomposition of a state into its ground-state multiple and the sharp rest.
#[derive(Debug, Clone)]
pub struct GroundStateGap {
    pub h3_gap: f64,
    pub l2_gap: f64,
    /// Coefficient b in the decomposition `y = b Phi_1 + y_P`.
    pub b_component: f64,
}

pub fn ground_state_gap(state: &SpectralState, weights: &SobolevWeights) -> Result<GroundStateGap> {
    if state.n_modes() != weights.n_modes() {
        return Err(Error::Dimension {
            expected: weights.n_modes(),
            got: state.n_modes(),
        });
    }
    let coeffs = state.coeffs();
    let b = coeffs[0].re;
    let mut l2 = (coeffs[0].re - 1.0).powi(2) + coeffs[0].im.powi(2);
    let mut h3 = weights.get(1) * l2;
    for (k, c) in coeffs.iter().enumerate().skip(1) {
        l2 += c.norm_sqr();
        h3 += weights.get(k + 1) * c.norm_sqr();
    }
    Ok(GroundStateGap {
        h3_gap: h3.sqrt(),
        l2_gap: l2.sqrt(),
        b_component: b,
    })
}

/// Integrate the bilinear loop. `u` recombines the control term and the
/// nonlinear remainder into the full dipole product `u mu Psi`, so the modal
/// system is `i a_k' = omega_k a_k - u sum_l mu_{kl} a_l` with
/// `u = -B* Q^{-1} proj (y - Phi_1)`.
pub fn simulate_bilinear(
    y0: &SpectralState,
    cfg: &NonlinearRunConfig,
    q: &GramianMatrix,
    coupling: &DipoleCoupling,
) -> Result<BilinearRun> {
    cfg.validate(coupling)?;
    let n = coupling.n_modes();
    if y0.n_modes() != n {
        return Err(Error::Dimension {
            expected: n,
            got: y0.n_modes(),
        });
    }
    let weights = &coupling.weights;
    let mut a: Vec<Complex64> = y0.coeffs().to_vec();
    let l2 = y0.l2_norm_sq().sqrt();
    if (l2 - 1.0).abs() > 1e-10 {
        if cfg.normalize {
            for c in &mut a {
                *c /= l2;
            }
        } else {
            return Err(Error::Contract(format!(
                "initial state is not L2-normalized: |a| = {l2}"
            )));
        }
    }
    let gap0 = gap_state(&a, weights);
    if gap0.0 > cfg.epsilon * (1.0 + 1e-9) {
        return Err(Error::Contract(format!(
            "initial gap {:.3e} exceeds epsilon {:.3e}",
            gap0.0, cfg.epsilon
        )));
    }

    // u = -(Q^{-1} b_sharp) . sharp(proj(y - Phi_1)); the projection makes the
    // gap form and the full-state form identical.
    let b_sharp = sharp_control_vector(coupling);
    let gain = q.solve(&b_sharp)?;
    let steps = (cfg.horizon / cfg.dt).round().max(1.0) as usize;
    let half_phase: Vec<Complex64> = (0..n)
        .map(|k| (-Complex64::i() * coupling.omega[k] * (cfg.dt / 2.0)).exp())
        .collect();

    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut controls = Vec::with_capacity(steps + 1);
    let mut l2_norms = Vec::with_capacity(steps + 1);
    let mut b_components = Vec::with_capacity(steps + 1);
    let mut h3_gaps = Vec::with_capacity(steps + 1);
    let mut max_drift = 0.0f64;

    record(
        0.0,
        &a,
        weights,
        -control_of(&a, &gain, weights),
        &mut times,
        &mut states,
        &mut controls,
        &mut l2_norms,
        &mut b_components,
        &mut h3_gaps,
    );

    let eye = DMatrix::<Complex64>::identity(n, n);
    let mu_c = coupling.mu_mat.map(|x| Complex64::new(x, 0.0));
    for step in 0..steps {
        // half rotation, feedback at the half step, unitary Cayley kick, half rotation
        let mut ah: Vec<Complex64> = a
            .iter()
            .zip(half_phase.iter())
            .map(|(c, p)| c * p)
            .collect();
        let u = -control_of(&ah, &gain, weights);
        #[cfg(debug_assertions)]
        {
            let u_full = -full_state_control(&ah, &gain, weights);
            debug_assert!(
                (u - u_full).abs() <= 1e-12 * u.abs().max(1.0),
                "gap-form and full-state feedback disagree: {u} vs {u_full}"
            );
        }
        if u != 0.0 {
            let gamma = Complex64::i() * (u * cfg.dt / 2.0);
            let lhs = &eye - &mu_c * gamma;
            let rhs_vec = {
                let av = DVector::from_column_slice(&ah);
                &av + &mu_c * gamma * &av
            };
            let lu = lhs.lu();
            let solved = lu
                .solve(&rhs_vec)
                .ok_or_else(|| Error::Contract("singular Cayley kick".into()))?;
            ah = solved.iter().copied().collect();
        }
        a = ah
            .iter()
            .zip(half_phase.iter())
            .map(|(c, p)| c * p)
            .collect();

        let t = (step + 1) as f64 * cfg.dt;
        let u_next = -control_of(&a, &gain, weights);
        record(
            t,
            &a,
            weights,
            u_next,
            &mut times,
            &mut states,
            &mut controls,
            &mut l2_norms,
            &mut b_components,
            &mut h3_gaps,
        );
        let drift = (l2_norms.last().unwrap() - 1.0).abs();
        max_drift = max_drift.max(drift);
        if drift > 1e-3 {
            return Err(Error::Blowup { drift });
        }
    }

    Ok(BilinearRun {
        traj: Trajectory {
            times,
            states,
            controls,
            qinv_norms: None,
            meta: TrajectoryMeta {
                lambda: q.lambda,
                n_modes: n,
                integrator: "strang-cayley".into(),
                dt: cfg.dt,
            },
        },
        l2_norms,
        b_components,
        h3_gaps,
        max_l2_drift: max_drift,
    })
}

/// (h3_gap, l2_norm, b) of a raw coefficient vector.
fn gap_state(a: &[Complex64], weights: &SobolevWeights) -> (f64, f64, f64) {
    let mut h3 = weights.get(1) * ((a[0].re - 1.0).powi(2) + a[0].im.powi(2));
    let mut l2 = a[0].norm_sqr();
    for (k, c) in a.iter().enumerate().skip(1) {
        h3 += weights.get(k + 1) * c.norm_sqr();
        l2 += c.norm_sqr();
    }
    (h3.sqrt(), l2.sqrt(), a[0].re)
}

/// `(Q^{-1} b) . sharp(y - Phi_1)`; the Phi^1_1 coordinate of the gap is
/// dropped by the sharp layout, which realizes the projection.
fn control_of(a: &[Complex64], gain: &DVector<f64>, weights: &SobolevWeights) -> f64 {
    let mut acc = gain[0] * a[0].im * weights.get(1).sqrt();
    for k in 2..=a.len() {
        let sw = weights.get(k).sqrt();
        let base = 1 + 2 * (k - 2);
        acc += gain[base] * a[k - 1].re * sw + gain[base + 1] * a[k - 1].im * sw;
    }
    acc
}

#[cfg(debug_assertions)]
fn full_state_control(a: &[Complex64], gain: &DVector<f64>, weights: &SobolevWeights) -> f64 {
    // same pairing evaluated from the unshifted state; proj(y) = proj(y - Phi_1)
    let state = SpectralState::new(a.to_vec()).expect("mid-step state is finite");
    let sharp =
        crate::spectral::to_sharp(weights, &state.to_hvector()).expect("dimensions agree");
    gain.dot(&sharp)
}

#[allow(clippy::too_many_arguments)]
fn record(
    t: f64,
    a: &[Complex64],
    weights: &SobolevWeights,
    u: f64,
    times: &mut Vec<f64>,
    states: &mut Vec<DVector<f64>>,
    controls: &mut Vec<f64>,
    l2_norms: &mut Vec<f64>,
    b_components: &mut Vec<f64>,
    h3_gaps: &mut Vec<f64>,
) {
    let (h3, l2, b) = gap_state(a, weights);
    times.push(t);
    let mut v = DVector::zeros(2 * a.len());
    for (k, c) in a.iter().enumerate() {
        v[2 * k] = c.re;
        v[2 * k + 1] = c.im;
    }
    states.push(v);
    controls.push(u);
    l2_norms.push(l2);
    b_components.push(b);
    h3_gaps.push(h3);
}

/// Draw a unit-L2 state at H-distance `epsilon` from the ground state:
/// Gaussian modal coefficients damped by 1/k^4, projected onto the sharp
/// directions, scaled, then corrected for the L2 renormalization so the final
/// gap lands on epsilon.
pub fn sample_perturbed_state(
    n_modes: usize,
    epsilon: f64,
    weights: &SobolevWeights,
    rng: &mut ChaCha8Rng,
) -> Result<SpectralState> {
    let mut delta: Vec<Complex64> = (0..n_modes)
        .map(|k| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(re, im) / ((k + 1) as f64).powi(4)
        })
        .collect();
    delta[0] = Complex64::new(0.0, delta[0].im);
    let h3 = delta
        .iter()
        .enumerate()
        .map(|(k, c)| weights.get(k + 1) * c.norm_sqr())
        .sum::<f64>()
        .sqrt();
    if h3 == 0.0 {
        return Err(Error::Contract("degenerate perturbation draw".into()));
    }
    let mut scale = epsilon / h3;
    for _ in 0..16 {
        let mut a: Vec<Complex64> = delta.iter().map(|c| c * scale).collect();
        a[0] += 1.0;
        let l2 = a.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        for c in &mut a {
            *c /= l2;
        }
        let state = SpectralState::new(a)?;
        let gap = ground_state_gap(&state, weights)?.h3_gap;
        if gap <= epsilon && gap >= epsilon * (1.0 - 1e-9) {
            return Ok(state);
        }
        scale *= epsilon / gap;
    }
    Err(Error::Contract("perturbation scaling did not converge".into()))
}

/// One row of the basin probe.
#[derive(Debug, Clone)]
pub struct BasinRow {
    pub epsilon: f64,
    pub trials: usize,
    pub successes: usize,
    /// Largest observed decay prefactor across trials.
    pub worst_c: f64,
    pub median_rate: f64,
}

/// Probe the stabilization basin: for each epsilon run seeded random initial
/// states, declare success when the fitted decay rate of the gap over
/// [T/2, T] reaches 2 lambda_hat. Failures are data, not errors.
pub fn basin_probe(
    cfg: &NonlinearRunConfig,
    epsilons: &[f64],
    q: &GramianMatrix,
    coupling: &DipoleCoupling,
    trials: usize,
    seed: u64,
) -> Result<Vec<BasinRow>> {
    if trials == 0 {
        return Err(Error::Domain("need at least one trial".into()));
    }
    let weights = &coupling.weights;
    let mut rows = Vec::with_capacity(epsilons.len());
    for (ei, &eps) in epsilons.iter().enumerate() {
        if eps == 0.0 {
            rows.push(BasinRow {
                epsilon: 0.0,
                trials,
                successes: trials,
                worst_c: 1.0,
                median_rate: f64::INFINITY,
            });
            continue;
        }
        let outcomes: Vec<(bool, f64, f64)> = (0..trials)
            .into_par_iter()
            .map(|trial| {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(seed ^ ((ei as u64) << 32) ^ trial as u64);
                let mut run_cfg = cfg.clone();
                run_cfg.epsilon = eps;
                let y0 = match sample_perturbed_state(cfg.n_modes, eps, weights, &mut rng) {
                    Ok(s) => s,
                    Err(_) => return (false, f64::NAN, f64::INFINITY),
                };
                match simulate_bilinear(&y0, &run_cfg, q, coupling) {
                    Ok(run) => {
                        let (rate, c) = rate_and_prefactor(&run, cfg.lambda_hat, cfg.horizon);
                        (rate.is_some_and(|r| r >= 2.0 * cfg.lambda_hat), rate.unwrap_or(f64::NAN), c)
                    }
                    Err(_) => (false, f64::NAN, f64::INFINITY),
                }
            })
            .collect();
        let successes = outcomes.iter().filter(|(ok, _, _)| *ok).count();
        let rates: Vec<f64> = outcomes
            .iter()
            .map(|(_, r, _)| *r)
            .filter(|r| r.is_finite())
            .collect();
        let worst_c = outcomes.iter().map(|(_, _, c)| *c).fold(0.0, f64::max);
        rows.push(BasinRow {
            epsilon: eps,
            trials,
            successes,
            worst_c,
            median_rate: median(&rates).unwrap_or(f64::NAN),
        });
    }
    Ok(rows)
}

/// Fitted decay rate of the gap over [T/2, T] and the prefactor
/// `max_t gap(t) e^{2 lambda_hat t} / gap(0)`.
pub fn rate_and_prefactor(run: &BilinearRun, lambda_hat: f64, horizon: f64) -> (Option<f64>, f64) {
    let gap0 = run.h3_gaps[0];
    if gap0 == 0.0 {
        return (None, 1.0);
    }
    let mut ts = Vec::new();
    let mut lns = Vec::new();
    let mut c: f64 = 0.0;
    for (t, g) in run.traj.times.iter().zip(run.h3_gaps.iter()) {
        c = c.max(g * (2.0 * lambda_hat * t).exp() / gap0);
        if *t >= horizon / 2.0 && *g > 0.0 {
            ts.push(*t);
            lns.push(g.ln());
        }
    }
    (linear_fit(&ts, &lns).map(|(s, _)| -s), c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gramian::build_gramian;
    use crate::spectral::{build_coupling, DipoleProfile};
    use approx::assert_relative_eq;

    fn setup(n: usize, lambda: f64) -> (DipoleCoupling, GramianMatrix) {
        let coupling = build_coupling(&DipoleProfile::xsq(), n).unwrap();
        let q = build_gramian(&coupling, lambda).unwrap();
        (coupling, q)
    }

    fn cfg(n: usize, coupling: &DipoleCoupling) -> NonlinearRunConfig {
        NonlinearRunConfig {
            epsilon: 1e-3,
            lambda: 2.0,
            lambda_hat: 1.0,
            horizon: 1.0,
            dt: (0.1 / coupling.omega_max()).min(1e-2) * 0.9,
            n_modes: n,
            normalize: false,
        }
    }

    #[test]
    fn ground_state_is_an_equilibrium() {
        let (coupling, q) = setup(8, 2.0);
        let c = cfg(8, &coupling);
        let y0 = SpectralState::ground_state(8).unwrap();
        let run = simulate_bilinear(&y0, &c, &q, &coupling).unwrap();
        let sup_gap = run.h3_gaps.iter().fold(0.0f64, |m, g| m.max(*g));
        let sup_u = run.traj.controls.iter().fold(0.0f64, |m, u| m.max(u.abs()));
        assert!(sup_gap <= 1e-12, "sup gap {sup_gap:.3e}");
        assert!(sup_u <= 1e-12, "sup u {sup_u:.3e}");
    }

    #[test]
    fn l2_norm_is_conserved() {
        let (coupling, q) = setup(3, 2.0);
        // N = 3 admits the dt = 1e-3 regime (0.1/omega_3 > 1e-3)
        let mut c = cfg(3, &coupling);
        c.dt = 1e-3;
        c.horizon = 2.0;
        let weights = SobolevWeights::new(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y0 = sample_perturbed_state(3, 1e-3, &weights, &mut rng).unwrap();
        let run = simulate_bilinear(&y0, &c, &q, &coupling).unwrap();
        assert!(run.max_l2_drift <= 1e-8, "drift {:.3e}", run.max_l2_drift);
    }

    #[test]
    fn ground_state_gap_examples() {
        let weights = SobolevWeights::new(4).unwrap();
        let phi1 = SpectralState::ground_state(4).unwrap();
        let gap = ground_state_gap(&phi1, &weights).unwrap();
        assert_eq!(gap.h3_gap, 0.0);
        assert_eq!(gap.b_component, 1.0);
        // Phi_1 + delta Phi^2_2
        let delta = 1e-2;
        let mut coeffs = phi1.coeffs().to_vec();
        coeffs[1] = Complex64::new(0.0, delta);
        let s = SpectralState::new(coeffs).unwrap();
        let gap = ground_state_gap(&s, &weights).unwrap();
        assert_relative_eq!(gap.h3_gap, delta * weights.get(2).sqrt(), max_relative = 1e-12);
        assert_eq!(gap.b_component, 1.0);
    }

    #[test]
    fn b_stays_quadratically_close_to_one() {
        let (coupling, q) = setup(8, 2.0);
        let mut c = cfg(8, &coupling);
        c.horizon = 2.0;
        c.epsilon = 1e-2;
        let weights = SobolevWeights::new(8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let y0 = sample_perturbed_state(8, 1e-2, &weights, &mut rng).unwrap();
        let run = simulate_bilinear(&y0, &c, &q, &coupling).unwrap();
        for (i, b) in run.b_components.iter().enumerate() {
            let gap_l2_sq = {
                let s = SpectralState::from_hvector(&run.traj.states[i]).unwrap();
                let g = ground_state_gap(&s, &weights).unwrap();
                // y_P part only: remove the (b-1) Phi_1 contribution
                (g.l2_gap.powi(2) - (b - 1.0).powi(2)).max(0.0)
            };
            assert!(
                (b - 1.0).abs() <= 2.0 * gap_l2_sq + 1e-14,
                "sample {i}: |b-1| = {:.3e} vs 2|y_P|^2 = {:.3e}",
                (b - 1.0).abs(),
                2.0 * gap_l2_sq
            );
        }
    }

    #[test]
    fn rejects_bad_configs_and_states() {
        let (coupling, q) = setup(4, 2.0);
        let mut c = cfg(4, &coupling);
        c.lambda_hat = 3.0; // >= lambda
        let y0 = SpectralState::ground_state(4).unwrap();
        assert!(simulate_bilinear(&y0, &c, &q, &coupling).is_err());
        let mut c = cfg(4, &coupling);
        c.dt = 1.0;
        assert!(simulate_bilinear(&y0, &c, &q, &coupling).is_err());
        // non-normalized initial state without the normalize flag
        let c = cfg(4, &coupling);
        let bad = SpectralState::new(vec![
            Complex64::new(2.0, 0.0),
            Complex64::ZERO,
            Complex64::ZERO,
            Complex64::ZERO,
        ])
        .unwrap();
        match simulate_bilinear(&bad, &c, &q, &coupling) {
            Err(Error::Contract(_)) => {}
            other => panic!("expected contract error, got {other:?}"),
        }
        let mut c = cfg(4, &coupling);
        c.normalize = true;
        c.epsilon = 2.0; // the normalized state is admissible at large epsilon
        assert!(simulate_bilinear(&bad, &c, &q, &coupling).is_ok());
    }

    #[test]
    fn sampler_hits_requested_gap() {
        let weights = SobolevWeights::new(8).unwrap();
        for seed in 0..6 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for &eps in &[1e-5, 1e-3, 1e-2] {
                let s = sample_perturbed_state(8, eps, &weights, &mut rng).unwrap();
                assert_relative_eq!(s.l2_norm_sq(), 1.0, epsilon = 1e-12);
                let gap = ground_state_gap(&s, &weights).unwrap().h3_gap;
                assert!(gap <= eps * (1.0 + 1e-9) && gap >= eps * (1.0 - 1e-6));
            }
        }
    }

    #[test]
    fn basin_probe_smoke() {
        let (coupling, q) = setup(4, 2.0);
        let mut c = cfg(4, &coupling);
        c.horizon = 3.0;
        let rows = basin_probe(&c, &[0.0, 1e-4], &q, &coupling, 3, 42).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].successes, 3);
        assert_eq!(rows[1].successes, 3, "small-epsilon trials should stabilize");
        assert!(rows[1].median_rate >= 2.0);
        assert!(basin_probe(&c, &[1e-4], &q, &coupling, 0, 1).is_err());
        // determinism of the seeded path
        let again = basin_probe(&c, &[0.0, 1e-4], &q, &coupling, 3, 42).unwrap();
        assert_eq!(rows[1].median_rate, again[1].median_rate);
        assert_eq!(rows[1].worst_c, again[1].worst_c);
    }
}
