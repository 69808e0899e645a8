//! Direct quadrature of the integro-differential kinetic equation
//!
//! ```text
//! df/dt = λ(t)/2 ∫_{t0}^{t} λ(t') [1 - 2f(t')] cos Θ(t, t') dt',
//! Θ(t, t') = 2 ∫_{t'}^{t} ω,
//! ```
//!
//! used as an independent check of the ODE route. The time axis is a uniform
//! grid; the running phase is accumulated with Simpson's rule, the memory
//! integral with the composite trapezoid rule, and f is marched explicitly
//! with a trapezoid predictor-corrector.
//!
//! With the trapezoid weights used here the discrete double sum equals
//! `|h Σ λ_i e^{iφ_i}|² / 4` when `1 - 2f ≈ 1`, so the tiny asymptotic value
//! is not the residue of a large cancelling sum of truncation errors.

use thiserror::Error;

use crate::pulse::PulseTrain;
use crate::qve::{mode_window, quasienergy, transition_amplitude, Momentum};
use crate::units::SolverConfig;

/// Largest relative change between step `h` and `h/2` accepted as converged.
pub const CONVERGENCE_TOLERANCE: f64 = 5e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("grid step must be > 0 (got {0})")]
    BadStep(f64),
    #[error(
        "quadrature not converged at step {step}: f = {coarse:e} vs {fine:e} at step/2 (relative change {rel_change:e})"
    )]
    NonConvergent {
        step: f64,
        coarse: f64,
        fine: f64,
        rel_change: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleResult {
    /// f at the end of the window from the halved step.
    pub f_out: f64,
    /// f from the requested step.
    pub f_coarse: f64,
    pub rel_change: f64,
    pub steps: usize,
}

/// Marches the memory-integral form on a fixed grid of spacing close to
/// `step` over the default window and returns f at its end.
pub fn march(p: Momentum, pt: &PulseTrain, step: f64) -> f64 {
    let (t0, tf) = mode_window(pt, &SolverConfig::default());
    let n = ((tf - t0) / step).ceil().max(1.0) as usize;
    let h = (tf - t0) / n as f64;
    let t_at = |i: usize| t0 + h * i as f64;

    let lambda: Vec<f64> = (0..=n)
        .map(|i| transition_amplitude(p, t_at(i), pt))
        .collect();
    let omega: Vec<f64> = (0..=n).map(|i| quasienergy(p, t_at(i), pt)).collect();
    let mut phase = vec![0.0; n + 1];
    for i in 1..=n {
        let mid = quasienergy(p, t0 + h * (i as f64 - 0.5), pt);
        phase[i] = phase[i - 1] + 2.0 * h / 6.0 * (omega[i - 1] + 4.0 * mid + omega[i]);
    }

    // cos(φ_i - φ_j) = cos φ_i cos φ_j + sin φ_i sin φ_j, so the trapezoid
    // memory sum splits into two running sums over j < i
    let mut sum_cos = 0.0;
    let mut sum_sin = 0.0;
    let mut f = 0.0;
    let mut rate_prev = 0.0;
    for i in 0..=n {
        let (sin_i, cos_i) = phase[i].sin_cos();
        let history = cos_i * sum_cos + sin_i * sum_sin;
        let rate_at =
            |fi: f64| 0.5 * lambda[i] * h * (history + 0.5 * lambda[i] * (1.0 - 2.0 * fi));
        let (f_i, rate) = if i == 0 {
            (0.0, rate_at(0.0))
        } else {
            let pred = f + 0.5 * h * (rate_prev + rate_at(f + h * rate_prev));
            let rate = rate_at(pred);
            (f + 0.5 * h * (rate_prev + rate), rate)
        };
        f = f_i;
        rate_prev = rate;
        let weight = if i == 0 { 0.5 } else { 1.0 };
        let source = weight * lambda[i] * (1.0 - 2.0 * f);
        sum_cos += source * cos_i;
        sum_sin += source * sin_i;
    }
    f
}

/// Runs [`march`] at `grid_step` and `grid_step / 2` and accepts the finer
/// value when the two agree within [`CONVERGENCE_TOLERANCE`].
pub fn oracle_integrate(
    p: Momentum,
    pt: &PulseTrain,
    grid_step: f64,
) -> Result<OracleResult, OracleError> {
    if !(grid_step > 0.0) {
        return Err(OracleError::BadStep(grid_step));
    }
    let coarse = march(p, pt, grid_step);
    let fine = march(p, pt, 0.5 * grid_step);
    let scale = coarse.abs().max(fine.abs());
    let rel_change = if scale == 0.0 {
        0.0
    } else {
        (coarse - fine).abs() / scale
    };
    if rel_change >= CONVERGENCE_TOLERANCE || !fine.is_finite() {
        return Err(OracleError::NonConvergent {
            step: grid_step,
            coarse,
            fine,
            rel_change,
        });
    }
    let (t0, tf) = mode_window(pt, &SolverConfig::default());
    Ok(OracleResult {
        f_out: fine,
        f_coarse: coarse,
        rel_change,
        steps: ((tf - t0) / (0.5 * grid_step)).ceil() as usize,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pulse::{build_train, DelayVector};
    use crate::units::{reference_params, PhysicalParams};

    fn single() -> PulseTrain {
        let (phys, train) = reference_params();
        build_train(phys, train.with_pulses(1), DelayVector::regular(1, 180.32)).unwrap()
    }

    #[test]
    fn no_field_gives_zero() {
        let (_, train) = reference_params();
        let pt = build_train(
            PhysicalParams::new(0.0, 20.0),
            train,
            DelayVector::regular(4, 180.32),
        )
        .unwrap();
        let r = oracle_integrate(Momentum::longitudinal(0.0), &pt, 0.2).unwrap();
        assert_eq!(r.f_out, 0.0);
    }

    #[test]
    fn single_pulse_self_convergence() {
        let pt = single();
        let r =
            oracle_integrate(Momentum::longitudinal(pt.resonant_momentum(1)), &pt, 0.025).unwrap();
        assert!(r.rel_change < CONVERGENCE_TOLERANCE);
        assert!(r.f_out > 1e-14 && r.f_out < 1e-12);
    }

    #[test]
    fn coarse_grid_is_rejected() {
        let pt = single();
        let err = oracle_integrate(Momentum::longitudinal(pt.resonant_momentum(1)), &pt, 0.4)
            .unwrap_err();
        assert!(matches!(err, OracleError::NonConvergent { .. }), "{err}");
        assert!(oracle_integrate(Momentum::longitudinal(0.0), &pt, 0.0).is_err());
    }
}
