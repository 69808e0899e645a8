//! The single Sauter pulse has a closed-form asymptotic distribution:
//!
//! f = sinh[πτ(2eE0τ + ω₊ - ω₋)/2] sinh[πτ(2eE0τ - ω₊ + ω₋)/2]
//!     / (sinh(πτω₊) sinh(πτω₋)),   ω± = sqrt(ε⊥² + (P ± eE0τ)²)
//!
//! with P the kinetic momentum at the pulse peak.

use qvetrain::spectrum::single_pulse_reference;
use qvetrain::*;

fn ln_sinh(x: f64) -> f64 {
    assert!(x > 0.0);
    x + (-(-2.0 * x).exp()).ln_1p() - std::f64::consts::LN_2
}

fn sauter_exact(p: f64, p_perp: f64, e0: f64, tau: f64) -> f64 {
    let eps2 = 1.0 + p_perp * p_perp;
    let a = e0 * tau;
    let wp = (eps2 + (p + a).powi(2)).sqrt();
    let wm = (eps2 + (p - a).powi(2)).sqrt();
    let k = std::f64::consts::PI * tau;
    (ln_sinh(0.5 * k * (2.0 * a + wp - wm)) + ln_sinh(0.5 * k * (2.0 * a - wp + wm))
        - ln_sinh(k * wp)
        - ln_sinh(k * wm))
    .exp()
}

#[test]
fn single_pulse_matches_closed_form() {
    let (phys, train) = reference_params();
    let grid = MomentumGrid::new(-0.5, 0.5, 41);
    let s = single_pulse_reference(&grid, phys, train.mu_t, &SolverConfig::default()).unwrap();
    for (p, f) in grid.points().into_iter().zip(&s.values) {
        let exact = sauter_exact(p, 0.0, phys.e0, phys.tau);
        assert!(
            (f - exact).abs() < 1e-3 * exact,
            "p3 = {p}: {f:e} vs {exact:e}"
        );
    }
}

#[test]
fn closed_form_with_transverse_momentum() {
    let (phys, _) = reference_params();
    let pt = build_train(
        phys,
        TrainParams {
            n_pulses: 1,
            mu_t: 180.32,
            sigma_t: 0.0,
            seed: 0,
        },
        DelayVector::regular(1, 180.32),
    )
    .unwrap();
    let shift = pt.resonant_momentum(1);
    for (pp, p) in [(0.1, 0.0), (0.2, 0.15), (0.05, -0.2)] {
        let f = integrate_mode(Momentum::new(pp, p + shift), &pt, &SolverConfig::default())
            .unwrap()
            .f_out;
        let exact = sauter_exact(p, pp, phys.e0, phys.tau);
        assert!((f - exact).abs() < 1e-3 * exact, "{f:e} vs {exact:e}");
    }
}
