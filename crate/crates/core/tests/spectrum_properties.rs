use qvetrain::ensemble::with_workers;
use qvetrain::spectrum::{compute_spectrum_shifted, spectrum_symmetry_error};
use qvetrain::*;

fn regular(n: usize) -> PulseTrain {
    let (phys, train) = reference_params();
    build_train(
        phys,
        train.with_pulses(n),
        DelayVector::regular(n, train.mu_t),
    )
    .unwrap()
}

fn local_maxima(v: &[f64]) -> Vec<f64> {
    v.windows(3)
        .filter(|w| w[1] > w[0] && w[1] > w[2])
        .map(|w| w[1])
        .collect()
}

#[test]
fn regular_four_pulse_central_band_has_equal_fringes() {
    let grid = MomentumGrid::new(-0.2, 0.2, 201);
    let s = compute_spectrum(&grid, &regular(4), &SolverConfig::default()).unwrap();
    let peaks = local_maxima(&s.values);
    let top = peaks.iter().copied().fold(0.0, f64::max);
    let near_top = peaks.iter().filter(|&&h| h >= 0.75 * top).count();
    assert!(near_top >= 3, "{near_top} maxima within 25% of the highest");
}

#[test]
fn odd_train_is_mirror_symmetric_about_its_resonance() {
    // E is even for odd N, so f is symmetric about the kinetic resonance of
    // the middle pulse. The bound is the roundoff floor left after f falls
    // from ~1e-4 inside each pulse to ~1e-12 at the end.
    let pt = regular(3);
    let grid = MomentumGrid::new(-0.2, 0.2, 41);
    let s = compute_spectrum_shifted(
        &grid,
        &pt,
        &SolverConfig::default(),
        pt.resonant_momentum(2),
    )
    .unwrap();
    assert!(spectrum_symmetry_error(&s).unwrap() <= 1e-5);
}

#[test]
fn even_train_is_not_mirror_symmetric() {
    let grid = MomentumGrid::new(-0.2, 0.2, 41);
    let s = compute_spectrum(&grid, &regular(4), &SolverConfig::default()).unwrap();
    assert!(spectrum_symmetry_error(&s).unwrap() > 1e-2);
}

#[test]
fn stochastic_realization_is_asymmetric() {
    let (phys, train) = reference_params();
    let pt = realize(
        phys,
        TrainParams {
            seed: 7,
            ..train.with_sigma(45.0)
        },
        0,
    );
    let grid = MomentumGrid::new(-0.4, 0.4, 81);
    let s = compute_spectrum(&grid, &pt, &SolverConfig::default()).unwrap();
    assert!(spectrum_symmetry_error(&s).unwrap() > 0.0);
}

#[test]
fn refinement_keeps_existing_nodes() {
    let (phys, train) = reference_params();
    let pt = realize(
        phys,
        TrainParams {
            seed: 3,
            ..train.with_sigma(15.0)
        },
        2,
    );
    let coarse = MomentumGrid::new(-0.3, 0.3, 11);
    let fine = coarse.refined();
    let cfg = SolverConfig::default();
    let a = compute_spectrum(&coarse, &pt, &cfg).unwrap();
    let b = compute_spectrum(&fine, &pt, &cfg).unwrap();
    for (i, v) in a.values.iter().enumerate() {
        assert_eq!(v.to_bits(), b.values[2 * i].to_bits());
    }
}

#[test]
fn worker_count_does_not_change_values() {
    let (phys, train) = reference_params();
    let pt = realize(
        phys,
        TrainParams {
            seed: 5,
            ..train.with_sigma(30.0)
        },
        1,
    );
    let grid = MomentumGrid::new(-0.3, 0.3, 25);
    let cfg = SolverConfig::default();
    let one = with_workers(Some(1), || compute_spectrum(&grid, &pt, &cfg).unwrap()).unwrap();
    let four = with_workers(Some(4), || compute_spectrum(&grid, &pt, &cfg).unwrap()).unwrap();
    assert_eq!(one, four);
}

#[test]
fn central_node_matches_a_direct_mode() {
    let pt = regular(4);
    let cfg = SolverConfig::default();
    let s = compute_spectrum(&MomentumGrid::new(-0.05, 0.05, 11), &pt, &cfg).unwrap();
    let direct = integrate_mode(Momentum::longitudinal(0.0), &pt, &cfg)
        .unwrap()
        .f_out;
    assert_eq!(s.central_value(), Some(direct));
}
