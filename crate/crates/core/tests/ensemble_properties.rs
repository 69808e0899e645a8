use qvetrain::ensemble::{
    central_value, run_ensemble_with, sweep_sigma, with_workers, EnsembleOptions,
};
use qvetrain::*;

fn grid() -> MomentumGrid {
    MomentumGrid::new(-0.2, 0.2, 9)
}

fn keep() -> EnsembleOptions {
    EnsembleOptions {
        keep_runs: true,
        snapshots: vec![],
    }
}

#[test]
fn smaller_ensembles_are_prefixes_of_larger_ones() {
    let (phys, train) = reference_params();
    let tp = TrainParams {
        seed: 11,
        ..train.with_sigma(45.0)
    };
    let cfg = SolverConfig::default();
    let big = run_ensemble_with(&grid(), phys, tp, 5, &cfg, &keep()).unwrap();
    let small = run_ensemble_with(&grid(), phys, tp, 3, &cfg, &keep()).unwrap();
    assert_eq!(small.mean, big.prefix_mean(3).unwrap());
    assert_eq!(small.runs[..], big.runs[..3]);
}

#[test]
fn ensembles_do_not_depend_on_worker_count() {
    let (phys, train) = reference_params();
    let tp = TrainParams {
        seed: 4,
        ..train.with_sigma(15.0)
    };
    let cfg = SolverConfig::default();
    let opts = EnsembleOptions {
        keep_runs: true,
        snapshots: vec![2],
    };
    let a = with_workers(Some(1), || {
        run_ensemble_with(&grid(), phys, tp, 4, &cfg, &opts).unwrap()
    })
    .unwrap();
    let b = with_workers(Some(3), || {
        run_ensemble_with(&grid(), phys, tp, 4, &cfg, &opts).unwrap()
    })
    .unwrap();
    assert_eq!(a, b);
}

#[test]
fn sweeps_do_not_depend_on_worker_count() {
    let (phys, train) = reference_params();
    let tp = TrainParams { seed: 2, ..train };
    let cfg = SolverConfig::default();
    let sigmas = [0.0, 10.0, 40.0];
    let a = with_workers(Some(1), || {
        sweep_sigma(0.0, phys, tp, &sigmas, 4, &cfg).unwrap()
    })
    .unwrap();
    let b = with_workers(Some(4), || {
        sweep_sigma(0.0, phys, tp, &sigmas, 4, &cfg).unwrap()
    })
    .unwrap();
    assert_eq!(a, b);
}

#[test]
fn regular_ensemble_equals_the_regular_spectrum() {
    let (phys, train) = reference_params();
    let cfg = SolverConfig::default();
    let res = run_ensemble_with(&grid(), phys, train, 5, &cfg, &keep()).unwrap();
    let regular = compute_spectrum(&grid(), &realize(phys, train, 0), &cfg).unwrap();
    for (m, v) in res.mean.iter().zip(&regular.values) {
        assert!((m - v).abs() <= 1e-15 * v);
    }
    assert!(
        (central_value(&res).unwrap() - regular.central_value().unwrap()).abs()
            <= 1e-15 * regular.central_value().unwrap()
    );
}

#[test]
fn sweep_reference_is_the_regular_central_value() {
    let (phys, train) = reference_params();
    let cfg = SolverConfig::default();
    let curve = sweep_sigma(0.0, phys, train, &[0.0], 3, &cfg).unwrap();
    let direct = integrate_mode(Momentum::longitudinal(0.0), &realize(phys, train, 0), &cfg)
        .unwrap()
        .f_out;
    assert_eq!(curve.reference, direct);
    assert_eq!(curve.ratios(), vec![1.0]);
}
