//! Averages over seeded delay realizations and σ_T sweeps of f̄(p3 = 0).
//!
//! Run `r` of an ensemble always draws its delays from the substream
//! `(master seed, r)`, so the first `k` runs of a larger ensemble are exactly
//! a `k`-run ensemble. Work is spread over the current rayon pool but every
//! reduction happens in run order, so results are bitwise independent of the
//! worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pulse::{realize, substream_seed};
use crate::qve::{integrate_mode, Momentum, QveError};
use crate::spectrum::{compute_spectrum, MomentumGrid, Spectrum, SpectrumError, TrainMeta};
use crate::units::{ParamError, PhysicalParams, SolverConfig, TrainParams};

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("an ensemble needs at least one run")]
    NoRuns,
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error("run {run_index}: {source}")]
    Run {
        run_index: u64,
        #[source]
        source: SpectrumError,
    },
    #[error("run {run_index} at sigma_t = {sigma_t}: {source}")]
    SweepRun {
        run_index: u64,
        sigma_t: f64,
        #[source]
        source: QveError,
    },
    #[error("grid has no node at p3 = 0")]
    NoZeroNode,
    #[error("retained runs are required for {0}")]
    RunsNotRetained(&'static str),
    #[error("invalid grid: {0}")]
    Grid(#[source] SpectrumError),
}

/// Identifies one realization well enough to replay it alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_index: u64,
    pub substream_seed: u64,
    pub delays: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct EnsembleOptions {
    /// Keep every realization's spectrum in memory.
    pub keep_runs: bool,
    /// Ensemble sizes at which to snapshot the running mean.
    pub snapshots: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleResult {
    pub grid: MomentumGrid,
    pub phys: PhysicalParams,
    pub train: TrainParams,
    pub n_runs: usize,
    pub mean: Vec<f64>,
    /// Pointwise maximum over runs.
    pub max: Vec<f64>,
    pub per_run: Option<Vec<Spectrum>>,
    /// `(k, mean of runs 0..k)` for each requested snapshot size.
    pub snapshots: Vec<(usize, Vec<f64>)>,
    pub runs: Vec<RunRecord>,
    pub max_drift: f64,
}

impl EnsembleResult {
    pub fn sigma_t(&self) -> f64 {
        self.train.sigma_t
    }

    pub fn master_seed(&self) -> u64 {
        self.train.seed
    }

    /// The mean as a spectrum on the ensemble grid.
    pub fn mean_spectrum(&self) -> Spectrum {
        Spectrum {
            grid: self.grid,
            values: self.mean.clone(),
            train_meta: TrainMeta {
                seed: self.train.seed,
                run_index: 0,
                sigma_t: self.train.sigma_t,
                mu_t: self.train.mu_t,
                n_pulses: self.train.n_pulses,
            },
            drift: vec![self.max_drift; self.grid.n_points],
        }
    }

    /// Mean over the first `k` retained runs.
    pub fn prefix_mean(&self, k: usize) -> Result<Vec<f64>, EnsembleError> {
        let runs = self
            .per_run
            .as_ref()
            .ok_or(EnsembleError::RunsNotRetained("prefix means"))?;
        if k == 0 || k > runs.len() {
            return Err(EnsembleError::NoRuns);
        }
        let mut acc = Accumulator::new(self.grid.n_points);
        for s in &runs[..k] {
            acc.add(&s.values);
        }
        Ok(acc.mean())
    }
}

struct Accumulator {
    sum: Vec<f64>,
    max: Vec<f64>,
    count: usize,
}

impl Accumulator {
    fn new(n: usize) -> Self {
        Self {
            sum: vec![0.0; n],
            max: vec![f64::NEG_INFINITY; n],
            count: 0,
        }
    }

    fn add(&mut self, values: &[f64]) {
        for ((s, m), &v) in self.sum.iter_mut().zip(&mut self.max).zip(values) {
            *s += v;
            *m = m.max(v);
        }
        self.count += 1;
    }

    fn mean(&self) -> Vec<f64> {
        let n = self.count as f64;
        self.sum.iter().map(|s| s / n).collect()
    }
}

/// Averages `n_runs` realizations `run_index = 0..n_runs` with the default
/// options (streaming mean only).
pub fn run_ensemble(
    grid: &MomentumGrid,
    phys: PhysicalParams,
    train: TrainParams,
    n_runs: usize,
    cfg: &SolverConfig,
) -> Result<EnsembleResult, EnsembleError> {
    run_ensemble_with(grid, phys, train, n_runs, cfg, &EnsembleOptions::default())
}

pub fn run_ensemble_with(
    grid: &MomentumGrid,
    phys: PhysicalParams,
    train: TrainParams,
    n_runs: usize,
    cfg: &SolverConfig,
    opts: &EnsembleOptions,
) -> Result<EnsembleResult, EnsembleError> {
    if n_runs == 0 {
        return Err(EnsembleError::NoRuns);
    }
    phys.validate_allow_zero_field()?;
    train.validate()?;
    cfg.validate()?;
    grid.validate().map_err(EnsembleError::Grid)?;

    let mut acc = Accumulator::new(grid.n_points);
    let mut per_run = opts.keep_runs.then(Vec::new);
    let mut snapshots = Vec::new();
    let mut runs = Vec::with_capacity(n_runs);
    let mut max_drift: f64 = 0.0;
    for r in 0..n_runs as u64 {
        let pt = realize(phys, train, r);
        let s = compute_spectrum(grid, &pt, cfg).map_err(|source| EnsembleError::Run {
            run_index: r,
            source,
        })?;
        acc.add(&s.values);
        max_drift = s.drift.iter().copied().fold(max_drift, f64::max);
        runs.push(RunRecord {
            run_index: r,
            substream_seed: pt.delays.seed_used,
            delays: pt.delays.values.clone(),
        });
        if opts.snapshots.contains(&acc.count) {
            snapshots.push((acc.count, acc.mean()));
        }
        if let Some(kept) = per_run.as_mut() {
            kept.push(s);
        }
    }
    Ok(EnsembleResult {
        grid: *grid,
        phys,
        train,
        n_runs,
        mean: acc.mean(),
        max: acc.max,
        per_run,
        snapshots,
        runs,
        max_drift,
    })
}

/// f̄ at the p3 = 0 node.
pub fn central_value(result: &EnsembleResult) -> Result<f64, EnsembleError> {
    result
        .grid
        .zero_index()
        .map(|i| result.mean[i])
        .ok_or(EnsembleError::NoZeroNode)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub sigma_t: f64,
    pub mean: f64,
    pub ratio: f64,
    /// Spread of the single-run values, each normalized like `ratio`.
    pub min_ratio: f64,
    pub median_ratio: f64,
    pub max_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaSweepCurve {
    pub n_pulses: usize,
    pub mu_t: f64,
    pub master_seed: u64,
    pub n_runs: usize,
    pub p3: f64,
    /// f(p3) of the regular train, the normalization of every ratio.
    pub reference: f64,
    pub points: Vec<SweepPoint>,
}

impl SigmaSweepCurve {
    pub fn sigma_values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.sigma_t).collect()
    }

    pub fn ratios(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.ratio).collect()
    }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// f̄(p3) against σ_T, normalized by the regular-train value. Only the one
/// mode is integrated per realization. σ_T = 0 realizations are all the
/// regular train, so that point is the reference itself and its ratio is 1.
pub fn sweep_sigma(
    p3: f64,
    phys: PhysicalParams,
    train_base: TrainParams,
    sigmas: &[f64],
    n_runs: usize,
    cfg: &SolverConfig,
) -> Result<SigmaSweepCurve, EnsembleError> {
    if n_runs == 0 {
        return Err(EnsembleError::NoRuns);
    }
    phys.validate_allow_zero_field()?;
    cfg.validate()?;
    for &s in sigmas {
        train_base.with_sigma(s).validate()?;
    }
    let p = Momentum::longitudinal(p3);
    let regular = train_base.with_sigma(0.0);
    let reference = integrate_mode(p, &realize(phys, regular, 0), cfg)
        .map_err(|source| EnsembleError::SweepRun {
            run_index: 0,
            sigma_t: 0.0,
            source,
        })?
        .f_out;

    let jobs: Vec<(usize, u64)> = sigmas
        .iter()
        .enumerate()
        .filter(|(_, &s)| s != 0.0)
        .flat_map(|(i, _)| (0..n_runs as u64).map(move |r| (i, r)))
        .collect();
    let values: Result<Vec<f64>, EnsembleError> = jobs
        .par_iter()
        .map(|&(i, r)| {
            let sigma_t = sigmas[i];
            let pt = realize(phys, train_base.with_sigma(sigma_t), r);
            integrate_mode(p, &pt, cfg)
                .map(|m| m.f_out)
                .map_err(|source| EnsembleError::SweepRun {
                    run_index: r,
                    sigma_t,
                    source,
                })
        })
        .collect();
    let values = values?;

    let normalize = |v: f64| {
        if reference == 0.0 {
            f64::NAN
        } else {
            v / reference
        }
    };
    let mut chunks = values.chunks(n_runs);
    let points = sigmas
        .iter()
        .map(|&sigma_t| {
            if sigma_t == 0.0 {
                return SweepPoint {
                    sigma_t,
                    mean: reference,
                    ratio: 1.0,
                    min_ratio: 1.0,
                    median_ratio: 1.0,
                    max_ratio: 1.0,
                };
            }
            let runs = chunks.next().expect("one chunk per nonzero sigma");
            let mean = runs.iter().sum::<f64>() / n_runs as f64;
            let mut sorted = runs.to_vec();
            sorted.sort_by(f64::total_cmp);
            SweepPoint {
                sigma_t,
                mean,
                ratio: normalize(mean),
                min_ratio: normalize(sorted[0]),
                median_ratio: normalize(median(&sorted)),
                max_ratio: normalize(sorted[n_runs - 1]),
            }
        })
        .collect();
    Ok(SigmaSweepCurve {
        n_pulses: train_base.n_pulses,
        mu_t: train_base.mu_t,
        master_seed: train_base.seed,
        n_runs,
        p3,
        reference,
        points,
    })
}

/// Substream seeds of runs `0..n_runs`, as recorded in manifests.
pub fn run_seeds(master_seed: u64, n_runs: usize) -> Vec<u64> {
    (0..n_runs as u64)
        .map(|r| substream_seed(master_seed, r))
        .collect()
}

/// Runs `f` on a dedicated pool of `workers` threads, or on the global pool
/// when `workers` is `None`.
pub fn with_workers<R: Send>(
    workers: Option<usize>,
    f: impl FnOnce() -> R + Send,
) -> Result<R, rayon::ThreadPoolBuildError> {
    match workers {
        None => Ok(f()),
        Some(n) => Ok(rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()?
            .install(f)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::reference_params;

    fn small_grid() -> MomentumGrid {
        MomentumGrid::new(-0.1, 0.1, 5)
    }

    #[test]
    fn zero_spread_mean_matches_regular_spectrum() {
        let (phys, train) = reference_params();
        let cfg = SolverConfig::default();
        let res = run_ensemble(&small_grid(), phys, train, 3, &cfg).unwrap();
        let regular = compute_spectrum(&small_grid(), &realize(phys, train, 0), &cfg).unwrap();
        for (a, b) in res.mean.iter().zip(&regular.values) {
            assert!((a - b).abs() <= 1e-15 * b.abs());
        }
        assert_eq!(res.max, regular.values);
        assert!(res.runs.iter().all(|r| r.delays == vec![180.32; 4]));
    }

    #[test]
    fn retained_runs_average_to_mean() {
        let (phys, train) = reference_params();
        let train = TrainParams {
            seed: 9,
            ..train.with_sigma(30.0)
        };
        let opts = EnsembleOptions {
            keep_runs: true,
            snapshots: vec![2, 4],
        };
        let res = run_ensemble_with(
            &small_grid(),
            phys,
            train,
            4,
            &SolverConfig::default(),
            &opts,
        )
        .unwrap();
        let runs = res.per_run.as_ref().unwrap();
        for i in 0..res.grid.n_points {
            let m = runs.iter().map(|s| s.values[i]).sum::<f64>() / 4.0;
            assert!((m - res.mean[i]).abs() <= 1e-15 * m.abs());
            let hi = runs.iter().map(|s| s.values[i]).fold(0.0, f64::max);
            assert_eq!(hi, res.max[i]);
        }
        assert_eq!(res.snapshots.len(), 2);
        assert_eq!(res.snapshots[0].1, res.prefix_mean(2).unwrap());
        assert_eq!(res.snapshots[1].1, res.mean);
        assert_eq!(res.runs[3].substream_seed, run_seeds(9, 4)[3]);
    }

    #[test]
    fn prefix_needs_retention() {
        let (phys, train) = reference_params();
        let res = run_ensemble(&small_grid(), phys, train, 1, &SolverConfig::default()).unwrap();
        assert!(matches!(
            res.prefix_mean(1),
            Err(EnsembleError::RunsNotRetained(_))
        ));
        assert!(run_ensemble(&small_grid(), phys, train, 0, &SolverConfig::default()).is_err());
    }

    #[test]
    fn no_field_central_value_is_zero() {
        let (_, train) = reference_params();
        let res = run_ensemble(
            &small_grid(),
            PhysicalParams::new(0.0, 20.0),
            train.with_sigma(15.0),
            2,
            &SolverConfig::default(),
        )
        .unwrap();
        assert_eq!(central_value(&res).unwrap(), 0.0);
        let even = run_ensemble(
            &MomentumGrid::new(-0.1, 0.1, 4),
            PhysicalParams::new(0.0, 20.0),
            train,
            1,
            &SolverConfig::default(),
        )
        .unwrap();
        assert!(matches!(
            central_value(&even),
            Err(EnsembleError::NoZeroNode)
        ));
    }

    #[test]
    fn sweep_normalization_and_spread() {
        let (phys, train) = reference_params();
        let curve = sweep_sigma(
            0.0,
            phys,
            TrainParams { seed: 3, ..train },
            &[0.0, 20.0],
            3,
            &SolverConfig::default(),
        )
        .unwrap();
        assert_eq!(curve.sigma_values(), vec![0.0, 20.0]);
        assert_eq!(curve.points[0].ratio, 1.0);
        let p = &curve.points[1];
        assert!(p.min_ratio <= p.median_ratio && p.median_ratio <= p.max_ratio);
        assert!(p.min_ratio <= p.ratio && p.ratio <= p.max_ratio);
        assert!((p.mean / curve.reference - p.ratio).abs() < 1e-15);
    }

    #[test]
    fn sweep_rejects_negative_sigma() {
        let (phys, train) = reference_params();
        let err = sweep_sigma(0.0, phys, train, &[-1.0], 2, &SolverConfig::default());
        assert!(matches!(err, Err(EnsembleError::Params(_))));
    }
}
