//! Longitudinal momentum spectra f(p3) for one field realization.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pulse::{build_train, DelayVector, PulseTrain};
use crate::qve::{integrate_mode, Momentum, QveError};
use crate::units::{PhysicalParams, SolverConfig, TrainParams};

#[derive(Debug, Error)]
pub enum SpectrumError {
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("spectrum point p3 = {p3}: {source}")]
    Mode {
        p3: f64,
        #[source]
        source: QveError,
    },
    #[error("grid is not symmetric about p3 = 0")]
    AsymmetricGrid,
    #[error("spectrum file: {0}")]
    Csv(#[from] csv::Error),
    #[error("spectrum file: {0}")]
    Format(String),
}

/// Uniform p3 grid at fixed transverse momentum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MomentumGrid {
    pub p3_min: f64,
    pub p3_max: f64,
    pub n_points: usize,
    pub p_perp: f64,
}

impl Default for MomentumGrid {
    /// [-0.8, 0.8] with 1601 nodes and p⊥ = 0; the odd count puts a node at 0.
    fn default() -> Self {
        Self {
            p3_min: -0.8,
            p3_max: 0.8,
            n_points: 1601,
            p_perp: 0.0,
        }
    }
}

impl MomentumGrid {
    pub fn new(p3_min: f64, p3_max: f64, n_points: usize) -> Self {
        Self {
            p3_min,
            p3_max,
            n_points,
            p_perp: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), SpectrumError> {
        if !(self.p3_min < self.p3_max) {
            return Err(SpectrumError::Grid(format!(
                "p3_min ({}) must be below p3_max ({})",
                self.p3_min, self.p3_max
            )));
        }
        if self.n_points < 2 {
            return Err(SpectrumError::Grid("need at least 2 points".into()));
        }
        if !(self.p_perp >= 0.0) {
            return Err(SpectrumError::Grid("p_perp must be >= 0".into()));
        }
        Ok(())
    }

    /// Node `i`, computed as a weighted mean of the endpoints so that a
    /// symmetric grid has exactly mirrored nodes, an exact zero at its center,
    /// and a grid with `2n - 1` points reproduces every node of the `n` grid.
    pub fn point(&self, i: usize) -> f64 {
        let m = (self.n_points - 1) as f64;
        let i = i as f64;
        (self.p3_min * (m - i) + self.p3_max * i) / m
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.point(i)).collect()
    }

    pub fn spacing(&self) -> f64 {
        (self.p3_max - self.p3_min) / (self.n_points - 1) as f64
    }

    pub fn is_symmetric(&self) -> bool {
        self.p3_min == -self.p3_max
    }

    /// Index of the node at exactly p3 = 0, if any.
    pub fn zero_index(&self) -> Option<usize> {
        (0..self.n_points).find(|&i| self.point(i) == 0.0)
    }

    /// Grid with `2n - 1` points over the same range.
    pub fn refined(&self) -> Self {
        Self {
            n_points: 2 * self.n_points - 1,
            ..*self
        }
    }
}

/// Where a spectrum's field came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub seed: u64,
    pub run_index: u64,
    pub sigma_t: f64,
    pub mu_t: f64,
    pub n_pulses: usize,
}

impl TrainMeta {
    pub fn of(pt: &PulseTrain) -> Self {
        Self {
            seed: pt.train.seed,
            run_index: pt.delays.draw_index,
            sigma_t: pt.train.sigma_t,
            mu_t: pt.train.mu_t,
            n_pulses: pt.n_pulses(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub grid: MomentumGrid,
    pub values: Vec<f64>,
    pub train_meta: TrainMeta,
    /// Per-point invariant drift of the mode integration.
    pub drift: Vec<f64>,
}

impl Spectrum {
    pub fn p3(&self) -> Vec<f64> {
        self.grid.points()
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Value at the p3 = 0 node.
    pub fn central_value(&self) -> Option<f64> {
        self.grid.zero_index().map(|i| self.values[i])
    }
}

/// Solves every grid node for one realization. Nodes are independent and
/// solved in parallel on the current rayon pool; the result does not depend
/// on the worker count. The first failing node aborts the spectrum.
pub fn compute_spectrum(
    grid: &MomentumGrid,
    pt: &PulseTrain,
    cfg: &SolverConfig,
) -> Result<Spectrum, SpectrumError> {
    compute_spectrum_shifted(grid, pt, cfg, 0.0)
}

/// As [`compute_spectrum`] but node `p3` is solved at canonical momentum
/// `p3 + shift`; the stored grid keeps the unshifted labels.
pub fn compute_spectrum_shifted(
    grid: &MomentumGrid,
    pt: &PulseTrain,
    cfg: &SolverConfig,
    shift: f64,
) -> Result<Spectrum, SpectrumError> {
    grid.validate()?;
    let modes: Result<Vec<_>, _> = (0..grid.n_points)
        .into_par_iter()
        .map(|i| {
            let p3 = grid.point(i);
            integrate_mode(Momentum::new(grid.p_perp, p3 + shift), pt, cfg)
                .map_err(|source| SpectrumError::Mode { p3, source })
        })
        .collect();
    let modes = modes?;
    Ok(Spectrum {
        grid: *grid,
        values: modes.iter().map(|m| m.f_out).collect(),
        drift: modes.iter().map(|m| m.invariant_drift).collect(),
        train_meta: TrainMeta::of(pt),
    })
}

/// Single-pulse spectrum aligned with the even-N train convention: node `p3`
/// holds the single pulse's distribution at the canonical momentum whose
/// kinetic momentum at the pulse peak equals `p3`.
pub fn single_pulse_reference(
    grid: &MomentumGrid,
    phys: PhysicalParams,
    mu_t: f64,
    cfg: &SolverConfig,
) -> Result<Spectrum, SpectrumError> {
    let train = TrainParams {
        n_pulses: 1,
        mu_t,
        sigma_t: 0.0,
        seed: 0,
    };
    let pt =
        build_train(phys, train, DelayVector::regular(1, mu_t)).expect("one delay for one pulse");
    compute_spectrum_shifted(grid, &pt, cfg, pt.resonant_momentum(1))
}

/// `max |f(p3) - f(-p3)| / max f` over a grid symmetric about zero.
pub fn spectrum_symmetry_error(s: &Spectrum) -> Result<f64, SpectrumError> {
    if !s.grid.is_symmetric() {
        return Err(SpectrumError::AsymmetricGrid);
    }
    let peak = s.max_value();
    if peak == 0.0 {
        return Ok(0.0);
    }
    let n = s.values.len();
    let worst = (0..n / 2)
        .map(|i| (s.values[i] - s.values[n - 1 - i]).abs())
        .fold(0.0, f64::max);
    Ok(worst / peak)
}

/// Canonical output name, e.g. `spectrum_N4_sigma15_run0_seed42.csv`.
pub fn spectrum_file_name(meta: &TrainMeta) -> String {
    format!(
        "spectrum_N{}_sigma{}_run{}_seed{}.csv",
        meta.n_pulses, meta.sigma_t, meta.run_index, meta.seed
    )
}

/// Writes `# key = value` comment lines, then `p3,f` rows in 17-digit
/// scientific notation.
pub fn write_spectrum_csv<W: Write>(
    mut out: W,
    p3: &[f64],
    values: &[f64],
    echo: &[(String, String)],
) -> std::io::Result<()> {
    for (k, v) in echo {
        writeln!(out, "# {k} = {v}")?;
    }
    writeln!(out, "p3,f")?;
    for (p, f) in p3.iter().zip(values) {
        writeln!(out, "{p:.16e},{f:.16e}")?;
    }
    Ok(())
}

/// Reads the first two columns of a `p3,f` CSV, skipping `#` comments.
pub fn read_spectrum_csv<R: Read>(input: R) -> Result<(Vec<f64>, Vec<f64>), SpectrumError> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut p3 = Vec::new();
    let mut f = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64, SpectrumError> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| SpectrumError::Format(format!("bad row {:?}", rec)))
        };
        p3.push(parse(0)?);
        f.push(parse(1)?);
    }
    Ok((p3, f))
}
