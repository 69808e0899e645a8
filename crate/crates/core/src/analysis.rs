//! Gaussian envelope fits of (averaged) spectra and the residual metrics
//! built on them.
//!
//! The envelope model is
//!
//! ```text
//! g(p3) = N0 / sqrt(2π S²) · exp(-(p3 - p̄3)² / (2 S²))
//! ```
//!
//! fitted by unit-weight Levenberg–Marquardt.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectrum::Spectrum;

pub const MAX_ITERATIONS: usize = 200;
pub const PARAM_TOLERANCE: f64 = 1e-10;
const INITIAL_DAMPING: f64 = 1e-3;
const MAX_DAMPING: f64 = 1e16;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("abscissa and data lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("data has no positive peak")]
    Degenerate,
    #[error("non-finite value in data")]
    NonFinite,
    #[error("no grid points strictly inside the ROI ({0}, {1})")]
    EmptyRoi(f64, f64),
    #[error("spectra are on different grids")]
    GridMismatch,
    #[error("grid has no node at p3 = 0")]
    NoZeroNode,
    #[error("overlay file: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub n0: f64,
    pub p3_bar: f64,
    pub s: f64,
}

impl GaussianParams {
    pub fn peak(&self) -> f64 {
        self.n0 / ((2.0 * std::f64::consts::PI).sqrt() * self.s)
    }

    pub fn eval(&self, p3: f64) -> f64 {
        let z = (p3 - self.p3_bar) / self.s;
        self.peak() * (-0.5 * z * z).exp()
    }

    /// `(g, ∂g/∂N0, ∂g/∂p̄3, ∂g/∂S)` at `p3`.
    pub fn eval_with_gradient(&self, p3: f64) -> (f64, [f64; 3]) {
        let d = p3 - self.p3_bar;
        let s2 = self.s * self.s;
        let shape = (-0.5 * d * d / s2).exp() / ((2.0 * std::f64::consts::PI).sqrt() * self.s);
        let g = self.n0 * shape;
        (
            g,
            [
                shape,
                g * d / s2,
                g * (d * d / (s2 * self.s) - 1.0 / self.s),
            ],
        )
    }

    fn as_array(&self) -> [f64; 3] {
        [self.n0, self.p3_bar, self.s]
    }

    fn from_array(a: [f64; 3]) -> Self {
        Self {
            n0: a[0],
            p3_bar: a[1],
            s: a[2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub params: GaussianParams,
    /// One-sigma standard errors of (N0, p̄3, S), from the residual-scaled
    /// inverse normal matrix.
    pub std_errors: GaussianParams,
    pub chi2_red_relative: f64,
    pub chi2_red_absolute: f64,
    pub n_points: usize,
    pub n_iterations: usize,
    pub converged: bool,
}

impl GaussianFit {
    pub fn n0(&self) -> f64 {
        self.params.n0
    }
    pub fn p3_bar(&self) -> f64 {
        self.params.p3_bar
    }
    pub fn s(&self) -> f64 {
        self.params.s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChiSquaredMode {
    /// Raw residuals, in f² units.
    Absolute,
    /// Residuals divided by the fitted peak height.
    Relative,
}

fn check_input(p3: &[f64], data: &[f64], needed: usize) -> Result<(), AnalysisError> {
    if p3.len() != data.len() {
        return Err(AnalysisError::LengthMismatch(p3.len(), data.len()));
    }
    if data.len() < needed {
        return Err(AnalysisError::TooFewPoints {
            needed,
            got: data.len(),
        });
    }
    if p3.iter().chain(data).any(|v| !v.is_finite()) {
        return Err(AnalysisError::NonFinite);
    }
    Ok(())
}

/// Starting point from the data: p̄3 at the maximum, S from the half-maximum
/// half-width, N0 from the peak height.
pub fn initial_guess(p3: &[f64], data: &[f64]) -> Result<GaussianParams, AnalysisError> {
    let (imax, &peak) = data
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .ok_or(AnalysisError::Degenerate)?;
    if !(peak > 0.0) {
        return Err(AnalysisError::Degenerate);
    }
    let half = 0.5 * peak;
    let crossing = |range: &mut dyn Iterator<Item = usize>| -> Option<f64> {
        let mut prev = imax;
        for i in range {
            if data[i] < half {
                let t = (data[prev] - half) / (data[prev] - data[i]);
                return Some(p3[prev] + t * (p3[i] - p3[prev]));
            }
            prev = i;
        }
        None
    };
    let left = crossing(&mut (0..imax).rev());
    let right = crossing(&mut (imax + 1..data.len()));
    let half_width = match (left, right) {
        (Some(l), Some(r)) => 0.5 * (r - l),
        (Some(l), None) => p3[imax] - l,
        (None, Some(r)) => r - p3[imax],
        (None, None) => 0.25 * (p3[p3.len() - 1] - p3[0]).abs(),
    };
    let s = half_width / (2.0 * std::f64::consts::LN_2).sqrt();
    Ok(GaussianParams {
        n0: peak * (2.0 * std::f64::consts::PI).sqrt() * s,
        p3_bar: p3[imax],
        s,
    })
}

fn sum_sq(p3: &[f64], data: &[f64], m: &GaussianParams) -> f64 {
    p3.iter()
        .zip(data)
        .map(|(&x, &y)| (y - m.eval(x)).powi(2))
        .sum()
}

/// `(JᵀJ, Jᵀr)` of the residuals `r = data - model`.
fn normal_equations(p3: &[f64], data: &[f64], m: &GaussianParams) -> ([[f64; 3]; 3], [f64; 3]) {
    let mut jtj = [[0.0; 3]; 3];
    let mut jtr = [0.0; 3];
    for (&x, &y) in p3.iter().zip(data) {
        let (g, grad) = m.eval_with_gradient(x);
        let r = y - g;
        for a in 0..3 {
            jtr[a] += grad[a] * r;
            for b in 0..3 {
                jtj[a][b] += grad[a] * grad[b];
            }
        }
    }
    (jtj, jtr)
}

fn inverse3(m: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let c = |r: usize, k: usize| {
        let (r1, r2) = ((r + 1) % 3, (r + 2) % 3);
        let (k1, k2) = ((k + 1) % 3, (k + 2) % 3);
        m[r1][k1] * m[r2][k2] - m[r1][k2] * m[r2][k1]
    };
    let det = m[0][0] * c(0, 0) + m[0][1] * c(0, 1) + m[0][2] * c(0, 2);
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    let mut inv = [[0.0; 3]; 3];
    for (r, row) in inv.iter_mut().enumerate() {
        for (k, v) in row.iter_mut().enumerate() {
            *v = c(k, r) / det;
        }
    }
    Some(inv)
}

fn solve3(m: &[[f64; 3]; 3], b: &[f64; 3]) -> Option<[f64; 3]> {
    let inv = inverse3(m)?;
    Some([0, 1, 2].map(|r| inv[r][0] * b[0] + inv[r][1] * b[1] + inv[r][2] * b[2]))
}

/// Unit-weight least-squares fit of the envelope model.
///
/// The data are divided by their maximum before iterating and the result is
/// scaled back. Iteration stops when every parameter moves by less than
/// [`PARAM_TOLERANCE`] relative to its size (p̄3 is measured against S) or
/// after [`MAX_ITERATIONS`]; in the latter case `converged` is false and the
/// best iterate is returned.
pub fn fit_gaussian(
    p3: &[f64],
    data: &[f64],
    init: Option<GaussianParams>,
) -> Result<GaussianFit, AnalysisError> {
    check_input(p3, data, 10)?;
    let scale = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(scale > 0.0) {
        return Err(AnalysisError::Degenerate);
    }
    let y: Vec<f64> = data.iter().map(|v| v / scale).collect();
    let start = match init {
        Some(g) => g,
        None => initial_guess(p3, data)?,
    };
    let mut cur = GaussianParams {
        n0: start.n0 / scale,
        ..start
    };
    let mut ssr = sum_sq(p3, &y, &cur);
    let mut damping = INITIAL_DAMPING;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS && !converged {
        iterations += 1;
        let (jtj, jtr) = normal_equations(p3, &y, &cur);
        loop {
            let mut a = jtj;
            for (k, row) in a.iter_mut().enumerate() {
                row[k] += damping * jtj[k][k];
            }
            let Some(step) = solve3(&a, &jtr) else {
                damping *= 10.0;
                if damping > MAX_DAMPING {
                    break;
                }
                continue;
            };
            let p = cur.as_array();
            let size = [p[0].abs(), p[2].abs(), p[2].abs()];
            let small = (0..3).all(|k| step[k].abs() <= PARAM_TOLERANCE * size[k]);
            let trial = GaussianParams::from_array([0, 1, 2].map(|k| p[k] + step[k]));
            let trial_ssr = if trial.s > 0.0 {
                sum_sq(p3, &y, &trial)
            } else {
                f64::INFINITY
            };
            if trial_ssr <= ssr {
                cur = trial;
                ssr = trial_ssr;
                damping = (damping / 10.0).max(1e-15);
                converged = small;
                break;
            }
            if small {
                converged = true;
                break;
            }
            damping *= 10.0;
            if damping > MAX_DAMPING {
                converged = true;
                break;
            }
        }
        if ssr == 0.0 {
            converged = true;
        }
    }

    let params = GaussianParams {
        n0: cur.n0 * scale,
        ..cur
    };
    let n = data.len();
    let (jtj, _) = normal_equations(p3, data, &params);
    let ssr_abs = sum_sq(p3, data, &params);
    let s2 = ssr_abs / (n - 3) as f64;
    let std_errors = match inverse3(&jtj) {
        Some(cov) => GaussianParams {
            n0: (s2 * cov[0][0]).max(0.0).sqrt(),
            p3_bar: (s2 * cov[1][1]).max(0.0).sqrt(),
            s: (s2 * cov[2][2]).max(0.0).sqrt(),
        },
        None => GaussianParams {
            n0: f64::NAN,
            p3_bar: f64::NAN,
            s: f64::NAN,
        },
    };
    Ok(GaussianFit {
        params,
        std_errors,
        chi2_red_relative: reduced_chi_squared(p3, data, &params, ChiSquaredMode::Relative),
        chi2_red_absolute: reduced_chi_squared(p3, data, &params, ChiSquaredMode::Absolute),
        n_points: n,
        n_iterations: iterations,
        converged,
    })
}

/// Σ r² / (n - 3), with `r` either raw or divided by the model peak.
pub fn reduced_chi_squared(
    p3: &[f64],
    data: &[f64],
    fit: &GaussianParams,
    mode: ChiSquaredMode,
) -> f64 {
    let norm = match mode {
        ChiSquaredMode::Absolute => 1.0,
        ChiSquaredMode::Relative => fit.peak(),
    };
    let s: f64 = p3
        .iter()
        .zip(data)
        .map(|(&x, &y)| ((y - fit.eval(x)) / norm).powi(2))
        .sum();
    s / (data.len() as f64 - 3.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiMetrics {
    pub roi: (f64, f64),
    pub n_points: usize,
    pub max_residual_amplitude: f64,
    /// Σ r² / (n_roi - 3) over the ROI points, in f² units.
    pub chi2_red_roi: f64,
}

pub const CENTRAL_ROI: (f64, f64) = (-0.3, 0.3);

/// Residual statistics over grid points with `lo < p3 < hi`.
pub fn roi_metrics(
    p3: &[f64],
    data: &[f64],
    fit: &GaussianParams,
    roi: (f64, f64),
) -> Result<RoiMetrics, AnalysisError> {
    check_input(p3, data, 0)?;
    let (lo, hi) = roi;
    let residuals: Vec<f64> = p3
        .iter()
        .zip(data)
        .filter(|(&x, _)| x > lo && x < hi)
        .map(|(&x, &y)| y - fit.eval(x))
        .collect();
    if residuals.len() <= 3 {
        return Err(AnalysisError::EmptyRoi(lo, hi));
    }
    Ok(RoiMetrics {
        roi,
        n_points: residuals.len(),
        max_residual_amplitude: residuals.iter().fold(0.0, |m, r| m.max(r.abs())),
        chi2_red_roi: residuals.iter().map(|r| r * r).sum::<f64>() / (residuals.len() as f64 - 3.0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Coherent,
    Incoherent,
    Intermediate,
}

impl Regime {
    /// Coherent within 25% of N², incoherent within a factor 2 of
    /// (2N + 1)/2, intermediate otherwise.
    pub fn classify(ratio: f64, n_pulses: usize) -> Self {
        let n = n_pulses as f64;
        let coherent = n * n;
        let incoherent = (2.0 * n + 1.0) / 2.0;
        if (ratio - coherent).abs() <= 0.25 * coherent {
            Regime::Coherent
        } else if ratio >= 0.5 * incoherent && ratio <= 2.0 * incoherent {
            Regime::Incoherent
        } else {
            Regime::Intermediate
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub n_pulses: usize,
    pub factor: f64,
    /// `factor` times the single-pulse curve.
    pub scaled_single: Vec<f64>,
    pub target_central: f64,
    pub single_central: f64,
    /// target_central / single_central.
    pub ratio: f64,
    pub regime: Regime,
}

/// Compares `target` with the single-pulse reference at the p3 = 0 node,
/// where both the coherent peak of a regular train and the aligned
/// single-pulse peak sit.
pub fn scaling_benchmark(
    target: &Spectrum,
    single_pulse: &Spectrum,
    factor: f64,
    n_pulses: usize,
) -> Result<BenchmarkReport, AnalysisError> {
    if target.grid != single_pulse.grid {
        return Err(AnalysisError::GridMismatch);
    }
    let i = target.grid.zero_index().ok_or(AnalysisError::NoZeroNode)?;
    let (t, s) = (target.values[i], single_pulse.values[i]);
    if !(s > 0.0) {
        return Err(AnalysisError::Degenerate);
    }
    let ratio = t / s;
    Ok(BenchmarkReport {
        n_pulses,
        factor,
        scaled_single: single_pulse.values.iter().map(|v| factor * v).collect(),
        target_central: t,
        single_central: s,
        ratio,
        regime: Regime::classify(ratio, n_pulses),
    })
}

/// `p3,data,fit,residual` rows after a `# key = value` comment block.
pub fn write_overlay_csv<W: Write>(
    mut out: W,
    p3: &[f64],
    data: &[f64],
    fit: &GaussianParams,
    echo: &[(String, String)],
) -> Result<(), AnalysisError> {
    for (k, v) in echo {
        writeln!(out, "# {k} = {v}").map_err(csv::Error::from)?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["p3", "data", "fit", "residual"])?;
    for (&x, &y) in p3.iter().zip(data) {
        let g = fit.eval(x);
        w.write_record([x, y, g, y - g].map(|v| format!("{v:.16e}")))?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
