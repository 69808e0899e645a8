//! Unit system and validated parameter sets.
//!
//! Everything works in electron-mass units with ħ = c = 1: times in [m⁻¹],
//! momenta in [m], and field strengths as multiples of the critical field
//! E_c = m²/|e|. With `m = 1` and `e_charge = 1` the critical field is 1.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Rejection reasons for parameter sets. Each variant has a stable code.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("field amplitude e0 must be > 0 (got {0})")]
    NonPositiveAmplitude(f64),
    #[error("pulse width tau must be > 0 (got {0})")]
    NonPositiveWidth(f64),
    #[error("mean delay mu_t must be > 0 (got {0})")]
    NonPositiveMeanDelay(f64),
    #[error("delay spread sigma_t must be >= 0 (got {0})")]
    NegativeDelaySpread(f64),
    #[error("pulse count must be >= 1")]
    NoPulses,
    #[error("electron-mass units require m = 1 and e_charge = 1 (got m = {m}, e = {e})")]
    UnitMismatch { m: f64, e: f64 },
    #[error("solver tolerance {name} must be > 0 (got {value})")]
    NonPositiveTolerance { name: &'static str, value: f64 },
    #[error("margin_factor must be >= 10 (got {0})")]
    MarginTooSmall(f64),
    #[error("max_step must be > 0 (got {0})")]
    NonPositiveMaxStep(f64),
}

impl ParamError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            ParamError::NonPositiveAmplitude(_) => "E0_NONPOSITIVE",
            ParamError::NonPositiveWidth(_) => "TAU_NONPOSITIVE",
            ParamError::NonPositiveMeanDelay(_) => "MU_T_NONPOSITIVE",
            ParamError::NegativeDelaySpread(_) => "SIGMA_T_NEGATIVE",
            ParamError::NoPulses => "N_PULSES_ZERO",
            ParamError::UnitMismatch { .. } => "UNITS_NOT_ELECTRON_MASS",
            ParamError::NonPositiveTolerance { .. } => "TOLERANCE_NONPOSITIVE",
            ParamError::MarginTooSmall(_) => "MARGIN_TOO_SMALL",
            ParamError::NonPositiveMaxStep(_) => "MAX_STEP_NONPOSITIVE",
        }
    }
}

/// Field parameters of a single Sauter pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhysicalParams {
    /// Electron mass, always 1.
    pub m: f64,
    /// Magnitude of the elementary charge, always 1.
    pub e_charge: f64,
    /// Peak field of each pulse in units of E_c.
    pub e0: f64,
    /// Pulse width [m⁻¹].
    pub tau: f64,
}

impl Default for PhysicalParams {
    /// E0 = 0.1 E_c, τ = 20 m⁻¹.
    fn default() -> Self {
        Self::new(0.1, 20.0)
    }
}

impl PhysicalParams {
    /// Parameters in electron-mass units. Call [`validate`](Self::validate)
    /// before use; zero amplitude is allowed here so field-free runs can be
    /// expressed, see [`validate_allow_zero_field`](Self::validate_allow_zero_field).
    pub fn new(e0: f64, tau: f64) -> Self {
        Self {
            m: 1.0,
            e_charge: 1.0,
            e0,
            tau,
        }
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        if !(self.e0 > 0.0) {
            return Err(ParamError::NonPositiveAmplitude(self.e0));
        }
        self.validate_allow_zero_field()
    }

    /// Same as [`validate`](Self::validate) but accepts `e0 == 0`, which the
    /// field-free control runs use.
    pub fn validate_allow_zero_field(&self) -> Result<(), ParamError> {
        if self.m != 1.0 || self.e_charge != 1.0 {
            return Err(ParamError::UnitMismatch {
                m: self.m,
                e: self.e_charge,
            });
        }
        if !(self.e0 >= 0.0) {
            return Err(ParamError::NonPositiveAmplitude(self.e0));
        }
        if !(self.tau > 0.0) {
            return Err(ParamError::NonPositiveWidth(self.tau));
        }
        Ok(())
    }
}

/// Pulse-train layout and randomness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainParams {
    pub n_pulses: usize,
    /// Mean inter-pulse delay [m⁻¹].
    pub mu_t: f64,
    /// Delay standard deviation [m⁻¹].
    pub sigma_t: f64,
    /// Master seed for the delay streams.
    pub seed: u64,
}

impl Default for TrainParams {
    /// Four pulses, μ_T = 180.32 m⁻¹, no randomness, seed 0.
    fn default() -> Self {
        Self {
            n_pulses: 4,
            mu_t: 180.32,
            sigma_t: 0.0,
            seed: 0,
        }
    }
}

impl TrainParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        if self.n_pulses == 0 {
            return Err(ParamError::NoPulses);
        }
        if !(self.mu_t > 0.0) {
            return Err(ParamError::NonPositiveMeanDelay(self.mu_t));
        }
        if !(self.sigma_t >= 0.0) || !self.sigma_t.is_finite() {
            return Err(ParamError::NegativeDelaySpread(self.sigma_t));
        }
        Ok(())
    }

    pub fn with_sigma(self, sigma_t: f64) -> Self {
        Self { sigma_t, ..self }
    }

    pub fn with_pulses(self, n_pulses: usize) -> Self {
        Self { n_pulses, ..self }
    }
}

/// Integration controls for a single momentum mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub rel_tol: f64,
    pub abs_tol_f: f64,
    pub abs_tol_uv: f64,
    /// Window padding beyond the outermost pulse centers, in units of tau.
    pub margin_factor: f64,
    pub max_step: Option<f64>,
    /// Abort when |(1-2f)² + u² + v² - 1| exceeds this.
    pub drift_bound: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol_f: 1e-18,
            abs_tol_uv: 1e-14,
            margin_factor: 15.0,
            max_step: None,
            drift_bound: 1e-10,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), ParamError> {
        for (name, value) in [
            ("rel_tol", self.rel_tol),
            ("abs_tol_f", self.abs_tol_f),
            ("abs_tol_uv", self.abs_tol_uv),
            ("drift_bound", self.drift_bound),
        ] {
            if !(value > 0.0) {
                return Err(ParamError::NonPositiveTolerance { name, value });
            }
        }
        if !(self.margin_factor >= 10.0) {
            return Err(ParamError::MarginTooSmall(self.margin_factor));
        }
        if let Some(h) = self.max_step {
            if !(h > 0.0) {
                return Err(ParamError::NonPositiveMaxStep(h));
            }
        }
        Ok(())
    }
}

/// Reference field and train: E0 = 0.1 E_c, τ = 20 m⁻¹, four pulses with
/// mean delay 180.32 m⁻¹ and no randomness.
pub fn reference_params() -> (PhysicalParams, TrainParams) {
    (PhysicalParams::default(), TrainParams::default())
}
