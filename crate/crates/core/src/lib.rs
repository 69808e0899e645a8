//! Vacuum pair creation in alternating-sign Sauter pulse trains with
//! Gaussian-jittered inter-pulse delays.
//!
//! The crate integrates the quantum Vlasov equation mode by mode
//! ([`qve`]), assembles longitudinal momentum spectra ([`spectrum`]),
//! averages them over seeded delay realizations ([`ensemble`]) and fits the
//! averaged spectra with a Gaussian envelope ([`analysis`]). All quantities
//! are in electron-mass units ([`units`]).

mod dop853_tableau;

pub mod analysis;
pub mod ensemble;
pub mod ode;
pub mod oracle;
pub mod pulse;
pub mod qve;
pub mod spectrum;
pub mod units;

pub use analysis::{fit_gaussian, roi_metrics, scaling_benchmark, GaussianFit, RoiMetrics};
pub use ensemble::{run_ensemble, sweep_sigma, EnsembleResult, SigmaSweepCurve};
pub use oracle::oracle_integrate;
pub use pulse::{build_train, realize, sample_delays, DelayVector, PulseTrain};
pub use qve::{integrate_mode, ModeResult, Momentum};
pub use spectrum::{compute_spectrum, MomentumGrid, Spectrum};
pub use units::{reference_params, PhysicalParams, SolverConfig, TrainParams};
