//! Quantum Vlasov equation for one momentum mode.
//!
//! The integro-differential kinetic equation is evolved in its local form,
//!
//! ```text
//! df/dt = λ u / 2
//! du/dt = λ (1 - 2f) - 2ω v
//! dv/dt = 2ω u
//! ```
//!
//! with `λ = e E(t) ε⊥ / ω²`, `ω² = ε⊥² + (p3 - e A(t))²` and vacuum initial
//! data `f = u = v = 0`. The quantity `(1 - 2f)² + u² + v²` is conserved and
//! equals 1 along exact trajectories.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ode::{Dop853, OdeError, OdeSystem};
use crate::pulse::PulseTrain;
use crate::units::{ParamError, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Momentum {
    /// Transverse momentum modulus [m].
    pub p_perp: f64,
    /// Longitudinal canonical momentum [m].
    pub p3: f64,
}

impl Momentum {
    pub fn new(p_perp: f64, p3: f64) -> Self {
        debug_assert!(p_perp >= 0.0);
        Self { p_perp, p3 }
    }

    pub fn longitudinal(p3: f64) -> Self {
        Self { p_perp: 0.0, p3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KineticState {
    pub f: f64,
    pub u: f64,
    pub v: f64,
    pub t: f64,
}

impl KineticState {
    pub fn vacuum(t: f64) -> Self {
        Self {
            f: 0.0,
            u: 0.0,
            v: 0.0,
            t,
        }
    }

    /// `(1 - 2f)² + u² + v²`.
    pub fn first_integral(&self) -> f64 {
        (1.0 - 2.0 * self.f).powi(2) + self.u * self.u + self.v * self.v
    }

    /// `first_integral - 1`, evaluated without cancellation against 1.
    pub fn invariant_defect(&self) -> f64 {
        invariant_defect(self.f, self.u, self.v)
    }
}

#[inline]
fn invariant_defect(f: f64, u: f64, v: f64) -> f64 {
    4.0 * f * (f - 1.0) + u * u + v * v
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeResult {
    pub momentum: Momentum,
    /// Distribution value at the end of the window.
    pub f_out: f64,
    /// Largest |first_integral - 1| seen on accepted steps.
    pub invariant_drift: f64,
    pub steps_taken: usize,
    pub window: (f64, f64),
}

#[derive(Debug, Error)]
pub enum QveError {
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error("mode p = ({}, {}): {source}", momentum.p_perp, momentum.p3)]
    Integration {
        momentum: Momentum,
        #[source]
        source: OdeError,
    },
    #[error("mode p = ({}, {}): invariant drift {drift:e} exceeds {bound:e} at t = {t}", momentum.p_perp, momentum.p3)]
    Drift {
        momentum: Momentum,
        drift: f64,
        bound: f64,
        t: f64,
    },
}

/// ε⊥ = sqrt(m² + p⊥²).
pub fn transverse_energy(p_perp: f64, m: f64) -> f64 {
    m.hypot(p_perp)
}

/// ω(p, t) = sqrt(ε⊥² + (p3 - e A(t))²).
pub fn quasienergy(p: Momentum, t: f64, pt: &PulseTrain) -> f64 {
    let eps = transverse_energy(p.p_perp, pt.phys.m);
    let kinetic = p.p3 - pt.phys.e_charge * pt.vector_potential(t);
    eps.hypot(kinetic)
}

/// λ(p, t) = e E(t) ε⊥ / ω².
pub fn transition_amplitude(p: Momentum, t: f64, pt: &PulseTrain) -> f64 {
    let eps = transverse_energy(p.p_perp, pt.phys.m);
    let w = quasienergy(p, t, pt);
    pt.phys.e_charge * pt.electric_field(t) * eps / (w * w)
}

/// Right-hand side `(df/dt, du/dt, dv/dt)` at `state.t`.
pub fn qve_rhs(state: &KineticState, p: Momentum, pt: &PulseTrain) -> (f64, f64, f64) {
    let mode = ModeSystem::new(p, pt);
    let d = mode.rhs(state.t, &[state.f, state.u, state.v]);
    (d[0], d[1], d[2])
}

struct ModeSystem<'a> {
    pt: &'a PulseTrain,
    eps_perp: f64,
    eps_perp_sq: f64,
    p3: f64,
}

impl<'a> ModeSystem<'a> {
    fn new(p: Momentum, pt: &'a PulseTrain) -> Self {
        let eps = transverse_energy(p.p_perp, pt.phys.m);
        Self {
            pt,
            eps_perp: eps,
            eps_perp_sq: eps * eps,
            p3: p.p3,
        }
    }
}

impl OdeSystem<3> for ModeSystem<'_> {
    #[inline]
    fn rhs(&self, t: f64, y: &[f64; 3]) -> [f64; 3] {
        let e = self.pt.phys.e_charge;
        let (field, potential) = self.pt.field_and_potential(t);
        let kinetic = self.p3 - e * potential;
        let w2 = self.eps_perp_sq + kinetic * kinetic;
        let w = w2.sqrt();
        let lambda = e * field * self.eps_perp / w2;
        let [f, u, v] = *y;
        [
            0.5 * lambda * u,
            lambda * (1.0 - 2.0 * f) - 2.0 * w * v,
            2.0 * w * u,
        ]
    }
}

/// Integration window `(t0, tf)` for a train.
pub fn mode_window(pt: &PulseTrain, cfg: &SolverConfig) -> (f64, f64) {
    let pad = cfg.margin_factor * pt.phys.tau;
    (pt.earliest_center() - pad, pt.latest_center() + pad)
}

fn solver(cfg: &SolverConfig) -> Dop853<3> {
    let s = Dop853::new(cfg.rel_tol, [cfg.abs_tol_f, cfg.abs_tol_uv, cfg.abs_tol_uv]);
    match cfg.max_step {
        Some(h) => s.with_max_step(h),
        None => s,
    }
}

fn run_mode<F>(
    p: Momentum,
    pt: &PulseTrain,
    cfg: &SolverConfig,
    mut on_step: F,
) -> Result<ModeResult, QveError>
where
    F: FnMut(f64, &[f64; 3], f64),
{
    cfg.validate()?;
    let window = mode_window(pt, cfg);
    let sys = ModeSystem::new(p, pt);
    let mut drift = 0.0f64;
    let mut drift_at = window.0;
    let bound = cfg.drift_bound;
    let outcome = solver(cfg).integrate(&sys, window.0, [0.0; 3], window.1, |t, y| {
        let d = invariant_defect(y[0], y[1], y[2]).abs();
        on_step(t, y, d);
        if d > drift {
            drift = d;
            drift_at = t;
        }
        if d > bound {
            Err(format!("invariant drift {d:e}"))
        } else {
            Ok(())
        }
    });
    match outcome {
        Ok((y, stats)) => Ok(ModeResult {
            momentum: p,
            f_out: y[0],
            invariant_drift: drift,
            steps_taken: stats.accepted,
            window,
        }),
        Err(OdeError::Aborted { .. }) if drift > bound => Err(QveError::Drift {
            momentum: p,
            drift,
            bound,
            t: drift_at,
        }),
        Err(source) => Err(QveError::Integration {
            momentum: p,
            source,
        }),
    }
}

/// Evolves one mode from vacuum at `t0 = earliest center - margin·τ` to
/// `tf = latest center + margin·τ` and reads `f_out = f(tf)`.
pub fn integrate_mode(
    p: Momentum,
    pt: &PulseTrain,
    cfg: &SolverConfig,
) -> Result<ModeResult, QveError> {
    run_mode(p, pt, cfg, |_, _, _| {})
}

/// Evolves an arbitrary state from `state.t` to `t_end` under the same
/// equations and tolerances, without the drift check.
pub fn evolve(
    state: KineticState,
    p: Momentum,
    pt: &PulseTrain,
    t_end: f64,
    cfg: &SolverConfig,
) -> Result<KineticState, QveError> {
    cfg.validate()?;
    let sys = ModeSystem::new(p, pt);
    let (y, _) = solver(cfg)
        .integrate(&sys, state.t, [state.f, state.u, state.v], t_end, |_, _| {
            Ok(())
        })
        .map_err(|source| QveError::Integration {
            momentum: p,
            source,
        })?;
    Ok(KineticState {
        f: y[0],
        u: y[1],
        v: y[2],
        t: t_end,
    })
}

/// One accepted step of a traced integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub t: f64,
    pub f: f64,
    pub u: f64,
    pub v: f64,
    pub invariant: f64,
}

/// Like [`integrate_mode`] but also returns every accepted step.
pub fn integrate_mode_traced(
    p: Momentum,
    pt: &PulseTrain,
    cfg: &SolverConfig,
) -> Result<(ModeResult, Vec<TracePoint>), QveError> {
    let mut trace = Vec::new();
    let res = run_mode(p, pt, cfg, |t, y, _| {
        trace.push(TracePoint {
            t,
            f: y[0],
            u: y[1],
            v: y[2],
            invariant: invariant_defect(y[0], y[1], y[2]),
        })
    })?;
    Ok((res, trace))
}

/// Writes a trace as `t,f,u,v,invariant_defect` rows.
pub fn write_trace_csv<W: Write>(mut out: W, trace: &[TracePoint]) -> std::io::Result<()> {
    writeln!(out, "t,f,u,v,invariant_defect")?;
    for p in trace {
        writeln!(
            out,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            p.t, p.f, p.u, p.v, p.invariant
        )?;
    }
    Ok(())
}
