//! Adaptive explicit Runge–Kutta integration with the Dormand–Prince 8(5,3)
//! pair, for small fixed-size systems.
//!
//! Step control follows Hairer's DOP853: a fifth-order error estimate
//! corrected by a third-order one, RMS-normed against
//! `atol + rtol * max(|y_old|, |y_new|)` per component.

use thiserror::Error;

use crate::dop853_tableau::{A, B, C, E3, E5, STAGES};

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 10.0;
const ERROR_EXPONENT: f64 = -1.0 / 8.0;

pub trait OdeSystem<const D: usize> {
    fn rhs(&self, t: f64, y: &[f64; D]) -> [f64; D];
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OdeError {
    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },
    #[error("step budget of {max_steps} exhausted at t = {t}")]
    TooManySteps { t: f64, max_steps: usize },
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error("integration aborted at t = {t}: {reason}")]
    Aborted { t: f64, reason: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct Dop853<const D: usize> {
    pub rtol: f64,
    pub atol: [f64; D],
    pub max_step: f64,
    pub max_steps: usize,
}

impl<const D: usize> Dop853<D> {
    pub fn new(rtol: f64, atol: [f64; D]) -> Self {
        Self {
            rtol,
            atol,
            max_step: f64::INFINITY,
            max_steps: 50_000_000,
        }
    }

    pub fn with_max_step(mut self, h: f64) -> Self {
        self.max_step = h;
        self
    }

    fn rms(&self, v: &[f64; D], y0: &[f64; D], y1: &[f64; D]) -> f64 {
        let mut s = 0.0;
        for i in 0..D {
            let sc = self.atol[i] + self.rtol * y0[i].abs().max(y1[i].abs());
            s += (v[i] / sc).powi(2);
        }
        (s / D as f64).sqrt()
    }

    fn initial_step<S: OdeSystem<D>>(&self, sys: &S, t0: f64, y0: &[f64; D], f0: &[f64; D]) -> f64 {
        let d0 = self.rms(y0, y0, y0);
        let d1 = self.rms(f0, y0, y0);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 {
            1e-6
        } else {
            0.01 * d0 / d1
        };
        let mut y1 = *y0;
        for i in 0..D {
            y1[i] += h0 * f0[i];
        }
        let f1 = sys.rhs(t0 + h0, &y1);
        let mut df = [0.0; D];
        for i in 0..D {
            df[i] = f1[i] - f0[i];
        }
        let d2 = self.rms(&df, y0, y0) / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(1.0 / 8.0)
        };
        (100.0 * h0).min(h1).min(self.max_step)
    }

    /// Integrates from `t0` to `tf > t0`, calling `observe` after every
    /// accepted step (and once with the initial state). Returns the final
    /// state and step statistics.
    pub fn integrate<S, O>(
        &self,
        sys: &S,
        t0: f64,
        y0: [f64; D],
        tf: f64,
        mut observe: O,
    ) -> Result<([f64; D], StepStats), OdeError>
    where
        S: OdeSystem<D>,
        O: FnMut(f64, &[f64; D]) -> Result<(), String>,
    {
        assert!(tf > t0, "integration interval must be forward in time");
        let mut stats = StepStats::default();
        let mut t = t0;
        let mut y = y0;
        observe(t, &y).map_err(|reason| OdeError::Aborted { t, reason })?;
        let mut f = sys.rhs(t, &y);
        stats.evaluations += 1;
        let mut h_abs = self.initial_step(sys, t, &y, &f);
        stats.evaluations += 1;

        let mut k = [[0.0; D]; STAGES + 1];
        while t < tf {
            if stats.accepted + stats.rejected >= self.max_steps {
                return Err(OdeError::TooManySteps {
                    t,
                    max_steps: self.max_steps,
                });
            }
            let min_step = 10.0 * f64::EPSILON * t.abs().max(1.0);
            h_abs = h_abs.min(self.max_step);
            let mut rejected_here = false;
            loop {
                if h_abs < min_step {
                    return Err(OdeError::StepUnderflow { t, h: h_abs });
                }
                let mut t_new = t + h_abs;
                if t_new > tf {
                    t_new = tf;
                }
                let h = t_new - t;

                k[0] = f;
                for s in 1..STAGES {
                    let mut ys = y;
                    for (j, kj) in k.iter().enumerate().take(s) {
                        let a = A[s][j];
                        if a != 0.0 {
                            for i in 0..D {
                                ys[i] += h * a * kj[i];
                            }
                        }
                    }
                    k[s] = sys.rhs(t + C[s] * h, &ys);
                }
                let mut y_new = y;
                for (s, ks) in k.iter().enumerate().take(STAGES) {
                    if B[s] != 0.0 {
                        for i in 0..D {
                            y_new[i] += h * B[s] * ks[i];
                        }
                    }
                }
                let f_new = sys.rhs(t_new, &y_new);
                k[STAGES] = f_new;
                stats.evaluations += STAGES;

                if y_new.iter().any(|v| !v.is_finite()) {
                    return Err(OdeError::NonFinite { t: t_new });
                }

                let mut err5 = 0.0;
                let mut err3 = 0.0;
                for i in 0..D {
                    let sc = self.atol[i] + self.rtol * y[i].abs().max(y_new[i].abs());
                    let mut e5 = 0.0;
                    let mut e3 = 0.0;
                    for (s, ks) in k.iter().enumerate() {
                        e5 += E5[s] * ks[i];
                        e3 += E3[s] * ks[i];
                    }
                    err5 += (e5 / sc).powi(2);
                    err3 += (e3 / sc).powi(2);
                }
                let err = if err5 == 0.0 && err3 == 0.0 {
                    0.0
                } else {
                    h * err5 / ((err5 + 0.01 * err3) * D as f64).sqrt()
                };

                if err < 1.0 {
                    let mut factor = if err == 0.0 {
                        MAX_FACTOR
                    } else {
                        MAX_FACTOR.min(SAFETY * err.powf(ERROR_EXPONENT))
                    };
                    if rejected_here {
                        factor = factor.min(1.0);
                    }
                    h_abs *= factor;
                    t = t_new;
                    y = y_new;
                    f = f_new;
                    stats.accepted += 1;
                    break;
                }
                h_abs *= MIN_FACTOR.max(SAFETY * err.powf(ERROR_EXPONENT));
                rejected_here = true;
                stats.rejected += 1;
            }
            observe(t, &y).map_err(|reason| OdeError::Aborted { t, reason })?;
        }
        Ok((y, stats))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Oscillator(f64);
    impl OdeSystem<2> for Oscillator {
        fn rhs(&self, _t: f64, y: &[f64; 2]) -> [f64; 2] {
            [self.0 * y[1], -self.0 * y[0]]
        }
    }

    struct Decay;
    impl OdeSystem<1> for Decay {
        fn rhs(&self, t: f64, y: &[f64; 1]) -> [f64; 1] {
            [-2.0 * t * y[0]]
        }
    }

    #[test]
    fn tableau_consistency() {
        let bsum: f64 = B.iter().sum();
        assert!((bsum - 1.0).abs() < 1e-14);
        for (s, row) in A.iter().enumerate() {
            let rsum: f64 = row.iter().sum();
            assert!((rsum - C[s]).abs() < 1e-13, "row {s}: {rsum} vs {}", C[s]);
            assert!(row[s..].iter().all(|&a| a == 0.0));
        }
    }

    #[test]
    fn harmonic_oscillator_accuracy() {
        let w = 2.0;
        let solver = Dop853::new(1e-12, [1e-14; 2]);
        let tf = 100.0;
        let (y, stats) = solver
            .integrate(&Oscillator(w), 0.0, [1.0, 0.0], tf, |_, _| Ok(()))
            .unwrap();
        assert!((y[0] - (w * tf).cos()).abs() < 1e-9, "{}", y[0]);
        assert!((y[1] + (w * tf).sin()).abs() < 1e-9);
        assert!(stats.accepted > 10);
    }

    #[test]
    fn eighth_order_convergence() {
        // fixed-ish steps via max_step and loose tolerance: error ratio ~ 2^8
        let run = |h: f64| {
            let s = Dop853::new(1.0, [1.0; 2]).with_max_step(h);
            let (y, _) = s
                .integrate(&Oscillator(1.0), 0.0, [1.0, 0.0], 10.0, |_, _| Ok(()))
                .unwrap();
            (y[0] - 10f64.cos()).abs()
        };
        let e1 = run(0.5);
        let e2 = run(0.25);
        let order = (e1 / e2).log2();
        assert!(order > 7.0, "observed order {order} ({e1:e} -> {e2:e})");
    }

    #[test]
    fn gaussian_decay() {
        let s = Dop853::new(1e-11, [1e-14]);
        let mut seen = 0;
        let (y, _) = s
            .integrate(&Decay, -3.0, [(-9.0f64).exp()], 3.0, |_, _| {
                seen += 1;
                Ok(())
            })
            .unwrap();
        assert!((y[0] - (-9.0f64).exp()).abs() < 1e-12);
        assert!(seen > 2);
    }

    #[test]
    fn observer_can_abort() {
        let s = Dop853::new(1e-8, [1e-10; 2]);
        let err = s
            .integrate(&Oscillator(1.0), 0.0, [1.0, 0.0], 10.0, |t, _| {
                if t > 5.0 {
                    Err("stop".into())
                } else {
                    Ok(())
                }
            })
            .unwrap_err();
        assert!(matches!(err, OdeError::Aborted { .. }));
    }

    struct Blowup;
    impl OdeSystem<1> for Blowup {
        fn rhs(&self, _t: f64, y: &[f64; 1]) -> [f64; 1] {
            [y[0] * y[0]]
        }
    }

    #[test]
    fn finite_time_singularity_is_reported() {
        // y' = y², y(0) = 1 blows up at t = 1
        let s = Dop853::new(1e-10, [1e-12]);
        let err = s
            .integrate(&Blowup, 0.0, [1.0], 2.0, |_, _| Ok(()))
            .unwrap_err();
        assert!(matches!(
            err,
            OdeError::StepUnderflow { .. } | OdeError::NonFinite { .. }
        ));
    }
}
