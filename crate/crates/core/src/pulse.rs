//! Alternating-sign Sauter pulse trains with Gaussian-jittered delays.
//!
//! Pulse `k` (1-based) has sign `(-1)^(k-1)` and is centered at
//! `((N + 1 - 2k) / 2) * T_k`, so the first pulse is the latest one in time.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::units::{PhysicalParams, TrainParams};

/// Beyond this many widths from a center a pulse contributes tanh = ±1 and
/// sech² = 0 (the dropped sech² is below 2e-17).
const FAR_FIELD_WIDTHS: f64 = 20.0;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("delay vector has {got} entries but the train has {expected} pulses")]
    LengthMismatch { expected: usize, got: usize },
    #[error("delay file: {0}")]
    Csv(#[from] csv::Error),
    #[error("delay file: {0}")]
    Format(String),
}

/// Inter-pulse delays `T_1..T_N` of one realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayVector {
    pub values: Vec<f64>,
    /// Substream seed the values were drawn from (0 for explicit vectors).
    pub seed_used: u64,
    /// Ensemble run index this vector belongs to.
    pub draw_index: u64,
}

impl DelayVector {
    /// Delays supplied from outside, e.g. a tabulated realization.
    pub fn explicit(values: Vec<f64>) -> Self {
        Self {
            values,
            seed_used: 0,
            draw_index: 0,
        }
    }

    /// Every delay equal to `mu_t`.
    pub fn regular(n_pulses: usize, mu_t: f64) -> Self {
        Self::explicit(vec![mu_t; n_pulses])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the substream owned by run `run_index` of an ensemble with master
/// seed `master`: `splitmix64(master ^ splitmix64(run_index))`.
///
/// The substream is a ChaCha20 generator seeded with this value through
/// `SeedableRng::seed_from_u64`; standard normals come from the
/// `rand_distr` ziggurat sampler.
pub fn substream_seed(master: u64, run_index: u64) -> u64 {
    splitmix64(master ^ splitmix64(run_index))
}

/// Draws `T_k = mu_t + sigma_t * z_k` with `z_k` standard normal, for
/// `k = 1..N`. Negative draws are kept. With `sigma_t = 0` every entry is
/// exactly `mu_t`.
pub fn sample_delays(train: &TrainParams, run_index: u64) -> DelayVector {
    let seed = substream_seed(train.seed, run_index);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let values = (0..train.n_pulses)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            train.mu_t + train.sigma_t * z
        })
        .collect();
    DelayVector {
        values,
        seed_used: seed,
        draw_index: run_index,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Pulse {
    center: f64,
    sign: f64,
}

/// One realization of the field. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseTrain {
    pub phys: PhysicalParams,
    pub train: TrainParams,
    pub delays: DelayVector,
    pub centers: Vec<f64>,
    pulses: Vec<Pulse>,
}

/// Center of pulse `k` (1-based) in an `n`-pulse train with delay `t_k`.
pub fn pulse_center(n: usize, k: usize, t_k: f64) -> f64 {
    0.5 * (n as f64 + 1.0 - 2.0 * k as f64) * t_k
}

pub fn build_train(
    phys: PhysicalParams,
    train: TrainParams,
    delays: DelayVector,
) -> Result<PulseTrain, TrainError> {
    let n = train.n_pulses;
    if delays.len() != n {
        return Err(TrainError::LengthMismatch {
            expected: n,
            got: delays.len(),
        });
    }
    let centers: Vec<f64> = delays
        .values
        .iter()
        .enumerate()
        .map(|(i, &t)| pulse_center(n, i + 1, t))
        .collect();
    let pulses = centers
        .iter()
        .enumerate()
        .map(|(i, &center)| Pulse {
            center,
            sign: if i % 2 == 0 { 1.0 } else { -1.0 },
        })
        .collect();
    Ok(PulseTrain {
        phys,
        train,
        delays,
        centers,
        pulses,
    })
}

/// Samples run `run_index` and builds its train.
pub fn realize(phys: PhysicalParams, train: TrainParams, run_index: u64) -> PulseTrain {
    let delays = sample_delays(&train, run_index);
    build_train(phys, train, delays).expect("sampled vector has n_pulses entries")
}

/// `(tanh x, sech² x)` without overflow for any finite `x`.
#[inline]
fn tanh_sech2(x: f64) -> (f64, f64) {
    let a = x.abs();
    if a > FAR_FIELD_WIDTHS {
        return (x.signum(), 0.0);
    }
    let e = (-2.0 * a).exp();
    let d = 1.0 + e;
    (((1.0 - e) / d).copysign(x), 4.0 * e / (d * d))
}

impl PulseTrain {
    pub fn n_pulses(&self) -> usize {
        self.pulses.len()
    }

    /// Sign `(-1)^(k-1)` of pulse `k` (1-based).
    pub fn sign(&self, k: usize) -> f64 {
        self.pulses[k - 1].sign
    }

    pub fn earliest_center(&self) -> f64 {
        self.centers.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn latest_center(&self) -> f64 {
        self.centers
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Field E(t) and potential A(t) in one pass over the pulses.
    #[inline]
    pub fn field_and_potential(&self, t: f64) -> (f64, f64) {
        let tau = self.phys.tau;
        let mut e = 0.0;
        let mut s = 0.0;
        for p in &self.pulses {
            let (th, sc) = tanh_sech2((t - p.center) / tau);
            e += p.sign * sc;
            s += p.sign * th;
        }
        (self.phys.e0 * e, -self.phys.e0 * tau * (1.0 + s))
    }

    /// E(t) in units of E_c.
    pub fn electric_field(&self, t: f64) -> f64 {
        self.field_and_potential(t).0
    }

    /// A(t) with E = -dA/dt, in [m].
    pub fn vector_potential(&self, t: f64) -> f64 {
        self.field_and_potential(t).1
    }

    /// Canonical momentum at which the kinetic momentum vanishes at the
    /// center of pulse `k` (1-based), i.e. `e * A(center_k)`.
    ///
    /// Zero for every pulse of an even train; `-E0 τ` for a lone pulse.
    pub fn resonant_momentum(&self, k: usize) -> f64 {
        self.phys.e_charge * self.vector_potential(self.pulses[k - 1].center)
    }
}

/// Writes `k,T_k,center` rows for a realization.
pub fn write_delays_csv<W: Write>(out: W, train: &PulseTrain) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "T_k", "center"])?;
    for (i, (&t, &c)) in train.delays.values.iter().zip(&train.centers).enumerate() {
        w.write_record([
            (i + 1).to_string(),
            format!("{t:.16e}"),
            format!("{c:.16e}"),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Reads a delay file written by [`write_delays_csv`] (or hand-written with
/// at least `k,T_k` columns). Lines starting with `#` are ignored. Rows may
/// come in any order; `k` must cover `1..=N` exactly once.
pub fn read_delays_csv<R: Read>(input: R) -> Result<DelayVector, TrainError> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(input);
    let mut rows: Vec<(usize, f64)> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let k: usize = rec
            .get(0)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| TrainError::Format(format!("bad k in row {:?}", rec)))?;
        let t: f64 = rec
            .get(1)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| TrainError::Format(format!("bad T_k in row {:?}", rec)))?;
        rows.push((k, t));
    }
    rows.sort_by_key(|r| r.0);
    for (i, (k, _)) in rows.iter().enumerate() {
        if *k != i + 1 {
            return Err(TrainError::Format(format!(
                "pulse indices must be 1..=N without gaps, found k = {k} at position {}",
                i + 1
            )));
        }
    }
    Ok(DelayVector::explicit(
        rows.into_iter().map(|r| r.1).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::reference_params;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn regular(n: usize) -> PulseTrain {
        let (phys, train) = reference_params();
        let train = train.with_pulses(n);
        build_train(phys, train, DelayVector::regular(n, train.mu_t)).unwrap()
    }

    // independent direct transcription of the field sum
    fn field_direct(pt: &PulseTrain, t: f64) -> f64 {
        let n = pt.n_pulses() as f64;
        (1..=pt.n_pulses())
            .map(|k| {
                let x = (t + (k as f64 - (n + 1.0) / 2.0) * pt.delays.values[k - 1]) / pt.phys.tau;
                (-1f64).powi(k as i32 - 1) * pt.phys.e0 / x.cosh().powi(2)
            })
            .sum()
    }

    #[test]
    fn zero_spread_is_exactly_regular() {
        let (_, train) = reference_params();
        for seed in [0, 1, 42, u64::MAX] {
            let d = sample_delays(&TrainParams { seed, ..train }, 7);
            assert!(d.values.iter().all(|&t| t == 180.32));
        }
    }

    #[test]
    fn sampling_is_deterministic_and_run_dependent() {
        let (_, train) = reference_params();
        let train = TrainParams {
            sigma_t: 15.0,
            seed: 99,
            ..train
        };
        let a = sample_delays(&train, 3);
        let b = sample_delays(&train, 3);
        assert_eq!(a, b);
        assert_ne!(a.values, sample_delays(&train, 4).values);
        assert_eq!(a.draw_index, 3);
        assert_eq!(a.seed_used, substream_seed(99, 3));
    }

    #[test]
    fn sampled_delays_have_requested_moments() {
        let (_, train) = reference_params();
        let train = TrainParams {
            sigma_t: 15.0,
            seed: 5,
            n_pulses: 4,
            ..train
        };
        let xs: Vec<f64> = (0..5000)
            .flat_map(|r| sample_delays(&train, r).values)
            .collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        // 20000 draws: standard error of the mean 0.106, of the sd ~0.075
        assert!((mean - 180.32).abs() < 0.5, "mean {mean}");
        assert!((var.sqrt() - 15.0).abs() < 0.4, "sd {}", var.sqrt());
    }

    #[test]
    fn tabulated_centers() {
        let (phys, train) = reference_params();
        let pt = build_train(
            phys,
            train,
            DelayVector::explicit(vec![172.25, 185.38, 160.86, 191.65]),
        )
        .unwrap();
        let expected = [258.37, 92.69, -80.43, -287.47];
        for (c, e) in pt.centers.iter().zip(expected) {
            // tabulated to two decimals
            assert!((c - e).abs() <= 0.0051, "{c} vs {e}");
        }
    }

    #[test]
    fn regular_centers_and_signs() {
        let pt = regular(4);
        let expected = [270.48, 90.16, -90.16, -270.48];
        for (c, e) in pt.centers.iter().zip(expected) {
            assert_relative_eq!(*c, e, max_relative = 1e-14);
        }
        assert_eq!(
            (1..=4).map(|k| pt.sign(k)).collect::<Vec<_>>(),
            vec![1.0, -1.0, 1.0, -1.0]
        );
        assert_eq!(regular(1).centers, vec![0.0]);
    }

    #[test]
    fn length_mismatch_rejected() {
        let (phys, train) = reference_params();
        let err = build_train(phys, train, DelayVector::regular(3, 180.32)).unwrap_err();
        assert!(matches!(
            err,
            TrainError::LengthMismatch {
                expected: 4,
                got: 3
            }
        ));
    }

    #[test]
    fn single_pulse_values() {
        let pt = regular(1);
        assert_eq!(pt.electric_field(0.0), 0.1);
        assert_eq!(pt.vector_potential(0.0), -0.1 * 20.0);
        assert_relative_eq!(pt.resonant_momentum(1), -2.0);
    }

    #[test]
    fn tails_decay() {
        let pt = regular(4);
        for dt in [50.0, 100.0, 200.0, 400.0, 1e6, 1e300] {
            for t in [pt.latest_center() + dt, pt.earliest_center() - dt] {
                let e = pt.electric_field(t);
                assert!(e.is_finite());
                assert!(e.abs() <= 4.0 * 0.1 * (-2.0 * dt / 20.0).exp() * 1.0001);
            }
        }
        // alternating tanh asymptotes cancel for even N
        assert_eq!(pt.vector_potential(-1e6), -2.0);
        assert_eq!(pt.vector_potential(1e6), -2.0);
        assert_eq!(regular(3).vector_potential(-1e6), 0.0);
    }

    #[test]
    fn field_matches_direct_sum() {
        let pt = regular(4);
        let at = pt.electric_field(-90.16);
        assert_relative_eq!(at, field_direct(&pt, -90.16), max_relative = 1e-13);
        // the k = 3 pulse (center -90.16) has sign +1 and dominates
        assert!((at - 0.1).abs() < 1e-3);

        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let (phys, train) = reference_params();
        let train = train.with_sigma(45.0);
        for run in 0..5 {
            let pt = realize(phys, train, run);
            for _ in 0..200 {
                let t = rng.gen_range(-800.0..800.0);
                let a = pt.electric_field(t);
                let b = field_direct(&pt, t);
                assert!((a - b).abs() <= 1e-15 + 1e-13 * b.abs(), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn field_is_minus_potential_derivative() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let (phys, train) = reference_params();
        let h = 1e-4;
        for run in 0..4 {
            let pt = realize(phys, train.with_sigma(15.0 * run as f64), run);
            let lo = pt.earliest_center() - 300.0;
            let hi = pt.latest_center() + 300.0;
            for _ in 0..250 {
                let t = rng.gen_range(lo..hi);
                let d = -(pt.vector_potential(t + h) - pt.vector_potential(t - h)) / (2.0 * h);
                assert!((d - pt.electric_field(t)).abs() <= 1e-8 * 0.1);
            }
        }
    }

    #[test]
    fn regular_even_train_parity() {
        // mirrored centers carry opposite signs: E is odd, A + E0 tau is even
        for n in [2, 4, 20] {
            let pt = regular(n);
            let off = pt.phys.e0 * pt.phys.tau;
            for i in 0..=2000 {
                let t = i as f64 * 0.5;
                assert!((pt.electric_field(t) + pt.electric_field(-t)).abs() <= 1e-14 * 0.1);
                let a_plus = pt.vector_potential(t) + off;
                let a_minus = pt.vector_potential(-t) + off;
                assert!((a_plus - a_minus).abs() <= 1e-13);
            }
        }
    }

    #[test]
    fn delay_csv_round_trip() {
        let (phys, train) = reference_params();
        let pt = realize(phys, train.with_sigma(45.0), 2);
        let mut buf = Vec::new();
        write_delays_csv(&mut buf, &pt).unwrap();
        let back = read_delays_csv(buf.as_slice()).unwrap();
        assert_eq!(back.values, pt.delays.values);
    }

    #[test]
    fn hand_written_delay_file() {
        let text = "# Run I\nk,T_k\n2,185.38\n1,172.25\n3,160.86\n4,191.65\n";
        let d = read_delays_csv(text.as_bytes()).unwrap();
        assert_eq!(d.values, vec![172.25, 185.38, 160.86, 191.65]);
        assert!(read_delays_csv("k,T_k\n1,1.0\n3,2.0\n".as_bytes()).is_err());
    }
}
