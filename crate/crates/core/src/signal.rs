//! Time-domain signals, the hard-clipping model and SDR metrics.

use crate::error::{Error, Result};

/// Relative slack allowed when checking that an observation never exceeds the
/// clipping threshold.
pub const OBSERVATION_TOLERANCE: f64 = 1e-12;

/// Tolerance (dB) used when searching a threshold for a target input SDR.
pub const SDR_SEARCH_TOLERANCE_DB: f64 = 0.01;

/// Iteration cap of the threshold bisection.
pub const SDR_SEARCH_MAX_STEPS: usize = 200;

/// A mono, real-valued waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Signal {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("signal must not be empty".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument(format!("sample {i} is not finite")));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidArgument(
                "sample rate must be positive".into(),
            ));
        }
        Ok(Signal {
            samples,
            sample_rate,
        })
    }

    /// Builds a signal from samples already known to be finite and non-empty.
    pub(crate) fn from_trusted(samples: Vec<f64>, sample_rate: u32) -> Self {
        debug_assert!(!samples.is_empty());
        debug_assert!(samples.iter().all(|s| s.is_finite()));
        Signal {
            samples,
            sample_rate,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    pub fn norm(&self) -> f64 {
        norm(&self.samples)
    }

    pub fn with_samples(&self, samples: Vec<f64>) -> Result<Self> {
        Signal::new(samples, self.sample_rate)
    }
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Partition of sample indices into clipped-high, reliable and clipped-low
/// sets for a threshold `tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipMask {
    tau: f64,
    high: Vec<usize>,
    reliable: Vec<usize>,
    low: Vec<usize>,
    len: usize,
}

/// Which set a sample index belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleClass {
    High,
    Reliable,
    Low,
}

impl ClipMask {
    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn high(&self) -> &[usize] {
        &self.high
    }

    pub fn reliable(&self) -> &[usize] {
        &self.reliable
    }

    pub fn low(&self) -> &[usize] {
        &self.low
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Fraction of clipped samples, `(|H| + |L|) / T`.
    pub fn clip_ratio(&self) -> f64 {
        (self.high.len() + self.low.len()) as f64 / self.len as f64
    }

    /// Per-sample classification, in index order.
    pub fn classes(&self) -> Vec<SampleClass> {
        let mut out = vec![SampleClass::Reliable; self.len];
        for &t in &self.high {
            out[t] = SampleClass::High;
        }
        for &t in &self.low {
            out[t] = SampleClass::Low;
        }
        out
    }

    /// Checks that `x` agrees with the observation `y` under this mask:
    /// equal on R bit-for-bit, `>= tau` on H and `<= -tau` on L.
    pub fn is_consistent(&self, x: &[f64], y: &[f64]) -> bool {
        x.len() == self.len
            && y.len() == self.len
            && self
                .reliable
                .iter()
                .all(|&t| x[t].to_bits() == y[t].to_bits())
            && self.high.iter().all(|&t| x[t] >= self.tau)
            && self.low.iter().all(|&t| x[t] <= -self.tau)
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "clipping threshold must be positive and finite, got {tau}"
        )))
    }
}

/// Hard clipping to `[-tau, tau]`.
pub fn hard_clip(x: &Signal, tau: f64) -> Result<Signal> {
    check_tau(tau)?;
    let samples = x
        .samples
        .iter()
        .map(|&s| {
            if s >= tau {
                tau
            } else if s <= -tau {
                -tau
            } else {
                s
            }
        })
        .collect();
    Ok(Signal::from_trusted(samples, x.sample_rate))
}

/// Splits the indices of a clipped observation into H, R and L. Samples equal
/// to `±tau` land in H/L.
pub fn clip_mask(y: &Signal, tau: f64) -> Result<ClipMask> {
    check_tau(tau)?;
    let limit = tau * (1.0 + OBSERVATION_TOLERANCE);
    let mut high = Vec::new();
    let mut reliable = Vec::new();
    let mut low = Vec::new();
    for (t, &s) in y.samples.iter().enumerate() {
        if s.abs() > limit {
            return Err(Error::InconsistentObservation {
                index: t,
                value: s.abs(),
                tau,
            });
        }
        if s >= tau {
            high.push(t);
        } else if s <= -tau {
            low.push(t);
        } else {
            reliable.push(t);
        }
    }
    Ok(ClipMask {
        tau,
        high,
        reliable,
        low,
        len: y.len(),
    })
}

/// Signal-to-distortion ratio in dB. A perfect estimate gives `f64::INFINITY`.
pub fn sdr(reference: &Signal, estimate: &Signal) -> Result<f64> {
    sdr_slices(reference.samples(), estimate.samples())
}

pub(crate) fn sdr_slices(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::LengthMismatch {
            expected: reference.len(),
            actual: estimate.len(),
        });
    }
    let signal = norm(reference);
    if signal == 0.0 {
        return Err(Error::ZeroSignal);
    }
    let err = reference
        .iter()
        .zip(estimate)
        .map(|(r, e)| (r - e) * (r - e))
        .sum::<f64>()
        .sqrt();
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * (signal / err).log10())
}

/// SDR improvement of `restored` over `clipped`, both measured against `truth`.
pub fn delta_sdr(truth: &Signal, restored: &Signal, clipped: &Signal) -> Result<f64> {
    let after = sdr(truth, restored)?;
    let before = sdr(truth, clipped)?;
    if after == before {
        // covers inf - inf when nothing was clipped
        return Ok(0.0);
    }
    Ok(after - before)
}

/// Finds the clipping threshold whose hard-clipped version of `x` has the
/// requested SDR, by bisection over `(0, max|x|]`.
pub fn threshold_for_input_sdr(x: &Signal, target_db: f64) -> Result<f64> {
    let peak = x.peak();
    if peak == 0.0 {
        return Err(Error::ZeroSignal);
    }
    if target_db.is_nan() {
        return Err(Error::InvalidArgument("target SDR is NaN".into()));
    }
    if target_db == f64::INFINITY {
        return Ok(peak);
    }
    let clipped_sdr = |tau: f64| -> Result<f64> { sdr(x, &hard_clip(x, tau)?) };

    let (mut lo, mut hi) = (0.0, peak);
    for _ in 0..SDR_SEARCH_MAX_STEPS {
        let mid = 0.5 * (lo + hi);
        if mid <= 0.0 {
            break;
        }
        let value = clipped_sdr(mid)?;
        if (value - target_db).abs() <= SDR_SEARCH_TOLERANCE_DB {
            return Ok(mid);
        }
        if value < target_db {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::NoSolution { target_db })
}

/// Scales `x` so its largest magnitude is exactly 1.
pub fn peak_normalize(x: &Signal) -> Result<Signal> {
    let peak = x.peak();
    if peak == 0.0 {
        return Err(Error::ZeroSignal);
    }
    let samples: Vec<f64> = x.samples.iter().map(|s| s / peak).collect();
    Ok(Signal::from_trusted(samples, x.sample_rate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn sig(v: &[f64]) -> Signal {
        Signal::new(v.to_vec(), 16000).unwrap()
    }

    fn gaussian(n: usize, seed: u64) -> Signal {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sig(&(0..n)
            .map(|_| rng.sample(StandardNormal))
            .collect::<Vec<f64>>())
    }

    #[test]
    fn rejects_bad_signals() {
        assert!(Signal::new(vec![], 16000).is_err());
        assert!(Signal::new(vec![0.0, f64::NAN], 16000).is_err());
        assert!(Signal::new(vec![0.0], 0).is_err());
    }

    #[test]
    fn hard_clip_cases() {
        let y = hard_clip(&sig(&[0.5, 1.5, -2.0]), 1.0).unwrap();
        assert_eq!(y.samples(), &[0.5, 1.0, -1.0]);

        let x = sig(&[0.1, -0.3, 0.7]);
        assert_eq!(hard_clip(&x, 1.0).unwrap(), x);

        assert!(hard_clip(&x, 0.0).is_err());
        assert!(hard_clip(&x, -1.0).is_err());
    }

    #[test]
    fn hard_clip_sine_matches_per_sample_rule() {
        let x = sig(&(0..500)
            .map(|t| (2.0 * std::f64::consts::PI * t as f64 / 97.0).sin())
            .collect::<Vec<_>>());
        let y = hard_clip(&x, 0.5).unwrap();
        for (&a, &b) in x.samples().iter().zip(y.samples()) {
            #[allow(clippy::manual_clamp)]
            let expected = if a >= 0.5 {
                0.5
            } else if a <= -0.5 {
                -0.5
            } else {
                a
            };
            assert_eq!(b, expected);
        }
        assert!(y.peak() <= 0.5);
    }

    #[test]
    fn mask_cases() {
        let m = clip_mask(&sig(&[0.2, 1.0, -1.0]), 1.0).unwrap();
        assert_eq!(m.high(), &[1]);
        assert_eq!(m.reliable(), &[0]);
        assert_eq!(m.low(), &[2]);

        let m = clip_mask(&sig(&[0.2, -0.4, 0.9]), 1.0).unwrap();
        assert_eq!(m.reliable(), &[0, 1, 2]);
        assert_eq!(m.clip_ratio(), 0.0);

        let err = clip_mask(&sig(&[0.2, 1.5]), 1.0).unwrap_err();
        assert!(matches!(
            err,
            Error::InconsistentObservation { index: 1, .. }
        ));
        // within relative tolerance is accepted and counted as clipped
        let m = clip_mask(&sig(&[1.0 + 1e-15]), 1.0).unwrap();
        assert_eq!(m.high(), &[0]);
    }

    #[test]
    fn clip_ratio_matches_count_for_gaussian() {
        let x = gaussian(10_000, 7);
        let mut mags: Vec<f64> = x.samples().iter().map(|v| v.abs()).collect();
        mags.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let tau = mags[3_000];
        let m = clip_mask(&hard_clip(&x, tau).unwrap(), tau).unwrap();
        let counted = x.samples().iter().filter(|v| v.abs() >= tau).count();
        assert_eq!(m.high().len() + m.low().len(), counted);
        assert!((m.clip_ratio() - 0.7).abs() < 1e-3);
    }

    #[test]
    fn sdr_cases() {
        let x = gaussian(256, 1);
        assert_eq!(sdr(&x, &x).unwrap(), f64::INFINITY);

        let half = x
            .with_samples(x.samples().iter().map(|v| 0.5 * v).collect())
            .unwrap();
        assert!((sdr(&x, &half).unwrap() - 20.0 * 2f64.log10()).abs() < 1e-12);
        assert!((sdr(&x, &half).unwrap() - 6.0206).abs() < 1e-4);

        // error of exactly a tenth of the reference norm
        let e = gaussian(256, 2);
        let scale = 0.1 * x.norm() / e.norm();
        let est = x
            .with_samples(
                x.samples()
                    .iter()
                    .zip(e.samples())
                    .map(|(a, b)| a + scale * b)
                    .collect(),
            )
            .unwrap();
        assert!((sdr(&x, &est).unwrap() - 20.0).abs() < 1e-10);

        assert!(matches!(
            sdr(&x, &sig(&[1.0])),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            sdr(&sig(&[0.0, 0.0]), &sig(&[1.0, 0.0])),
            Err(Error::ZeroSignal)
        ));
    }

    #[test]
    fn delta_sdr_cases() {
        let x = gaussian(512, 3);
        let y = hard_clip(&x, 1.0).unwrap();
        assert_eq!(delta_sdr(&x, &y, &y).unwrap(), 0.0);
        assert_eq!(delta_sdr(&x, &x, &y).unwrap(), f64::INFINITY);

        let mid = x
            .with_samples(
                x.samples()
                    .iter()
                    .zip(y.samples())
                    .map(|(a, b)| 0.5 * (a + b))
                    .collect(),
            )
            .unwrap();
        let d = delta_sdr(&x, &mid, &y).unwrap();
        assert!((d - 20.0 * 2f64.log10()).abs() < 1e-10);
        assert_eq!(delta_sdr(&x, &x, &x).unwrap(), 0.0);
    }

    #[test]
    fn threshold_search() {
        let x = sig(&(0..4096)
            .map(|t| (2.0 * std::f64::consts::PI * t as f64 / 64.0).sin())
            .collect::<Vec<_>>());
        let x = peak_normalize(&x).unwrap();
        assert_eq!(threshold_for_input_sdr(&x, f64::INFINITY).unwrap(), 1.0);

        let tau = threshold_for_input_sdr(&x, 5.0).unwrap();
        assert!(tau > 0.0 && tau < 1.0);
        let achieved = sdr(&x, &hard_clip(&x, tau).unwrap()).unwrap();
        assert!((achieved - 5.0).abs() <= SDR_SEARCH_TOLERANCE_DB);

        let t1 = threshold_for_input_sdr(&x, 1.0).unwrap();
        let t10 = threshold_for_input_sdr(&x, 10.0).unwrap();
        assert!(t1 < t10);

        assert!(matches!(
            threshold_for_input_sdr(&x, -3.0),
            Err(Error::NoSolution { .. })
        ));
    }

    #[test]
    fn clipped_sdr_is_monotone_in_tau() {
        let x = peak_normalize(&gaussian(2048, 11)).unwrap();
        let mut last = 0.0;
        for k in 1..100 {
            let tau = k as f64 / 100.0;
            let s = sdr(&x, &hard_clip(&x, tau).unwrap()).unwrap();
            assert!(s >= last);
            last = s;
        }
    }

    #[test]
    fn peak_normalize_cases() {
        assert_eq!(
            peak_normalize(&sig(&[0.5, -0.25])).unwrap().samples(),
            &[1.0, -0.5]
        );
        let x = sig(&[1.0, -0.3]);
        assert_eq!(peak_normalize(&x).unwrap(), x);
        assert!(matches!(
            peak_normalize(&sig(&[0.0, 0.0])),
            Err(Error::ZeroSignal)
        ));
        let g = peak_normalize(&gaussian(1000, 5)).unwrap();
        assert!((g.peak() - 1.0).abs() <= f64::EPSILON);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn samples() -> impl Strategy<Value = Vec<f64>> {
            prop::collection::vec(-3.0f64..3.0, 1..200)
        }

        proptest! {
            #[test]
            fn clip_is_idempotent(v in samples(), tau in 0.01f64..2.0) {
                let x = sig(&v);
                let once = hard_clip(&x, tau).unwrap();
                prop_assert_eq!(hard_clip(&once, tau).unwrap(), once);
            }

            #[test]
            fn mask_matches_direct_comparison(v in samples(), tau in 0.01f64..2.0) {
                let x = sig(&v);
                let y = hard_clip(&x, tau).unwrap();
                let m = clip_mask(&y, tau).unwrap();
                let classes = m.classes();
                for (t, &s) in v.iter().enumerate() {
                    let expected = if s >= tau {
                        SampleClass::High
                    } else if s <= -tau {
                        SampleClass::Low
                    } else {
                        SampleClass::Reliable
                    };
                    prop_assert_eq!(classes[t], expected);
                }
                prop_assert_eq!(m.high().len() + m.reliable().len() + m.low().len(), v.len());
                // the truth itself is consistent with its own observation on R
                for &t in m.reliable() {
                    prop_assert_eq!(y.samples()[t], v[t]);
                }
            }

            #[test]
            fn sdr_shift_under_error_scaling(
                v in prop::collection::vec(-1.0f64..1.0, 8..64),
                e in prop::collection::vec(-1.0f64..1.0, 64),
                c in 0.01f64..100.0,
            ) {
                let x = sig(&v);
                prop_assume!(x.norm() > 1e-3);
                let e = &e[..v.len()];
                prop_assume!(norm(e) > 1e-3);
                let est = |k: f64| x.with_samples(v.iter().zip(e).map(|(a, b)| a + k * b).collect()).unwrap();
                let s1 = sdr(&x, &est(1.0)).unwrap();
                let sc = sdr(&x, &est(c)).unwrap();
                prop_assert!((sc - (s1 - 20.0 * c.log10())).abs() < 1e-9);
            }
        }
    }
}
