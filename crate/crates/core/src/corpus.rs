//! Seeded synthetic harmonic-plus-noise test signals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::signal::{peak_normalize, Signal};

pub const DEFAULT_LENGTH: usize = 16384;
pub const DEFAULT_SAMPLE_RATE: u32 = 16000;

/// Noise floor relative to the harmonic part, in dB.
pub const NOISE_FLOOR_DB: f64 = -30.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusConfig {
    pub seed: u64,
    pub count: usize,
    pub length: usize,
    pub sample_rate: u32,
}

impl CorpusConfig {
    pub fn new(seed: u64, count: usize) -> Self {
        CorpusConfig {
            seed,
            count,
            length: DEFAULT_LENGTH,
            sample_rate: DEFAULT_SAMPLE_RATE,
        }
    }
}

/// `count` peak-normalized signals. Signal `i` depends only on `(seed, i)`.
pub fn synth_corpus(cfg: &CorpusConfig) -> Result<Vec<Signal>> {
    (0..cfg.count)
        .map(|i| synth_signal(cfg.seed, i as u64, cfg.length, cfg.sample_rate))
        .collect()
}

/// A voiced-like tone: fundamental in 80-300 Hz, 5-15 harmonics with
/// decaying amplitudes, slow amplitude modulation, and white noise 30 dB
/// below the harmonic power.
pub fn synth_signal(seed: u64, index: u64, length: usize, sample_rate: u32) -> Result<Signal> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let fs = f64::from(sample_rate);
    let f0 = rng.random_range(80.0..300.0);
    let harmonics: usize = rng.random_range(5..=15);
    let decay = rng.random_range(0.7..1.5);
    let am_rate = rng.random_range(1.0..4.0);
    let am_depth = rng.random_range(0.2..0.6);
    let am_phase = rng.random_range(0.0..std::f64::consts::TAU);

    let partials: Vec<(f64, f64, f64)> = (1..=harmonics)
        .map(|h| h as f64 * f0)
        .filter(|&f| f < 0.45 * fs)
        .enumerate()
        .map(|(k, f)| {
            let amp = ((k + 1) as f64).powf(-decay) * rng.random_range(0.5..1.0);
            (f, amp, rng.random_range(0.0..std::f64::consts::TAU))
        })
        .collect();

    let mut x: Vec<f64> = (0..length)
        .map(|t| {
            let t = t as f64 / fs;
            let envelope = 1.0 + am_depth * (std::f64::consts::TAU * am_rate * t + am_phase).sin();
            envelope
                * partials
                    .iter()
                    .map(|&(f, a, p)| a * (std::f64::consts::TAU * f * t + p).sin())
                    .sum::<f64>()
        })
        .collect();

    let power = x.iter().map(|v| v * v).sum::<f64>() / length as f64;
    let noise_std = (power * 10f64.powf(NOISE_FLOOR_DB / 10.0)).sqrt();
    let noise = Normal::new(0.0, noise_std).expect("finite positive std");
    for v in &mut x {
        *v += noise.sample(&mut rng);
    }
    peak_normalize(&Signal::new(x, sample_rate)?)
}
