//! Discrete Gabor transform with a tight (Parseval) window and its adjoint.
//!
//! Frames are taken circularly: frame `n` reads `x[(t + hop*n) mod T]` for
//! `t` in the window support. Only the non-negative frequency bins
//! `0..=M/2` are stored; energies and inner products count interior bins
//! twice so that they agree with the full two-sided transform.

use std::fmt;
use std::sync::Arc;

use ndarray::{Array2, Zip};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::signal::Signal;

/// Periodic Hann window of length `len`.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|t| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * t as f64 / len as f64).cos())
        .collect()
}

/// Rescales `base` so that `channels * sum_n g[t - hop*n]^2 == 1` for every
/// `t`, which makes the analysis operator a Parseval frame.
pub fn tight_window(
    base: &[f64],
    hop: usize,
    channels: usize,
    signal_length: usize,
) -> Result<Vec<f64>> {
    if base.is_empty() || base.len() > signal_length {
        return Err(Error::InvalidArgument(format!(
            "window length {} must be in 1..={signal_length}",
            base.len()
        )));
    }
    if hop == 0 || !signal_length.is_multiple_of(hop) {
        return Err(Error::InvalidArgument(format!(
            "hop {hop} must divide the signal length {signal_length}"
        )));
    }
    if base.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidArgument(
            "base window must be finite and non-negative".into(),
        ));
    }
    let overlap = overlap_sum(base, hop, signal_length);
    if let Some(t) = overlap.iter().position(|&s| s <= 0.0) {
        return Err(Error::IncompleteFrame(t));
    }
    Ok(base
        .iter()
        .zip(&overlap)
        .map(|(b, s)| b / (channels as f64 * s).sqrt())
        .collect())
}

/// `sum_n w[(t - hop*n) mod T]^2` for every `t` in `0..T`.
pub fn overlap_sum(window: &[f64], hop: usize, signal_length: usize) -> Vec<f64> {
    let mut acc = vec![0.0; signal_length];
    for start in (0..signal_length).step_by(hop) {
        for (t, w) in window.iter().enumerate() {
            acc[(start + t) % signal_length] += w * w;
        }
    }
    acc
}

/// Geometry of a Gabor system plus its tight window and FFT plans.
#[derive(Clone)]
pub struct GaborConfig {
    hop: usize,
    channels: usize,
    signal_length: usize,
    window: Vec<f64>,
    power_scale: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for GaborConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GaborConfig")
            .field("window_length", &self.window.len())
            .field("hop", &self.hop)
            .field("channels", &self.channels)
            .field("frames", &self.frames())
            .field("signal_length", &self.signal_length)
            .finish()
    }
}

impl PartialEq for GaborConfig {
    fn eq(&self, other: &Self) -> bool {
        self.hop == other.hop
            && self.channels == other.channels
            && self.signal_length == other.signal_length
            && self.window == other.window
    }
}

impl Default for GaborConfig {
    /// Hann 1024, hop 256, 1024 channels, 16384 samples (64 frames).
    fn default() -> Self {
        GaborConfig::hann(1024, 256, 1024, 16384).expect("default Gabor geometry is valid")
    }
}

impl GaborConfig {
    /// Builds a configuration from a base window, tightening it first.
    pub fn new(base: &[f64], hop: usize, channels: usize, signal_length: usize) -> Result<Self> {
        if channels < base.len() {
            return Err(Error::InvalidArgument(format!(
                "{channels} channels cannot resolve a window of length {}",
                base.len()
            )));
        }
        let window = tight_window(base, hop, channels, signal_length)?;
        let power_scale =
            base.iter().map(|v| v * v).sum::<f64>() / window.iter().map(|v| v * v).sum::<f64>();
        let mut planner = FftPlanner::new();
        Ok(GaborConfig {
            hop,
            channels,
            signal_length,
            window,
            power_scale,
            forward: planner.plan_fft_forward(channels),
            inverse: planner.plan_fft_inverse(channels),
        })
    }

    pub fn hann(
        window_length: usize,
        hop: usize,
        channels: usize,
        signal_length: usize,
    ) -> Result<Self> {
        Self::new(&hann(window_length), hop, channels, signal_length)
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn frames(&self) -> usize {
        self.signal_length / self.hop
    }

    pub fn signal_length(&self) -> usize {
        self.signal_length
    }

    pub fn window_length(&self) -> usize {
        self.window.len()
    }

    /// The tight analysis/synthesis window.
    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// Number of stored (non-negative frequency) bins, `M/2 + 1`.
    /// Energy ratio between the base window and the tight window:
    /// spectrogram power measured with the base window is this many times
    /// the power in the Parseval representation (1536 for the default).
    pub fn power_scale(&self) -> f64 {
        self.power_scale
    }

    pub fn bins(&self) -> usize {
        self.channels / 2 + 1
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.bins(), self.frames())
    }
}

/// One-sided time-frequency coefficients, `bins x frames`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    values: Array2<Complex64>,
    channels: usize,
}

impl Spectrogram {
    pub fn zeros(cfg: &GaborConfig) -> Self {
        Spectrogram {
            values: Array2::zeros(cfg.shape()),
            channels: cfg.channels,
        }
    }

    pub fn from_values(values: Array2<Complex64>, cfg: &GaborConfig) -> Result<Self> {
        check_shape(values.dim(), cfg.shape())?;
        Ok(Spectrogram {
            values,
            channels: cfg.channels,
        })
    }

    pub fn values(&self) -> &Array2<Complex64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array2<Complex64> {
        &mut self.values
    }

    pub fn into_values(self) -> Array2<Complex64> {
        self.values
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Multiplicity of bin `m` in the two-sided spectrum.
    pub fn bin_multiplicity(&self, m: usize) -> f64 {
        bin_multiplicity(m, self.channels)
    }

    /// Entrywise magnitude.
    pub fn magnitude(&self) -> Array2<f64> {
        self.values.mapv(|z| z.norm())
    }

    /// Real inner product of the two-sided spectra.
    pub fn inner(&self, other: &Spectrogram) -> Result<f64> {
        check_shape(other.shape(), self.shape())?;
        let mut total = 0.0;
        for (m, (a, b)) in self
            .values
            .outer_iter()
            .zip(other.values.outer_iter())
            .enumerate()
        {
            let row: f64 = a.iter().zip(b.iter()).map(|(p, q)| (p.conj() * q).re).sum();
            total += self.bin_multiplicity(m) * row;
        }
        Ok(total)
    }

    /// Squared norm of the two-sided spectrum.
    pub fn energy(&self) -> f64 {
        self.values
            .outer_iter()
            .enumerate()
            .map(|(m, row)| {
                self.bin_multiplicity(m) * row.iter().map(|z| z.norm_sqr()).sum::<f64>()
            })
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.energy().sqrt()
    }

    /// Two-sided norm of `self - other`.
    pub fn distance(&self, other: &Spectrogram) -> Result<f64> {
        check_shape(other.shape(), self.shape())?;
        let mut total = 0.0;
        for (m, (a, b)) in self
            .values
            .outer_iter()
            .zip(other.values.outer_iter())
            .enumerate()
        {
            let row: f64 = a
                .iter()
                .zip(b.iter())
                .map(|(p, q)| (p - q).norm_sqr())
                .sum();
            total += self.bin_multiplicity(m) * row;
        }
        Ok(total.sqrt())
    }

    pub fn is_finite(&self) -> bool {
        self.values
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// `self + alpha * other`, elementwise.
    pub fn add_scaled(&self, alpha: f64, other: &Spectrogram) -> Result<Spectrogram> {
        check_shape(other.shape(), self.shape())?;
        let values = Zip::from(&self.values)
            .and(&other.values)
            .map_collect(|a, b| a + b * alpha);
        Ok(Spectrogram {
            values,
            channels: self.channels,
        })
    }
}

pub(crate) fn bin_multiplicity(m: usize, channels: usize) -> f64 {
    if m == 0 || (channels.is_multiple_of(2) && m == channels / 2) {
        1.0
    } else {
        2.0
    }
}

pub(crate) fn check_shape(actual: (usize, usize), expected: (usize, usize)) -> Result<()> {
    if actual == expected {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            expected: vec![expected.0, expected.1],
            actual: vec![actual.0, actual.1],
        })
    }
}

/// Analysis: windowed, hopped `M`-point DFT of `x`, one-sided.
pub fn dgt(x: &Signal, cfg: &GaborConfig) -> Result<Spectrogram> {
    dgt_slice(x.samples(), cfg)
}

pub fn dgt_slice(x: &[f64], cfg: &GaborConfig) -> Result<Spectrogram> {
    let t_len = cfg.signal_length;
    if x.len() != t_len {
        return Err(Error::LengthMismatch {
            expected: t_len,
            actual: x.len(),
        });
    }
    let (bins, frames) = cfg.shape();
    let mut values = Array2::zeros((bins, frames));
    let mut buf = vec![Complex64::default(); cfg.channels];
    let mut scratch = vec![Complex64::default(); cfg.forward.get_inplace_scratch_len()];
    for n in 0..frames {
        let start = n * cfg.hop;
        buf.fill(Complex64::default());
        for (t, (slot, g)) in buf.iter_mut().zip(&cfg.window).enumerate() {
            slot.re = x[(start + t) % t_len] * g;
        }
        cfg.forward.process_with_scratch(&mut buf, &mut scratch);
        values
            .column_mut(n)
            .assign(&ndarray::ArrayView1::from(&buf[..bins]));
    }
    Ok(Spectrogram {
        values,
        channels: cfg.channels,
    })
}

/// Synthesis: the adjoint of [`dgt`], which inverts it for a tight window.
pub fn idgt(s: &Spectrogram, cfg: &GaborConfig) -> Result<Signal> {
    // sample rate is not tracked by spectrograms; callers re-tag as needed
    Ok(Signal::from_trusted(idgt_samples(s, cfg)?, 1))
}

pub fn idgt_samples(s: &Spectrogram, cfg: &GaborConfig) -> Result<Vec<f64>> {
    check_shape(s.shape(), cfg.shape())?;
    if s.channels != cfg.channels {
        return Err(Error::InvalidArgument(format!(
            "spectrogram has {} channels, config has {}",
            s.channels, cfg.channels
        )));
    }
    let t_len = cfg.signal_length;
    let m_len = cfg.channels;
    let (bins, frames) = cfg.shape();
    let mut out = vec![0.0; t_len];
    let mut buf = vec![Complex64::default(); m_len];
    let mut scratch = vec![Complex64::default(); cfg.inverse.get_inplace_scratch_len()];
    for n in 0..frames {
        let col = s.values.column(n);
        buf.fill(Complex64::default());
        for m in 0..bins {
            buf[m] = col[m];
            if m > 0 && m_len - m != m {
                buf[m_len - m] = col[m].conj();
            }
        }
        // DC and Nyquist are real in any Hermitian spectrum
        buf[0].im = 0.0;
        if m_len.is_multiple_of(2) {
            buf[m_len / 2].im = 0.0;
        }
        cfg.inverse.process_with_scratch(&mut buf, &mut scratch);
        let start = n * cfg.hop;
        for (t, g) in cfg.window.iter().enumerate() {
            out[(start + t) % t_len] += buf[t].re * g;
        }
    }
    Ok(out)
}

/// Parabola weights `(m + 1)^2 / channels^2` for the first `rows` rows.
pub fn parabola_column(rows: usize, channels: usize) -> Vec<f64> {
    let denom = (channels * channels) as f64;
    (0..rows)
        .map(|m| ((m + 1) * (m + 1)) as f64 / denom)
        .collect()
}

/// Parabola weight map over the stored bins, constant along time.
pub fn parabola_weights(cfg: &GaborConfig) -> Array2<f64> {
    let (bins, frames) = cfg.shape();
    let column = parabola_column(bins, cfg.channels());
    Array2::from_shape_fn((bins, frames), |(m, _)| column[m])
}
