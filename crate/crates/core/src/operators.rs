//! Projection onto the clipping-consistent set and the thresholding operators
//! used for the spectral update.

use ndarray::{Array2, Zip};

use crate::error::{Error, Result};
use crate::gabor::{check_shape, Spectrogram};
use crate::signal::{ClipMask, Signal};

/// Slope of the clip-ratio rule for the APPLADE strength.
pub const LAMBDA_PER_CLIP_RATIO: f64 = 30.0;

/// Default stabilizer added to estimated magnitudes.
pub const DEFAULT_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdParams {
    pub rho: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub weights: Option<Array2<f64>>,
}

impl Default for ThresholdParams {
    fn default() -> Self {
        ThresholdParams {
            rho: 1.0,
            lambda: 0.0,
            epsilon: DEFAULT_EPSILON,
            weights: None,
        }
    }
}

impl ThresholdParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "rho must be positive, got {}",
                self.rho
            )));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if let Some(w) = &self.weights {
            if w.iter().any(|v| !(*v > 0.0 && *v <= 1.0)) {
                return Err(Error::InvalidArgument("weights must lie in (0, 1]".into()));
            }
        }
        Ok(())
    }
}

/// Nearest point of the consistent set: pinned to `y` on R, at least `tau`
/// on H, at most `-tau` on L.
pub fn project_gamma(x: &Signal, mask: &ClipMask, y: &Signal) -> Result<Signal> {
    let mut out = x.samples().to_vec();
    project_in_place(&mut out, mask, y.samples())?;
    Ok(Signal::from_trusted(out, x.sample_rate()))
}

pub(crate) fn project_in_place(x: &mut [f64], mask: &ClipMask, y: &[f64]) -> Result<()> {
    for len in [x.len(), y.len()] {
        if len != mask.len() {
            return Err(Error::LengthMismatch {
                expected: mask.len(),
                actual: len,
            });
        }
    }
    let tau = mask.tau();
    for &t in mask.reliable() {
        x[t] = y[t];
    }
    for &t in mask.high() {
        x[t] = x[t].max(tau);
    }
    for &t in mask.low() {
        x[t] = x[t].min(-tau);
    }
    Ok(())
}

/// `(1 - threshold/|z|)_+`, with 0 for `z == 0`.
#[inline]
fn shrink_factor(magnitude: f64, threshold: f64) -> f64 {
    if magnitude <= threshold || magnitude == 0.0 {
        0.0
    } else {
        1.0 - threshold / magnitude
    }
}

/// Complex soft thresholding: the prox of `threshold * ||.||_1`.
pub fn soft_threshold(z: &Spectrogram, threshold: f64) -> Spectrogram {
    debug_assert!(threshold >= 0.0);
    let mut out = z.clone();
    out.values_mut()
        .mapv_inplace(|v| v * shrink_factor(v.norm(), threshold));
    out
}

/// Soft thresholding with per-bin threshold `base * weights[m, n]`.
pub fn weighted_soft_threshold(
    z: &Spectrogram,
    base: f64,
    weights: &Array2<f64>,
) -> Result<Spectrogram> {
    check_shape(weights.dim(), z.shape())?;
    if base.is_nan() || base < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "threshold must be non-negative, got {base}"
        )));
    }
    let mut out = z.clone();
    Zip::from(out.values_mut())
        .and(weights)
        .for_each(|v, &w| *v *= shrink_factor(v.norm(), base * w));
    Ok(out)
}

/// Estimator-driven thresholding: each bin is scaled by
/// `(1 - lambda * w / (F + eps)^2)_+` where `F` is the estimated clean
/// magnitude.
pub fn applade_threshold(
    z: &Spectrogram,
    estimate: &Array2<f64>,
    params: &ThresholdParams,
) -> Result<Spectrogram> {
    check_shape(estimate.dim(), z.shape())?;
    params.validate()?;
    if let Some(w) = &params.weights {
        check_shape(w.dim(), z.shape())?;
    }
    if estimate.iter().any(|f| !f.is_finite() || *f < 0.0) {
        return Err(Error::InvalidArgument(
            "magnitude estimate must be finite and non-negative".into(),
        ));
    }
    let lambda = params.lambda;
    let eps = params.epsilon;
    let gain = |f: f64, w: f64| {
        let d = f + eps;
        (1.0 - lambda * w / (d * d)).max(0.0)
    };
    let mut out = z.clone();
    match &params.weights {
        Some(w) => Zip::from(out.values_mut())
            .and(estimate)
            .and(w)
            .for_each(|v, &f, &w| *v *= gain(f, w)),
        None => Zip::from(out.values_mut())
            .and(estimate)
            .for_each(|v, &f| *v *= gain(f, 1.0)),
    }
    Ok(out)
}

/// `lambda = 30 p`.
pub fn lambda_from_clip_ratio(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!(
            "clip ratio must be in [0, 1], got {p}"
        )));
    }
    Ok(LAMBDA_PER_CLIP_RATIO * p)
}
