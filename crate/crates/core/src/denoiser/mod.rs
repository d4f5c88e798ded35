//! Magnitude estimators that drive the estimator-based thresholding.

pub mod layers;
pub mod unet;
pub mod weights;

use std::path::Path;

use ndarray::{s, Array2, Array3};

use crate::error::{Error, Result};
use crate::gabor::{dgt, GaborConfig};
use crate::signal::Signal;

pub use unet::{UNet, UNetSpec};
pub use weights::{Tensor, WeightFile};

/// Maps a magnitude spectrogram to an estimate of the clean magnitude
/// spectrogram of the same shape.
pub trait MagnitudeEstimator: Send + Sync {
    fn estimate(&self, magnitude: &Array2<f64>) -> Result<Array2<f64>>;

    fn name(&self) -> &str;
}

/// Runs `estimator` and enforces its output contract: same shape, finite,
/// non-negative.
pub fn checked_estimate(
    estimator: &dyn MagnitudeEstimator,
    magnitude: &Array2<f64>,
) -> Result<Array2<f64>> {
    let out = estimator.estimate(magnitude)?;
    if out.dim() != magnitude.dim() {
        return Err(Error::ShapeMismatch {
            expected: magnitude.shape().to_vec(),
            actual: out.shape().to_vec(),
        });
    }
    if out.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Model(format!(
            "estimator {} produced a negative or non-finite magnitude",
            estimator.name()
        )));
    }
    Ok(out)
}

/// Returns its input.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityEstimator;

pub fn identity_estimator() -> IdentityEstimator {
    IdentityEstimator
}

impl MagnitudeEstimator for IdentityEstimator {
    fn estimate(&self, magnitude: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(magnitude.clone())
    }

    fn name(&self) -> &str {
        "identity"
    }
}

/// Ignores its input and returns the magnitude spectrogram of a known clean
/// signal. Evaluation only.
#[derive(Debug, Clone)]
pub struct OracleEstimator {
    magnitude: Array2<f64>,
}

pub fn oracle_estimator(truth: &Signal, cfg: &GaborConfig) -> Result<OracleEstimator> {
    Ok(OracleEstimator {
        magnitude: dgt(truth, cfg)?.magnitude(),
    })
}

impl OracleEstimator {
    pub fn magnitude(&self) -> &Array2<f64> {
        &self.magnitude
    }
}

impl MagnitudeEstimator for OracleEstimator {
    fn estimate(&self, magnitude: &Array2<f64>) -> Result<Array2<f64>> {
        if magnitude.dim() != self.magnitude.dim() {
            return Err(Error::ShapeMismatch {
                expected: self.magnitude.shape().to_vec(),
                actual: magnitude.shape().to_vec(),
            });
        }
        Ok(self.magnitude.clone())
    }

    fn name(&self) -> &str {
        "oracle"
    }
}

/// A U-Net applied to the spectrogram without its top (Nyquist) row; the
/// output is re-padded with a zero row.
#[derive(Debug, Clone)]
pub struct UNetEstimator {
    net: UNet,
}

impl UNetEstimator {
    pub fn new(net: UNet) -> Self {
        UNetEstimator { net }
    }

    pub fn net(&self) -> &UNet {
        &self.net
    }
}

pub fn load_unet(path: impl AsRef<Path>) -> Result<UNetEstimator> {
    Ok(UNetEstimator::new(UNet::from_weights(&WeightFile::read(
        path,
    )?)?))
}

impl MagnitudeEstimator for UNetEstimator {
    fn estimate(&self, magnitude: &Array2<f64>) -> Result<Array2<f64>> {
        let (rows, cols) = magnitude.dim();
        if rows < 2 {
            return Err(Error::Model(format!(
                "spectrogram with {rows} rows has no Nyquist row to strip"
            )));
        }
        let inner = magnitude.slice(s![..rows - 1, ..]).to_owned();
        let estimate = self.net.forward(&inner)?;
        let mut out = Array2::zeros((rows, cols));
        out.slice_mut(s![..rows - 1, ..]).assign(&estimate);
        Ok(out)
    }

    fn name(&self) -> &str {
        "unet"
    }
}

/// Reference activations recorded by an exporter for one fixed input.
#[derive(Debug, Clone)]
pub struct GoldenVectors {
    pub input: Array2<f64>,
    pub layers: Vec<Array3<f64>>,
    pub output: Array2<f64>,
}

/// Per-tensor worst relative deviation of a network from golden vectors.
#[derive(Debug, Clone)]
pub struct GoldenReport {
    pub layer_errors: Vec<f64>,
    pub output_error: f64,
}

impl GoldenReport {
    pub fn max_error(&self) -> f64 {
        self.layer_errors
            .iter()
            .copied()
            .fold(self.output_error, f64::max)
    }
}

fn tensor_to_f64(t: &Tensor) -> Vec<f64> {
    t.values.iter().map(|&v| f64::from(v)).collect()
}

fn as_map(t: &Tensor) -> Result<Array2<f64>> {
    let dims: Vec<usize> = match t.dims.as_slice() {
        [1, r, c] | [r, c] => vec![*r, *c],
        _ => {
            return Err(Error::Model(format!(
                "{} must be a single 2-D map, has dims {:?}",
                t.name, t.dims
            )))
        }
    };
    Array2::from_shape_vec((dims[0], dims[1]), tensor_to_f64(t))
        .map_err(|e| Error::Model(e.to_string()))
}

impl GoldenVectors {
    pub fn from_file(file: &WeightFile) -> Result<Self> {
        let get = |name: &str| {
            file.get(name)
                .ok_or_else(|| Error::Model(format!("golden file lacks {name}")))
        };
        let input = as_map(get("test.input")?)?;
        let output = as_map(get("test.output")?)?;
        let mut layers = Vec::new();
        while let Some(t) = file.get(&format!("test.layer.{}", layers.len())) {
            let [c, r, w] = t.dims[..] else {
                return Err(Error::Model(format!(
                    "{} must have rank 3, has dims {:?}",
                    t.name, t.dims
                )));
            };
            layers.push(
                Array3::from_shape_vec((c, r, w), tensor_to_f64(t))
                    .map_err(|e| Error::Model(e.to_string()))?,
            );
        }
        Ok(GoldenVectors {
            input,
            layers,
            output,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_file(&WeightFile::read(path)?)
    }

    /// Records `net`'s activations on `input`.
    pub fn record(net: &UNet, input: Array2<f64>) -> Result<Self> {
        let (layers, output) = net.forward_trace(&input)?;
        Ok(GoldenVectors {
            input,
            layers,
            output,
        })
    }

    pub fn to_file(&self) -> Result<WeightFile> {
        let f32s = |it: &mut dyn Iterator<Item = &f64>| it.map(|&v| v as f32).collect::<Vec<_>>();
        let mut file = WeightFile::default();
        file.push(Tensor::new(
            "test.input",
            self.input.shape().to_vec(),
            f32s(&mut self.input.iter()),
        )?);
        for (k, layer) in self.layers.iter().enumerate() {
            file.push(Tensor::new(
                format!("test.layer.{k}"),
                layer.shape().to_vec(),
                f32s(&mut layer.iter()),
            )?);
        }
        file.push(Tensor::new(
            "test.output",
            self.output.shape().to_vec(),
            f32s(&mut self.output.iter()),
        )?);
        Ok(file)
    }

    /// Runs `net` on the recorded input and measures each tensor's error as
    /// `max|ours - golden| / max|golden|`.
    pub fn compare(&self, net: &UNet) -> Result<GoldenReport> {
        let (layers, output) = net.forward_trace(&self.input)?;
        if layers.len() != self.layers.len() {
            return Err(Error::Model(format!(
                "network has {} blocks, golden file records {}",
                layers.len(),
                self.layers.len()
            )));
        }
        let rel = |ours: &mut dyn Iterator<Item = &f64>, gold: &mut dyn Iterator<Item = &f64>| {
            let mut diff = 0.0f64;
            let mut scale = 0.0f64;
            for (a, b) in ours.zip(gold) {
                diff = diff.max((a - b).abs());
                scale = scale.max(b.abs());
            }
            if scale == 0.0 {
                diff
            } else {
                diff / scale
            }
        };
        let mut layer_errors = Vec::new();
        for (ours, gold) in layers.iter().zip(&self.layers) {
            if ours.dim() != gold.dim() {
                return Err(Error::ShapeMismatch {
                    expected: gold.shape().to_vec(),
                    actual: ours.shape().to_vec(),
                });
            }
            layer_errors.push(rel(&mut ours.iter(), &mut gold.iter()));
        }
        if output.dim() != self.output.dim() {
            return Err(Error::ShapeMismatch {
                expected: self.output.shape().to_vec(),
                actual: output.shape().to_vec(),
            });
        }
        let output_error = rel(&mut output.iter(), &mut self.output.iter());
        Ok(GoldenReport {
            layer_errors,
            output_error,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gabor::Spectrogram;
    use crate::operators::{applade_threshold, ThresholdParams};
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fuzz(shape: (usize, usize), seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn(shape, |_| rng.random_range(0.0..5.0))
    }

    #[test]
    fn identity_passthrough() {
        let m = fuzz((5, 4), 1);
        assert_eq!(identity_estimator().estimate(&m).unwrap(), m);
        let z = Array2::zeros((3, 3));
        assert_eq!(identity_estimator().estimate(&z).unwrap(), z);
    }

    #[test]
    fn identity_plugged_into_applade_matches_closed_form() {
        let cfg = GaborConfig::hann(8, 2, 8, 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = Spectrogram::from_values(
            Array2::from_shape_fn(cfg.shape(), |_| {
                Complex64::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0))
            }),
            &cfg,
        )
        .unwrap();
        let params = ThresholdParams {
            lambda: 0.8,
            epsilon: 1e-6,
            ..Default::default()
        };
        let est = checked_estimate(&identity_estimator(), &z.magnitude()).unwrap();
        let out = applade_threshold(&z, &est, &params).unwrap();
        for (o, v) in out.values().iter().zip(z.values()) {
            let d = v.norm() + 1e-6;
            let gain = (1.0 - 0.8 / (d * d)).max(0.0);
            assert!((o - v * gain).norm() < 1e-12);
        }
    }

    #[test]
    fn oracle_ignores_input() {
        let cfg = GaborConfig::hann(16, 4, 16, 64).unwrap();
        let zero = Signal::new(vec![0.0; 64], 16000).unwrap();
        let o = oracle_estimator(&zero, &cfg).unwrap();
        assert!(o
            .estimate(&fuzz(cfg.shape(), 2))
            .unwrap()
            .iter()
            .all(|v| *v == 0.0));

        let truth = Signal::new((0..64).map(|t| (t as f64 * 0.3).sin()).collect(), 16000).unwrap();
        let o = oracle_estimator(&truth, &cfg).unwrap();
        let a = o.estimate(&fuzz(cfg.shape(), 3)).unwrap();
        let b = o.estimate(&fuzz(cfg.shape(), 4)).unwrap();
        assert_eq!(a, b);
        assert!(o.estimate(&Array2::zeros((2, 2))).is_err());
        assert!(oracle_estimator(&Signal::new(vec![0.0; 10], 16000).unwrap(), &cfg).is_err());
    }

    #[test]
    fn oracle_passes_strong_bins() {
        // a bin-centred sine: its bin carries far more power than lambda * w
        let cfg = GaborConfig::hann(64, 16, 64, 1024).unwrap();
        let truth = Signal::new(
            (0..1024)
                .map(|t| (2.0 * std::f64::consts::PI * 8.0 * t as f64 / 64.0).sin())
                .collect(),
            16000,
        )
        .unwrap();
        let oracle = oracle_estimator(&truth, &cfg).unwrap();
        let f = oracle.magnitude();
        let peak = f[(8, 5)];
        let lambda = 0.01;
        let eps = 1e-6;
        let gain_peak = (1.0 - lambda / ((peak + eps) * (peak + eps))).max(0.0);
        let gain_off = (1.0 - lambda / ((f[(25, 5)] + eps) * (f[(25, 5)] + eps))).max(0.0);
        assert!(peak * peak > 100.0 * lambda);
        assert!(gain_peak > 0.99);
        assert_eq!(gain_off, 0.0);
    }

    #[test]
    fn unet_estimator_pads_nyquist_row() {
        let net = UNet::random(UNetSpec::uniform(3, 2).unwrap(), 7).unwrap();
        let est = UNetEstimator::new(net);
        let mag = fuzz((513, 64), 5);
        let out = checked_estimate(&est, &mag).unwrap();
        assert_eq!(out.dim(), (513, 64));
        assert!(out.row(512).iter().all(|v| *v == 0.0));
        assert!(est.estimate(&fuzz((512, 64), 5)).is_err());
    }

    #[test]
    fn estimators_respect_contract_on_fuzz() {
        let cfg = GaborConfig::hann(64, 16, 64, 512).unwrap();
        let truth =
            Signal::new((0..512).map(|t| (t as f64 * 0.05).cos()).collect(), 16000).unwrap();
        let net = UNet::random(UNetSpec::uniform(3, 3).unwrap(), 11).unwrap();
        let estimators: Vec<Box<dyn MagnitudeEstimator>> = vec![
            Box::new(identity_estimator()),
            Box::new(oracle_estimator(&truth, &cfg).unwrap()),
            Box::new(UNetEstimator::new(net)),
        ];
        for seed in 0..5 {
            let mag = fuzz(cfg.shape(), seed);
            for e in &estimators {
                let out = checked_estimate(e.as_ref(), &mag).unwrap();
                assert_eq!(out.dim(), mag.dim());
            }
        }
    }

    struct Negative;
    impl MagnitudeEstimator for Negative {
        fn estimate(&self, m: &Array2<f64>) -> Result<Array2<f64>> {
            Ok(m.mapv(|_| -1.0))
        }
        fn name(&self) -> &str {
            "negative"
        }
    }

    #[test]
    fn contract_violations_are_errors() {
        assert!(checked_estimate(&Negative, &Array2::zeros((2, 2))).is_err());
    }

    #[test]
    fn golden_round_trip() {
        let net = UNet::random(UNetSpec::uniform(3, 2).unwrap(), 13).unwrap();
        let input = fuzz((64, 16), 6);
        let golden = GoldenVectors::record(&net, input).unwrap();
        let file = WeightFile::from_bytes(&golden.to_file().unwrap().to_bytes().unwrap()).unwrap();
        let back = GoldenVectors::from_file(&file).unwrap();
        assert_eq!(back.layers.len(), 6);
        let report = back.compare(&net).unwrap();
        // only f32 storage rounding separates the two
        assert!(report.max_error() < 1e-6, "{report:?}");

        let other = UNet::random(UNetSpec::uniform(3, 2).unwrap(), 14).unwrap();
        assert!(back.compare(&other).unwrap().max_error() > 1e-3);
    }
}
