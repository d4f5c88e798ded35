//! A small encoder-decoder network over magnitude spectrograms.
//!
//! Encoder block `i`: stride-2 conv, layer norm, leaky ReLU. Decoder block
//! `i` (deepest first) takes the previous decoder output concatenated with the
//! matching encoder output, applies a stride-2 transposed conv and, except for
//! the final block, layer norm and leaky ReLU. The final output is clamped at
//! zero.
//!
//! Tensor names in a weight file:
//! `enc.{i}.conv.{weight,bias}`, `enc.{i}.norm.{weight,bias}`,
//! `dec.{i}.deconv.{weight,bias}`, `dec.{i}.norm.{weight,bias}` (no norm on the
//! last decoder block). Tensors named `meta.*` are ignored.

use ndarray::{Array1, Array2, Array3, Array4, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::layers::{concat, conv2d, deconv2d, layer_norm, leaky_relu_inplace, Geometry};
use super::weights::{Tensor, WeightFile};
use crate::error::{Error, Result};

pub const NEGATIVE_SLOPE: f64 = 0.01;
pub const KERNEL: (usize, usize) = (5, 7);
pub const STRIDE: (usize, usize) = (2, 2);

#[derive(Debug, Clone, PartialEq)]
pub struct UNetSpec {
    /// Output channels of each encoder block, shallowest first.
    pub channels: Vec<usize>,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub negative_slope: f64,
}

impl UNetSpec {
    pub fn new(channels: Vec<usize>) -> Result<Self> {
        let spec = UNetSpec {
            channels,
            kernel: KERNEL,
            stride: STRIDE,
            negative_slope: NEGATIVE_SLOPE,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `blocks` encoder blocks of `width` channels each.
    pub fn uniform(blocks: usize, width: usize) -> Result<Self> {
        Self::new(vec![width; blocks])
    }

    pub fn blocks(&self) -> usize {
        self.channels.len()
    }

    fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::Model(
                "U-Net needs at least one block with non-zero channels".into(),
            ));
        }
        if self.kernel.0.is_multiple_of(2) || self.kernel.1.is_multiple_of(2) {
            return Err(Error::Model(format!(
                "kernel {:?} must have odd sizes",
                self.kernel
            )));
        }
        Ok(())
    }

    fn geometry(&self) -> Geometry {
        Geometry {
            stride: self.stride,
            padding: ((self.kernel.0 - 1) / 2, (self.kernel.1 - 1) / 2),
            output_padding: (self.stride.0 - 1, self.stride.1 - 1),
        }
    }

    /// Input channels and output channels of decoder block `i`.
    fn decoder_io(&self, i: usize) -> (usize, usize) {
        let b = self.blocks();
        let input = if i == 0 {
            self.channels[b - 1]
        } else {
            2 * self.channels[b - 1 - i]
        };
        let output = if i == b - 1 {
            1
        } else {
            self.channels[b - 2 - i]
        };
        (input, output)
    }

    /// Every tensor the network needs, with its shape, in file order.
    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (kh, kw) = self.kernel;
        let mut out = Vec::new();
        let mut cin = 1;
        for (i, &c) in self.channels.iter().enumerate() {
            out.push((format!("enc.{i}.conv.weight"), vec![c, cin, kh, kw]));
            out.push((format!("enc.{i}.conv.bias"), vec![c]));
            out.push((format!("enc.{i}.norm.weight"), vec![c]));
            out.push((format!("enc.{i}.norm.bias"), vec![c]));
            cin = c;
        }
        for i in 0..self.blocks() {
            let (din, dout) = self.decoder_io(i);
            out.push((format!("dec.{i}.deconv.weight"), vec![din, dout, kh, kw]));
            out.push((format!("dec.{i}.deconv.bias"), vec![dout]));
            if i + 1 < self.blocks() {
                out.push((format!("dec.{i}.norm.weight"), vec![dout]));
                out.push((format!("dec.{i}.norm.bias"), vec![dout]));
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensor_shapes()
            .iter()
            .map(|(_, d)| d.iter().product::<usize>())
            .sum()
    }
}

#[derive(Debug, Clone)]
struct Norm {
    gamma: Array1<f64>,
    beta: Array1<f64>,
}

#[derive(Debug, Clone)]
struct Block {
    weight: Array4<f64>,
    bias: Array1<f64>,
    norm: Option<Norm>,
}

#[derive(Debug, Clone)]
pub struct UNet {
    spec: UNetSpec,
    encoder: Vec<Block>,
    decoder: Vec<Block>,
}

impl UNet {
    pub fn spec(&self) -> &UNetSpec {
        &self.spec
    }

    /// Random weights (scaled normal kernels, unit norm gain, zero biases).
    pub fn random(spec: UNetSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut file = WeightFile::default();
        for (name, dims) in spec.tensor_shapes() {
            let n: usize = dims.iter().product();
            let values: Vec<f32> = if name.ends_with("norm.weight") {
                vec![1.0; n]
            } else if name.ends_with(".weight") {
                let fan_in = (dims[1] * dims[2] * dims[3]) as f64;
                let std = (2.0 / fan_in).sqrt();
                (0..n)
                    .map(|_| (std * rng.sample::<f64, _>(StandardNormal)) as f32)
                    .collect()
            } else {
                vec![0.0; n]
            };
            file.push(Tensor::new(name, dims, values)?);
        }
        Self::from_weights_with_spec(&file, spec)
    }

    /// Builds the network from a weight file, inferring depth, widths and
    /// kernel size from the encoder tensors.
    pub fn from_weights(file: &WeightFile) -> Result<Self> {
        let mut channels = Vec::new();
        let mut kernel = None;
        while let Some(t) = file.get(&format!("enc.{}.conv.weight", channels.len())) {
            if t.dims.len() != 4 {
                return Err(Error::Model(format!(
                    "{} must have rank 4, has dims {:?}",
                    t.name, t.dims
                )));
            }
            kernel.get_or_insert((t.dims[2], t.dims[3]));
            channels.push(t.dims[0]);
        }
        let Some(kernel) = kernel else {
            return Err(Error::Model(
                "no encoder tensors (enc.0.conv.weight) in weight file".into(),
            ));
        };
        let spec = UNetSpec {
            channels,
            kernel,
            stride: STRIDE,
            negative_slope: NEGATIVE_SLOPE,
        };
        spec.validate()?;
        Self::from_weights_with_spec(file, spec)
    }

    /// Builds the network from a weight file that must match `spec` exactly.
    pub fn from_weights_with_spec(file: &WeightFile, spec: UNetSpec) -> Result<Self> {
        spec.validate()?;
        let expected = spec.tensor_shapes();
        for t in &file.tensors {
            if t.name.starts_with("meta.") {
                continue;
            }
            if !expected.iter().any(|(n, _)| *n == t.name) {
                return Err(Error::Model(format!("unexpected tensor {}", t.name)));
            }
        }
        let fetch = |name: &str, dims: &[usize]| -> Result<Vec<f64>> {
            let t = file
                .get(name)
                .ok_or_else(|| Error::Model(format!("missing tensor {name}")))?;
            if t.dims != dims {
                return Err(Error::Model(format!(
                    "tensor {name} has dims {:?}, expected {dims:?}",
                    t.dims
                )));
            }
            if t.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Model(format!("tensor {name} has non-finite values")));
            }
            Ok(t.values.iter().map(|&v| f64::from(v)).collect())
        };
        let dims_of = |name: &str| {
            expected
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, d)| d.clone())
                .expect("name comes from tensor_shapes")
        };
        let block = |prefix: &str, conv: &str, with_norm: bool| -> Result<Block> {
            let wname = format!("{prefix}.{conv}.weight");
            let wd = dims_of(&wname);
            let weight = Array4::from_shape_vec((wd[0], wd[1], wd[2], wd[3]), fetch(&wname, &wd)?)
                .map_err(|e| Error::Model(e.to_string()))?;
            let bname = format!("{prefix}.{conv}.bias");
            let bias = Array1::from(fetch(&bname, &dims_of(&bname))?);
            let norm = if with_norm {
                let g = format!("{prefix}.norm.weight");
                let b = format!("{prefix}.norm.bias");
                Some(Norm {
                    gamma: Array1::from(fetch(&g, &dims_of(&g))?),
                    beta: Array1::from(fetch(&b, &dims_of(&b))?),
                })
            } else {
                None
            };
            Ok(Block { weight, bias, norm })
        };
        let b = spec.blocks();
        let encoder = (0..b)
            .map(|i| block(&format!("enc.{i}"), "conv", true))
            .collect::<Result<Vec<_>>>()?;
        let decoder = (0..b)
            .map(|i| block(&format!("dec.{i}"), "deconv", i + 1 < b))
            .collect::<Result<Vec<_>>>()?;
        Ok(UNet {
            spec,
            encoder,
            decoder,
        })
    }

    /// Serializes the network into the weight container.
    pub fn to_weights(&self) -> Result<WeightFile> {
        let mut file = WeightFile::default();
        let f32s = |a: &mut dyn Iterator<Item = &f64>| a.map(|&v| v as f32).collect::<Vec<_>>();
        for (prefix, conv, blocks) in [
            ("enc", "conv", &self.encoder),
            ("dec", "deconv", &self.decoder),
        ] {
            for (i, blk) in blocks.iter().enumerate() {
                file.push(Tensor::new(
                    format!("{prefix}.{i}.{conv}.weight"),
                    blk.weight.shape().to_vec(),
                    f32s(&mut blk.weight.iter()),
                )?);
                file.push(Tensor::new(
                    format!("{prefix}.{i}.{conv}.bias"),
                    vec![blk.bias.len()],
                    f32s(&mut blk.bias.iter()),
                )?);
                if let Some(n) = &blk.norm {
                    file.push(Tensor::new(
                        format!("{prefix}.{i}.norm.weight"),
                        vec![n.gamma.len()],
                        f32s(&mut n.gamma.iter()),
                    )?);
                    file.push(Tensor::new(
                        format!("{prefix}.{i}.norm.bias"),
                        vec![n.beta.len()],
                        f32s(&mut n.beta.iter()),
                    )?);
                }
            }
        }
        debug_assert_eq!(file.tensors.len(), self.spec.tensor_shapes().len());
        Ok(file)
    }

    /// Checks that a `rows x cols` map survives every halving exactly.
    pub fn check_input(&self, rows: usize, cols: usize) -> Result<()> {
        let factor = 1usize << self.spec.blocks();
        if rows == 0 || cols == 0 || !rows.is_multiple_of(factor) || !cols.is_multiple_of(factor) {
            return Err(Error::Model(format!(
                "input {rows}x{cols} must be a non-empty multiple of {factor} in both dimensions"
            )));
        }
        Ok(())
    }

    /// Forward pass returning the clamped output.
    pub fn forward(&self, input: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_trace(input)?.1)
    }

    /// Forward pass returning every block output (encoder blocks, then decoder
    /// blocks; the last entry is the raw final deconvolution) and the clamped
    /// output.
    pub fn forward_trace(&self, input: &Array2<f64>) -> Result<(Vec<Array3<f64>>, Array2<f64>)> {
        let (rows, cols) = input.dim();
        self.check_input(rows, cols)?;
        let geom = self.spec.geometry();
        let slope = self.spec.negative_slope;
        let apply = |blk: &Block, x: Array3<f64>| -> Result<Array3<f64>> {
            let mut y = match blk.norm {
                Some(ref n) => layer_norm(&x, &n.gamma, &n.beta)?,
                None => return Ok(x),
            };
            leaky_relu_inplace(&mut y, slope);
            Ok(y)
        };

        let mut activations = Vec::with_capacity(2 * self.spec.blocks());
        let mut x = input.clone().insert_axis(Axis(0));
        for blk in &self.encoder {
            x = apply(blk, conv2d(&x, &blk.weight, &blk.bias, geom)?)?;
            activations.push(x.clone());
        }
        let b = self.spec.blocks();
        for (i, blk) in self.decoder.iter().enumerate() {
            let input = if i == 0 {
                activations[b - 1].clone()
            } else {
                concat(
                    activations.last().expect("decoder output"),
                    &activations[b - 1 - i],
                )?
            };
            let y = apply(blk, deconv2d(&input, &blk.weight, &blk.bias, geom)?)?;
            activations.push(y);
        }
        let last = activations.last().expect("at least one block");
        debug_assert_eq!(last.dim(), (1, rows, cols));
        let output = last.index_axis(Axis(0), 0).mapv(|v| v.max(0.0));
        Ok((activations, output))
    }
}
