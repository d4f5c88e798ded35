//! Feature-map layer primitives for the magnitude U-Net.
//!
//! Feature maps are `channels x rows x cols` arrays. Kernel tensors use the
//! usual layouts: `[out, in, kh, kw]` for convolution and `[in, out, kh, kw]`
//! for transposed convolution.

use ndarray::{concatenate, s, Array1, Array3, Array4, Axis};

use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub output_padding: (usize, usize),
}

fn shape_err(expected: &[usize], actual: &[usize]) -> Error {
    Error::ShapeMismatch {
        expected: expected.to_vec(),
        actual: actual.to_vec(),
    }
}

pub fn conv_output_len(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Option<usize> {
    (input + 2 * padding)
        .checked_sub(kernel)
        .map(|v| v / stride + 1)
}

pub fn deconv_output_len(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Option<usize> {
    ((input.checked_sub(1)?) * stride + kernel + output_padding).checked_sub(2 * padding)
}

/// Strided, zero-padded 2-D convolution (cross-correlation).
pub fn conv2d(
    x: &Array3<f64>,
    weight: &Array4<f64>,
    bias: &Array1<f64>,
    geom: Geometry,
) -> Result<Array3<f64>> {
    let (cin, h, w) = x.dim();
    let (cout, wcin, kh, kw) = weight.dim();
    if wcin != cin {
        return Err(shape_err(&[cout, cin, kh, kw], weight.shape()));
    }
    if bias.len() != cout {
        return Err(shape_err(&[cout], bias.shape()));
    }
    let (sh, sw) = geom.stride;
    let (ph, pw) = geom.padding;
    let (oh, ow) = match (
        conv_output_len(h, kh, sh, ph),
        conv_output_len(w, kw, sw, pw),
    ) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::InvalidArgument(format!(
                "kernel {kh}x{kw} larger than padded input {h}x{w}"
            )))
        }
    };
    let mut out = Array3::zeros((cout, oh, ow));
    for o in 0..cout {
        out.slice_mut(s![o, .., ..]).fill(bias[o]);
        for c in 0..cin {
            let plane = x.slice(s![c, .., ..]);
            for p in 0..kh {
                for q in 0..kw {
                    let k = weight[(o, c, p, q)];
                    if k == 0.0 {
                        continue;
                    }
                    for i in 0..oh {
                        let Some(ii) = (i * sh + p).checked_sub(ph).filter(|&v| v < h) else {
                            continue;
                        };
                        let src = plane.row(ii);
                        let mut dst = out.slice_mut(s![o, i, ..]);
                        for j in 0..ow {
                            if let Some(jj) = (j * sw + q).checked_sub(pw).filter(|&v| v < w) {
                                dst[j] += k * src[jj];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Transposed convolution, the adjoint of [`conv2d`] with the same kernel.
pub fn deconv2d(
    x: &Array3<f64>,
    weight: &Array4<f64>,
    bias: &Array1<f64>,
    geom: Geometry,
) -> Result<Array3<f64>> {
    let (cin, h, w) = x.dim();
    let (wcin, cout, kh, kw) = weight.dim();
    if wcin != cin {
        return Err(shape_err(&[cin, cout, kh, kw], weight.shape()));
    }
    if bias.len() != cout {
        return Err(shape_err(&[cout], bias.shape()));
    }
    let (sh, sw) = geom.stride;
    let (ph, pw) = geom.padding;
    let (oph, opw) = geom.output_padding;
    let (oh, ow) = match (
        deconv_output_len(h, kh, sh, ph, oph),
        deconv_output_len(w, kw, sw, pw, opw),
    ) {
        (Some(a), Some(b)) if a > 0 && b > 0 => (a, b),
        _ => {
            return Err(Error::InvalidArgument(format!(
                "degenerate deconvolution of {h}x{w}"
            )))
        }
    };
    let mut out = Array3::zeros((cout, oh, ow));
    for o in 0..cout {
        out.slice_mut(s![o, .., ..]).fill(bias[o]);
    }
    for c in 0..cin {
        let plane = x.slice(s![c, .., ..]);
        for o in 0..cout {
            for p in 0..kh {
                for q in 0..kw {
                    let k = weight[(c, o, p, q)];
                    if k == 0.0 {
                        continue;
                    }
                    for i in 0..h {
                        let Some(ii) = (i * sh + p).checked_sub(ph).filter(|&v| v < oh) else {
                            continue;
                        };
                        let src = plane.row(i);
                        let mut dst = out.slice_mut(s![o, ii, ..]);
                        for j in 0..w {
                            if let Some(jj) = (j * sw + q).checked_sub(pw).filter(|&v| v < ow) {
                                dst[jj] += k * src[j];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Normalizes over all of `channels x rows x cols`, then applies a
/// per-channel affine map.
pub fn layer_norm(x: &Array3<f64>, gamma: &Array1<f64>, beta: &Array1<f64>) -> Result<Array3<f64>> {
    let c = x.dim().0;
    if gamma.len() != c {
        return Err(shape_err(&[c], gamma.shape()));
    }
    if beta.len() != c {
        return Err(shape_err(&[c], beta.shape()));
    }
    let n = x.len() as f64;
    let mean = x.sum() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    let mut out = x.mapv(|v| (v - mean) * inv);
    for (k, mut plane) in out.outer_iter_mut().enumerate() {
        let (g, b) = (gamma[k], beta[k]);
        plane.mapv_inplace(|v| v * g + b);
    }
    Ok(out)
}

pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

pub fn leaky_relu_inplace(x: &mut Array3<f64>, slope: f64) {
    x.mapv_inplace(|v| leaky_relu(v, slope));
}

/// Stacks feature maps along the channel axis.
pub fn concat(a: &Array3<f64>, b: &Array3<f64>) -> Result<Array3<f64>> {
    if a.dim().1 != b.dim().1 || a.dim().2 != b.dim().2 {
        return Err(shape_err(a.shape(), b.shape()));
    }
    concatenate(Axis(0), &[a.view(), b.view()]).map_err(|e| Error::InvalidArgument(e.to_string()))
}
