//! Direct (loop-nest) convolution kernels over channel-first tensors with
//! one to three spatial/temporal axes. All kernels are cross-correlations.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{shape, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaddingMode {
    #[default]
    Zero,
    /// Wrap-around padding.
    Circular,
}

/// Kernel `(out, in, k...)`, per-output-channel bias, and per-axis stride and
/// padding. Single-element stride/padding vectors apply to every axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvParams {
    pub kernel: Tensor,
    pub bias: Vec<f64>,
    #[serde(default = "one")]
    pub stride: Vec<usize>,
    #[serde(default = "zero")]
    pub padding: Vec<usize>,
    #[serde(default)]
    pub padding_mode: PaddingMode,
}

fn one() -> Vec<usize> {
    vec![1]
}

fn zero() -> Vec<usize> {
    vec![0]
}

impl ConvParams {
    pub fn new(kernel: Tensor, bias: Vec<f64>, stride: Vec<usize>, padding: Vec<usize>) -> Self {
        Self {
            kernel,
            bias,
            stride,
            padding,
            padding_mode: PaddingMode::Zero,
        }
    }

    pub fn with_padding_mode(mut self, mode: PaddingMode) -> Self {
        self.padding_mode = mode;
        self
    }

    /// Number of output channels.
    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape().get(1).copied().unwrap_or(0)
    }

    /// Kernel extents along the spatial/temporal axes.
    pub fn extents(&self) -> &[usize] {
        &self.kernel.shape()[2..]
    }

    fn per_axis(v: &[usize], axes: usize, what: &str) -> Result<Vec<usize>> {
        match v.len() {
            1 => Ok(vec![v[0]; axes]),
            n if n == axes => Ok(v.to_vec()),
            n => Err(shape(format!("{what} has {n} entries for {axes} axes"))),
        }
    }

    fn check(&self, in_channels: usize, axes: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        let ks = self.kernel.shape();
        if ks.len() != axes + 2 {
            return Err(shape(format!(
                "kernel rank {} does not fit {axes} spatial axes",
                ks.len()
            )));
        }
        if ks[1] != in_channels {
            return Err(shape(format!(
                "kernel expects {} input channels, input has {in_channels}",
                ks[1]
            )));
        }
        if self.bias.len() != ks[0] {
            return Err(shape(format!(
                "bias has {} entries for {} output channels",
                self.bias.len(),
                ks[0]
            )));
        }
        let stride = Self::per_axis(&self.stride, axes, "stride")?;
        if stride.contains(&0) {
            return Err(shape("stride must be positive"));
        }
        let padding = Self::per_axis(&self.padding, axes, "padding")?;
        Ok((stride, padding))
    }
}

/// Output extent of a strided, padded correlation along one axis.
pub fn conv_output_len(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if kernel == 0 || stride == 0 || padded < kernel {
        None
    } else {
        Some((padded - kernel) / stride + 1)
    }
}

/// Output extent of a transposed convolution along one axis.
pub fn transposed_output_len(
    input: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Option<usize> {
    (stride * (input - 1) + kernel).checked_sub(2 * pad).filter(|&n| n > 0)
}

fn pad3(v: &[usize], fill: usize) -> [usize; 3] {
    let mut out = [fill; 3];
    let off = 3 - v.len();
    out[off..].copy_from_slice(v);
    out
}

/// Cross-correlation of a `(C, spatial...)` tensor (rank 2 to 4) with bias.
pub fn convolve(input: &Tensor, params: &ConvParams) -> Result<Tensor> {
    let axes = input.rank().checked_sub(1).filter(|a| (1..=3).contains(a));
    let Some(axes) = axes else {
        return Err(shape(format!(
            "convolution input needs rank 2 to 4, got {}",
            input.rank()
        )));
    };
    let in_c = input.shape()[0];
    let (stride, padding) = params.check(in_c, axes)?;
    let out_c = params.out_channels();

    let ins = pad3(&input.shape()[1..], 1);
    let ks = pad3(params.extents(), 1);
    let st = pad3(&stride, 1);
    let pd = pad3(&padding, 0);
    let mut outs = [0usize; 3];
    for a in 0..3 {
        outs[a] = conv_output_len(ins[a], ks[a], st[a], pd[a]).ok_or_else(|| {
            shape(format!(
                "kernel extent {} does not fit input extent {} with padding {}",
                ks[a], ins[a], pd[a]
            ))
        })?;
    }

    let circular = params.padding_mode == PaddingMode::Circular;
    let x = input.data();
    let k = params.kernel.data();
    let in_plane = ins[0] * ins[1] * ins[2];
    let k_plane = ks[0] * ks[1] * ks[2];
    let mut out = Vec::with_capacity(out_c * outs[0] * outs[1] * outs[2]);

    let resolve = |pos: isize, n: usize| -> Option<usize> {
        if pos >= 0 && (pos as usize) < n {
            Some(pos as usize)
        } else if circular {
            Some(pos.rem_euclid(n as isize) as usize)
        } else {
            None
        }
    };

    for o in 0..out_c {
        for oz in 0..outs[0] {
            for oy in 0..outs[1] {
                for ox in 0..outs[2] {
                    let mut acc = params.bias[o];
                    for c in 0..in_c {
                        let kbase = (o * in_c + c) * k_plane;
                        let xbase = c * in_plane;
                        for kz in 0..ks[0] {
                            let pz = (oz * st[0] + kz) as isize - pd[0] as isize;
                            let Some(z) = resolve(pz, ins[0]) else { continue };
                            for ky in 0..ks[1] {
                                let py = (oy * st[1] + ky) as isize - pd[1] as isize;
                                let Some(y) = resolve(py, ins[1]) else { continue };
                                for kx in 0..ks[2] {
                                    let px = (ox * st[2] + kx) as isize - pd[2] as isize;
                                    let Some(xx) = resolve(px, ins[2]) else { continue };
                                    acc += k[kbase + (kz * ks[1] + ky) * ks[2] + kx]
                                        * x[xbase + (z * ins[1] + y) * ins[2] + xx];
                                }
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }

    let mut shape_out = vec![out_c];
    shape_out.extend_from_slice(&outs[3 - axes..]);
    Tensor::new(shape_out, out)
}

/// Transposed 1D convolution of a `(C, L)` tensor with kernel `(out, in, k)`.
pub fn transposed_convolve(input: &Tensor, params: &ConvParams) -> Result<Tensor> {
    if input.rank() != 2 {
        return Err(shape(format!(
            "transposed convolution input needs rank 2, got {}",
            input.rank()
        )));
    }
    let (in_c, len) = (input.shape()[0], input.shape()[1]);
    let (stride, padding) = params.check(in_c, 1)?;
    let (stride, pad) = (stride[0], padding[0]);
    let k = params.extents()[0];
    let out_c = params.out_channels();
    let out_len = transposed_output_len(len, k, stride, pad)
        .ok_or_else(|| shape("padding consumes the whole transposed output"))?;

    let kd = params.kernel.data();
    let x = input.data();
    let mut out = vec![0.0; out_c * out_len];
    for o in 0..out_c {
        out[o * out_len..(o + 1) * out_len].fill(params.bias[o]);
        for c in 0..in_c {
            for i in 0..len {
                let v = x[c * len + i];
                for j in 0..k {
                    let pos = (i * stride + j) as isize - pad as isize;
                    if pos >= 0 && (pos as usize) < out_len {
                        out[o * out_len + pos as usize] += v * kd[(o * in_c + c) * k + j];
                    }
                }
            }
        }
    }
    Tensor::new(vec![out_c, out_len], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(shape: Vec<usize>, k: Vec<f64>, bias: Vec<f64>, s: usize, p: usize) -> ConvParams {
        ConvParams::new(Tensor::new(shape, k).unwrap(), bias, vec![s], vec![p])
    }

    #[test]
    fn identity_kernel_is_identity() {
        let x = Tensor::from_fn(vec![1, 3, 4], |i| i as f64 * 0.5 - 2.0).unwrap();
        let p = params(vec![1, 1, 1, 1], vec![1.0], vec![0.0], 1, 0);
        assert_eq!(convolve(&x, &p).unwrap(), x);
    }

    #[test]
    fn moving_average() {
        let x = Tensor::from_fn(vec![1, 8], |i| (i + 1) as f64).unwrap();
        let p = params(vec![1, 1, 3], vec![1.0 / 3.0; 3], vec![0.0], 1, 1);
        let y = convolve(&x, &p).unwrap();
        assert_eq!(y.shape(), &[1, 8]);
        // value 4 sits at index 3 (0-based); its window is (3, 4, 5)
        assert!((y.data()[3] - 4.0).abs() < 1e-12);
        assert!((y.data()[4] - 5.0).abs() < 1e-12);
        assert!((y.data()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stride_two_halves_length() {
        let x = Tensor::zeros(vec![2, 8]).unwrap();
        let p = params(vec![3, 2, 1], vec![1.0; 6], vec![0.5; 3], 2, 0);
        let y = convolve(&x, &p).unwrap();
        assert_eq!(y.shape(), &[3, 4]);
        assert!(y.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn conv_shape_errors() {
        let x = Tensor::zeros(vec![2, 4]).unwrap();
        let wrong_in = params(vec![1, 3, 1], vec![1.0; 3], vec![0.0], 1, 0);
        assert!(convolve(&x, &wrong_in).is_err());
        let too_big = params(vec![1, 2, 7], vec![1.0; 14], vec![0.0], 1, 0);
        assert!(convolve(&x, &too_big).is_err());
        let bad_bias = params(vec![1, 2, 1], vec![1.0; 2], vec![0.0, 1.0], 1, 0);
        assert!(convolve(&x, &bad_bias).is_err());
        let bad_rank = params(vec![1, 2, 1, 1], vec![1.0; 2], vec![0.0], 1, 0);
        assert!(convolve(&x, &bad_rank).is_err());
    }

    #[test]
    fn circular_padding_wraps() {
        let x = Tensor::new(vec![1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = params(vec![1, 1, 3], vec![1.0, 0.0, 0.0], vec![0.0], 1, 1)
            .with_padding_mode(PaddingMode::Circular);
        let y = convolve(&x, &p).unwrap();
        assert_eq!(y.data(), &[4.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn transposed_examples() {
        let x = Tensor::new(vec![1, 2], vec![3.0, -1.0]).unwrap();
        let p = params(vec![1, 1, 2], vec![1.0, 1.0], vec![0.0], 2, 0);
        let y = transposed_convolve(&x, &p).unwrap();
        assert_eq!(y.data(), &[3.0, 3.0, -1.0, -1.0]);

        let z = params(vec![2, 1, 3], vec![0.0; 6], vec![0.0; 2], 2, 1);
        let y = transposed_convolve(&x, &z).unwrap();
        assert_eq!(y.shape(), &[2, 3]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }
}
