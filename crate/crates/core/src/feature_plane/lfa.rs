//! Long-term feature augmentation: a sigmoid weight map over temporal
//! positions, predicted from the pyramid output, mixes every temporal slice
//! of the feature volume back into every other slice through a residual sum.

use serde::{Deserialize, Serialize};

use super::conv::{convolve, ConvParams};
use super::pyramid::sigmoid;
use super::tensor::{FeatureVolume, TemporalFeature, Tensor};
use crate::error::{domain, shape, Result};

const NORM_EPS: f64 = 1e-5;

/// Largest double below one; keeps saturated sigmoids inside the open interval.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

/// `T_f x T_f` matrix with entries strictly inside `(0, 1)`. Row `t` holds
/// the weights used to build output position `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightMap {
    t_f: usize,
    data: Vec<f64>,
}

impl WeightMap {
    pub fn new(t_f: usize, data: Vec<f64>) -> Result<Self> {
        if t_f == 0 || data.len() != t_f * t_f {
            return Err(shape(format!(
                "weight map of size {t_f} needs {} entries, got {}",
                t_f * t_f,
                data.len()
            )));
        }
        if data.iter().any(|&v| !(v > 0.0 && v < 1.0)) {
            return Err(domain("weight map entries must lie strictly inside (0, 1)"));
        }
        Ok(Self { t_f, data })
    }

    pub fn t_f(&self) -> usize {
        self.t_f
    }

    pub fn get(&self, t: usize, k: usize) -> f64 {
        self.data[t * self.t_f + k]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Per-channel affine applied after temporal standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub scale: Vec<f64>,
    pub offset: Vec<f64>,
}

/// One stage of the weight-map network: convolution, optional
/// normalization, optional rectification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LfaBlock {
    pub conv: ConvParams,
    #[serde(default)]
    pub norm: Option<NormParams>,
    #[serde(default)]
    pub relu: bool,
}

impl LfaBlock {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = convolve(x, &self.conv)?;
        let (c, t) = (y.shape()[0], y.shape()[1]);
        let mut data = y.into_data();
        if let Some(norm) = &self.norm {
            if norm.scale.len() != c || norm.offset.len() != c {
                return Err(shape(format!(
                    "normalization has {}/{} parameters for {c} channels",
                    norm.scale.len(),
                    norm.offset.len()
                )));
            }
            for (ch, row) in data.chunks_exact_mut(t).enumerate() {
                let mean = row.iter().sum::<f64>() / t as f64;
                let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t as f64;
                let inv = 1.0 / (var + NORM_EPS).sqrt();
                for v in row.iter_mut() {
                    *v = (*v - mean) * inv * norm.scale[ch] + norm.offset[ch];
                }
            }
        }
        if self.relu {
            data.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        Tensor::new(vec![c, t], data)
    }
}

/// Runs the block stack over `F_p` and squashes the `(T_f, T_f)` result.
///
/// The last block's output channel `k` at time `t` becomes `S[t, k]`.
pub fn lfa_weight_map(f_p: &TemporalFeature, blocks: &[LfaBlock]) -> Result<WeightMap> {
    if blocks.len() != 3 {
        return Err(shape(format!("expected 3 blocks, got {}", blocks.len())));
    }
    let t_f = f_p.dims().1;
    let mut x = f_p.as_tensor().clone();
    for b in blocks {
        x = b.forward(&x)?;
    }
    if x.shape() != [t_f, t_f] {
        return Err(shape(format!(
            "weight network produced {:?}, need [{t_f}, {t_f}]",
            x.shape()
        )));
    }
    let r = x.data();
    let mut data = Vec::with_capacity(t_f * t_f);
    for t in 0..t_f {
        for k in 0..t_f {
            let s = sigmoid(r[k * t_f + t]);
            data.push(s.clamp(f64::MIN_POSITIVE, BELOW_ONE));
        }
    }
    WeightMap::new(t_f, data)
}

/// Residual temporal recombination for an arbitrary row-major `T x T`
/// matrix: `out[c,t,h,w] = f[c,t,h,w] + (1/T) * sum_k f[c,k,h,w] * m[t,k]`.
pub fn temporal_recombine(f: &FeatureVolume, matrix: &[f64]) -> Result<FeatureVolume> {
    let (c, t, h, w) = f.dims();
    if matrix.len() != t * t {
        return Err(shape(format!(
            "recombination matrix has {} entries for T = {t}",
            matrix.len()
        )));
    }
    let plane = h * w;
    let src = f.data();
    let mut out = src.to_vec();
    let scale = 1.0 / t as f64;
    for ci in 0..c {
        let base = ci * t * plane;
        for ti in 0..t {
            let dst = &mut out[base + ti * plane..base + (ti + 1) * plane];
            let mut acc = vec![0.0; plane];
            for k in 0..t {
                let weight = matrix[ti * t + k];
                let slice = &src[base + k * plane..base + (k + 1) * plane];
                for (a, v) in acc.iter_mut().zip(slice) {
                    *a += v * weight;
                }
            }
            for (d, a) in dst.iter_mut().zip(acc) {
                *d += scale * a;
            }
        }
    }
    FeatureVolume::new(c, t, h, w, out)
}

pub fn lfa_augment(f: &FeatureVolume, s: &WeightMap) -> Result<FeatureVolume> {
    let t = f.dims().1;
    if s.t_f() != t {
        return Err(domain(format!(
            "weight map size {} does not match temporal length {t}",
            s.t_f()
        )));
    }
    temporal_recombine(f, s.data())
}
