//! Independent reference implementations used as test oracles. Nothing here
//! calls into the crate's numeric code; inputs and outputs go through the
//! public types only.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tubekit::feature_plane::{ConvParams, FeatureVolume, LfaBlock, PaddingMode, Tensor};
use tubekit::{BoundingBox, Tube};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random-walk tube with `len` frames.
pub fn random_tube(rng: &mut ChaCha8Rng, len: usize, step: f64) -> Tube {
    let (w, h) = (rng.random_range(0.1..0.4), rng.random_range(0.1..0.4));
    let (mut x, mut y) = (rng.random_range(0.2..0.8), rng.random_range(0.2..0.8));
    let mut boxes = Vec::with_capacity(len);
    for _ in 0..len {
        boxes.push(BoundingBox::new(x, y, w, h).unwrap());
        x += rng.random_range(-step..=step);
        y += rng.random_range(-step..=step);
    }
    Tube::ground_truth(0, 1, boxes).unwrap()
}

fn plain_iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let ax0 = a[0] - a[2] / 2.0;
    let ax1 = a[0] + a[2] / 2.0;
    let ay0 = a[1] - a[3] / 2.0;
    let ay1 = a[1] + a[3] / 2.0;
    let bx0 = b[0] - b[2] / 2.0;
    let bx1 = b[0] + b[2] / 2.0;
    let by0 = b[1] - b[3] / 2.0;
    let by1 = b[1] + b[3] / 2.0;
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    let union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

fn raw(b: &BoundingBox) -> [f64; 4] {
    [b.x(), b.y(), b.w(), b.h()]
}

/// Mean IoU of the tube against the interpolation of `d` uniform samples
/// at frames floor(k*T/d), holding the first sample before it.
pub fn brute_reconstruction(tube: &Tube, d: usize) -> f64 {
    let boxes: Vec<[f64; 4]> = tube.boxes().iter().map(raw).collect();
    let t = boxes.len();
    let keys: Vec<usize> = (1..=d).map(|k| k * t / d).collect();
    let mut total = 0.0;
    for f in 1..=t {
        let est = if f <= keys[0] {
            boxes[keys[0] - 1]
        } else {
            let j = keys.iter().position(|&k| k >= f).unwrap();
            let (k0, k1) = (keys[j - 1], keys[j]);
            let u = (f - k0) as f64 / (k1 - k0) as f64;
            let (p, q) = (boxes[k0 - 1], boxes[k1 - 1]);
            [0, 1, 2, 3].map(|i| p[i] + (q[i] - p[i]) * u)
        };
        total += plain_iou(est, boxes[f - 1]);
    }
    total / t as f64
}

pub fn brute_dynamic_level(tube: &Tube, epsilon: f64) -> usize {
    let t = tube.len();
    (1..=t)
        .find(|&d| brute_reconstruction(tube, d) >= epsilon)
        .unwrap_or(t)
}

/// out[c,t,h,w] = f[c,t,h,w] + (1/T) sum_k f[c,k,h,w] * s[t,k]
pub fn naive_lfa(f: &FeatureVolume, s: &[f64]) -> Vec<f64> {
    let (c, t, h, w) = f.dims();
    let mut out = vec![0.0; c * t * h * w];
    for ci in 0..c {
        for ti in 0..t {
            for hi in 0..h {
                for wi in 0..w {
                    let mut acc = 0.0;
                    for k in 0..t {
                        acc += f.get(ci, k, hi, wi) * s[ti * t + k];
                    }
                    out[((ci * t + ti) * h + hi) * w + wi] = f.get(ci, ti, hi, wi) + acc / t as f64;
                }
            }
        }
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn pad_index(i: isize, n: usize, mode: PaddingMode) -> Option<usize> {
    if i >= 0 && (i as usize) < n {
        return Some(i as usize);
    }
    match mode {
        PaddingMode::Zero => None,
        PaddingMode::Circular => Some(i.rem_euclid(n as isize) as usize),
    }
}

/// 1D cross-correlation on a (C, L) row-major buffer.
pub fn conv1d(x: &[f64], c_in: usize, len: usize, p: &ConvParams) -> (Vec<f64>, usize) {
    let k = p.kernel.shape()[2];
    let (s, pad) = (p.stride[0], p.padding[0]);
    let out_len = (len + 2 * pad - k) / s + 1;
    let c_out = p.kernel.shape()[0];
    let mut y = vec![0.0; c_out * out_len];
    for o in 0..c_out {
        for t in 0..out_len {
            let mut acc = p.bias[o];
            for i in 0..c_in {
                for j in 0..k {
                    if let Some(src) = pad_index((t * s + j) as isize - pad as isize, len, p.padding_mode) {
                        acc += p.kernel.at(&[o, i, j]) * x[i * len + src];
                    }
                }
            }
            y[o * out_len + t] = acc;
        }
    }
    (y, out_len)
}

/// 2D cross-correlation, stride 1, symmetric padding, on (C, H, W).
pub fn conv2d(x: &[f64], (c_in, h, w): (usize, usize, usize), p: &ConvParams) -> Vec<f64> {
    let ks = p.kernel.shape();
    let (c_out, kh, kw) = (ks[0], ks[2], ks[3]);
    let pad = p.padding[0];
    let (oh, ow) = (h + 2 * pad - kh + 1, w + 2 * pad - kw + 1);
    let mut y = vec![0.0; c_out * oh * ow];
    for o in 0..c_out {
        for r in 0..oh {
            for q in 0..ow {
                let mut acc = p.bias[o];
                for i in 0..c_in {
                    for a in 0..kh {
                        for b in 0..kw {
                            let yy = pad_index((r + a) as isize - pad as isize, h, p.padding_mode);
                            let xx = pad_index((q + b) as isize - pad as isize, w, p.padding_mode);
                            if let (Some(yy), Some(xx)) = (yy, xx) {
                                acc += p.kernel.at(&[o, i, a, b]) * x[(i * h + yy) * w + xx];
                            }
                        }
                    }
                }
                y[(o * oh + r) * ow + q] = acc;
            }
        }
    }
    y
}

/// 3D cross-correlation, stride 1, symmetric padding, on (C, T, H, W).
pub fn conv3d(x: &[f64], (c_in, t, h, w): (usize, usize, usize, usize), p: &ConvParams) -> Vec<f64> {
    let ks = p.kernel.shape();
    let (c_out, kt, kh, kw) = (ks[0], ks[2], ks[3], ks[4]);
    let pad = p.padding[0];
    let (ot, oh, ow) = (t + 2 * pad - kt + 1, h + 2 * pad - kh + 1, w + 2 * pad - kw + 1);
    let mut y = vec![0.0; c_out * ot * oh * ow];
    for o in 0..c_out {
        for z in 0..ot {
            for r in 0..oh {
                for q in 0..ow {
                    let mut acc = p.bias[o];
                    for i in 0..c_in {
                        for a in 0..kt {
                            for b in 0..kh {
                                for e in 0..kw {
                                    let zz = pad_index((z + a) as isize - pad as isize, t, p.padding_mode);
                                    let yy = pad_index((r + b) as isize - pad as isize, h, p.padding_mode);
                                    let xx = pad_index((q + e) as isize - pad as isize, w, p.padding_mode);
                                    if let (Some(zz), Some(yy), Some(xx)) = (zz, yy, xx) {
                                        acc += p.kernel.at(&[o, i, a, b, e])
                                            * x[((i * t + zz) * h + yy) * w + xx];
                                    }
                                }
                            }
                        }
                    }
                    y[((o * ot + z) * oh + r) * ow + q] = acc;
                }
            }
        }
    }
    y
}

/// Weight map through the three blocks, read as S[t,k] = sigmoid(R[k,t]).
pub fn weight_map_oracle(f_p: &[f64], c: usize, t: usize, blocks: &[LfaBlock]) -> Vec<f64> {
    let mut x = f_p.to_vec();
    let mut ch = c;
    let mut len = t;
    for b in blocks {
        let (mut y, l) = conv1d(&x, ch, len, &b.conv);
        let oc = b.conv.kernel.shape()[0];
        if let Some(n) = &b.norm {
            for o in 0..oc {
                let row = &mut y[o * l..(o + 1) * l];
                let mean = row.iter().sum::<f64>() / l as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / l as f64;
                for v in row.iter_mut() {
                    *v = (*v - mean) / (var + 1e-5).sqrt() * n.scale[o] + n.offset[o];
                }
            }
        }
        if b.relu {
            for v in y.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        x = y;
        ch = oc;
        len = l;
    }
    let mut s = vec![0.0; t * t];
    for ti in 0..t {
        for k in 0..t {
            s[ti * t + k] = sigmoid(x[k * t + ti]);
        }
    }
    s
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, scale: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-scale..=scale)).unwrap()
}

pub fn random_conv(rng: &mut ChaCha8Rng, shape: Vec<usize>, pad: usize) -> ConvParams {
    let out = shape[0];
    let kernel = random_tensor(rng, shape, 0.5);
    let bias = (0..out).map(|_| rng.random_range(-0.5..=0.5)).collect();
    ConvParams::new(kernel, bias, vec![1], vec![pad])
}

/// Relative error with an absolute floor for values near zero.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}
