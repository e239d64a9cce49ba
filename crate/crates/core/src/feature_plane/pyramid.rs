//! Temporal pyramid over spatially pooled features and 1D temporal proposal
//! decoding.

use serde::{Deserialize, Serialize};

use super::conv::{convolve, transposed_convolve, ConvParams};
use super::tensor::{FeatureVolume, TemporalFeature};
use crate::error::{domain, shape, Result};
use crate::tube_model::TemporalProposal;

/// Mean over the spatial plane: `(C, T, H, W) -> (C, T)`.
pub fn spatial_avg_pool(f: &FeatureVolume) -> TemporalFeature {
    let (c, t, h, w) = f.dims();
    let plane = (h * w) as f64;
    let data = f
        .data()
        .chunks_exact(h * w)
        .map(|p| p.iter().sum::<f64>() / plane)
        .collect();
    TemporalFeature::new(c, t, data).expect("pooled shape matches input")
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemporalPyramid {
    pub down: Vec<TemporalFeature>,
    pub up: Vec<TemporalFeature>,
    /// Last level of the upsample path (the input itself at depth 0).
    pub f_p: TemporalFeature,
}

/// Two-path pyramid: strided convolutions halve `T`, transposed convolutions
/// restore it level by level.
pub fn build_temporal_pyramid(
    f: &TemporalFeature,
    down_params: &[ConvParams],
    up_params: &[ConvParams],
) -> Result<TemporalPyramid> {
    let depth = down_params.len();
    if up_params.len() != depth {
        return Err(shape(format!(
            "{} downsample stages but {} upsample stages",
            depth,
            up_params.len()
        )));
    }
    let t = f.dims().1;
    if !t.is_multiple_of(1usize << depth) {
        return Err(domain(format!(
            "temporal length {t} not divisible by 2^{depth}"
        )));
    }

    let mut down = Vec::with_capacity(depth);
    let mut cur = f.clone();
    for (i, p) in down_params.iter().enumerate() {
        let next = TemporalFeature::from_tensor(convolve(cur.as_tensor(), p)?)?;
        let want = cur.dims().1 / 2;
        if next.dims().1 != want {
            return Err(shape(format!(
                "downsample stage {i} produced length {}, expected {want}",
                next.dims().1
            )));
        }
        down.push(next.clone());
        cur = next;
    }

    let mut up = Vec::with_capacity(depth);
    for (i, p) in up_params.iter().enumerate() {
        let next = TemporalFeature::from_tensor(transposed_convolve(cur.as_tensor(), p)?)?;
        let want = cur.dims().1 * 2;
        if next.dims().1 != want {
            return Err(shape(format!(
                "upsample stage {i} produced length {}, expected {want}",
                next.dims().1
            )));
        }
        up.push(next.clone());
        cur = next;
    }

    Ok(TemporalPyramid { down, up, f_p: cur })
}

/// Normalized temporal anchor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemporalAnchor {
    pub center: f64,
    pub length: f64,
}

/// Raw per-anchor head output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemporalPrediction {
    /// Actioness logit.
    pub score: f64,
    pub dc: f64,
    pub dl: f64,
    /// Predicted dynamic level (values below 1 are lifted to 1).
    pub dynamic_level: f64,
}

/// Anchors centred on every position of a level of length `len`, one per scale.
pub fn temporal_anchors(len: usize, scales: &[f64]) -> Vec<TemporalAnchor> {
    (0..len)
        .flat_map(|i| {
            let center = (i as f64 + 0.5) / len as f64;
            scales.iter().map(move |&length| TemporalAnchor { center, length })
        })
        .collect()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Applies center/length offsets to anchors and clips the result to `[0, 1]`.
pub fn decode_temporal_proposals(
    anchors: &[TemporalAnchor],
    predictions: &[TemporalPrediction],
) -> Result<Vec<TemporalProposal>> {
    if anchors.len() != predictions.len() {
        return Err(shape(format!(
            "{} anchors but {} predictions",
            anchors.len(),
            predictions.len()
        )));
    }
    anchors
        .iter()
        .zip(predictions)
        .map(|(a, p)| {
            let center = a.center + p.dc * a.length;
            let length = a.length * p.dl.exp();
            let s = (center - length / 2.0).clamp(0.0, 1.0);
            let e = (center + length / 2.0).clamp(0.0, 1.0);
            let level = if p.dynamic_level.is_finite() {
                p.dynamic_level.max(1.0)
            } else {
                1.0
            };
            TemporalProposal::new(s, e, sigmoid(p.score), level)
        })
        .collect()
}

/// Runs a 1D head over one pyramid level. The head emits four channels per
/// anchor scale, ordered `(score, dc, dl, dynamic_level)`.
pub fn predict_temporal(
    level: &TemporalFeature,
    head: &ConvParams,
    scales: &[f64],
) -> Result<(Vec<TemporalAnchor>, Vec<TemporalPrediction>)> {
    let a = scales.len();
    if head.out_channels() != 4 * a {
        return Err(shape(format!(
            "temporal head has {} outputs, need 4 x {a} scales",
            head.out_channels()
        )));
    }
    let out = convolve(level.as_tensor(), head)?;
    let len = level.dims().1;
    if out.shape()[1] != len {
        return Err(shape("temporal head must preserve the level length"));
    }
    let anchors = temporal_anchors(len, scales);
    let d = out.data();
    let mut preds = Vec::with_capacity(len * a);
    for t in 0..len {
        for slot in 0..a {
            let ch = |j: usize| d[(slot * 4 + j) * len + t];
            preds.push(TemporalPrediction {
                score: ch(0),
                dc: ch(1),
                dl: ch(2),
                dynamic_level: ch(3),
            });
        }
    }
    Ok((anchors, preds))
}
