//! Dynamic level of a tube: how many uniform box samples are needed before
//! linear interpolation reconstructs it well. Also the asymmetric training
//! loss for the predicted level and the inference-time sample-count clamp.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::tube_model::{interpolate_box_sequence, mean_frame_iou, uniform_sample_indices, Tube};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicLevelConfig {
    /// Reconstruction IoU threshold.
    pub epsilon: f64,
    /// Down-weighting of the overestimation side of the loss.
    pub gamma: f64,
    pub n_max: usize,
    /// Never below 2: sample placement divides by `n - 1`.
    pub n_min: usize,
}

impl Default for DynamicLevelConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.7,
            gamma: 0.1,
            n_max: 10,
            n_min: 2,
        }
    }
}

impl DynamicLevelConfig {
    pub fn new(epsilon: f64, gamma: f64, n_max: usize, n_min: usize) -> Result<Self> {
        let cfg = Self {
            epsilon,
            gamma,
            n_max,
            n_min,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::Config(format!("epsilon {} not in (0, 1]", self.epsilon)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma {} not in (0, 1]", self.gamma)));
        }
        if self.n_min < 2 || self.n_max < self.n_min {
            return Err(Error::Config(format!(
                "need n_max >= n_min >= 2, got n_min={}, n_max={}",
                self.n_min, self.n_max
            )));
        }
        Ok(())
    }
}

/// Mean per-frame IoU of the tube against its reconstruction from `d`
/// uniform samples.
pub fn reconstruction_iou(tube: &Tube, d: usize) -> Result<f64> {
    let boxes = tube.boxes();
    let t = boxes.len();
    let samples: Vec<_> = uniform_sample_indices(t, d)?
        .into_iter()
        .map(|i| (i, boxes[i - 1]))
        .collect();
    let recon = interpolate_box_sequence(&samples, 1, t)?;
    Ok(mean_frame_iou(boxes, &recon))
}

/// Smallest `d` whose uniform-sample reconstruction reaches mean IoU
/// `epsilon`. Falls back to the tube length when nothing qualifies.
pub fn ground_truth_dynamic_level(tube: &Tube, epsilon: f64) -> Result<usize> {
    if tube.is_empty() {
        return Err(domain("empty tube"));
    }
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(domain(format!("epsilon {epsilon} not in (0, 1]")));
    }
    let t = tube.len();
    for d in 1..=t {
        if reconstruction_iou(tube, d)? >= epsilon {
            return Ok(d);
        }
    }
    Ok(t)
}

/// Weighted smooth-L1 loss on `d - d_hat` and its derivative w.r.t. `d_hat`.
///
/// The overestimation side (`d_hat > d`) is scaled by `gamma`.
pub fn dynamic_level_loss(d: f64, d_hat: f64, gamma: f64) -> (f64, f64) {
    let x = d - d_hat;
    let (base, dbase) = if x.abs() < 1.0 {
        (0.5 * x * x, x)
    } else {
        (x.abs() - 0.5, x.signum())
    };
    let weight = if x >= 0.0 { 1.0 } else { gamma };
    (weight * base, -weight * dbase)
}

/// Number of feature samples drawn for a predicted level: `ceil(d_hat)`
/// clamped into `[n_min, n_max]`.
pub fn clamp_sample_count(d_hat: f64, cfg: &DynamicLevelConfig) -> Result<usize> {
    if !d_hat.is_finite() {
        return Err(domain(format!("non-finite dynamic level {d_hat}")));
    }
    let c = d_hat.ceil();
    let n = if c <= cfg.n_min as f64 {
        cfg.n_min
    } else if c >= cfg.n_max as f64 {
        cfg.n_max
    } else {
        c as usize
    };
    Ok(n.clamp(cfg.n_min, cfg.n_max))
}
