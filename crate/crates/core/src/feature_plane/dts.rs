//! Dynamic temporal sampling: `n` feature maps read off the augmented volume
//! at evenly spaced, generally fractional, temporal positions.

use super::tensor::{FeatureMap, FeatureVolume};
use crate::error::{domain, Result};
use crate::tube_model::TemporalProposal;

/// Positions (1-based feature index coordinates) of the `n` samples over a
/// normalized interval on a volume with `t_f` temporal slices. The first and
/// last sample land exactly on the interval ends.
pub fn sample_positions(s: f64, e: f64, n: usize, t_f: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(domain(format!("need at least 2 samples, got {n}")));
    }
    let span = (t_f - 1) as f64;
    let lo = 1.0 + s * span;
    let hi = 1.0 + e * span;
    let steps = (n - 1) as f64;
    Ok((0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else {
                lo + ((hi - lo) * i as f64) / steps
            }
        })
        .collect())
}

/// Linear temporal interpolation of the volume at a 1-based position.
pub fn sample_at(f: &FeatureVolume, q: f64) -> FeatureMap {
    let (c, t, h, w) = f.dims();
    let q = q.clamp(1.0, t as f64);
    let lo = q.floor();
    let frac = q - lo;
    // zero-based slice indices
    let k0 = lo as usize - 1;
    if frac == 0.0 {
        return f.slice(k0);
    }
    let k1 = k0 + 1;
    let (w0, w1) = (1.0 - frac, frac);
    let mut data = Vec::with_capacity(c * h * w);
    for ci in 0..c {
        for hi in 0..h {
            for wi in 0..w {
                data.push(f.get(ci, k0, hi, wi) * w0 + f.get(ci, k1, hi, wi) * w1);
            }
        }
    }
    FeatureMap::new(c, h, w, data).expect("sample shape matches volume")
}

pub fn dts_sample(
    f_hat: &FeatureVolume,
    proposal: &TemporalProposal,
    n: usize,
) -> Result<Vec<FeatureMap>> {
    proposal.validate()?;
    let t_f = f_hat.dims().1;
    Ok(sample_positions(proposal.s, proposal.e, n, t_f)?
        .into_iter()
        .map(|q| sample_at(f_hat, q))
        .collect())
}
