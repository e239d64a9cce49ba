//! Greedy association of sparse per-sample detections into chains, and
//! dense tube reconstruction from a chain.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::evaluation::{TubeSet, VideoTubes};
use crate::spatial_detection::{DetectionCandidate, DetectionDump};
use crate::tube_model::{interpolate_box_sequence, TemporalProposal, Tube};

/// Default minimum class strength for a proposal to yield a draft.
pub const DEFAULT_CLASS_FLOOR: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct LinkedTubeDraft {
    pub proposal: TemporalProposal,
    pub picked: Vec<DetectionCandidate>,
    pub class_id: u32,
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Affinity `exp(-(D_a + D_s) / 2)` between a candidate and one in the next
/// sample. `D_a` is the embedding distance; `D_s` is the distance between
/// `a`'s predicted shift and the actual center offset from `a` to `b`.
pub fn connectivity(a: &DetectionCandidate, b: &DetectionCandidate) -> Result<f64> {
    if a.sample_index + 1 != b.sample_index {
        return Err(domain(format!(
            "connectivity needs adjacent samples, got {} and {}",
            a.sample_index, b.sample_index
        )));
    }
    if a.embedding.len() != b.embedding.len() {
        return Err(Error::Shape("embedding dimensions differ".into()));
    }
    let d_a = l2(&a.embedding, &b.embedding);
    let offset = a.bbox.center_offset_to(&b.bbox);
    let d_s = l2(&a.shift, &offset);
    Ok((-(d_a + d_s) / 2.0).exp())
}

/// First index holding the maximum; NaNs never win.
fn argmax(values: impl IntoIterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.into_iter().enumerate() {
        match best {
            Some((_, bv)) if v.is_nan() || v <= bv => {}
            _ if v.is_nan() => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// Starts at the highest-scoring candidate for `class_id` in the first
/// sample, then repeatedly takes the candidate with the strongest
/// connectivity to the previous pick. Ties go to the lower ordinal.
pub fn link_greedy(
    proposal: TemporalProposal,
    candidates: &[Vec<DetectionCandidate>],
    class_id: u32,
) -> Result<LinkedTubeDraft> {
    if candidates.is_empty() {
        return Err(domain("no sample sets to link"));
    }
    if let Some(t) = candidates.iter().position(Vec::is_empty) {
        return Err(domain(format!("sample set {} is empty", t + 1)));
    }
    let first = &candidates[0];
    let start = argmax(first.iter().map(|c| c.score(class_id))).unwrap_or(0);
    let mut picked = vec![first[start].clone()];
    for set in &candidates[1..] {
        let last = picked.last().expect("chain is never empty");
        let conn = set
            .iter()
            .map(|c| connectivity(last, c))
            .collect::<Result<Vec<_>>>()?;
        let next = argmax(conn).unwrap_or(0);
        picked.push(set[next].clone());
    }
    Ok(LinkedTubeDraft {
        proposal,
        picked,
        class_id,
    })
}

/// Per-class strength over the sample sets: the mean, over samples, of the
/// best score any candidate in that sample gives the class.
pub fn class_strengths(candidates: &[Vec<DetectionCandidate>]) -> Vec<f64> {
    let num_classes = candidates
        .iter()
        .flatten()
        .map(|c| c.scores.len())
        .max()
        .unwrap_or(0);
    if candidates.is_empty() {
        return vec![0.0; num_classes];
    }
    (0..num_classes)
        .map(|c| {
            candidates
                .iter()
                .map(|set| {
                    set.iter()
                        .map(|d| d.score(c as u32))
                        .fold(0.0, f64::max)
                })
                .sum::<f64>()
                / candidates.len() as f64
        })
        .collect()
}

/// One draft per class whose strength reaches `class_floor`, strongest
/// class first.
pub fn link_proposal(
    proposal: TemporalProposal,
    candidates: &[Vec<DetectionCandidate>],
    class_floor: f64,
) -> Result<Vec<LinkedTubeDraft>> {
    let strengths = class_strengths(candidates);
    let mut classes: Vec<usize> = (0..strengths.len())
        .filter(|&c| strengths[c] >= class_floor)
        .collect();
    classes.sort_by(|&a, &b| strengths[b].total_cmp(&strengths[a]).then(a.cmp(&b)));
    classes
        .into_iter()
        .map(|c| link_greedy(proposal, candidates, c as u32))
        .collect()
}

/// Interpolation rate in samples per raw frame for `n` samples over the
/// normalized interval, given a `t`-frame input tensor sampled from the raw
/// video at `f_v` tensor frames per raw frame.
pub fn interpolation_rate(n: usize, s: f64, e: f64, t: usize, f_v: f64) -> Result<f64> {
    if e <= s {
        return Err(Error::DegenerateInterval(format!("({s}, {e})")));
    }
    Ok(n as f64 / ((e - s) * t as f64) * f_v)
}

/// Absolute frame for each of `n` samples spread evenly across the
/// normalized interval on a `video_len`-frame video, rounded and clamped.
pub fn sample_frames(s: f64, e: f64, n: usize, video_len: usize) -> Vec<usize> {
    let span = (video_len - 1) as f64;
    (0..n)
        .map(|i| {
            let u = if n == 1 {
                s
            } else {
                s + ((e - s) * i as f64) / (n - 1) as f64
            };
            ((1.0 + u * span).round() as usize).clamp(1, video_len)
        })
        .collect()
}

/// Places the picked boxes on their frames, interpolates between them and
/// scores the tube as mean picked class score times proposal actioness.
/// When two samples round to the same frame the earlier one is kept.
pub fn reconstruct_dense_tube(draft: &LinkedTubeDraft, video_len_frames: usize) -> Result<Tube> {
    let p = &draft.proposal;
    if p.e <= p.s {
        return Err(Error::DegenerateInterval(format!(
            "proposal ({}, {}) has no extent",
            p.s, p.e
        )));
    }
    if draft.picked.is_empty() {
        return Err(domain("draft has no picked boxes"));
    }
    if video_len_frames == 0 {
        return Err(domain("video has no frames"));
    }
    let frames = sample_frames(p.s, p.e, draft.picked.len(), video_len_frames);
    let mut keys = Vec::with_capacity(frames.len());
    for (f, c) in frames.iter().zip(&draft.picked) {
        if keys.last().is_none_or(|&(lf, _)| *f > lf) {
            keys.push((*f, c.bbox));
        }
    }
    let (first, last) = (frames[0], frames[frames.len() - 1]);
    let boxes = interpolate_box_sequence(&keys, first, last)?;
    let mean_score = draft
        .picked
        .iter()
        .map(|c| c.score(draft.class_id))
        .sum::<f64>()
        / draft.picked.len() as f64;
    let score = (mean_score * p.actioness).clamp(0.0, 1.0);
    Tube::new(draft.class_id, first, last, boxes, score)
}

/// Tube record tagged with the proposal it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkedTube {
    pub proposal_id: usize,
    #[serde(flatten)]
    pub tube: Tube,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkedVideo {
    pub video_id: String,
    pub num_frames: usize,
    pub tubes: Vec<LinkedTube>,
}

/// Same layout as a tube file, with a `proposal_id` on every tube.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LinkedSet {
    pub videos: Vec<LinkedVideo>,
}

impl LinkedSet {
    pub fn to_tube_set(&self) -> TubeSet {
        TubeSet {
            videos: self
                .videos
                .iter()
                .map(|v| VideoTubes {
                    video_id: v.video_id.clone(),
                    num_frames: Some(v.num_frames),
                    tubes: v.tubes.iter().map(|t| t.tube.clone()).collect(),
                })
                .collect(),
        }
    }
}

/// Links and reconstructs every proposal of a detection dump.
pub fn link_dump(dump: &DetectionDump, class_floor: f64) -> Result<LinkedSet> {
    let videos = dump
        .videos
        .par_iter()
        .map(|v| {
            let mut tubes = Vec::new();
            for p in &v.proposals {
                if p.samples.is_empty() {
                    continue;
                }
                for draft in link_proposal(p.proposal, &p.samples, class_floor)? {
                    tubes.push(LinkedTube {
                        proposal_id: p.proposal_id,
                        tube: reconstruct_dense_tube(&draft, v.num_frames)?,
                    });
                }
            }
            Ok(LinkedVideo {
                video_id: v.video_id.clone(),
                num_frames: v.num_frames,
                tubes,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LinkedSet { videos })
}
