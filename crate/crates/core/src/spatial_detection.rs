//! Per-sample box head, cross-sample association head, anchor matching and
//! the two association losses (embedding clustering and shift regression).

use serde::{Deserialize, Serialize};

use crate::error::{domain, shape, Result};
use crate::feature_plane::pyramid::sigmoid;
use crate::feature_plane::{convolve, ConvParams, FeatureMap, Tensor};
use crate::tube_model::{box_iou, BoundingBox, TemporalProposal};

/// Regular anchor layout: `rows x cols` cells with one anchor per size slot,
/// centred on each cell in normalized image coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorGrid {
    pub rows: usize,
    pub cols: usize,
    /// `(w, h)` per anchor slot.
    pub sizes: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorBox {
    pub bbox: BoundingBox,
    pub row: usize,
    pub col: usize,
    pub slot: usize,
}

impl AnchorGrid {
    pub fn per_cell(&self) -> usize {
        self.sizes.len()
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols * self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Anchors ordered by row, then column, then slot.
    pub fn anchors(&self) -> Result<Vec<AnchorBox>> {
        let mut out = Vec::with_capacity(self.len());
        for row in 0..self.rows {
            for col in 0..self.cols {
                let cx = (col as f64 + 0.5) / self.cols as f64;
                let cy = (row as f64 + 0.5) / self.rows as f64;
                for (slot, &(w, h)) in self.sizes.iter().enumerate() {
                    out.push(AnchorBox {
                        bbox: BoundingBox::new(cx, cy, w, h)?,
                        row,
                        col,
                        slot,
                    });
                }
            }
        }
        Ok(out)
    }
}

/// One box proposal on one sampled feature map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionCandidate {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub scores: Vec<f64>,
    #[serde(default)]
    pub embedding: Vec<f64>,
    #[serde(default)]
    pub shift: [f64; 2],
    /// 1-based sample position; implied by the position in dumps.
    #[serde(skip)]
    pub sample_index: usize,
}

impl DetectionCandidate {
    pub fn score(&self, class_id: u32) -> f64 {
        self.scores.get(class_id as usize).copied().unwrap_or(0.0)
    }
}

/// SSD-style decode of `(dx, dy, dw, dh)` against an anchor.
pub fn decode_box(anchor: &BoundingBox, d: [f64; 4]) -> Result<BoundingBox> {
    BoundingBox::new(
        anchor.x() + d[0] * anchor.w(),
        anchor.y() + d[1] * anchor.h(),
        anchor.w() * d[2].exp(),
        anchor.h() * d[3].exp(),
    )
}

/// Box head over one sampled map. Each anchor slot owns `num_classes + 4`
/// consecutive output channels: class logits, then `(dx, dy, dw, dh)`.
pub fn detect_boxes(
    fmap: &FeatureMap,
    box_params: &ConvParams,
    grid: &AnchorGrid,
    sample_index: usize,
) -> Result<Vec<DetectionCandidate>> {
    let a = grid.per_cell();
    let out_c = box_params.out_channels();
    if a == 0 || !out_c.is_multiple_of(a) || out_c / a < 5 {
        return Err(shape(format!(
            "box head has {out_c} outputs for {a} anchors per cell"
        )));
    }
    let per = out_c / a;
    let num_classes = per - 4;
    let y = convolve(fmap.as_tensor(), box_params)?;
    if y.shape()[1..] != [grid.rows, grid.cols] {
        return Err(shape(format!(
            "box head output {:?} does not match {}x{} anchor grid",
            &y.shape()[1..],
            grid.rows,
            grid.cols
        )));
    }
    let plane = grid.rows * grid.cols;
    let d = y.data();
    grid.anchors()?
        .into_iter()
        .map(|anc| {
            let cell = anc.row * grid.cols + anc.col;
            let ch = |j: usize| d[(anc.slot * per + j) * plane + cell];
            let scores = (0..num_classes).map(|j| sigmoid(ch(j))).collect();
            let off = [
                ch(num_classes),
                ch(num_classes + 1),
                ch(num_classes + 2),
                ch(num_classes + 3),
            ];
            Ok(DetectionCandidate {
                bbox: decode_box(&anc.bbox, off)?,
                scores,
                embedding: Vec::new(),
                shift: [0.0; 2],
                sample_index,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationVector {
    pub embedding: Vec<f64>,
    pub shift: [f64; 2],
}

/// Stacks `n` maps into a `(C, n, H, W)` volume, runs the 3D association
/// head, and splits each anchor slot's `E + 2` channels into an embedding
/// and a shift. Indexed `[sample][anchor]`, anchors in grid order.
pub fn association_vectors(
    stacked: &[FeatureMap],
    assoc_params: &ConvParams,
    grid: &AnchorGrid,
) -> Result<Vec<Vec<AssociationVector>>> {
    let Some(first) = stacked.first() else {
        return Err(domain("no sampled maps to associate"));
    };
    let (c, h, w) = first.dims();
    if stacked.iter().any(|m| m.dims() != (c, h, w)) {
        return Err(shape("sampled maps differ in shape"));
    }
    let n = stacked.len();
    let a = grid.per_cell();
    let out_c = assoc_params.out_channels();
    if a == 0 || !out_c.is_multiple_of(a) || out_c / a < 2 {
        return Err(shape(format!(
            "association head has {out_c} outputs for {a} anchors per cell"
        )));
    }
    let per = out_c / a;
    let e = per - 2;

    let plane = h * w;
    let mut vol = vec![0.0; c * n * plane];
    for (t, m) in stacked.iter().enumerate() {
        for ci in 0..c {
            let dst = (ci * n + t) * plane;
            vol[dst..dst + plane].copy_from_slice(&m.data()[ci * plane..(ci + 1) * plane]);
        }
    }
    let y = convolve(&Tensor::new(vec![c, n, h, w], vol)?, assoc_params)?;
    if y.shape()[1..] != [n, grid.rows, grid.cols] {
        return Err(shape(format!(
            "association output {:?} does not match {n} samples on a {}x{} grid",
            &y.shape()[1..],
            grid.rows,
            grid.cols
        )));
    }
    let cells = grid.rows * grid.cols;
    let d = y.data();
    let at = |ch: usize, t: usize, cell: usize| d[(ch * n + t) * cells + cell];
    Ok((0..n)
        .map(|t| {
            let mut per_anchor = Vec::with_capacity(grid.len());
            for cell in 0..cells {
                for slot in 0..a {
                    let base = slot * per;
                    per_anchor.push(AssociationVector {
                        embedding: (0..e).map(|j| at(base + j, t, cell)).collect(),
                        shift: [at(base + e, t, cell), at(base + e + 1, t, cell)],
                    });
                }
            }
            per_anchor
        })
        .collect())
}

/// Anchor assignment against one ground-truth box.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchLabels {
    pub positive: Vec<bool>,
    pub target: BoundingBox,
}

impl MatchLabels {
    pub fn num_positive(&self) -> usize {
        self.positive.iter().filter(|&&p| p).count()
    }
}

/// Positive iff IoU reaches `threshold`; the best-overlapping anchor (first
/// on ties) is always positive.
pub fn match_anchors(
    anchors: &[AnchorBox],
    gt_box: &BoundingBox,
    threshold: f64,
) -> Result<MatchLabels> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(domain(format!("match threshold {threshold} not in (0, 1)")));
    }
    let ious: Vec<f64> = anchors.iter().map(|a| box_iou(&a.bbox, gt_box)).collect();
    let mut positive: Vec<bool> = ious.iter().map(|&v| v >= threshold).collect();
    let best = ious
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, &v)| match best {
            Some((_, bv)) if bv >= v => best,
            _ => Some((i, v)),
        });
    if let Some((i, _)) = best {
        positive[i] = true;
    }
    Ok(MatchLabels {
        positive,
        target: *gt_box,
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Mean embedding over positive anchors.
pub fn positive_centroid(embeddings: &[Vec<f64>], labels: &MatchLabels) -> Result<Vec<f64>> {
    if embeddings.len() != labels.positive.len() {
        return Err(shape(format!(
            "{} embeddings but {} labels",
            embeddings.len(),
            labels.positive.len()
        )));
    }
    let dim = embeddings.first().map_or(0, Vec::len);
    if embeddings.iter().any(|e| e.len() != dim) {
        return Err(shape("embeddings differ in dimension"));
    }
    let mut mean = vec![0.0; dim];
    let mut count = 0usize;
    for (e, _) in embeddings.iter().zip(&labels.positive).filter(|(_, &p)| p) {
        for (m, v) in mean.iter_mut().zip(e) {
            *m += v;
        }
        count += 1;
    }
    if count == 0 {
        return Err(domain("embedding loss needs at least one positive anchor"));
    }
    mean.iter_mut().for_each(|m| *m /= count as f64);
    Ok(mean)
}

/// Clustering loss with a caller-supplied centroid, which is treated as a
/// constant when differentiating.
pub fn embedding_loss_with_centroid(
    embeddings: &[Vec<f64>],
    labels: &MatchLabels,
    centroid: &[f64],
    alpha: f64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    if alpha.is_nan() || alpha <= 0.0 {
        return Err(domain(format!("margin {alpha} must be positive")));
    }
    if embeddings.len() != labels.positive.len() {
        return Err(shape("embeddings and labels differ in length"));
    }
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(embeddings.len());
    for (f, &pos) in embeddings.iter().zip(&labels.positive) {
        if f.len() != centroid.len() {
            return Err(shape("embedding and centroid differ in dimension"));
        }
        let d2 = sq_dist(f, centroid);
        let factor = if pos {
            loss += d2;
            2.0
        } else if d2 < alpha {
            loss += alpha - d2;
            -2.0
        } else {
            0.0
        };
        grads.push(f.iter().zip(centroid).map(|(x, m)| factor * (x - m)).collect());
    }
    Ok((loss, grads))
}

/// Pulls positive embeddings to their mean and pushes negatives at least
/// `alpha` (squared distance) away from it.
pub fn embedding_loss(
    embeddings: &[Vec<f64>],
    labels: &MatchLabels,
    alpha: f64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let centroid = positive_centroid(embeddings, labels)?;
    embedding_loss_with_centroid(embeddings, labels, &centroid, alpha)
}

/// Per-sample center-offset targets between consecutive sampled boxes.
/// The last sample has no successor and gets no target.
pub fn shift_targets(gt_sampled_boxes: &[BoundingBox]) -> Vec<[f64; 2]> {
    gt_sampled_boxes
        .windows(2)
        .map(|p| p[0].center_offset_to(&p[1]))
        .collect()
}

/// Squared error between positive anchors' shifts and the ground-truth
/// offset to the next sample. Indexed `[sample][anchor]`.
pub fn shift_loss(
    shifts: &[Vec<[f64; 2]>],
    labels: &[MatchLabels],
    gt_sampled_boxes: &[BoundingBox],
) -> Result<(f64, Vec<Vec<[f64; 2]>>)> {
    let n = gt_sampled_boxes.len();
    if n < 2 {
        return Err(domain(format!("shift loss needs at least 2 samples, got {n}")));
    }
    if shifts.len() != n || labels.len() != n {
        return Err(shape(format!(
            "{} shift sets and {} label sets for {n} samples",
            shifts.len(),
            labels.len()
        )));
    }
    let targets = shift_targets(gt_sampled_boxes);
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(n);
    for (k, (sample, lab)) in shifts.iter().zip(labels).enumerate() {
        if sample.len() != lab.positive.len() {
            return Err(shape(format!("sample {k}: shifts and labels differ in length")));
        }
        let mut g = vec![[0.0; 2]; sample.len()];
        if let Some(target) = targets.get(k) {
            for (i, (s, &pos)) in sample.iter().zip(&lab.positive).enumerate() {
                if pos {
                    let (ex, ey) = (s[0] - target[0], s[1] - target[1]);
                    loss += ex * ex + ey * ey;
                    g[i] = [2.0 * ex, 2.0 * ey];
                }
            }
        }
        grads.push(g);
    }
    Ok((loss, grads))
}

/// Candidates of one proposal, one set per sample in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalCandidates {
    pub proposal_id: usize,
    pub proposal: TemporalProposal,
    pub samples: Vec<Vec<DetectionCandidate>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoDetections {
    pub video_id: String,
    pub num_frames: usize,
    pub proposals: Vec<ProposalCandidates>,
}

/// Detection dump: `{"videos": [{"video_id", "num_frames", "proposals":
/// [{"proposal_id", "proposal", "samples": [[candidate, ...], ...]}]}]}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionDump {
    pub videos: Vec<VideoDetections>,
}

impl DetectionDump {
    /// Parses a dump and restores each candidate's sample index from its
    /// position.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut dump: DetectionDump = serde_json::from_str(text)?;
        for v in &mut dump.videos {
            for p in &mut v.proposals {
                p.proposal.validate()?;
                for (t, set) in p.samples.iter_mut().enumerate() {
                    set.iter_mut().for_each(|c| c.sample_index = t + 1);
                }
            }
        }
        Ok(dump)
    }
}
