//! Video-level mean average precision over spatio-temporal tube overlap.
//!
//! Detections are matched greedily in descending score order against the
//! best-overlapping unconsumed ground truth of the same class, and AP is the
//! area under the monotone precision envelope (all-point interpolation).

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::tube_model::{tube_st_iou, Tube};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const AP_METHOD: &str = "all-point";

/// Tubes of one video; the unit of annotation files and detection outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoTubes {
    pub video_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_frames: Option<usize>,
    pub tubes: Vec<Tube>,
}

/// Top-level tube file: `{"videos": [...]}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TubeSet {
    pub videos: Vec<VideoTubes>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub num_gt: usize,
    pub tp: usize,
    pub fp: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoTally {
    pub video_id: String,
    pub num_gt: usize,
    pub tp: usize,
    pub fp: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub ap_method: String,
    pub delta: f64,
    pub v_map: f64,
    /// AP for every class present in the ground truth.
    pub per_class_ap: BTreeMap<u32, f64>,
    /// Counts for every class seen in either input.
    pub per_class_counts: BTreeMap<u32, ClassCounts>,
    pub per_video: Vec<VideoTally>,
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(domain(format!("overlap threshold {delta} not in (0, 1)")))
    }
}

/// Detection indices by descending score; equal scores keep input order.
fn score_order(detections: &[Tube]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].score().total_cmp(&detections[a].score()));
    order
}

/// TP/FP flag per detection (in input order) for a single video. A
/// detection is a TP iff its best overlap with an unconsumed same-class
/// ground truth is strictly above `delta`.
pub fn match_and_score(detections: &[Tube], ground_truth: &[Tube], delta: f64) -> Result<Vec<bool>> {
    check_delta(delta)?;
    let mut consumed = vec![false; ground_truth.len()];
    let mut flags = vec![false; detections.len()];
    for i in score_order(detections) {
        let det = &detections[i];
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in ground_truth.iter().enumerate() {
            if consumed[g] || gt.class_id() != det.class_id() {
                continue;
            }
            let iou = tube_st_iou(det, gt);
            if best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        if let Some((g, iou)) = best {
            if iou > delta {
                consumed[g] = true;
                flags[i] = true;
            }
        }
    }
    Ok(flags)
}

/// Area under the precision envelope for detections already sorted by
/// descending score.
pub fn average_precision(sorted_flags: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut points = Vec::with_capacity(sorted_flags.len());
    for (k, &hit) in sorted_flags.iter().enumerate() {
        if hit {
            tp += 1;
        }
        points.push((tp as f64 / num_gt as f64, tp as f64 / (k + 1) as f64));
    }
    let mut envelope = 0.0f64;
    for p in points.iter_mut().rev() {
        envelope = envelope.max(p.1);
        p.1 = envelope;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (r, p) in points {
        if r > prev_recall {
            ap += (r - prev_recall) * p;
            prev_recall = r;
        }
    }
    ap
}

pub fn video_map(
    detections: &[VideoTubes],
    ground_truth: &[VideoTubes],
    delta: f64,
) -> Result<EvalReport> {
    check_delta(delta)?;
    let gt_by_id: HashMap<&str, &[Tube]> = ground_truth
        .iter()
        .map(|v| (v.video_id.as_str(), v.tubes.as_slice()))
        .collect();

    let flags: Vec<Vec<bool>> = detections
        .par_iter()
        .map(|v| {
            let gts = gt_by_id.get(v.video_id.as_str()).copied().unwrap_or(&[]);
            match_and_score(&v.tubes, gts, delta)
        })
        .collect::<Result<_>>()?;

    let mut counts: BTreeMap<u32, ClassCounts> = BTreeMap::new();
    for v in ground_truth {
        for t in &v.tubes {
            counts.entry(t.class_id()).or_default().num_gt += 1;
        }
    }

    // (score, hit) per class in video order then input order
    let mut per_class: BTreeMap<u32, Vec<(f64, bool)>> = BTreeMap::new();
    let mut tallies: Vec<VideoTally> = Vec::new();
    for (v, f) in detections.iter().zip(&flags) {
        let mut tally = VideoTally {
            video_id: v.video_id.clone(),
            num_gt: gt_by_id.get(v.video_id.as_str()).map_or(0, |g| g.len()),
            tp: 0,
            fp: 0,
        };
        for (t, &hit) in v.tubes.iter().zip(f) {
            per_class.entry(t.class_id()).or_default().push((t.score(), hit));
            let c = counts.entry(t.class_id()).or_default();
            if hit {
                c.tp += 1;
                tally.tp += 1;
            } else {
                c.fp += 1;
                tally.fp += 1;
            }
        }
        tallies.push(tally);
    }
    for v in ground_truth {
        if !detections.iter().any(|d| d.video_id == v.video_id) {
            tallies.push(VideoTally {
                video_id: v.video_id.clone(),
                num_gt: v.tubes.len(),
                tp: 0,
                fp: 0,
            });
        }
    }

    let mut per_class_ap = BTreeMap::new();
    for (&class_id, c) in &counts {
        if c.num_gt == 0 {
            continue;
        }
        let mut dets = per_class.remove(&class_id).unwrap_or_default();
        dets.sort_by(|a, b| b.0.total_cmp(&a.0));
        let sorted: Vec<bool> = dets.iter().map(|d| d.1).collect();
        per_class_ap.insert(class_id, average_precision(&sorted, c.num_gt));
    }
    let v_map = if per_class_ap.is_empty() {
        0.0
    } else {
        per_class_ap.values().sum::<f64>() / per_class_ap.len() as f64
    };

    Ok(EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        ap_method: AP_METHOD.to_string(),
        delta,
        v_map,
        per_class_ap,
        per_class_counts: counts,
        per_video: tallies,
    })
}

/// One report per threshold.
pub fn evaluate_thresholds(
    detections: &[VideoTubes],
    ground_truth: &[VideoTubes],
    deltas: &[f64],
) -> Result<Vec<EvalReport>> {
    deltas
        .iter()
        .map(|&d| video_map(detections, ground_truth, d))
        .collect()
}

/// `delta,class_id,ap,num_gt,tp,fp` rows for every ground-truth class.
pub fn write_class_csv<W: Write>(reports: &[EvalReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["delta", "class_id", "ap", "num_gt", "tp", "fp"])?;
    for r in reports {
        for (class_id, ap) in &r.per_class_ap {
            let c = r.per_class_counts.get(class_id).copied().unwrap_or_default();
            w.write_record([
                r.delta.to_string(),
                class_id.to_string(),
                format!("{ap:.6}"),
                c.num_gt.to_string(),
                c.tp.to_string(),
                c.fp.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
