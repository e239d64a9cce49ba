//! Boxes, tubes and temporal proposals, together with the overlap and
//! interpolation arithmetic the rest of the crate is built on.
//!
//! Frame indices are 1-based and intervals are inclusive on both ends.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Axis-aligned box in center/size form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(Error::InvalidBox(format!(
                "non-finite coordinates ({x}, {y}, {w}, {h})"
            )));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(Error::InvalidBox(format!(
                "non-positive size w={w}, h={h}"
            )));
        }
        Ok(Self { x, y, w, h })
    }

    /// Builds a box from corner coordinates `(x0, y0, x1, y1)`.
    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        Self::new((x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0)
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn center(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn corners(&self) -> [f64; 4] {
        let (hw, hh) = (self.w / 2.0, self.h / 2.0);
        [self.x - hw, self.y - hh, self.x + hw, self.y + hh]
    }

    /// Center offset from `self` to `other`.
    pub fn center_offset_to(&self, other: &BoundingBox) -> [f64; 2] {
        [other.x - self.x, other.y - self.y]
    }

    /// Same-size box moved to a new center.
    pub fn with_center(&self, x: f64, y: f64) -> Result<Self> {
        Self::new(x, y, self.w, self.h)
    }

    /// Coordinate-wise blend `(1 - t) * self + t * other` over (x, y, w, h).
    ///
    /// Sizes stay positive for `t` in `[0, 1]`.
    pub fn lerp(&self, other: &BoundingBox, t: f64) -> BoundingBox {
        let mix = |a: f64, b: f64| a + (b - a) * t;
        BoundingBox {
            x: mix(self.x, other.x),
            y: mix(self.y, other.y),
            w: mix(self.w, other.w),
            h: mix(self.h, other.h),
        }
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        BoundingBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

/// Intersection-over-union of the rectangles spanned by two boxes.
pub fn box_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let [ax0, ay0, ax1, ay1] = a.corners();
    let [bx0, by0, bx1, by1] = b.corners();
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    // areas from corners so that identical boxes give exactly 1
    let area_a = (ax1 - ax0) * (ay1 - ay0);
    let area_b = (bx1 - bx0) * (by1 - by0);
    let union = area_a + area_b - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// A class-labelled sequence of per-frame boxes over an inclusive interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TubeRecord", into = "TubeRecord")]
pub struct Tube {
    class_id: u32,
    start: usize,
    end: usize,
    boxes: Vec<BoundingBox>,
    score: f64,
}

#[derive(Serialize, Deserialize)]
struct TubeRecord {
    class_id: u32,
    start: usize,
    end: usize,
    #[serde(default)]
    score: f64,
    boxes: Vec<BoundingBox>,
}

impl TryFrom<TubeRecord> for Tube {
    type Error = Error;

    fn try_from(r: TubeRecord) -> Result<Self> {
        Tube::new(r.class_id, r.start, r.end, r.boxes, r.score)
    }
}

impl From<Tube> for TubeRecord {
    fn from(t: Tube) -> Self {
        TubeRecord {
            class_id: t.class_id,
            start: t.start,
            end: t.end,
            score: t.score,
            boxes: t.boxes,
        }
    }
}

impl Tube {
    pub fn new(
        class_id: u32,
        start: usize,
        end: usize,
        boxes: Vec<BoundingBox>,
        score: f64,
    ) -> Result<Self> {
        if start < 1 {
            return Err(Error::InvalidTube("frame indices are 1-based".into()));
        }
        if end < start {
            return Err(Error::InvalidTube(format!("end {end} < start {start}")));
        }
        if boxes.len() != end - start + 1 {
            return Err(Error::InvalidTube(format!(
                "{} boxes for interval [{start}, {end}]",
                boxes.len()
            )));
        }
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidTube(format!("score {score} outside [0, 1]")));
        }
        Ok(Self {
            class_id,
            start,
            end,
            boxes,
            score,
        })
    }

    /// Ground-truth style tube (score 0).
    pub fn ground_truth(class_id: u32, start: usize, boxes: Vec<BoundingBox>) -> Result<Self> {
        if boxes.is_empty() {
            return Err(Error::InvalidTube("empty box sequence".into()));
        }
        let end = start + boxes.len() - 1;
        Self::new(class_id, start, end, boxes, 0.0)
    }

    pub fn class_id(&self) -> u32 {
        self.class_id
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn end(&self) -> usize {
        self.end
    }

    pub fn score(&self) -> f64 {
        self.score
    }

    pub fn boxes(&self) -> &[BoundingBox] {
        &self.boxes
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// Box at absolute frame index, if the tube covers it.
    pub fn box_at(&self, frame: usize) -> Option<&BoundingBox> {
        if frame < self.start || frame > self.end {
            None
        } else {
            self.boxes.get(frame - self.start)
        }
    }

    pub fn with_score(mut self, score: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidTube(format!("score {score} outside [0, 1]")));
        }
        self.score = score;
        Ok(self)
    }
}

/// Normalized temporal interval with actioness and predicted dynamic level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemporalProposal {
    pub s: f64,
    pub e: f64,
    pub actioness: f64,
    pub dynamic_level: f64,
}

impl TemporalProposal {
    pub fn new(s: f64, e: f64, actioness: f64, dynamic_level: f64) -> Result<Self> {
        let p = Self {
            s,
            e,
            actioness,
            dynamic_level,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.s && self.s <= self.e && self.e <= 1.0) {
            return Err(domain(format!(
                "proposal interval ({}, {}) must satisfy 0 <= s <= e <= 1",
                self.s, self.e
            )));
        }
        if !(0.0..=1.0).contains(&self.actioness) {
            return Err(domain(format!("actioness {} outside [0, 1]", self.actioness)));
        }
        if !(self.dynamic_level >= 1.0 && self.dynamic_level.is_finite()) {
            return Err(domain(format!(
                "dynamic level {} must be finite and >= 1",
                self.dynamic_level
            )));
        }
        Ok(())
    }

    pub fn length(&self) -> f64 {
        self.e - self.s
    }
}

/// Uniform sample positions `floor(k * t / d)` for `k = 1..=d`.
pub fn uniform_sample_indices(t: usize, d: usize) -> Result<Vec<usize>> {
    if d < 1 || d > t {
        return Err(domain(format!("need 1 <= d <= T, got d={d}, T={t}")));
    }
    Ok((1..=d).map(|k| k * t / d).collect())
}

/// Dense box sequence over `[first, last]` from sparse `(frame, box)` samples.
///
/// Coordinates are interpolated linearly between consecutive samples; frames
/// outside the sampled range hold the nearest sample.
pub fn interpolate_box_sequence(
    samples: &[(usize, BoundingBox)],
    first: usize,
    last: usize,
) -> Result<Vec<BoundingBox>> {
    if samples.is_empty() {
        return Err(domain("cannot interpolate an empty sample set"));
    }
    if last < first {
        return Err(domain(format!("empty range [{first}, {last}]")));
    }
    for pair in samples.windows(2) {
        if pair[1].0 <= pair[0].0 {
            return Err(domain("sample indices must be strictly increasing"));
        }
    }
    let (lo, hi) = (samples[0].0, samples[samples.len() - 1].0);
    if lo < first || hi > last {
        return Err(domain(format!(
            "samples [{lo}, {hi}] fall outside range [{first}, {last}]"
        )));
    }

    let mut out = Vec::with_capacity(last - first + 1);
    let mut seg = 0;
    for frame in first..=last {
        if frame <= lo {
            out.push(samples[0].1);
            continue;
        }
        if frame >= hi {
            out.push(samples[samples.len() - 1].1);
            continue;
        }
        while samples[seg + 1].0 < frame {
            seg += 1;
        }
        let (f0, b0) = samples[seg];
        let (f1, b1) = samples[seg + 1];
        if frame == f1 {
            out.push(b1);
        } else {
            let t = (frame - f0) as f64 / (f1 - f0) as f64;
            out.push(b0.lerp(&b1, t));
        }
    }
    Ok(out)
}

/// Mean per-frame IoU between two equally long box sequences.
pub fn mean_frame_iou(a: &[BoundingBox], b: &[BoundingBox]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| box_iou(x, y)).sum::<f64>() / a.len() as f64
}

/// Spatio-temporal overlap: temporal IoU times mean box IoU over shared frames.
pub fn tube_st_iou(a: &Tube, b: &Tube) -> f64 {
    let lo = a.start.max(b.start);
    let hi = a.end.min(b.end);
    if lo > hi {
        return 0.0;
    }
    let inter = (hi - lo + 1) as f64;
    let union = (a.end.max(b.end) - a.start.min(b.start) + 1) as f64;
    let spatial: f64 = (lo..=hi)
        .map(|f| box_iou(&a.boxes[f - a.start], &b.boxes[f - b.start]))
        .sum::<f64>()
        / inter;
    (inter / union) * spatial
}
