//! Seeded synthetic scenes: ground-truth tubes with controllable motion,
//! oracle detection candidates for any set of sample frames, and a feature
//! volume carrying a bump per visible instance.
//!
//! All randomness comes from ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded with
//! `seed_from_u64(seed)`. Independent purposes draw from distinct ChaCha
//! streams (`set_stream`), so candidates for one proposal never perturb the
//! trajectories or another proposal's candidates. Other implementations
//! should share fixtures through the dumped JSON rather than re-deriving
//! streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynamic_level::{clamp_sample_count, ground_truth_dynamic_level, DynamicLevelConfig};
use crate::error::{Error, Result};
use crate::feature_plane::FeatureVolume;
use crate::spatial_detection::DetectionCandidate;
use crate::tube_linking::sample_frames;
use crate::tube_model::{BoundingBox, TemporalProposal, Tube};

const STREAM_LAYOUT: u64 = 1;
const STREAM_PROPOSALS: u64 = 2;
const STREAM_FEATURES: u64 = 3;
const STREAM_CANDIDATES: u64 = 1 << 32;

/// Motion model of one instance, in normalized image units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trajectory {
    Constant,
    /// Straight line at `speed` per frame in a random direction.
    Linear { speed: f64 },
    /// Oscillation of `amplitude` along a random axis with a period in frames.
    Sinusoidal { amplitude: f64, period: f64 },
    /// Gaussian steps of standard deviation `step_scale` per frame, with the
    /// heading redrawn every `segment` frames.
    RandomWalk { step_scale: f64, segment: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    /// Radius of the ball embeddings are drawn from around their instance center.
    pub embedding_spread: f64,
    /// Shift error radius as a fraction of the box width.
    pub shift_noise: f64,
    /// Uniform jitter applied to candidate class scores.
    pub score_noise: f64,
    /// Box jitter as a fraction of box size.
    pub box_noise: f64,
    /// Uniform jitter on oracle proposal boundaries (normalized time).
    pub proposal_jitter: f64,
    /// Uniform jitter added to the oracle dynamic level.
    pub level_noise: f64,
    /// Oracle actioness is drawn from `[1 - actioness_noise, 1]`.
    pub actioness_noise: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self::zero()
    }
}

impl NoiseSpec {
    pub fn zero() -> Self {
        Self {
            embedding_spread: 0.0,
            shift_noise: 0.0,
            score_noise: 0.0,
            box_noise: 0.0,
            proposal_jitter: 0.0,
            level_noise: 0.0,
            actioness_noise: 0.0,
        }
    }

    /// Preset used by the end-to-end quality bar.
    pub fn moderate() -> Self {
        Self {
            embedding_spread: 0.1,
            shift_noise: 0.1,
            score_noise: 0.05,
            box_noise: 0.03,
            proposal_jitter: 0.01,
            level_noise: 0.5,
            actioness_noise: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub channels: usize,
    pub t_f: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        Self {
            channels: 4,
            t_f: 16,
            height: 8,
            width: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub seed: u64,
    pub video_len: usize,
    pub num_instances: usize,
    /// Cycled over instances.
    pub trajectories: Vec<Trajectory>,
    pub num_classes: u32,
    /// Box side lengths are drawn uniformly from this range.
    pub box_size: (f64, f64),
    /// Minimum instance duration as a fraction of the video.
    pub min_duration: f64,
    pub embedding_dim: usize,
    /// Distance between instance embedding centers.
    pub embedding_separation: f64,
    pub distractors: usize,
    /// Class score of the proposal's own instance.
    pub focus_score: f64,
    /// Class score of other instances visible in the same proposal.
    pub other_score: f64,
    /// Upper bound of distractor class scores.
    pub distractor_score: f64,
    pub noise: NoiseSpec,
    pub features: FeatureSpec,
    pub sampling: DynamicLevelConfig,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            video_len: 96,
            num_instances: 3,
            trajectories: default_mix(),
            num_classes: 4,
            box_size: (0.15, 0.3),
            min_duration: 0.4,
            embedding_dim: 8,
            embedding_separation: 1.0,
            distractors: 2,
            focus_score: 0.9,
            other_score: 0.3,
            distractor_score: 0.2,
            noise: NoiseSpec::zero(),
            features: FeatureSpec::default(),
            sampling: DynamicLevelConfig::default(),
        }
    }
}

/// Constant, linear, sinusoidal and random-walk motion in that order.
pub fn default_mix() -> Vec<Trajectory> {
    vec![
        Trajectory::Constant,
        Trajectory::Linear { speed: 0.004 },
        Trajectory::Sinusoidal {
            amplitude: 0.12,
            period: 40.0,
        },
        Trajectory::RandomWalk {
            step_scale: 0.018,
            segment: 4,
        },
    ]
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.video_len < 2 {
            return bad(format!("video_len {} < 2", self.video_len));
        }
        if self.num_classes == 0 {
            return bad("num_classes must be positive".into());
        }
        if self.num_instances > 0 && self.trajectories.is_empty() {
            return bad("no trajectory kinds given".into());
        }
        if self.num_instances + 1 > self.embedding_dim {
            return bad(format!(
                "{} instances need embedding_dim > {}",
                self.num_instances, self.num_instances
            ));
        }
        let (lo, hi) = self.box_size;
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return bad(format!("box_size range ({lo}, {hi}) must lie in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.min_duration) {
            return bad("min_duration must lie in [0, 1]".into());
        }
        for s in [self.focus_score, self.other_score, self.distractor_score] {
            if !(0.0..=1.0).contains(&s) {
                return bad(format!("score level {s} outside [0, 1]"));
            }
        }
        let n = &self.noise;
        let levels = [
            n.embedding_spread,
            n.shift_noise,
            n.score_noise,
            n.box_noise,
            n.proposal_jitter,
            n.level_noise,
            n.actioness_noise,
        ];
        if levels.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("noise levels must be finite and non-negative".into());
        }
        if n.actioness_noise > 1.0 || n.box_noise >= 1.0 {
            return bad("actioness_noise must be <= 1 and box_noise < 1".into());
        }
        for t in &self.trajectories {
            let ok = match *t {
                Trajectory::Constant => true,
                Trajectory::Linear { speed } => speed.is_finite() && speed >= 0.0,
                Trajectory::Sinusoidal { amplitude, period } => {
                    amplitude.is_finite() && amplitude >= 0.0 && period > 0.0
                }
                Trajectory::RandomWalk {
                    step_scale,
                    segment,
                } => step_scale.is_finite() && step_scale >= 0.0 && segment > 0,
            };
            if !ok {
                return bad(format!("invalid trajectory parameters {t:?}"));
            }
        }
        let f = &self.features;
        if f.channels == 0 || f.t_f == 0 || f.height == 0 || f.width == 0 {
            return bad("feature dimensions must be positive".into());
        }
        self.sampling.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub class_id: u32,
    pub trajectory: Trajectory,
    pub tube: Tube,
    pub embedding_center: Vec<f64>,
    /// Oracle dynamic level of the ground-truth tube.
    pub dynamic_level: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub spec: SceneSpec,
    pub instances: Vec<Instance>,
    pub distractor_center: Vec<f64>,
    /// One oracle proposal per instance, in instance order.
    pub proposals: Vec<TemporalProposal>,
    /// Candidates for each proposal at its dynamic-sampling frames.
    pub candidates: Vec<Vec<Vec<DetectionCandidate>>>,
    pub feature_volume: FeatureVolume,
}

impl Scene {
    pub fn ground_truth(&self) -> Vec<Tube> {
        self.instances.iter().map(|i| i.tube.clone()).collect()
    }

    /// Sample count the oracle level maps to under the scene's clamp.
    pub fn dts_sample_count(&self, proposal: usize) -> Result<usize> {
        clamp_sample_count(self.proposals[proposal].dynamic_level, &self.spec.sampling)
    }

    /// Frames at which `n` samples of a proposal land.
    pub fn frames_for(&self, proposal: usize, n: usize) -> Vec<usize> {
        let p = &self.proposals[proposal];
        sample_frames(p.s, p.e, n, self.spec.video_len)
    }

    /// Oracle candidate sets for one proposal at the given frames: one
    /// candidate per visible instance plus distractors, shuffled. The focus
    /// instance carries `focus_score` for its class, others `other_score`.
    pub fn candidates_for(&self, focus: usize, frames: &[usize]) -> Result<Vec<Vec<DetectionCandidate>>> {
        let spec = &self.spec;
        let noise = &spec.noise;
        let mut rng = stream(spec.seed, STREAM_CANDIDATES + focus as u64 * 4096 + frames.len() as u64);
        let k = spec.num_classes as usize;
        let mut sets = Vec::with_capacity(frames.len());
        for (t, &frame) in frames.iter().enumerate() {
            let next = frames.get(t + 1).copied();
            let mut set = Vec::new();
            for (j, inst) in self.instances.iter().enumerate() {
                // the focus instance is always present; jittered proposal
                // boundaries may reach slightly past its interval
                let at = if j == focus {
                    frame.clamp(inst.tube.start(), inst.tube.end())
                } else {
                    frame
                };
                let Some(b) = inst.tube.box_at(at) else { continue };
                let bbox = jitter_box(b, noise.box_noise, &mut rng)?;
                let mut scores = vec![0.0; k];
                let level = if j == focus { spec.focus_score } else { spec.other_score };
                scores[inst.class_id as usize] = level;
                for s in scores.iter_mut() {
                    *s = (*s + noise.score_noise * rng.random_range(-1.0..=1.0)).clamp(0.0, 1.0);
                }
                let target = match next {
                    Some(nf) => {
                        let nf = nf.clamp(inst.tube.start(), inst.tube.end());
                        b.center_offset_to(inst.tube.box_at(nf).expect("clamped into tube"))
                    }
                    None => [0.0, 0.0],
                };
                let [ex, ey] = disk(noise.shift_noise * b.w(), &mut rng);
                set.push(DetectionCandidate {
                    bbox,
                    scores,
                    embedding: ball(&inst.embedding_center, noise.embedding_spread, &mut rng),
                    shift: [target[0] + ex, target[1] + ey],
                    sample_index: t + 1,
                });
            }
            for _ in 0..spec.distractors {
                let (lo, hi) = spec.box_size;
                let w = rng.random_range(lo..=hi);
                let h = rng.random_range(lo..=hi);
                let x = rng.random_range(w / 2.0..=1.0 - w / 2.0);
                let y = rng.random_range(h / 2.0..=1.0 - h / 2.0);
                let mut scores = vec![0.0; k];
                scores[rng.random_range(0..k)] = rng.random_range(0.0..=spec.distractor_score);
                let sh = disk(lo, &mut rng);
                set.push(DetectionCandidate {
                    bbox: BoundingBox::new(x, y, w, h)?,
                    scores,
                    embedding: ball(&self.distractor_center, noise.embedding_spread, &mut rng),
                    shift: sh,
                    sample_index: t + 1,
                });
            }
            // Fisher-Yates so candidate order carries no information
            for i in (1..set.len()).rev() {
                let j = rng.random_range(0..=i);
                set.swap(i, j);
            }
            sets.push(set);
        }
        Ok(sets)
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn gaussian_dir(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Uniform point in the ball of `radius` around `center`.
fn ball(center: &[f64], radius: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let dir = gaussian_dir(center.len(), rng);
    let r = radius * rng.random::<f64>().powf(1.0 / center.len() as f64);
    center.iter().zip(dir).map(|(c, d)| c + r * d).collect()
}

fn disk(radius: f64, rng: &mut ChaCha8Rng) -> [f64; 2] {
    let b = ball(&[0.0, 0.0], radius, rng);
    [b[0], b[1]]
}

fn jitter_box(b: &BoundingBox, level: f64, rng: &mut ChaCha8Rng) -> Result<BoundingBox> {
    if level == 0.0 {
        return Ok(*b);
    }
    let mut u = || rng.random_range(-1.0..=1.0) * level;
    BoundingBox::new(
        b.x() + u() * b.w(),
        b.y() + u() * b.h(),
        b.w() * (1.0 + u()),
        b.h() * (1.0 + u()),
    )
}

fn clamp_center(v: f64, size: f64) -> f64 {
    v.clamp(size / 2.0, 1.0 - size / 2.0)
}

/// Per-frame centers for a trajectory; the path is kept inside the image by
/// reflecting the drift direction and clamping.
fn trace(
    traj: &Trajectory,
    len: usize,
    (w, h): (f64, f64),
    rng: &mut ChaCha8Rng,
) -> Vec<(f64, f64)> {
    let mut x = rng.random_range(w / 2.0..=1.0 - w / 2.0);
    let mut y = rng.random_range(h / 2.0..=1.0 - h / 2.0);
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let (ca, sa) = (angle.cos(), angle.sin());
    let mut out = Vec::with_capacity(len);
    match *traj {
        Trajectory::Constant => out.resize(len, (x, y)),
        Trajectory::Linear { speed } => {
            let (mut vx, mut vy) = (speed * ca, speed * sa);
            for _ in 0..len {
                out.push((x, y));
                if !(w / 2.0..=1.0 - w / 2.0).contains(&(x + vx)) {
                    vx = -vx;
                }
                if !(h / 2.0..=1.0 - h / 2.0).contains(&(y + vy)) {
                    vy = -vy;
                }
                x = clamp_center(x + vx, w);
                y = clamp_center(y + vy, h);
            }
        }
        Trajectory::Sinusoidal { amplitude, period } => {
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let omega = std::f64::consts::TAU / period;
            // keep the oscillation inside the image
            x = x.clamp(w / 2.0 + amplitude * ca.abs(), (1.0 - w / 2.0 - amplitude * ca.abs()).max(w / 2.0));
            y = y.clamp(h / 2.0 + amplitude * sa.abs(), (1.0 - h / 2.0 - amplitude * sa.abs()).max(h / 2.0));
            for i in 0..len {
                let s = amplitude * (omega * i as f64 + phase).sin();
                out.push((clamp_center(x + s * ca, w), clamp_center(y + s * sa, h)));
            }
        }
        Trajectory::RandomWalk {
            step_scale,
            segment,
        } => {
            let (mut dx, mut dy) = (0.0, 0.0);
            for i in 0..len {
                out.push((x, y));
                if i % segment == 0 {
                    let a = rng.random_range(0.0..std::f64::consts::TAU);
                    dx = step_scale * a.cos();
                    dy = step_scale * a.sin();
                }
                let nx: f64 = StandardNormal.sample(rng);
                let ny: f64 = StandardNormal.sample(rng);
                let (sx, sy) = (dx + 0.5 * step_scale * nx, dy + 0.5 * step_scale * ny);
                if !(w / 2.0..=1.0 - w / 2.0).contains(&(x + sx)) {
                    dx = -dx;
                }
                if !(h / 2.0..=1.0 - h / 2.0).contains(&(y + sy)) {
                    dy = -dy;
                }
                x = clamp_center(x + sx, w);
                y = clamp_center(y + sy, h);
            }
        }
    }
    out
}

fn oracle_proposal(
    tube: &Tube,
    level: usize,
    video_len: usize,
    noise: &NoiseSpec,
    rng: &mut ChaCha8Rng,
) -> Result<TemporalProposal> {
    let span = (video_len - 1) as f64;
    let mut s = (tube.start() - 1) as f64 / span;
    let mut e = (tube.end() - 1) as f64 / span;
    if noise.proposal_jitter > 0.0 {
        s += rng.random_range(-1.0..=1.0) * noise.proposal_jitter;
        e += rng.random_range(-1.0..=1.0) * noise.proposal_jitter;
    }
    let s = s.clamp(0.0, 1.0);
    let mut e = e.clamp(0.0, 1.0);
    if e <= s {
        e = (s + 1.0 / span).min(1.0);
    }
    let s = s.min(e - f64::EPSILON);
    let actioness = 1.0 - noise.actioness_noise * rng.random::<f64>();
    let d_hat = (level as f64 + noise.level_noise * rng.random_range(-1.0..=1.0)).max(1.0);
    TemporalProposal::new(s, e, actioness, d_hat)
}

fn render_features(spec: &SceneSpec, instances: &[Instance]) -> Result<FeatureVolume> {
    let f = spec.features;
    let mut rng = stream(spec.seed, STREAM_FEATURES);
    let (c, t_f, hh, ww) = (f.channels, f.t_f, f.height, f.width);
    let mut data = vec![0.0; c * t_f * hh * ww];
    let span = (spec.video_len - 1) as f64;
    for t in 0..t_f {
        let u = if t_f == 1 { 0.0 } else { t as f64 / (t_f - 1) as f64 };
        let frame = (1.0 + u * span).round() as usize;
        for inst in instances {
            let Some(b) = inst.tube.box_at(frame) else { continue };
            let ch = inst.class_id as usize % c;
            let (sx, sy) = ((b.w() / 2.0).max(1e-3), (b.h() / 2.0).max(1e-3));
            for yi in 0..hh {
                let cy = (yi as f64 + 0.5) / hh as f64;
                for xi in 0..ww {
                    let cx = (xi as f64 + 0.5) / ww as f64;
                    let g = (-((cx - b.x()) / sx).powi(2) / 2.0 - ((cy - b.y()) / sy).powi(2) / 2.0).exp();
                    data[((ch * t_f + t) * hh + yi) * ww + xi] += g;
                }
            }
        }
    }
    for v in data.iter_mut() {
        *v += 0.01 * rng.random_range(-1.0..=1.0);
    }
    FeatureVolume::new(c, t_f, hh, ww, data)
}

pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = stream(spec.seed, STREAM_LAYOUT);
    let scale = spec.embedding_separation / std::f64::consts::SQRT_2;
    let axis = |i: usize| -> Vec<f64> {
        let mut v = vec![0.0; spec.embedding_dim];
        v[i] = scale;
        v
    };

    let min_len = ((spec.min_duration * spec.video_len as f64).ceil() as usize).clamp(2, spec.video_len);
    let mut instances = Vec::with_capacity(spec.num_instances);
    for j in 0..spec.num_instances {
        let trajectory = spec.trajectories[j % spec.trajectories.len()];
        let class_id = rng.random_range(0..spec.num_classes);
        let len = rng.random_range(min_len..=spec.video_len);
        let start = rng.random_range(1..=spec.video_len - len + 1);
        let (lo, hi) = spec.box_size;
        let size = (rng.random_range(lo..=hi), rng.random_range(lo..=hi));
        let boxes = trace(&trajectory, len, size, &mut rng)
            .into_iter()
            .map(|(x, y)| BoundingBox::new(x, y, size.0, size.1))
            .collect::<Result<Vec<_>>>()?;
        let tube = Tube::ground_truth(class_id, start, boxes)?;
        let dynamic_level = ground_truth_dynamic_level(&tube, spec.sampling.epsilon)?;
        instances.push(Instance {
            class_id,
            trajectory,
            tube,
            embedding_center: axis(j),
            dynamic_level,
        });
    }

    let mut prng = stream(spec.seed, STREAM_PROPOSALS);
    let proposals = instances
        .iter()
        .map(|inst| oracle_proposal(&inst.tube, inst.dynamic_level, spec.video_len, &spec.noise, &mut prng))
        .collect::<Result<Vec<_>>>()?;

    let feature_volume = render_features(spec, &instances)?;
    let mut scene = Scene {
        spec: spec.clone(),
        instances,
        distractor_center: axis(spec.embedding_dim - 1),
        proposals,
        candidates: Vec::new(),
        feature_volume,
    };
    let mut candidates = Vec::with_capacity(scene.proposals.len());
    for p in 0..scene.proposals.len() {
        let n = scene.dts_sample_count(p)?;
        candidates.push(scene.candidates_for(p, &scene.frames_for(p, n))?);
    }
    scene.candidates = candidates;
    Ok(scene)
}
