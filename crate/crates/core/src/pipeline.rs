//! Orchestration behind the command-line tool: dataset profiles, sampling
//! schemes, the end-to-end run over synthetic scenes and its reports.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamic_level::{clamp_sample_count, dynamic_level_loss, DynamicLevelConfig};
use crate::error::{domain, Error, Result};
use crate::evaluation::{evaluate_thresholds, write_class_csv, EvalReport, TubeSet, VideoTubes};
use crate::feature_plane::{
    build_temporal_pyramid, decode_temporal_proposals, dts_sample, lfa_augment, lfa_weight_map,
    predict_temporal, spatial_avg_pool, ConvParams, FeatureVolume, LfaBlock, NormParams, Tensor,
};
use crate::spatial_detection::{
    association_vectors, detect_boxes, embedding_loss, shift_loss, AnchorGrid, DetectionCandidate,
    MatchLabels,
};
use crate::synthgen::{generate_scene, Scene, SceneSpec};
use crate::tube_linking::{
    link_proposal, reconstruct_dense_tube, LinkedSet, LinkedTube, LinkedVideo, DEFAULT_CLASS_FLOOR,
};
use crate::tube_model::{box_iou, tube_st_iou, BoundingBox, TemporalProposal, Tube};

pub const PIPELINE_SCHEMA_VERSION: u32 = 1;

/// Run configuration of the bundled sampling benchmark.
pub const BUNDLED_BENCHMARK: &str = include_str!("../benchmarks/sampling.json");

/// Named dataset presets: input length `T` and sample cap `N_max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Profile {
    #[default]
    #[serde(rename = "ucf101-24")]
    Ucf101,
    #[serde(rename = "jhmdb-21")]
    Jhmdb,
    #[serde(rename = "ucfsports")]
    UcfSports,
}

impl Profile {
    pub const ALL: [Profile; 3] = [Profile::Ucf101, Profile::Jhmdb, Profile::UcfSports];

    pub fn name(self) -> &'static str {
        match self {
            Profile::Ucf101 => "ucf101-24",
            Profile::Jhmdb => "jhmdb-21",
            Profile::UcfSports => "ucfsports",
        }
    }

    pub fn frames(self) -> usize {
        match self {
            Profile::Ucf101 => 96,
            Profile::Jhmdb => 32,
            Profile::UcfSports => 48,
        }
    }

    pub fn n_max(self) -> usize {
        match self {
            Profile::Ucf101 => 10,
            Profile::Jhmdb => 4,
            Profile::UcfSports => 8,
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Profile::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown profile {s:?}")))
    }
}

/// How many samples a proposal gets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SamplingScheme {
    /// Clamped predicted dynamic level.
    #[default]
    Dts,
    /// The same count for every proposal.
    FixedPoint(usize),
    /// Fixed count equal to the run's mean dynamic sample count.
    FixedPointAvg,
    /// Count proportional to proposal duration, at the run's mean rate.
    FixedStepAvg,
}

impl fmt::Display for SamplingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SamplingScheme::Dts => f.write_str("dts"),
            SamplingScheme::FixedPoint(k) => write!(f, "fixed-point-{k}"),
            SamplingScheme::FixedPointAvg => f.write_str("fixed-point-avg"),
            SamplingScheme::FixedStepAvg => f.write_str("fixed-step-avg"),
        }
    }
}

impl FromStr for SamplingScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let scheme = match s {
            "dts" => SamplingScheme::Dts,
            "fixed-point-avg" => SamplingScheme::FixedPointAvg,
            "fixed-step-avg" | "fixed-step" => SamplingScheme::FixedStepAvg,
            _ => {
                let k = s
                    .strip_prefix("fixed-point-")
                    .and_then(|k| k.parse::<usize>().ok())
                    .ok_or_else(|| Error::Config(format!("unknown sampling scheme {s:?}")))?;
                if k < 2 {
                    return Err(Error::Config(format!("{s}: fixed point count must be >= 2")));
                }
                SamplingScheme::FixedPoint(k)
            }
        };
        Ok(scheme)
    }
}

impl TryFrom<String> for SamplingScheme {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SamplingScheme> for String {
    fn from(s: SamplingScheme) -> String {
        s.to_string()
    }
}

/// Run-level statistics of the dynamic sample counts that the averaged
/// schemes calibrate against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingStats {
    pub mean_count: f64,
    /// Extra samples per unit of normalized duration.
    pub rate: f64,
}

impl SamplingStats {
    pub fn from_proposals(proposals: &[TemporalProposal], cfg: &DynamicLevelConfig) -> Result<Self> {
        if proposals.is_empty() {
            return Ok(Self {
                mean_count: cfg.n_min as f64,
                rate: 0.0,
            });
        }
        let mut total = 0.0;
        let mut extra = 0.0;
        let mut span = 0.0;
        for p in proposals {
            let n = clamp_sample_count(p.dynamic_level, cfg)? as f64;
            total += n;
            extra += n - 1.0;
            span += p.length();
        }
        Ok(Self {
            mean_count: total / proposals.len() as f64,
            rate: if span > 0.0 { extra / span } else { 0.0 },
        })
    }
}

impl SamplingScheme {
    pub fn sample_count(
        self,
        proposal: &TemporalProposal,
        cfg: &DynamicLevelConfig,
        stats: &SamplingStats,
    ) -> Result<usize> {
        Ok(match self {
            SamplingScheme::Dts => clamp_sample_count(proposal.dynamic_level, cfg)?,
            SamplingScheme::FixedPoint(k) => k,
            SamplingScheme::FixedPointAvg => (stats.mean_count.round() as usize).max(2),
            SamplingScheme::FixedStepAvg => ((stats.rate * proposal.length()).round() as usize + 1).max(2),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorMode {
    /// Oracle proposals and candidates straight from the scene generator.
    #[default]
    Oracle,
    /// Proposals and candidates from convolutional heads.
    Heads,
}

impl FromStr for DetectorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(DetectorMode::Oracle),
            "heads" => Ok(DetectorMode::Heads),
            _ => Err(Error::Config(format!("unknown detector mode {s:?}"))),
        }
    }
}

/// Weights of every network stage used by the heads detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadsConfig {
    pub down: Vec<ConvParams>,
    pub up: Vec<ConvParams>,
    /// Applied to every level of the upsample path.
    pub temporal_head: ConvParams,
    pub temporal_scales: Vec<f64>,
    pub lfa: Vec<LfaBlock>,
    pub box_head: ConvParams,
    pub assoc_head: ConvParams,
    pub grid: AnchorGrid,
    pub max_proposals: usize,
    /// Highest-scoring candidates kept per sample before linking.
    pub candidates_per_sample: usize,
}

fn random_conv(
    rng: &mut ChaCha8Rng,
    shape: Vec<usize>,
    stride: usize,
    padding: usize,
) -> Result<ConvParams> {
    let fan_in: usize = shape[1..].iter().product();
    let scale = 1.0 / (fan_in as f64).sqrt();
    let out = shape[0];
    let kernel = Tensor::from_fn(shape, |_| scale * Distribution::<f64>::sample(&StandardNormal, &mut *rng))?;
    let bias = (0..out).map(|_| 0.1 * Distribution::<f64>::sample(&StandardNormal, &mut *rng)).collect::<Vec<f64>>();
    Ok(ConvParams::new(kernel, bias, vec![stride], vec![padding]))
}

impl HeadsConfig {
    /// Random weights sized for a `(channels, t_f, height, width)` volume,
    /// a two-level pyramid and an anchor grid matching the spatial size.
    pub fn seeded(
        seed: u64,
        (channels, t_f, height, width): (usize, usize, usize, usize),
        num_classes: usize,
        embedding_dim: usize,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = channels;
        let hidden = 8;
        let scales = vec![0.25, 0.5];
        let grid = AnchorGrid {
            rows: height,
            cols: width,
            sizes: vec![(0.2, 0.2), (0.3, 0.3)],
        };
        let a = grid.sizes.len();
        let norm = |n: usize| NormParams {
            scale: vec![1.0; n],
            offset: vec![0.0; n],
        };
        Ok(Self {
            down: vec![random_conv(&mut rng, vec![c, c, 3], 2, 1)?, random_conv(&mut rng, vec![c, c, 3], 2, 1)?],
            up: vec![random_conv(&mut rng, vec![c, c, 2], 2, 0)?, random_conv(&mut rng, vec![c, c, 2], 2, 0)?],
            temporal_head: random_conv(&mut rng, vec![4 * scales.len(), c, 3], 1, 1)?,
            temporal_scales: scales,
            lfa: vec![
                LfaBlock {
                    conv: random_conv(&mut rng, vec![hidden, c, 3], 1, 1)?,
                    norm: Some(norm(hidden)),
                    relu: true,
                },
                LfaBlock {
                    conv: random_conv(&mut rng, vec![hidden, hidden, 3], 1, 1)?,
                    norm: Some(norm(hidden)),
                    relu: true,
                },
                LfaBlock {
                    conv: random_conv(&mut rng, vec![t_f, hidden, 1], 1, 0)?,
                    norm: None,
                    relu: false,
                },
            ],
            box_head: random_conv(&mut rng, vec![a * (num_classes + 4), c, 3, 3], 1, 1)?,
            assoc_head: random_conv(&mut rng, vec![a * (embedding_dim + 2), c, 3, 3, 3], 1, 1)?,
            grid,
            max_proposals: 4,
            candidates_per_sample: 8,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub profile: Profile,
    pub epsilon: f64,
    pub gamma: f64,
    pub alpha: f64,
    /// Overrides the profile's sample cap.
    pub n_max: Option<usize>,
    pub scheme: SamplingScheme,
    pub deltas: Vec<f64>,
    pub workers: usize,
    pub num_scenes: usize,
    pub detector: DetectorMode,
    /// Template for every scene; seed, length and sampling are set per run.
    pub scene: SceneSpec,
    /// Seeded from `seed` when absent.
    pub heads: Option<HeadsConfig>,
    pub class_floor: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            profile: Profile::default(),
            epsilon: 0.7,
            gamma: 0.1,
            alpha: 2.0,
            n_max: None,
            scheme: SamplingScheme::Dts,
            deltas: vec![0.5],
            workers: 1,
            num_scenes: 1,
            detector: DetectorMode::Oracle,
            scene: SceneSpec::default(),
            heads: None,
            class_floor: DEFAULT_CLASS_FLOOR,
        }
    }
}

impl RunConfig {
    pub fn sampling(&self) -> Result<DynamicLevelConfig> {
        DynamicLevelConfig::new(
            self.epsilon,
            self.gamma,
            self.n_max.unwrap_or(self.profile.n_max()),
            2,
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.sampling()?;
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha {} must be positive", self.alpha)));
        }
        if self.deltas.is_empty() || self.deltas.iter().any(|d| !(*d > 0.0 && *d < 1.0)) {
            return Err(Error::Config(format!("overlap thresholds {:?} must lie in (0, 1)", self.deltas)));
        }
        if self.workers == 0 || self.num_scenes == 0 {
            return Err(Error::Config("workers and num_scenes must be positive".into()));
        }
        if let SamplingScheme::FixedPoint(k) = self.scheme {
            if k < 2 {
                return Err(Error::Config("fixed point count must be >= 2".into()));
            }
        }
        if !(0.0..=1.0).contains(&self.class_floor) {
            return Err(Error::Config("class_floor must lie in [0, 1]".into()));
        }
        self.scene_spec(0)?.validate()
    }

    /// Scene `index` of the run: the template with a derived seed, the
    /// profile's length and a feature volume a quarter as long.
    pub fn scene_spec(&self, index: usize) -> Result<SceneSpec> {
        let mut spec = self.scene.clone();
        spec.seed = self.seed.wrapping_add(index as u64);
        spec.video_len = self.profile.frames();
        spec.features.t_f = self.profile.frames() / 4;
        spec.sampling = self.sampling()?;
        Ok(spec)
    }

    fn heads_config(&self) -> Result<HeadsConfig> {
        match &self.heads {
            Some(h) => Ok(h.clone()),
            None => {
                let f = &self.scene.features;
                HeadsConfig::seeded(
                    self.seed,
                    (f.channels, self.profile.frames() / 4, f.height, f.width),
                    self.scene.num_classes as usize,
                    self.scene.embedding_dim,
                )
            }
        }
    }
}

/// A scene with its proposals fixed, ready for any sampling scheme.
#[derive(Debug, Clone)]
pub struct PreparedScene {
    pub video_id: String,
    pub scene: Scene,
    pub proposals: Vec<TemporalProposal>,
    /// Oracle proposals know which instance they belong to.
    pub focus: Vec<Option<usize>>,
    /// Long-range augmented volume, heads mode only.
    augmented: Option<FeatureVolume>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossSummary {
    pub dynamic_level: Option<f64>,
    pub embedding: Option<f64>,
    pub shift: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeSummary {
    pub scheme: String,
    pub num_proposals: usize,
    /// Mean ST-IoU between each proposal's reconstruction and its ground truth.
    pub mean_st_iou: f64,
    pub mean_samples: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub schema_version: u32,
    pub config: RunConfig,
    pub evaluations: Vec<EvalReport>,
    pub sampling: SchemeSummary,
    pub losses: LossSummary,
    /// Not reproducible; kept apart so the rest of the report is.
    pub timing: Timing,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub report: PipelineReport,
    pub ground_truth: TubeSet,
    pub detections: LinkedSet,
}

/// One row of the scheme comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeRow {
    pub scheme: String,
    pub v_map: f64,
    pub mean_st_iou: f64,
    pub mean_samples: f64,
    pub wall_ms: f64,
}

struct ProposalOutcome {
    tubes: Vec<Tube>,
    samples: usize,
    st_iou: f64,
    losses: [Option<f64>; 3],
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

fn heads_proposals(volume: &FeatureVolume, heads: &HeadsConfig) -> Result<(Vec<TemporalProposal>, FeatureVolume)> {
    let pooled = spatial_avg_pool(volume);
    let pyramid = build_temporal_pyramid(&pooled, &heads.down, &heads.up)?;
    let mut proposals = Vec::new();
    for level in &pyramid.up {
        let (anchors, preds) = predict_temporal(level, &heads.temporal_head, &heads.temporal_scales)?;
        proposals.extend(decode_temporal_proposals(&anchors, &preds)?);
    }
    proposals.retain(|p| p.e > p.s);
    proposals.sort_by(|a, b| b.actioness.total_cmp(&a.actioness));
    proposals.truncate(heads.max_proposals);
    let weights = lfa_weight_map(&pyramid.f_p, &heads.lfa)?;
    Ok((proposals, lfa_augment(volume, &weights)?))
}

/// Generates every scene of the run and fixes its proposals.
pub fn prepare_scenes(cfg: &RunConfig) -> Result<Vec<PreparedScene>> {
    cfg.validate()?;
    let heads = match cfg.detector {
        DetectorMode::Heads => Some(cfg.heads_config()?),
        DetectorMode::Oracle => None,
    };
    pool(cfg.workers)?.install(|| {
        (0..cfg.num_scenes)
            .into_par_iter()
            .map(|i| {
                let scene = generate_scene(&cfg.scene_spec(i)?)?;
                let video_id = format!("scene_{i:04}");
                match &heads {
                    None => Ok(PreparedScene {
                        video_id,
                        proposals: scene.proposals.clone(),
                        focus: (0..scene.proposals.len()).map(Some).collect(),
                        scene,
                        augmented: None,
                    }),
                    Some(h) => {
                        let (proposals, augmented) = heads_proposals(&scene.feature_volume, h)?;
                        Ok(PreparedScene {
                            video_id,
                            focus: vec![None; proposals.len()],
                            proposals,
                            scene,
                            augmented: Some(augmented),
                        })
                    }
                }
            })
            .collect()
    })
}

fn label_candidates(cands: &[DetectionCandidate], gt: &BoundingBox) -> Option<MatchLabels> {
    let ious: Vec<f64> = cands.iter().map(|c| box_iou(&c.bbox, gt)).collect();
    let mut positive: Vec<bool> = ious.iter().map(|&v| v >= 0.5).collect();
    let best = (0..ious.len()).fold(None, |b: Option<usize>, i| match b {
        Some(j) if ious[j] >= ious[i] => Some(j),
        _ => Some(i),
    })?;
    positive[best] = true;
    Some(MatchLabels { positive, target: *gt })
}

fn proposal_losses(
    cfg: &RunConfig,
    proposal: &TemporalProposal,
    gt: &Tube,
    gt_level: usize,
    frames: &[usize],
    sets: &[Vec<DetectionCandidate>],
) -> Result<[Option<f64>; 3]> {
    let dyn_loss = dynamic_level_loss(gt_level as f64, proposal.dynamic_level, cfg.gamma).0;
    let gt_boxes: Vec<BoundingBox> = frames
        .iter()
        .map(|&f| *gt.box_at(f.clamp(gt.start(), gt.end())).expect("clamped into tube"))
        .collect();
    let labels: Option<Vec<MatchLabels>> = sets
        .iter()
        .zip(&gt_boxes)
        .map(|(s, b)| label_candidates(s, b))
        .collect();
    let Some(labels) = labels else {
        return Ok([Some(dyn_loss), None, None]);
    };
    let mut emb = 0.0;
    for (s, l) in sets.iter().zip(&labels) {
        let embeddings: Vec<Vec<f64>> = s.iter().map(|c| c.embedding.clone()).collect();
        emb += embedding_loss(&embeddings, l, cfg.alpha)?.0;
    }
    let shift = if sets.len() >= 2 {
        let shifts: Vec<Vec<[f64; 2]>> = sets.iter().map(|s| s.iter().map(|c| c.shift).collect()).collect();
        Some(shift_loss(&shifts, &labels, &gt_boxes)?.0)
    } else {
        None
    };
    Ok([Some(dyn_loss), Some(emb / sets.len() as f64), shift])
}

fn heads_candidates(
    heads: &HeadsConfig,
    augmented: &FeatureVolume,
    proposal: &TemporalProposal,
    n: usize,
) -> Result<Vec<Vec<DetectionCandidate>>> {
    let maps = dts_sample(augmented, proposal, n)?;
    let assoc = association_vectors(&maps, &heads.assoc_head, &heads.grid)?;
    maps.iter()
        .zip(assoc)
        .enumerate()
        .map(|(t, (m, vecs))| {
            let mut cands = detect_boxes(m, &heads.box_head, &heads.grid, t + 1)?;
            for (c, v) in cands.iter_mut().zip(vecs) {
                c.embedding = v.embedding;
                c.shift = v.shift;
            }
            let top = |c: &DetectionCandidate| c.scores.iter().copied().fold(0.0, f64::max);
            cands.sort_by(|a, b| top(b).total_cmp(&top(a)));
            cands.truncate(heads.candidates_per_sample);
            Ok(cands)
        })
        .collect()
}

/// Ground-truth instance a heads proposal overlaps most in time.
fn temporal_match(p: &TemporalProposal, scene: &Scene) -> Option<usize> {
    let span = (scene.spec.video_len - 1) as f64;
    let (ps, pe) = (1.0 + p.s * span, 1.0 + p.e * span);
    scene
        .instances
        .iter()
        .enumerate()
        .map(|(i, inst)| {
            let (s, e) = (inst.tube.start() as f64, inst.tube.end() as f64);
            let inter = (pe.min(e) - ps.max(s)).max(0.0);
            let union = pe.max(e) - ps.min(s);
            (i, if union > 0.0 { inter / union } else { 0.0 })
        })
        .filter(|&(_, v)| v > 0.0)
        .fold(None, |b: Option<(usize, f64)>, (i, v)| match b {
            Some((_, bv)) if bv >= v => b,
            _ => Some((i, v)),
        })
        .map(|(i, _)| i)
}

fn run_proposal(
    cfg: &RunConfig,
    sampling: &DynamicLevelConfig,
    stats: &SamplingStats,
    heads: Option<&HeadsConfig>,
    prepared: &PreparedScene,
    index: usize,
    scheme: SamplingScheme,
) -> Result<ProposalOutcome> {
    let scene = &prepared.scene;
    let proposal = prepared.proposals[index];
    let n = scheme.sample_count(&proposal, sampling, stats)?;
    let video_len = scene.spec.video_len;
    let frames = crate::tube_linking::sample_frames(proposal.s, proposal.e, n, video_len);
    let (sets, focus) = match (heads, &prepared.augmented) {
        (Some(h), Some(aug)) => (heads_candidates(h, aug, &proposal, n)?, temporal_match(&proposal, scene)),
        _ => {
            // the sampled maps are not needed by the oracle detector, but
            // sampling still validates the proposal against the volume
            dts_sample(&scene.feature_volume, &proposal, n)?;
            let focus = prepared.focus[index].ok_or_else(|| domain("oracle proposal without instance"))?;
            (scene.candidates_for(focus, &frames)?, Some(focus))
        }
    };

    let mut tubes = Vec::new();
    for draft in link_proposal(proposal, &sets, cfg.class_floor)? {
        tubes.push(reconstruct_dense_tube(&draft, video_len)?);
    }
    let (st_iou, losses) = match focus {
        Some(f) => {
            let inst = &scene.instances[f];
            let best = tubes
                .iter()
                .filter(|t| t.class_id() == inst.class_id)
                .map(|t| tube_st_iou(t, &inst.tube))
                .fold(0.0, f64::max);
            let losses = proposal_losses(cfg, &proposal, &inst.tube, inst.dynamic_level, &frames, &sets)?;
            (best, losses)
        }
        None => (0.0, [None; 3]),
    };
    Ok(ProposalOutcome {
        tubes,
        samples: n,
        st_iou,
        losses,
    })
}

struct SchemeRun {
    detections: LinkedSet,
    summary: SchemeSummary,
    losses: LossSummary,
    wall_ms: f64,
}

fn run_scheme(cfg: &RunConfig, scenes: &[PreparedScene], scheme: SamplingScheme) -> Result<SchemeRun> {
    let sampling = cfg.sampling()?;
    let all: Vec<TemporalProposal> = scenes.iter().flat_map(|s| s.proposals.iter().copied()).collect();
    let stats = SamplingStats::from_proposals(&all, &sampling)?;
    let heads = match cfg.detector {
        DetectorMode::Heads => Some(cfg.heads_config()?),
        DetectorMode::Oracle => None,
    };
    let started = Instant::now();
    let per_scene: Vec<Vec<ProposalOutcome>> = pool(cfg.workers)?.install(|| {
        scenes
            .par_iter()
            .map(|s| {
                (0..s.proposals.len())
                    .map(|i| run_proposal(cfg, &sampling, &stats, heads.as_ref(), s, i, scheme))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let wall_ms = started.elapsed().as_secs_f64() * 1e3;

    let mut videos = Vec::with_capacity(scenes.len());
    let (mut count, mut st, mut samples) = (0usize, 0.0, 0usize);
    let mut loss_acc = [(0.0, 0usize); 3];
    for (s, outcomes) in scenes.iter().zip(per_scene) {
        let mut tubes = Vec::new();
        for (pid, o) in outcomes.into_iter().enumerate() {
            count += 1;
            st += o.st_iou;
            samples += o.samples;
            for (acc, l) in loss_acc.iter_mut().zip(o.losses) {
                if let Some(v) = l {
                    acc.0 += v;
                    acc.1 += 1;
                }
            }
            tubes.extend(o.tubes.into_iter().map(|tube| LinkedTube { proposal_id: pid, tube }));
        }
        videos.push(LinkedVideo {
            video_id: s.video_id.clone(),
            num_frames: s.scene.spec.video_len,
            tubes,
        });
    }
    let mean = |(sum, n): (f64, usize)| (n > 0).then(|| sum / n as f64);
    let denom = count.max(1) as f64;
    Ok(SchemeRun {
        detections: LinkedSet { videos },
        summary: SchemeSummary {
            scheme: scheme.to_string(),
            num_proposals: count,
            mean_st_iou: st / denom,
            mean_samples: samples as f64 / denom,
        },
        losses: LossSummary {
            dynamic_level: mean(loss_acc[0]),
            embedding: mean(loss_acc[1]),
            shift: mean(loss_acc[2]),
        },
        wall_ms,
    })
}

fn ground_truth(scenes: &[PreparedScene]) -> TubeSet {
    TubeSet {
        videos: scenes
            .iter()
            .map(|s| VideoTubes {
                video_id: s.video_id.clone(),
                num_frames: Some(s.scene.spec.video_len),
                tubes: s.scene.ground_truth(),
            })
            .collect(),
    }
}

/// Synthesis, proposals, sampling, detection, linking, reconstruction and
/// evaluation over `cfg.num_scenes` scenes.
pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineOutput> {
    let started = Instant::now();
    let scenes = prepare_scenes(cfg)?;
    let run = run_scheme(cfg, &scenes, cfg.scheme)?;
    let gt = ground_truth(&scenes);
    let evaluations = evaluate_thresholds(&run.detections.to_tube_set().videos, &gt.videos, &cfg.deltas)?;
    log::info!(
        "{} scenes, {} proposals, v-mAP@{} = {:.4}",
        scenes.len(),
        run.summary.num_proposals,
        cfg.deltas[0],
        evaluations[0].v_map
    );
    Ok(PipelineOutput {
        report: PipelineReport {
            schema_version: PIPELINE_SCHEMA_VERSION,
            config: cfg.clone(),
            evaluations,
            sampling: run.summary,
            losses: run.losses,
            timing: Timing {
                wall_ms: started.elapsed().as_secs_f64() * 1e3,
            },
        },
        ground_truth: gt,
        detections: run.detections,
    })
}

/// Runs every scheme over the same scenes; v-mAP is at the first threshold.
pub fn compare_schemes(cfg: &RunConfig, schemes: &[SamplingScheme]) -> Result<Vec<SchemeRow>> {
    let scenes = prepare_scenes(cfg)?;
    let gt = ground_truth(&scenes);
    schemes
        .iter()
        .map(|&scheme| {
            let run = run_scheme(cfg, &scenes, scheme)?;
            let report = crate::evaluation::video_map(&run.detections.to_tube_set().videos, &gt.videos, cfg.deltas[0])?;
            log::info!("{scheme}: st-iou {:.4}, {:.2} samples", run.summary.mean_st_iou, run.summary.mean_samples);
            Ok(SchemeRow {
                scheme: scheme.to_string(),
                v_map: report.v_map,
                mean_st_iou: run.summary.mean_st_iou,
                mean_samples: run.summary.mean_samples,
                wall_ms: run.wall_ms,
            })
        })
        .collect()
}

pub fn default_schemes() -> Vec<SamplingScheme> {
    vec![
        SamplingScheme::Dts,
        SamplingScheme::FixedPointAvg,
        SamplingScheme::FixedStepAvg,
        SamplingScheme::FixedPoint(4),
        SamplingScheme::FixedPoint(10),
    ]
}

pub fn write_scheme_csv<W: std::io::Write>(rows: &[SchemeRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(file, value)?;
    Ok(())
}

/// Writes `report.json`, `ground_truth.json`, `tubes.json`, `ap.csv` and a
/// one-row `sampling.csv` into `dir`.
pub fn write_outputs(dir: &Path, out: &PipelineOutput) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_json(&dir.join("report.json"), &out.report)?;
    write_json(&dir.join("ground_truth.json"), &out.ground_truth)?;
    write_json(&dir.join("tubes.json"), &out.detections)?;
    write_class_csv(&out.report.evaluations, std::fs::File::create(dir.join("ap.csv"))?)?;
    let s = &out.report.sampling;
    let row = SchemeRow {
        scheme: s.scheme.clone(),
        v_map: out.report.evaluations[0].v_map,
        mean_st_iou: s.mean_st_iou,
        mean_samples: s.mean_samples,
        wall_ms: out.report.timing.wall_ms,
    };
    write_scheme_csv(&[row], std::fs::File::create(dir.join("sampling.csv"))?)
}
