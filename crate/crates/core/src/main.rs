use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use tubekit::dynamic_level::ground_truth_dynamic_level;
use tubekit::evaluation::{evaluate_thresholds, write_class_csv, TubeSet, VideoTubes};
use tubekit::pipeline::{
    compare_schemes, default_schemes, run_pipeline, write_outputs, write_scheme_csv, DetectorMode,
    HeadsConfig, Profile, RunConfig, SamplingScheme, BUNDLED_BENCHMARK,
};
use tubekit::spatial_detection::{DetectionDump, ProposalCandidates, VideoDetections};
use tubekit::synthgen::{generate_scene, SceneSpec};
use tubekit::tube_linking::{link_dump, DEFAULT_CLASS_FLOOR};
use tubekit::{Error, Result};

#[derive(Parser)]
#[command(name = "tubekit", version, about = "Sparse-to-dense action tube toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene and write its annotations, candidates and features
    Synth {
        /// Scene spec JSON; defaults are used for missing fields
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ground-truth dynamic level of every annotated tube
    Oracle {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long, default_value_t = 0.7)]
        epsilon: f64,
        /// Output file; stdout when absent
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare sampling schemes on a benchmark run (the bundled one by default)
    SampleCompare {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated schemes
        #[arg(long = "schemes", value_delimiter = ',')]
        schemes: Vec<SamplingScheme>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Link a detection dump into dense tubes
    Link {
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long, default_value_t = DEFAULT_CLASS_FLOOR)]
        class_floor: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Video-mAP of detected tubes against annotations
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        det: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.5")]
        delta: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full run over synthetic scenes
    Pipeline {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration JSON; flags override its fields
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    n_max: Option<usize>,
    #[arg(long)]
    profile: Option<Profile>,
    #[arg(long)]
    scheme: Option<SamplingScheme>,
    #[arg(long, value_delimiter = ',')]
    delta: Vec<f64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    scenes: Option<usize>,
    #[arg(long)]
    detector: Option<DetectorMode>,
    /// Heads weights JSON for the heads detector
    #[arg(long)]
    heads: Option<PathBuf>,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&read_text(path)?)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    serde_json::to_writer_pretty(BufWriter::new(File::create(path)?), value)?;
    Ok(())
}

impl RunArgs {
    fn config(&self, fallback: Option<&str>) -> Result<RunConfig> {
        let mut cfg: RunConfig = match (&self.spec, fallback) {
            (Some(p), _) => read_json(p)?,
            (None, Some(text)) => serde_json::from_str(text)?,
            (None, None) => RunConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.epsilon {
            cfg.epsilon = v;
        }
        if let Some(v) = self.gamma {
            cfg.gamma = v;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if self.n_max.is_some() {
            cfg.n_max = self.n_max;
        }
        if let Some(v) = self.profile {
            cfg.profile = v;
        }
        if let Some(v) = self.scheme {
            cfg.scheme = v;
        }
        if !self.delta.is_empty() {
            cfg.deltas = self.delta.clone();
        }
        if let Some(v) = self.workers {
            cfg.workers = v;
        }
        if let Some(v) = self.scenes {
            cfg.num_scenes = v;
        }
        if let Some(v) = self.detector {
            cfg.detector = v;
        }
        if let Some(p) = &self.heads {
            cfg.heads = Some(read_json::<HeadsConfig>(p)?);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Serialize)]
struct TubeLevel {
    tube_index: usize,
    class_id: u32,
    start: usize,
    end: usize,
    dynamic_level: usize,
}

#[derive(Serialize)]
struct VideoLevels {
    video_id: String,
    levels: Vec<TubeLevel>,
}

#[derive(Serialize)]
struct LevelReport {
    epsilon: f64,
    videos: Vec<VideoLevels>,
}

fn synth(spec: Option<PathBuf>, seed: Option<u64>, epsilon: Option<f64>, out: &Path) -> Result<()> {
    let mut spec: SceneSpec = match spec {
        Some(p) => read_json(&p)?,
        None => SceneSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    if let Some(e) = epsilon {
        spec.sampling.epsilon = e;
    }
    let scene = generate_scene(&spec)?;
    fs::create_dir_all(out)?;
    let video_id = format!("synth_{}", spec.seed);
    write_json(
        &out.join("annotations.json"),
        &TubeSet {
            videos: vec![VideoTubes {
                video_id: video_id.clone(),
                num_frames: Some(spec.video_len),
                tubes: scene.ground_truth(),
            }],
        },
    )?;
    let dump = DetectionDump {
        videos: vec![VideoDetections {
            video_id,
            num_frames: spec.video_len,
            proposals: scene
                .proposals
                .iter()
                .zip(&scene.candidates)
                .enumerate()
                .map(|(i, (p, c))| ProposalCandidates {
                    proposal_id: i,
                    proposal: *p,
                    samples: c.clone(),
                })
                .collect(),
        }],
    };
    write_json(&out.join("candidates.json"), &dump)?;
    write_json(&out.join("scene.json"), &scene.instances)?;
    write_json(&out.join("spec.json"), &spec)?;
    scene
        .feature_volume
        .as_tensor()
        .write_binary(BufWriter::new(File::create(out.join("features.bin"))?))?;
    println!("{} instances written to {}", scene.instances.len(), out.display());
    Ok(())
}

fn oracle(annotations: &Path, epsilon: f64, out: Option<PathBuf>) -> Result<()> {
    let set: TubeSet = read_json(annotations)?;
    let mut videos = Vec::with_capacity(set.videos.len());
    for v in &set.videos {
        let levels = v
            .tubes
            .iter()
            .enumerate()
            .map(|(i, t)| {
                Ok(TubeLevel {
                    tube_index: i,
                    class_id: t.class_id(),
                    start: t.start(),
                    end: t.end(),
                    dynamic_level: ground_truth_dynamic_level(t, epsilon)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        videos.push(VideoLevels {
            video_id: v.video_id.clone(),
            levels,
        });
    }
    let report = LevelReport { epsilon, videos };
    match out {
        Some(p) => write_json(&p, &report),
        None => {
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
    }
}

fn sample_compare(run: &RunArgs, schemes: Vec<SamplingScheme>, out: Option<PathBuf>) -> Result<()> {
    let cfg = run.config(Some(BUNDLED_BENCHMARK))?;
    let schemes = if schemes.is_empty() { default_schemes() } else { schemes };
    let rows = compare_schemes(&cfg, &schemes)?;
    println!("{:<18} {:>8} {:>12} {:>12} {:>10}", "scheme", "v-mAP", "st-iou", "samples", "wall ms");
    for r in &rows {
        println!(
            "{:<18} {:>8.4} {:>12.4} {:>12.3} {:>10.1}",
            r.scheme, r.v_map, r.mean_st_iou, r.mean_samples, r.wall_ms
        );
    }
    if let Some(dir) = out {
        fs::create_dir_all(&dir)?;
        write_scheme_csv(&rows, File::create(dir.join("sampling.csv"))?)?;
        write_json(&dir.join("config.json"), &cfg)?;
    }
    Ok(())
}

fn link(candidates: &Path, class_floor: f64, out: &Path) -> Result<()> {
    if !(0.0..=1.0).contains(&class_floor) {
        return Err(Error::Config(format!("class floor {class_floor} outside [0, 1]")));
    }
    let dump = DetectionDump::from_json(&read_text(candidates)?)?;
    let linked = link_dump(&dump, class_floor)?;
    let count: usize = linked.videos.iter().map(|v| v.tubes.len()).sum();
    write_json(out, &linked)?;
    println!("{count} tubes written to {}", out.display());
    Ok(())
}

fn eval(gt: &Path, det: &Path, delta: &[f64], out: Option<PathBuf>) -> Result<()> {
    let gt: TubeSet = read_json(gt)?;
    let det: TubeSet = read_json(det)?;
    let reports = evaluate_thresholds(&det.videos, &gt.videos, delta)?;
    for r in &reports {
        println!("v-mAP@{} = {:.4}", r.delta, r.v_map);
    }
    if let Some(dir) = out {
        fs::create_dir_all(&dir)?;
        write_json(&dir.join("eval.json"), &reports)?;
        write_class_csv(&reports, File::create(dir.join("ap.csv"))?)?;
    }
    Ok(())
}

fn pipeline(run: &RunArgs, out: &Path) -> Result<()> {
    let cfg = run.config(None)?;
    let output = run_pipeline(&cfg)?;
    write_outputs(out, &output)?;
    for r in &output.report.evaluations {
        println!("v-mAP@{} = {:.4}", r.delta, r.v_map);
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            spec,
            seed,
            epsilon,
            out,
        } => synth(spec, seed, epsilon, &out),
        Command::Oracle {
            annotations,
            epsilon,
            out,
        } => oracle(&annotations, epsilon, out),
        Command::SampleCompare { run, schemes, out } => sample_compare(&run, schemes, out),
        Command::Link {
            candidates,
            class_floor,
            out,
        } => link(&candidates, class_floor, &out),
        Command::Eval { gt, det, delta, out } => eval(&gt, &det, &delta, out),
        Command::Pipeline { run, out } => pipeline(&run, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TUBEKIT_LOG", "warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{body}");
            ExitCode::FAILURE
        }
    }
}
