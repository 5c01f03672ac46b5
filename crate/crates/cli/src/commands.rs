use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use tto::io::{self, Manifest};
use tto::metrics::{evaluate, EVAL_SIZE};
use tto::model::{split_frames, TrackSet};
use tto::pipeline::{ablate as run_ablation, optimize_clip, track_clip, AblationMode, PipelineConfig};
use tto::smooth::kalman_smooth;
use tto::synth::{generate_scene, jitter_tracks, preset_jitter, preset_with, schedule_annotations, AnnotationSchedule, SceneSpec, SuiteEntry, SuiteManifest};
use tto::Error;

/// Maps the first pipeline error in the chain to the documented exit code.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Shape(_) => 3,
                Error::Numerical { .. } => 4,
                Error::InvalidArgument(_) | Error::NotFound(_) | Error::Format { .. } | Error::Io(_) => 2,
            };
        }
    }
    2
}

fn shape_error(msg: String) -> anyhow::Error {
    Error::Shape(msg).into()
}

#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArg {
    /// JSON pipeline config; command-line flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl ConfigArg {
    /// Built-in defaults, overlaid by the config file if one is given.
    pub fn load(&self) -> Result<PipelineConfig> {
        match &self.config {
            Some(p) => Ok(io::read_json(p)?),
            None => Ok(PipelineConfig::default()),
        }
    }
}

// ---------------------------------------------------------------- synth

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Scene spec JSON.
    #[arg(long, conflicts_with = "preset")]
    pub spec: Option<PathBuf>,
    /// Named preset: default, distractor-heavy, long-600, fast-10x, static, jittered.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// Seed of the first scene; later scenes count up from it.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub speed_factor: Option<f64>,
    #[arg(long)]
    pub frames: Option<usize>,
    /// Number of scenes.
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Annotation schedule: interval-N, s1, s2 or s3.
    #[arg(long, default_value = "interval-10")]
    pub schedule: AnnotationSchedule,
    /// Gaussian noise on label positions, in pixels.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
}

pub fn synth(a: SynthArgs) -> Result<()> {
    if a.count == 0 {
        bail!(Error::InvalidArgument("--count must be >= 1".into()));
    }
    let (name, base) = match &a.spec {
        Some(path) => {
            let mut spec: SceneSpec = io::read_json(path)?;
            if let Some(f) = a.frames {
                spec.frames = f;
            }
            if let Some(v) = a.speed_factor {
                spec.speed_factor = v;
            }
            if let Some(s) = a.seed {
                spec.seed = s;
            }
            spec.validate()?;
            ("scene".to_string(), Some(spec))
        }
        None => (a.preset.clone().unwrap_or_else(|| "default".into()), None),
    };
    let first_seed = a.seed.or(base.as_ref().map(|s| s.seed)).unwrap_or(0);
    let mut entries = Vec::with_capacity(a.count);
    for i in 0..a.count as u64 {
        let seed = first_seed + i;
        let spec = match &base {
            Some(b) => SceneSpec { seed, ..b.clone() },
            None => preset_with(&name, seed, a.frames, a.speed_factor)?,
        };
        let entry = SuiteEntry {
            id: format!("{name}-{seed:03}"),
            spec,
            schedule: a.schedule,
            noise_sigma: a.noise,
        };
        write_scene(&a.out.join(&entry.id), &entry, preset_jitter(&name))?;
        log::info!("wrote {} ({} frames)", entry.id, entry.spec.frames);
        entries.push(entry);
    }
    let manifest = SuiteManifest {
        format_version: io::FORMAT_VERSION,
        scenes: entries,
    };
    io::write_json(&a.out.join("suite.json"), &manifest)?;
    Ok(())
}

fn write_scene(dir: &Path, entry: &SuiteEntry, jitter: Option<f64>) -> Result<()> {
    let (clip, gt) = generate_scene(&entry.spec)?;
    let ann = schedule_annotations(&gt, entry.schedule, entry.noise_sigma, entry.spec.seed, clip.width(), clip.height())?;
    io::save_scene(dir, &clip, &gt, &ann)?;
    if let Some(sigma) = jitter {
        io::save_tracks(&jitter_tracks(&gt, sigma, entry.spec.seed)?, &dir.join("jittered_tracks.csv"))?;
    }
    Ok(())
}

// ---------------------------------------------------------------- track

#[derive(Args, Debug)]
pub struct TrackArgs {
    /// Frame directory with manifest.json.
    #[arg(long)]
    pub video: PathBuf,
    #[arg(long)]
    pub ann: PathBuf,
    /// Embedding to track with; defaults to the average of the annotated patches.
    #[arg(long)]
    pub embedding: Option<PathBuf>,
    /// Track file (.csv, or .json for the JSON variant).
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
}

pub fn track(a: TrackArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let clip = io::load_video(&a.video)?;
    let ann = io::load_annotations(&a.ann)?;
    let emb = a.embedding.as_deref().map(|p| io::load_embedding(p, &cfg.features)).transpose()?;
    let (_, tracks) = track_clip(&clip, &ann, emb.as_ref(), &cfg)?;
    io::save_tracks(&tracks, &a.out)?;
    let visible = tracks.points().iter().filter(|p| p.visible).count();
    log::info!(
        "tracked {} keypoints over {} frames, {:.1}% visible",
        tracks.num_keypoints(),
        tracks.num_frames(),
        100.0 * visible as f64 / tracks.points().len() as f64
    );
    Ok(())
}

// ------------------------------------------------------------- optimize

#[derive(Args, Debug)]
pub struct OptimizeArgs {
    #[arg(long)]
    pub video: PathBuf,
    #[arg(long)]
    pub ann: PathBuf,
    #[arg(long)]
    pub out_embedding: PathBuf,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr_start: Option<f64>,
    #[arg(long)]
    pub lr_end: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Per-step loss trace (JSON).
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Also track with the optimized embedding and write the tracks here.
    #[arg(long)]
    pub out_tracks: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArg,
}

impl OptimizeArgs {
    pub fn resolve_config(&self) -> Result<PipelineConfig> {
        let mut cfg = self.config.load()?;
        let o = &mut cfg.optim;
        if let Some(v) = self.steps {
            o.steps = v;
        }
        if let Some(v) = self.lr_start {
            o.lr_start = v;
        }
        if let Some(v) = self.lr_end {
            o.lr_end = v;
        }
        if let Some(v) = self.lambda {
            o.lambda = v;
        }
        if let Some(v) = self.seed {
            o.seed = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn optimize(a: OptimizeArgs) -> Result<()> {
    let cfg = a.resolve_config()?;
    let clip = io::load_video(&a.video)?;
    let ann = io::load_annotations(&a.ann)?;
    let every = (cfg.optim.steps / 10).max(1);
    let out = optimize_clip(&clip, &ann, &cfg, |r| {
        if r.step % every == 0 || r.step + 1 == cfg.optim.steps {
            log::info!("step {:>5}  loss {:.5}  track {:.5}  reg {:.5}  lr {:.2e}", r.step, r.total, r.track, r.reg, r.lr);
        } else {
            log::trace!("step {:>5}  loss {:.5}", r.step, r.total);
        }
    })?;
    io::save_embedding(&out.embedding, &cfg.features, &a.out_embedding)?;
    if let Some(p) = &a.trace {
        io::save_versioned(&out.trace, p)?;
    }
    if let Some(p) = &a.out_tracks {
        io::save_tracks(&out.tracks, p)?;
    }
    match out.trace.final_loss {
        Some(l) => log::info!(
            "done in {:.1}s, final loss {:.5} (track {:.5}, reg {:.5})",
            out.trace.duration_secs,
            l.total,
            l.track,
            l.reg
        ),
        None => log::info!("no optimization performed"),
    }
    Ok(())
}

// ----------------------------------------------------------------- eval

/// Which frames `eval` scores.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FrameSelection {
    Test,
    All,
    List(Vec<usize>),
}

impl std::str::FromStr for FrameSelection {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "test" => Ok(Self::Test),
            "all" => Ok(Self::All),
            list => list
                .split(',')
                .map(|f| f.trim().parse::<usize>().map_err(|_| format!("bad frame index '{f}'")))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map(Self::List),
        }
    }
}

impl FrameSelection {
    pub fn frames(&self, num_frames: usize, interval: usize) -> Result<Vec<usize>> {
        Ok(match self {
            Self::Test => split_frames(num_frames, interval)?.1,
            Self::All => (0..num_frames).collect(),
            Self::List(v) => {
                if let Some(f) = v.iter().find(|&&f| f >= num_frames) {
                    return Err(shape_error(format!("frame {f} is beyond the {num_frames}-frame tracks")));
                }
                v.clone()
            }
        })
    }
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// test, all, or a comma-separated frame list.
    #[arg(long, default_value = "test")]
    pub frames: FrameSelection,
    /// Annotation interval defining the test split.
    #[arg(long, default_value_t = 10)]
    pub interval: usize,
    /// Video directory whose manifest gives the geometry for eval-space scaling.
    #[arg(long, conflicts_with = "size")]
    pub video: Option<PathBuf>,
    /// Frame geometry as WxH when no video is given.
    #[arg(long, default_value = "256x256")]
    pub size: String,
    #[arg(long)]
    pub report: PathBuf,
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let parsed = s.split_once(['x', 'X']).and_then(|(w, h)| Some((w.parse().ok()?, h.parse().ok()?)));
    match parsed {
        Some((w, h)) if w > 0 && h > 0 => Ok((w, h)),
        _ => bail!(Error::InvalidArgument(format!("bad size '{s}', expected WxH"))),
    }
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let pred = io::load_tracks(&a.pred)?;
    let gt = io::load_tracks(&a.gt)?;
    if !pred.same_shape(&gt) {
        return Err(shape_error(format!(
            "prediction has {} keypoints x {} frames, ground truth {} x {}",
            pred.num_keypoints(),
            pred.num_frames(),
            gt.num_keypoints(),
            gt.num_frames()
        )));
    }
    let (w, h) = match &a.video {
        Some(dir) => {
            let m: Manifest = io::read_json(&dir.join(io::MANIFEST_FILE))?;
            (m.width, m.height)
        }
        None => parse_size(&a.size)?,
    };
    let frames = a.frames.frames(gt.num_frames(), a.interval)?;
    let report = evaluate(&pred, &gt, w, h, &frames)?;
    io::write_json(&a.report, &report)?;
    println!("{}", report.to_table());
    log::info!("scored {} frames in {EVAL_SIZE}x{EVAL_SIZE} eval space", frames.len());
    Ok(())
}

// --------------------------------------------------------------- smooth

#[derive(Args, Debug)]
pub struct SmoothArgs {
    #[arg(long)]
    pub tracks: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Filter + smoother passes.
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub process_noise: Option<f64>,
    #[arg(long)]
    pub measurement_noise: Option<f64>,
    #[command(flatten)]
    pub config: ConfigArg,
}

pub fn smooth(a: SmoothArgs) -> Result<()> {
    let mut kcfg = a.config.load()?.kalman;
    if let Some(v) = a.iters {
        kcfg.iterations = v;
    }
    if let Some(v) = a.process_noise {
        kcfg.process_noise = v;
    }
    if let Some(v) = a.measurement_noise {
        kcfg.measurement_noise = v;
    }
    kcfg.validate()?;
    let tracks: TrackSet = io::load_tracks(&a.tracks)?;
    if tracks.num_frames() < 2 {
        return Err(shape_error(format!("smoothing needs at least 2 frames, got {}", tracks.num_frames())));
    }
    io::save_tracks(&kalman_smooth(&tracks, &kcfg)?, &a.out)?;
    Ok(())
}

// --------------------------------------------------------------- ablate

#[derive(Args, Debug)]
pub struct AblateArgs {
    /// suite.json written by `synth`.
    #[arg(long)]
    pub suite: PathBuf,
    /// intervals, strategies or pseudo.
    #[arg(long)]
    pub mode: AblationMode,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Runs executed concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[command(flatten)]
    pub config: ConfigArg,
}

pub fn ablate(a: AblateArgs) -> Result<()> {
    let mut cfg = a.config.load()?;
    if let Some(v) = a.steps {
        cfg.optim.steps = v;
    }
    if let Some(v) = a.seed {
        cfg.optim.seed = v;
    }
    let suite: SuiteManifest = io::read_json(&a.suite)?;
    if suite.format_version != io::FORMAT_VERSION {
        bail!(Error::Format {
            location: format!("{}: $.format_version", a.suite.display()),
            message: format!("unsupported format version {}", suite.format_version),
        });
    }
    let report = run_ablation(&suite, a.mode, &cfg, a.jobs, |cond, i| {
        log::info!("{cond}: scene {}/{}", i + 1, suite.scenes.len());
    })?;
    io::save_versioned(&report, &a.out)?;
    println!("{}", report.to_table());
    Ok(())
}

// ---------------------------------------------------------------- serve

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "tto-data")]
    pub data_dir: PathBuf,
    /// Concurrent jobs across sessions.
    #[arg(long, default_value_t = 2)]
    pub workers: usize,
    /// Upload size cap in MiB.
    #[arg(long, default_value_t = 256)]
    pub max_upload_mb: usize,
    /// Origin allowed by CORS; any origin when omitted.
    #[arg(long)]
    pub cors_origin: Option<String>,
    /// Serve the labeling UI bundle from this directory.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
}

pub fn serve(a: ServeArgs) -> Result<()> {
    let cfg = tto_service::ServiceConfig {
        data_dir: a.data_dir,
        workers: a.workers,
        max_upload_bytes: a.max_upload_mb * 1024 * 1024,
        cors_origin: a.cors_origin,
        static_dir: a.static_dir,
    };
    let runtime = tokio::runtime::Runtime::new().context("starting the async runtime")?;
    runtime.block_on(tto_service::serve(cfg, ([0, 0, 0, 0], a.port).into()))
}
