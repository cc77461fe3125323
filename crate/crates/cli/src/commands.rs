//! Subcommands. Each writes its outputs, records them in a
//! [`RunManifest`] and re-reads what it wrote before returning.

use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, ensure, Context, Result};
use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use hand3r_core::metrics::{MetricsConfig, MetricsReport};
use hand3r_core::HandTemplate;
use hand3r_model::losses::prompted_annotations;
use hand3r_model::predictions::{self, PredictionsFile};
use hand3r_model::training::{self, ExpertCorpus, TraceRow};
use hand3r_model::{checkpoint, Hand3R, ModelConfig, TrainConfig};
use hand3r_synth::{generate_corpus, read_dataset, read_manifest, read_sequence, write_dataset, GenConfig, SequenceSample};
use serde::{Deserialize, Serialize};

use crate::export::{self, ColoredPoint, TrajectoryRow};
use crate::manifest::{list_files, RunManifest, MANIFEST};

pub const OUT_ROOT_ENV: &str = "HAND3R_OUT_ROOT";
pub const DEFAULT_OUT_ROOT: &str = "hand3r-runs";
pub const CHECKPOINT: &str = "model.ckpt";
pub const TRACE: &str = "trace.csv";
pub const RESOLVED_CONFIG: &str = "config.toml";

#[derive(Debug, Parser)]
#[command(name = "hand3r", version, about = "Desk-scale online 4D hand-scene reconstruction")]
pub struct Cli {
    /// Root for outputs of commands run without --out / --report.
    #[arg(long, global = true, env = OUT_ROOT_ENV, default_value = DEFAULT_OUT_ROOT)]
    pub out_root: PathBuf,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    GenData(GenDataArgs),
    /// Pretrain the hand expert or the scene branch.
    Pretrain(PretrainArgs),
    /// Stage 1 or Stage 2 training.
    Train(TrainArgs),
    /// Run a checkpoint over a dataset and write a predictions file.
    Predict(PredictArgs),
    /// Score a checkpoint or a predictions file.
    Eval(EvalArgs),
    /// Export the accumulated reconstruction of one sequence.
    Reconstruct(ReconstructArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::Pretrain(_) => "pretrain",
            Command::Train(_) => "train",
            Command::Predict(_) => "predict",
            Command::Eval(_) => "eval",
            Command::Reconstruct(_) => "reconstruct",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub sequences: usize,
    #[arg(long, default_value_t = 30)]
    pub frames: usize,
    #[arg(long, default_value_t = 1)]
    pub hands: usize,
    #[arg(long, default_value_t = 128)]
    pub res: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PretrainKind {
    /// Hand encoder and MANO head on a generated corpus.
    Expert,
    /// Scene branch on --data, without hand prompts.
    Scene,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PretrainArgs {
    #[arg(long, value_enum)]
    pub kind: PretrainKind,
    /// TOML: `[model]`, `[corpus]` and `[train]` tables for `expert`; a
    /// training config for `scene`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory (scene only).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Half-open range of sequence indices, e.g. `0..40`.
    #[arg(long, value_parser = parse_range)]
    #[serde(skip)]
    pub subset: Option<Range<usize>>,
    #[arg(long)]
    pub init_checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub stage: u8,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_parser = parse_range)]
    #[serde(skip)]
    pub subset: Option<Range<usize>>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Required for Stage 2: the Stage-1 checkpoint.
    #[arg(long)]
    pub init_checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_parser = parse_range)]
    #[serde(skip)]
    pub subset: Option<Range<usize>>,
    /// Predictions JSON path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "predictions", conflicts_with = "predictions")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_parser = parse_range)]
    #[serde(skip)]
    pub subset: Option<Range<usize>>,
    /// Report JSON path.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Trajectory window lengths in frames.
    #[arg(long, value_delimiter = ',', default_values_t = [30usize, 100])]
    pub windows: Vec<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Sequence id as listed in the dataset manifest.
    #[arg(long)]
    pub sequence: String,
    /// Keep pixels whose row and column are multiples of this.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    /// Drop pointmap pixels with lower predicted confidence.
    #[arg(long, default_value_t = 0.0)]
    pub min_confidence: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Result of one command: the manifest and where it was written.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub manifest: RunManifest,
    pub manifest_path: PathBuf,
    pub report: Option<MetricsReport>,
}

pub fn parse_range(s: &str) -> std::result::Result<Range<usize>, String> {
    let (a, b) = s.split_once("..").ok_or_else(|| format!("expected START..END, got {s:?}"))?;
    let a: usize = a.trim().parse().map_err(|e| format!("bad start {a:?}: {e}"))?;
    let b: usize = b.trim().parse().map_err(|e| format!("bad end {b:?}: {e}"))?;
    if a >= b {
        return Err(format!("empty range {s:?}"));
    }
    Ok(a..b)
}

pub fn run(cli: Cli) -> Result<Outcome> {
    let root = cli.out_root.clone();
    let name = cli.command.name();
    let dir_out = |o: &Option<PathBuf>| o.clone().unwrap_or_else(|| root.join(name));
    match cli.command {
        Command::GenData(a) => cmd_gen_data(&a, &dir_out(&a.out)),
        Command::Pretrain(a) => cmd_pretrain(&a, &dir_out(&a.out)),
        Command::Train(a) => cmd_train(&a, &dir_out(&a.out)),
        Command::Predict(a) => {
            let out = a.out.clone().unwrap_or_else(|| root.join(name).join("predictions.json"));
            cmd_predict(&a, &out)
        }
        Command::Eval(a) => {
            let out = a.report.clone().unwrap_or_else(|| root.join(name).join("report.json"));
            let o = cmd_eval(&a, &out)?;
            print!("{}", o.report.as_ref().expect("eval returns a report"));
            Ok(o)
        }
        Command::Reconstruct(a) => cmd_reconstruct(&a, &dir_out(&a.out)),
    }
}

// ---- helpers ----

/// Creates `dir`, which must not already hold files.
fn fresh_dir(dir: &Path) -> Result<()> {
    if dir.exists() && fs::read_dir(dir)?.next().is_some() {
        bail!("output directory {} is not empty", dir.display());
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn parent_dir(file: &Path) -> Result<PathBuf> {
    let dir = file.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")).to_path_buf();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

/// Manifest path of a single-file output: `report.json` → `report.manifest.json`.
pub fn file_manifest_path(file: &Path) -> PathBuf {
    let stem = file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    file.with_file_name(format!("{stem}.manifest.json"))
}

pub fn load_data(dir: &Path, subset: &Option<Range<usize>>) -> Result<Vec<SequenceSample>> {
    let mut data = read_dataset(dir).with_context(|| format!("reading dataset {}", dir.display()))?;
    if let Some(r) = subset {
        ensure!(r.end <= data.len(), "subset {}..{} exceeds the {} sequences of {}", r.start, r.end, data.len(), dir.display());
        data = data.drain(r.clone()).collect();
    }
    ensure!(!data.is_empty(), "dataset {} has no sequences", dir.display());
    Ok(data)
}

fn read_config(path: &Option<PathBuf>) -> Result<Option<String>> {
    path.as_ref().map(|p| fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))).transpose()
}

fn load_checkpoint(path: &Path) -> Result<Hand3R> {
    checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

/// Saves model, trace and resolved config into `out`, checking the
/// checkpoint reloads bit-exactly.
fn write_training_outputs(out: &Path, model: &Hand3R, trace: &[TraceRow], resolved: &str) -> Result<Vec<PathBuf>> {
    let ckpt = out.join(CHECKPOINT);
    checkpoint::save(model, &ckpt)?;
    let back = load_checkpoint(&ckpt)?;
    ensure!(back.config == model.config && back.store.all() == model.store.all(), "checkpoint {} did not reload exactly", ckpt.display());
    training::write_trace_csv(trace, &out.join(TRACE))?;
    export::write_text(&out.join(RESOLVED_CONFIG), resolved)?;
    Ok(vec![CHECKPOINT.into(), TRACE.into(), RESOLVED_CONFIG.into()])
}

// ---- gen-data ----

pub fn cmd_gen_data(a: &GenDataArgs, out: &Path) -> Result<Outcome> {
    ensure!(a.sequences >= 1, "--sequences must be at least 1");
    let gen = GenConfig { n_frames: a.frames, n_hands: a.hands, res: a.res, ..GenConfig::default() };
    gen.validate()?;
    fresh_dir(out)?;
    let mut m = RunManifest::begin("gen-data", a);
    m.seed = Some(a.seed);
    m.dataset = Some(out.to_path_buf());
    let samples = generate_corpus(a.seed, a.sequences, &gen)?;
    write_dataset(&samples, out)?;
    ensure!(read_dataset(out)? == samples, "dataset in {} did not read back identically", out.display());
    m.add_artifacts(out, &list_files(out)?)?;
    let path = out.join(MANIFEST);
    Ok(Outcome { manifest: m.finish(&path)?, manifest_path: path, report: None })
}

// ---- pretrain ----

/// Expert pretraining config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpertConfig {
    /// Network sizes of a new model; ignored with `--init-checkpoint`.
    pub model: Option<ModelConfig>,
    pub corpus: ExpertCorpus,
    pub train: TrainConfig,
}

impl ExpertConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: ExpertConfig = toml::from_str(text).context("parsing expert config")?;
        c.train.validate()?;
        Ok(c)
    }
}

pub fn cmd_pretrain(a: &PretrainArgs, out: &Path) -> Result<Outcome> {
    let text = read_config(&a.config)?;
    let (model, trace, resolved, seed) = match a.kind {
        PretrainKind::Expert => {
            ensure!(a.data.is_none(), "expert pretraining generates its own corpus; drop --data");
            let mut cfg = text.as_deref().map(ExpertConfig::from_toml).transpose()?.unwrap_or_default();
            if let Some(s) = a.steps {
                cfg.train.steps = s;
            }
            let mut model = match &a.init_checkpoint {
                Some(p) => load_checkpoint(p)?,
                None => Hand3R::new(cfg.model.clone().unwrap_or_default())?,
            };
            cfg.model = Some(model.config.clone());
            fresh_dir(out)?;
            let trace = training::pretrain_expert_generated(&mut model, &cfg.corpus, &cfg.train)?;
            (model, trace, toml::to_string(&cfg)?, cfg.train.seed)
        }
        PretrainKind::Scene => {
            let data_dir = a.data.as_ref().ok_or_else(|| anyhow!("scene pretraining needs --data"))?;
            let mut cfg = text.as_deref().map(TrainConfig::from_toml).transpose()?.unwrap_or_default();
            if let Some(s) = a.steps {
                cfg.steps = s;
            }
            let mut model = match &a.init_checkpoint {
                Some(p) => load_checkpoint(p)?,
                None => Hand3R::new(ModelConfig::default())?,
            };
            let data = load_data(data_dir, &a.subset)?;
            fresh_dir(out)?;
            let trace = training::pretrain_scene(&mut model, &data, &cfg)?;
            (model, trace, cfg.to_toml(), cfg.seed)
        }
    };
    let mut m = RunManifest::begin("pretrain", &(a, &resolved));
    m.seed = Some(seed);
    m.dataset = a.data.clone();
    m.checkpoint = a.init_checkpoint.clone();
    let files = write_training_outputs(out, &model, &trace, &resolved)?;
    m.add_artifacts(out, &files)?;
    let path = out.join(MANIFEST);
    Ok(Outcome { manifest: m.finish(&path)?, manifest_path: path, report: None })
}

// ---- train ----

pub fn cmd_train(a: &TrainArgs, out: &Path) -> Result<Outcome> {
    if a.stage == 2 && a.init_checkpoint.is_none() {
        bail!("stage 2 requires --init-checkpoint with a stage-1 checkpoint");
    }
    let mut cfg = read_config(&a.config)?.as_deref().map(TrainConfig::from_toml).transpose()?.unwrap_or_default();
    cfg.stage = a.stage;
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let mut model = match &a.init_checkpoint {
        Some(p) => load_checkpoint(p)?,
        None => {
            log::warn!("no --init-checkpoint: stage 1 starts from an untrained hand expert");
            Hand3R::new(ModelConfig::default())?
        }
    };
    let data = load_data(&a.data, &a.subset)?;
    fresh_dir(out)?;
    let trace = training::train(&mut model, &data, &cfg)?;
    let resolved = cfg.to_toml();
    let mut m = RunManifest::begin("train", &(a, &resolved));
    m.seed = Some(cfg.seed);
    m.dataset = Some(a.data.clone());
    m.checkpoint = a.init_checkpoint.clone();
    let files = write_training_outputs(out, &model, &trace, &resolved)?;
    m.add_artifacts(out, &files)?;
    let path = out.join(MANIFEST);
    Ok(Outcome { manifest: m.finish(&path)?, manifest_path: path, report: None })
}

// ---- predict / eval ----

pub fn cmd_predict(a: &PredictArgs, out: &Path) -> Result<Outcome> {
    let model = load_checkpoint(&a.checkpoint)?;
    let data = load_data(&a.data, &a.subset)?;
    let pred = predictions::predict_corpus(&model, &data)?;
    let dir = parent_dir(out)?;
    pred.save(out)?;
    ensure!(PredictionsFile::load(out)? == pred, "predictions {} did not read back identically", out.display());
    let mut m = RunManifest::begin("predict", a);
    m.dataset = Some(a.data.clone());
    m.checkpoint = Some(a.checkpoint.clone());
    m.add_artifacts(&dir, &[out.file_name().expect("file path").into()])?;
    let path = file_manifest_path(out);
    Ok(Outcome { manifest: m.finish(&path)?, manifest_path: path, report: None })
}

pub fn cmd_eval(a: &EvalArgs, report_path: &Path) -> Result<Outcome> {
    let data = load_data(&a.data, &a.subset)?;
    let (pred, template) = match (&a.checkpoint, &a.predictions) {
        (Some(c), None) => {
            let model = load_checkpoint(c)?;
            (predictions::predict_corpus(&model, &data)?, model.template)
        }
        (None, Some(p)) => {
            let pred = PredictionsFile::load(p)?;
            let template = HandTemplate::build(pred.template_seed);
            (pred, template)
        }
        _ => bail!("pass exactly one of --checkpoint and --predictions"),
    };
    let cfg = MetricsConfig { window_lengths: a.windows.clone(), ..MetricsConfig::default() };
    let report = predictions::evaluate_predictions(&template, &data, &pred, &cfg)?;
    let dir = parent_dir(report_path)?;
    let text = serde_json::to_string_pretty(&report)?;
    export::write_text(report_path, &text)?;
    let back: MetricsReport = serde_json::from_str(&fs::read_to_string(report_path)?)?;
    ensure!(back == report, "report {} did not read back identically", report_path.display());
    let mut m = RunManifest::begin("eval", &(a, &cfg));
    m.dataset = Some(a.data.clone());
    m.checkpoint = a.checkpoint.clone();
    m.add_artifacts(&dir, &[report_path.file_name().expect("file path").into()])?;
    let path = file_manifest_path(report_path);
    Ok(Outcome { manifest: m.finish(&path)?, manifest_path: path, report: Some(report) })
}

// ---- reconstruct ----

pub const SCENE_PLY: &str = "scene.ply";
pub const TRAJECTORY_CSV: &str = "trajectory.csv";
pub const HANDS_DIR: &str = "hands";

/// `hands/frame_00012_hand1.obj`: annotation 1 of frame 12.
pub fn hand_obj_name(frame: usize, annotation: usize) -> String {
    format!("{HANDS_DIR}/frame_{frame:05}_hand{annotation}.obj")
}

pub fn cmd_reconstruct(a: &ReconstructArgs, out: &Path) -> Result<Outcome> {
    ensure!(a.stride >= 1, "--stride must be at least 1");
    let model = load_checkpoint(&a.checkpoint)?;
    let manifest = read_manifest(&a.data)?;
    let entry = manifest.sequences.iter().find(|e| e.id == a.sequence).ok_or_else(|| {
        let ids: Vec<&str> = manifest.sequences.iter().map(|e| e.id.as_str()).collect();
        anyhow!("unknown sequence id {:?}; dataset has {}", a.sequence, ids.join(", "))
    })?;
    let seq = read_sequence(&a.data, entry)?;
    let preds = predictions::predict_sequence(&model, &seq)?;
    fresh_dir(out)?;

    let mut points = Vec::new();
    let mut files = Vec::new();
    let mut rows = Vec::with_capacity(preds.len());
    for (fi, (rec, p)) in seq.frames.iter().zip(&preds).enumerate() {
        let pm = &p.scene.pointmap;
        for row in (0..pm.height).step_by(a.stride) {
            for col in (0..pm.width).step_by(a.stride) {
                let i = row * pm.width + col;
                if pm.valid[i] && p.scene.confidence[i] >= a.min_confidence {
                    let rgb = rec.image.pixel(col, row).map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8);
                    points.push(ColoredPoint { position: p.scene.cam_pose.apply(&pm.points[i]), rgb });
                }
            }
        }
        let prompted = prompted_annotations(rec);
        let mut roots = vec![None; seq.n_hands];
        for h in &p.hands {
            let ann = prompted[h.query];
            let name = hand_obj_name(fi, ann);
            export::write_text(&out.join(&name), &export::obj_string(&h.mesh_world.vertices, &h.mesh_world.faces))?;
            files.push(PathBuf::from(name));
            if ann < roots.len() {
                roots[ann] = Some(h.mesh_world.joints[0]);
            }
        }
        rows.push(TrajectoryRow { frame: fi, cam_pose: p.scene.cam_pose, hand_roots: roots });
    }
    export::write_text(&out.join(SCENE_PLY), &export::ply_string(&points))?;
    export::write_trajectory_csv(&rows, seq.n_hands, &out.join(TRAJECTORY_CSV))?;
    files.push(SCENE_PLY.into());
    files.push(TRAJECTORY_CSV.into());
    files.sort();

    let mut m = RunManifest::begin("reconstruct", a);
    m.dataset = Some(a.data.clone());
    m.checkpoint = Some(a.checkpoint.clone());
    m.add_artifacts(out, &files)?;
    let path = out.join(MANIFEST);
    Ok(Outcome { manifest: m.finish(&path)?, manifest_path: path, report: None })
}
