//! Command-line front end. Exit codes: 0 success, 2 configuration error,
//! 3 data error, 4 backend error, 5 budget stop.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::correspondence::{build_prompt_plan, DEFAULT_K};
use crate::error::{Error, EvalError};
use crate::eval::{
    free_form_report, load_dataset, load_scene, prepare_scene, run_jobs, score_sot, sot_evaluate, sot_items, McqEntry,
    McqReport, MetricReport, PipelineConfig, PreparedScene, ScanQaEntry, SceneData, Session, SotBundle, SotReport,
};
use crate::mask_store::{load_frames, load_masks, MarkOverrideFile, MaskFormat};
use crate::prompt::{
    assemble_request, BackendConfig, BackendKind, Budget, Job, ModelAnswer, QaItem, QueryRunner, RunLog,
    DEFAULT_TEMPLATE,
};
use crate::render::{render_sequence_with_threads, write_outputs, MarkStyle, MarkTier, DEFAULT_DIAMETER_PX};
use crate::synthgen::{write_scenes, RandomScenes, SynthRequest};

#[derive(Debug, Parser)]
#[command(
    name = "corrmark",
    version,
    about = "Mark consistent object tracklets across frames and evaluate multimodal answers"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render marked frames and manifest.json for one sequence.
    Prompt(PromptArgs),
    /// Run a benchmark through the pipeline and a backend.
    Eval(EvalArgs),
    /// Generate synthetic orientation-test scene bundles.
    Synth(SynthArgs),
    /// Score a stored run log against a dataset.
    Score(ScoreArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct MarkArgs {
    /// Retained frames [default: 8, or 2 for sot].
    #[arg(long)]
    pub m: Option<usize>,
    /// Tracklets to mark.
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: usize,
    /// Marker diameter in pixels.
    #[arg(long, default_value_t = DEFAULT_DIAMETER_PX)]
    pub diameter: u32,
    /// markers | outline | mask
    #[arg(long, default_value = "outline")]
    pub tier: MarkTier,
}

impl MarkArgs {
    fn style(&self) -> Result<MarkStyle, Error> {
        let style = MarkStyle::default().with_diameter(self.diameter).with_tier(self.tier);
        style.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(style)
    }

    fn pipeline(&self, default_m: usize, template_id: &str) -> Result<PipelineConfig, Error> {
        let m = self.m.unwrap_or(default_m);
        if m == 0 {
            return Err(Error::Config("--m must be at least 1".into()));
        }
        if self.k == 0 {
            return Err(Error::Config("--k must be at least 1".into()));
        }
        crate::prompt::template(template_id).map_err(|e| Error::Config(e.to_string()))?;
        Ok(PipelineConfig {
            m,
            k: self.k,
            style: self.style()?,
            template_id: template_id.to_string(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskFormatArg {
    IndexedPng,
    RleJson,
}

impl From<MaskFormatArg> for MaskFormat {
    fn from(f: MaskFormatArg) -> Self {
        match f {
            MaskFormatArg::IndexedPng => MaskFormat::IndexedPng,
            MaskFormatArg::RleJson => MaskFormat::RleJson,
        }
    }
}

#[derive(Debug, Args)]
pub struct PromptArgs {
    /// Directory of frame_*.png files.
    #[arg(long)]
    pub frames: PathBuf,
    /// Mask directory (indexed-png) or RLE JSON file (rle-json).
    #[arg(long)]
    pub masks: PathBuf,
    #[arg(long, value_enum, default_value = "indexed-png")]
    pub mask_format: MaskFormatArg,
    #[command(flatten)]
    pub marks: MarkArgs,
    /// Mark placements that replace computed ones.
    #[arg(long = "override")]
    pub override_file: Option<PathBuf>,
    /// Render worker threads [default: all cores].
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Scanqa,
    Mcq,
    Sot,
}

impl Task {
    fn default_m(self) -> usize {
        match self {
            Task::Sot => 2,
            _ => 8,
        }
    }
}

#[derive(Debug, Args)]
pub struct BackendArgs {
    /// TOML backend config; its keys override CORRMARK_* variables.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// mock | oracle | anti-oracle | http
    #[arg(long)]
    pub backend: Option<BackendKind>,
    /// JSON map of question id to reply for the mock backend.
    #[arg(long)]
    pub script: Option<PathBuf>,
    #[arg(long)]
    pub budget_cap: Option<f64>,
    #[arg(long)]
    pub concurrency: Option<usize>,
    #[arg(long)]
    pub max_retries: Option<u32>,
}

impl BackendArgs {
    fn resolve(&self) -> Result<BackendConfig, Error> {
        let mut cfg = BackendConfig::resolve(self.config.as_deref())?;
        if let Some(k) = self.backend {
            cfg.kind = k;
        }
        if let Some(s) = &self.script {
            cfg.script = Some(s.display().to_string());
        }
        if let Some(c) = self.budget_cap {
            cfg.budget_cap = Some(c);
        }
        if let Some(c) = self.concurrency {
            cfg.concurrency = c;
        }
        if let Some(r) = self.max_retries {
            cfg.max_retries = r;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(value_enum)]
    pub task: Task,
    /// Dataset JSON (scanqa, mcq).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Directory with one sub-directory per scene or video.
    #[arg(long)]
    pub scenes: PathBuf,
    #[command(flatten)]
    pub marks: MarkArgs,
    #[arg(long, default_value = DEFAULT_TEMPLATE)]
    pub template: String,
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Output directory for run_log.jsonl and the report.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON with explicit `scenes` and/or a seeded `random` block.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Seed for random scenes when no spec file is given.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[arg(long, default_value_t = 16)]
    pub frames: usize,
    #[arg(long, default_value_t = 160)]
    pub width: u32,
    #[arg(long, default_value_t = 120)]
    pub height: u32,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(value_enum)]
    pub task: Task,
    /// Run log (JSON lines).
    #[arg(long)]
    pub log: PathBuf,
    /// Dataset JSON (scanqa, mcq) or scene root directory (sot).
    #[arg(long)]
    pub dataset: PathBuf,
    /// Report path [default: metrics.json next to the log].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// SHA-256 of the canonical JSON of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let canonical = serde_json::to_value(value).expect("config serializes");
    hex::encode(Sha256::digest(canonical.to_string().as_bytes()))
}

#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    config_hash: &'a str,
    #[serde(flatten)]
    report: &'a T,
}

fn write_report<T: Serialize>(path: &Path, hash: &str, report: &T) -> Result<(), Error> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(&Stamped {
        config_hash: hash,
        report,
    })
    .expect("report serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Prompt(a) => cmd_prompt(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::Score(a) => cmd_score(&a),
    }
}

/// Parses `args`, runs the command, prints errors, and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn cmd_prompt(a: &PromptArgs) -> Result<(), Error> {
    let style = a.marks.style()?;
    let m_requested = a.marks.m.unwrap_or(8);
    if a.marks.k == 0 || m_requested == 0 {
        return Err(Error::Config("--m and --k must be at least 1".into()));
    }
    let frames = load_frames(&a.frames)?;
    let masks = load_masks(&a.masks, a.mask_format.into(), Some(&frames))?;
    let overrides = a.override_file.as_deref().map(MarkOverrideFile::load).transpose()?;
    let m = m_requested.min(frames.len());
    let mut plan = build_prompt_plan(&frames, &masks, m, a.marks.k, &style, overrides.as_ref())?;
    if let Some(path) = &a.override_file {
        plan.override_source = Some(path.display().to_string());
    }
    let threads = a
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let annotated = render_sequence_with_threads(&frames, &masks, &plan, threads)?;
    let hash = config_hash(&serde_json::json!({
        "command": "prompt",
        "m": m,
        "k": a.marks.k,
        "style": style,
        "mask_format": a.mask_format,
        "override": overrides,
    }));
    let manifest = write_outputs(&a.out, &annotated, &plan, &hash)?;
    println!(
        "wrote {} marked frames and manifest.json to {} ({} tracklets, config {})",
        manifest.frames.len(),
        a.out.display(),
        plan.tracklets.k_effective,
        &hash[..12]
    );
    Ok(())
}

fn scene_dirs(root: &Path) -> Result<Vec<PathBuf>, Error> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("questions.json").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Eval(EvalError::MalformedScene {
            scene: root.display().to_string(),
            reason: "no scene bundles (sub-directories with questions.json)".into(),
        }));
    }
    Ok(dirs)
}

fn load_bundles(root: &Path) -> Result<Vec<SotBundle>, Error> {
    scene_dirs(root)?.iter().map(|d| SotBundle::load(d)).collect()
}

fn runner_for(cfg: &BackendConfig, items: &[QaItem]) -> Result<QueryRunner, Error> {
    Ok(QueryRunner::new(
        cfg.build_backend(items)?,
        cfg.retry_policy(),
        cfg.cost_model(),
        Budget::new(cfg.budget_cap),
        cfg.concurrency,
    ))
}

/// Items grouped by scene id, preserving dataset order.
fn dataset_jobs(items: &[(String, QaItem)], root: &Path, cfg: &PipelineConfig) -> Result<Vec<Job>, Error> {
    let mut prepared: HashMap<&str, Arc<PreparedScene>> = HashMap::new();
    let mut jobs = Vec::with_capacity(items.len());
    for (scene_id, item) in items {
        let scene = match prepared.get(scene_id.as_str()) {
            Some(s) => s.clone(),
            None => {
                let SceneData { frames, masks } = load_scene(&root.join(scene_id))?;
                let p = Arc::new(prepare_scene(&SceneData { frames, masks }, cfg)?);
                prepared.insert(scene_id, p.clone());
                p
            }
        };
        let payload = assemble_request(&scene.frames, item, &cfg.template_id)?;
        jobs.push(Job {
            payload,
            answer_type: item.answer_type.clone(),
        });
    }
    Ok(jobs)
}

fn eval_hash(a: &EvalArgs, cfg: &PipelineConfig, backend: &BackendConfig) -> String {
    config_hash(&serde_json::json!({
        "command": "eval",
        "task": a.task,
        "pipeline": cfg,
        "backend": {"kind": backend.kind, "model": backend.model, "endpoint": backend.endpoint},
    }))
}

pub fn cmd_eval(a: &EvalArgs) -> Result<(), Error> {
    let cfg = a.marks.pipeline(a.task.default_m(), &a.template)?;
    let backend = a.backend.resolve()?;
    let hash = eval_hash(a, &cfg, &backend);
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let log_path = a.out.join("run_log.jsonl");
    let session = Session::open(&log_path)?;
    if session.cached_count() > 0 {
        println!(
            "resuming: {} answers already in {}",
            session.cached_count(),
            log_path.display()
        );
    }
    match a.task {
        Task::Sot => {
            let bundles = load_bundles(&a.scenes)?;
            let runner = runner_for(&backend, &sot_items(&bundles)?)?;
            let outcome = sot_evaluate(&bundles, &cfg, &runner, &session)?;
            write_report(&a.out.join("sot_report.json"), &hash, &outcome.report)?;
            print_sot(&outcome.report);
        }
        Task::Scanqa | Task::Mcq => {
            let path = a
                .dataset
                .as_deref()
                .ok_or_else(|| Error::Config("--dataset is required for this task".into()))?;
            let items = dataset_items(a.task, path)?;
            let plain: Vec<QaItem> = items.iter().map(|(_, i)| i.clone()).collect();
            let runner = runner_for(&backend, &plain)?;
            let jobs = dataset_jobs(&items, &a.scenes, &cfg)?;
            let answers = run_jobs(&runner, &jobs, &session)?;
            report_dataset(a.task, &answers, &plain, &a.out.join("metrics.json"), &hash)?;
        }
    }
    Ok(())
}

fn dataset_items(task: Task, path: &Path) -> Result<Vec<(String, QaItem)>, Error> {
    let items: Vec<(String, QaItem)> = match task {
        Task::Scanqa => load_dataset::<ScanQaEntry>(path)?
            .into_iter()
            .map(|e| (e.scene_id.clone(), e.item()))
            .collect(),
        Task::Mcq => load_dataset::<McqEntry>(path)?
            .into_iter()
            .map(|e| (e.video_id.clone(), e.item()))
            .collect(),
        Task::Sot => unreachable!("sot reads scene bundles"),
    };
    for (_, item) in &items {
        item.validate()?;
    }
    Ok(items)
}

fn report_dataset(task: Task, answers: &[ModelAnswer], items: &[QaItem], out: &Path, hash: &str) -> Result<(), Error> {
    match task {
        Task::Scanqa => {
            let report = free_form_report(answers, items)?;
            write_report(out, hash, &report)?;
            print_metrics(&report);
        }
        Task::Mcq => {
            let report = McqReport::compute(answers, items)?;
            write_report(out, hash, &report)?;
            println!(
                "accuracy {:.1}  ({} of {}, {} unparsed)",
                report.accuracy, report.n_correct, report.n_items, report.n_parse_failures
            );
        }
        Task::Sot => unreachable!("sot has its own report"),
    }
    Ok(())
}

fn print_metrics(r: &MetricReport) {
    println!("{:<8} {:>8}", "metric", "score");
    for (name, v) in [
        ("BLEU-1", r.bleu_1),
        ("BLEU-2", r.bleu_2),
        ("BLEU-3", r.bleu_3),
        ("BLEU-4", r.bleu_4),
        ("METEOR*", r.meteor),
        ("ROUGE-L", r.rouge_l),
        ("CIDEr", r.cider),
    ] {
        println!("{name:<8} {v:>8.1}");
    }
    println!("items {}; *{}", r.n_items, r.meteor_variant);
}

fn print_sot(r: &SotReport) {
    println!(
        "{:<12} {:>7} {:>7} {:>7} {:>9} {:>11}",
        "scene", "origin", "reverse", "hm", "observer", "perspective"
    );
    for s in &r.per_scene {
        println!(
            "{:<12} {:>7.1} {:>7.1} {:>7.1} {:>9.1} {:>11.1}",
            s.scene_id, s.origin_acc, s.reverse_acc, s.harmonic_mean, s.observer_acc, s.perspective_acc
        );
    }
    println!(
        "{:<12} {:>7.1} {:>7.1} {:>7.1} {:>9.1} {:>11.1}",
        "all", r.origin_acc, r.reverse_acc, r.harmonic_mean, r.observer_acc, r.perspective_acc
    );
}

pub fn cmd_synth(a: &SynthArgs) -> Result<(), Error> {
    let request = match &a.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str::<SynthRequest>(&text).map_err(|e| Error::json(path, e))?
        }
        None => SynthRequest {
            scenes: Vec::new(),
            random: Some(RandomScenes {
                seed: a.seed,
                count: a.count,
                n_frames: a.frames,
                width: a.width,
                height: a.height,
            }),
        },
    };
    let specs = request.specs();
    if specs.is_empty() {
        return Err(Error::Config("synth request describes no scenes".into()));
    }
    let scenes = write_scenes(&a.out, &specs)?;
    let questions: usize = scenes.iter().map(|s| s.questions.len()).sum();
    println!(
        "wrote {} scenes ({questions} questions) to {}",
        scenes.len(),
        a.out.display()
    );
    Ok(())
}

pub fn cmd_score(a: &ScoreArgs) -> Result<(), Error> {
    let records = RunLog::read(&a.log)?;
    // latest record per question id
    let latest: BTreeMap<&str, ModelAnswer> = records
        .iter()
        .map(|r| (r.question_id.as_str(), r.to_answer()))
        .collect();
    let answers: Vec<ModelAnswer> = latest.into_values().collect();
    let out = a.out.clone().unwrap_or_else(|| a.log.with_file_name("metrics.json"));
    let hash = config_hash(&serde_json::json!({"command": "score", "task": a.task}));
    match a.task {
        Task::Sot => {
            let report = score_sot(&load_bundles(&a.dataset)?, &answers)?;
            write_report(&out, &hash, &report)?;
            print_sot(&report);
        }
        task => {
            let items: Vec<QaItem> = dataset_items(task, &a.dataset)?.into_iter().map(|(_, i)| i).collect();
            report_dataset(task, &answers, &items, &out, &hash)?;
        }
    }
    Ok(())
}
