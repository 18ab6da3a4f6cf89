use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::correspondence::{build_prompt_plan, PromptPlan, DEFAULT_K};
use crate::error::{Error, MaskError, QueryError};
use crate::mask_store::{load_frames, load_masks, FrameSequence, MaskFormat, MaskSequence};
use crate::prompt::{Job, ModelAnswer, QueryRunner, RunLog, RunRecord, DEFAULT_TEMPLATE};
use crate::render::{render_sequence, AnnotatedFrame, MarkStyle};

/// Settings shared by every scene of an evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Retained frames; clamped to the scene length.
    pub m: usize,
    pub k: usize,
    pub style: MarkStyle,
    pub template_id: String,
}

impl PipelineConfig {
    pub fn new(m: usize) -> Self {
        Self {
            m,
            k: DEFAULT_K,
            style: MarkStyle::default(),
            template_id: DEFAULT_TEMPLATE.to_string(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SceneData {
    pub frames: FrameSequence,
    pub masks: MaskSequence,
}

/// Reads `frames/` plus either `masks/` (indexed PNG) or `masks.json` (RLE).
pub fn load_scene(dir: &Path) -> Result<SceneData, MaskError> {
    let frames = load_frames(&dir.join("frames"))?;
    let png_dir = dir.join("masks");
    let masks = if png_dir.is_dir() {
        load_masks(&png_dir, MaskFormat::IndexedPng, Some(&frames))?
    } else {
        load_masks(&dir.join("masks.json"), MaskFormat::RleJson, Some(&frames))?
    };
    Ok(SceneData { frames, masks })
}

#[derive(Debug, Clone)]
pub struct PreparedScene {
    pub plan: PromptPlan,
    pub frames: Vec<AnnotatedFrame>,
}

pub fn prepare_scene(scene: &SceneData, cfg: &PipelineConfig) -> Result<PreparedScene, Error> {
    let m = cfg.m.min(scene.frames.len());
    let plan = build_prompt_plan(&scene.frames, &scene.masks, m, cfg.k, &cfg.style, None)?;
    let frames = render_sequence(&scene.frames, &scene.masks, &plan)?;
    Ok(PreparedScene { plan, frames })
}

/// Run log plus the answers it already holds, keyed by question id and
/// payload hash, so a changed prompt is asked again.
#[derive(Debug, Default)]
pub struct Session {
    log: Option<RunLog>,
    cached: HashMap<(String, String), RunRecord>,
}

impl Session {
    /// No log; every job is dispatched.
    pub fn ephemeral() -> Self {
        Self::default()
    }

    pub fn open(path: &Path) -> Result<Self, Error> {
        let records = RunLog::read(path)?;
        Ok(Self {
            cached: RunLog::completed(&records),
            log: Some(RunLog::open(path)?),
        })
    }

    pub fn cached_count(&self) -> usize {
        self.cached.len()
    }
}

/// Answers every job in order, reusing cached answers and logging new ones as
/// they complete. Items that were answered are logged even when the run
/// stops on an error.
pub fn run_jobs(runner: &QueryRunner, jobs: &[Job], session: &Session) -> Result<Vec<ModelAnswer>, Error> {
    let keys: Vec<(String, String)> = jobs
        .iter()
        .map(|j| (j.payload.question_id.clone(), j.payload.payload_hash()))
        .collect();
    let mut answers: Vec<Option<ModelAnswer>> = keys
        .iter()
        .map(|k| session.cached.get(k).map(RunRecord::to_answer))
        .collect();
    let pending: Vec<usize> = (0..jobs.len()).filter(|&i| answers[i].is_none()).collect();
    let pending_jobs: Vec<Job> = pending.iter().map(|&i| jobs[i].clone()).collect();

    let log_error: Mutex<Option<Error>> = Mutex::new(None);
    let results = runner.query_all(&pending_jobs, |p, r| {
        if let (Some(log), Ok(answer)) = (&session.log, r) {
            if let Err(e) = log.append(&RunRecord::new(answer, &keys[pending[p]].1)) {
                log_error.lock().expect("log error lock").get_or_insert(e);
            }
        }
    });
    if let Some(e) = log_error.into_inner().expect("log error lock") {
        return Err(e);
    }

    let mut budget_stop = None;
    let mut first_error = None;
    for (p, result) in results.into_iter().enumerate() {
        match result {
            Some(Ok(a)) => answers[pending[p]] = Some(a),
            Some(Err(e @ QueryError::BudgetExceeded { .. })) => {
                budget_stop.get_or_insert(e);
            }
            Some(Err(e)) => {
                first_error.get_or_insert(e);
            }
            None => {}
        }
    }
    if let Some(e) = budget_stop.or(first_error) {
        return Err(e.into());
    }
    Ok(answers
        .into_iter()
        .map(|a| a.expect("every job answered without a stop"))
        .collect())
}
