//! Orientation test harness: every scene is asked twice, once with frames in
//! capture order and once with frames and masks reversed, and the two
//! accuracies are summarized by their harmonic mean.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::harness::{load_scene, prepare_scene, run_jobs, PipelineConfig, SceneData, Session};
use super::{align, harmonic_mean};
use crate::correspondence::{plan_from_sparsify, MarkPlacement, PromptPlan};
use crate::error::{Error, EvalError};
use crate::mask_store::{FrameSequence, MaskSequence};
use crate::prompt::{assemble_request, Job, ModelAnswer, QaItem, QueryRunner, Side};
use crate::render::render_sequence;

pub const SOT_CONVENTION: &str = "reverse run: observer golds flipped, perspective golds unchanged";

pub const OBSERVER_QUESTIONS: usize = 3;
pub const PERSPECTIVE_QUESTIONS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionTag {
    /// Asked from the camera's point of view.
    Observer,
    /// Asked from a viewpoint described in the question.
    Perspective,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SotQuestion {
    pub question_id: String,
    pub question: String,
    #[serde(default)]
    pub tag: Option<QuestionTag>,
    /// Gold for the capture-order presentation.
    pub gold: Side,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunCondition {
    Origin,
    Reverse,
}

impl RunCondition {
    pub const BOTH: [RunCondition; 2] = [RunCondition::Origin, RunCondition::Reverse];

    pub fn as_str(self) -> &'static str {
        match self {
            RunCondition::Origin => "origin",
            RunCondition::Reverse => "reverse",
        }
    }
}

impl SotQuestion {
    pub fn gold_for(&self, condition: RunCondition) -> Side {
        match (condition, self.tag) {
            (RunCondition::Reverse, Some(QuestionTag::Observer)) => self.gold.flipped(),
            _ => self.gold,
        }
    }
}

/// The question item asked under `condition`; its id is `<id>@<condition>`.
pub fn condition_item(q: &SotQuestion, condition: RunCondition) -> QaItem {
    QaItem::left_right(
        format!("{}@{}", q.question_id, condition.as_str()),
        &q.question,
        q.gold_for(condition),
    )
}

/// One scene on disk: `frames/`, `masks/` or `masks.json`, `questions.json`.
#[derive(Debug, Clone)]
pub struct SotBundle {
    pub scene_id: String,
    pub frames: FrameSequence,
    pub masks: MaskSequence,
    pub questions: Vec<SotQuestion>,
}

impl SotBundle {
    pub fn load(dir: &Path) -> Result<Self, Error> {
        let SceneData { frames, masks } = load_scene(dir)?;
        let qpath = dir.join("questions.json");
        let text = std::fs::read_to_string(&qpath).map_err(|e| Error::io(&qpath, e))?;
        let questions = serde_json::from_str(&text).map_err(|e| Error::json(&qpath, e))?;
        let scene_id = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        Ok(Self {
            scene_id,
            frames,
            masks,
            questions,
        })
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |reason: String| {
            Err(EvalError::MalformedScene {
                scene: self.scene_id.clone(),
                reason,
            })
        };
        let total = OBSERVER_QUESTIONS + PERSPECTIVE_QUESTIONS;
        if self.questions.len() != total {
            return bad(format!("expected {total} questions, found {}", self.questions.len()));
        }
        if let Some(q) = self.questions.iter().find(|q| q.tag.is_none()) {
            return bad(format!("question {} has no tag", q.question_id));
        }
        let observers = self
            .questions
            .iter()
            .filter(|q| q.tag == Some(QuestionTag::Observer))
            .count();
        if observers != OBSERVER_QUESTIONS {
            return bad(format!(
                "expected {OBSERVER_QUESTIONS} observer questions, found {observers}"
            ));
        }
        if self.masks.len() != self.frames.len() {
            return bad("frame and mask counts differ".into());
        }
        Ok(())
    }
}

/// Both condition items of every question, scene by scene with all origin
/// items before the reverse ones.
pub fn sot_items(bundles: &[SotBundle]) -> Result<Vec<QaItem>, EvalError> {
    let mut items = Vec::new();
    for b in bundles {
        b.validate()?;
        for c in RunCondition::BOTH {
            items.extend(b.questions.iter().map(|q| condition_item(q, c)));
        }
    }
    Ok(items)
}

/// True when `reverse` is `origin` with every frame index `i` mapped to
/// `n - 1 - i`: mirrored retained indices, the same tracklets, and the same
/// placements on the mirrored frames.
pub fn is_index_mirror(origin: &PromptPlan, reverse: &PromptPlan) -> bool {
    let n = origin.sparsify.source_count;
    if reverse.sparsify != origin.sparsify.mirrored() || reverse.tracklets != origin.tracklets {
        return false;
    }
    let key = |p: &MarkPlacement| (p.frame_index, p.rank);
    let mut a: Vec<MarkPlacement> = origin
        .placements
        .iter()
        .map(|p| MarkPlacement {
            frame_index: n - 1 - p.frame_index,
            ..p.clone()
        })
        .collect();
    let mut b = reverse.placements.clone();
    a.sort_by_key(key);
    b.sort_by_key(key);
    a == b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneScore {
    pub scene_id: String,
    pub origin_acc: f64,
    pub reverse_acc: f64,
    pub harmonic_mean: f64,
    pub observer_acc: f64,
    pub perspective_acc: f64,
}

/// Accuracies are percentages. Observer and perspective accuracies pool both
/// runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SotReport {
    pub origin_acc: f64,
    pub reverse_acc: f64,
    pub harmonic_mean: f64,
    pub observer_acc: f64,
    pub perspective_acc: f64,
    pub n_scenes: usize,
    pub n_questions: usize,
    pub n_parse_failures: usize,
    pub convention: String,
    pub per_scene: Vec<SceneScore>,
}

#[derive(Debug, Clone)]
pub struct SotOutcome {
    pub report: SotReport,
    /// `(origin, reverse)` plan per scene.
    pub plans: Vec<(PromptPlan, PromptPlan)>,
    pub items: Vec<QaItem>,
    pub answers: Vec<ModelAnswer>,
}

#[derive(Default, Clone, Copy)]
struct Tally {
    correct: usize,
    total: usize,
}

impl Tally {
    fn add(&mut self, ok: bool) {
        self.total += 1;
        self.correct += usize::from(ok);
    }

    fn pct(self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            100.0 * self.correct as f64 / self.total as f64
        }
    }
}

/// Runs origin and reverse presentations of every scene and scores them.
/// The reverse run uses the mirrored retained indices of the origin run.
pub fn sot_evaluate(
    bundles: &[SotBundle],
    cfg: &PipelineConfig,
    runner: &QueryRunner,
    session: &Session,
) -> Result<SotOutcome, Error> {
    for b in bundles {
        b.validate()?;
    }
    let mut plans = Vec::with_capacity(bundles.len());
    let mut jobs = Vec::new();
    let mut items = Vec::new();
    for b in bundles {
        let origin = prepare_scene(
            &SceneData {
                frames: b.frames.clone(),
                masks: b.masks.clone(),
            },
            cfg,
        )?;
        let (rev_frames, rev_masks) = (b.frames.reversed(), b.masks.reversed());
        let rev_plan = plan_from_sparsify(&rev_masks, origin.plan.sparsify.mirrored(), cfg.k, &cfg.style, None)?;
        let rev_rendered = render_sequence(&rev_frames, &rev_masks, &rev_plan)?;
        for condition in RunCondition::BOTH {
            let frames = match condition {
                RunCondition::Origin => &origin.frames,
                RunCondition::Reverse => &rev_rendered,
            };
            for q in &b.questions {
                let item = condition_item(q, condition);
                let payload = assemble_request(frames, &item, &cfg.template_id)?;
                jobs.push(Job {
                    payload,
                    answer_type: item.answer_type.clone(),
                });
                items.push(item);
            }
        }
        plans.push((origin.plan, rev_plan));
    }

    let answers = run_jobs(runner, &jobs, session)?;
    let report = score_sot(bundles, &answers)?;
    Ok(SotOutcome {
        report,
        plans,
        items,
        answers,
    })
}

/// Scores answers to the condition items of `bundles`, matched by id.
pub fn score_sot(bundles: &[SotBundle], answers: &[ModelAnswer]) -> Result<SotReport, EvalError> {
    let items = sot_items(bundles)?;
    let aligned = align(answers, &items)?;
    let mut by_condition = [Tally::default(); 2];
    let mut by_tag = [Tally::default(); 2];
    let mut per_scene = Vec::with_capacity(bundles.len());
    let mut next = aligned.iter().zip(&items);
    for b in bundles {
        let mut cond = [Tally::default(); 2];
        let mut tag = [Tally::default(); 2];
        for condition in RunCondition::BOTH {
            for q in &b.questions {
                let (a, item) = next.next().expect("one item per question and condition");
                let ok = a.parsed == item.gold();
                let (c, t) = (condition as usize, q.tag.expect("validated") as usize);
                for (tally, i) in [(&mut by_condition, c), (&mut cond, c), (&mut by_tag, t), (&mut tag, t)] {
                    tally[i].add(ok);
                }
            }
        }
        per_scene.push(SceneScore {
            scene_id: b.scene_id.clone(),
            origin_acc: cond[0].pct(),
            reverse_acc: cond[1].pct(),
            harmonic_mean: harmonic_mean(cond[0].pct(), cond[1].pct()),
            observer_acc: tag[0].pct(),
            perspective_acc: tag[1].pct(),
        });
    }
    Ok(SotReport {
        origin_acc: by_condition[0].pct(),
        reverse_acc: by_condition[1].pct(),
        harmonic_mean: harmonic_mean(by_condition[0].pct(), by_condition[1].pct()),
        observer_acc: by_tag[0].pct(),
        perspective_acc: by_tag[1].pct(),
        n_scenes: bundles.len(),
        n_questions: bundles.iter().map(|b| b.questions.len()).sum(),
        n_parse_failures: aligned.iter().filter(|a| a.parsed.is_failure()).count(),
        convention: SOT_CONVENTION.to_string(),
        per_scene,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(id: &str, tag: Option<QuestionTag>, gold: Side) -> SotQuestion {
        SotQuestion {
            question_id: id.into(),
            question: "Is the cup left or right of the lamp?".into(),
            tag,
            gold,
        }
    }

    #[test]
    fn reverse_flips_only_observer_golds() {
        let obs = q("a", Some(QuestionTag::Observer), Side::Left);
        let per = q("b", Some(QuestionTag::Perspective), Side::Left);
        assert_eq!(obs.gold_for(RunCondition::Reverse), Side::Right);
        assert_eq!(per.gold_for(RunCondition::Reverse), Side::Left);
        assert_eq!(condition_item(&obs, RunCondition::Reverse).question_id, "a@reverse");
    }

    #[test]
    fn malformed_scenes() {
        let frames = FrameSequence::new(vec![image::RgbImage::new(2, 2)]).unwrap();
        let masks = MaskSequence::new(vec![crate::mask_store::IdMap::filled(2, 2, 0)]).unwrap();
        let mut b = SotBundle {
            scene_id: "s".into(),
            frames,
            masks,
            questions: (0..4)
                .map(|i| q(&i.to_string(), Some(QuestionTag::Observer), Side::Left))
                .collect(),
        };
        assert!(matches!(b.validate(), Err(EvalError::MalformedScene { .. })));
        b.questions.push(q("x", None, Side::Left));
        assert!(matches!(b.validate(), Err(EvalError::MalformedScene { .. })));
        b.questions[4].tag = Some(QuestionTag::Perspective);
        // four observers, one perspective
        assert!(matches!(b.validate(), Err(EvalError::MalformedScene { .. })));
        b.questions[3].tag = Some(QuestionTag::Perspective);
        assert!(b.validate().is_ok());
    }
}
