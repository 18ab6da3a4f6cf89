//! Scoring of model answers and the evaluation harnesses that drive the
//! prompting pipeline over datasets.

mod harness;
mod metrics;
mod sot;

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use harness::{load_scene, prepare_scene, run_jobs, PipelineConfig, PreparedScene, SceneData, Session};
pub use metrics::{
    bleu_n, cider, cider_scores, corpus_bleu, meteor_alignment, meteor_from_alignment, meteor_simplified, rouge_l,
    stem_tokens, tokenize, MetricReport, TokenizedText, CIDER_MAX_N, CIDER_SIGMA, METEOR_ALPHA, METEOR_BETA,
    METEOR_GAMMA, METEOR_VARIANT, ROUGE_BETA,
};
pub use sot::{
    condition_item, is_index_mirror, score_sot, sot_evaluate, sot_items, QuestionTag, RunCondition, SceneScore,
    SotBundle, SotOutcome, SotQuestion, SotReport, SOT_CONVENTION,
};

use crate::error::{Error, EvalError};
use crate::prompt::{AnswerType, ModelAnswer, ParsedAnswer, QaItem};

/// Harmonic mean of two non-negative scores; 0 when both are 0.
pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

/// Pairs every item with its answer by question id.
fn align<'a>(answers: &'a [ModelAnswer], items: &[QaItem]) -> Result<Vec<&'a ModelAnswer>, EvalError> {
    let mut by_id: HashMap<&str, &ModelAnswer> = HashMap::with_capacity(answers.len());
    for a in answers {
        if by_id.insert(a.question_id.as_str(), a).is_some() {
            return Err(EvalError::IdMismatch(format!("duplicate answer for {}", a.question_id)));
        }
    }
    if answers.len() != items.len() {
        return Err(EvalError::IdMismatch(format!(
            "{} answers for {} items",
            answers.len(),
            items.len()
        )));
    }
    items
        .iter()
        .map(|item| {
            by_id
                .get(item.question_id.as_str())
                .copied()
                .ok_or_else(|| EvalError::IdMismatch(format!("no answer for {}", item.question_id)))
        })
        .collect()
}

fn is_correct(answer: &ModelAnswer, item: &QaItem) -> bool {
    match (&answer.parsed, item.gold()) {
        (ParsedAnswer::ParseFailure(_), _) => false,
        (ParsedAnswer::Text(t), ParsedAnswer::Text(_)) => {
            let t = tokenize(t);
            item.references.iter().any(|r| tokenize(r) == t)
        }
        (got, gold) => *got == gold,
    }
}

/// Fraction of items answered correctly; parse failures count as wrong.
pub fn accuracy(answers: &[ModelAnswer], items: &[QaItem]) -> Result<f64, EvalError> {
    let aligned = align(answers, items)?;
    if items.is_empty() {
        return Ok(0.0);
    }
    let correct = aligned.iter().zip(items).filter(|(a, i)| is_correct(a, i)).count();
    Ok(correct as f64 / items.len() as f64)
}

pub fn mcq_accuracy(answers: &[ModelAnswer], items: &[QaItem]) -> Result<f64, EvalError> {
    if let Some(bad) = items
        .iter()
        .find(|i| !matches!(i.answer_type, AnswerType::MultipleChoice { .. }))
    {
        return Err(EvalError::IdMismatch(format!(
            "{} is not multiple choice",
            bad.question_id
        )));
    }
    accuracy(answers, items)
}

/// Accuracy summary for multiple-choice runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McqReport {
    /// Percentage in `[0, 100]`.
    pub accuracy: f64,
    pub n_items: usize,
    pub n_correct: usize,
    pub n_parse_failures: usize,
}

impl McqReport {
    pub fn compute(answers: &[ModelAnswer], items: &[QaItem]) -> Result<Self, EvalError> {
        let acc = mcq_accuracy(answers, items)?;
        let aligned = align(answers, items)?;
        Ok(Self {
            accuracy: 100.0 * acc,
            n_items: items.len(),
            n_correct: aligned.iter().zip(items).filter(|(a, i)| is_correct(a, i)).count(),
            n_parse_failures: aligned.iter().filter(|a| a.parsed.is_failure()).count(),
        })
    }
}

/// Free-form metrics over aligned answers; each item scores its raw text.
pub fn free_form_report(answers: &[ModelAnswer], items: &[QaItem]) -> Result<MetricReport, EvalError> {
    let aligned = align(answers, items)?;
    if let Some(item) = items.iter().find(|i| i.references.is_empty()) {
        return Err(EvalError::NoReferences(item.question_id.clone()));
    }
    let cands: Vec<String> = aligned.iter().map(|a| a.raw_text.clone()).collect();
    let refs: Vec<Vec<String>> = items.iter().map(|i| i.references.clone()).collect();
    MetricReport::compute(&cands, &refs)
}

/// One entry of a ScanQA-style dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanQaEntry {
    pub question_id: String,
    pub scene_id: String,
    pub question: String,
    pub answers: Vec<String>,
}

impl ScanQaEntry {
    pub fn item(&self) -> QaItem {
        QaItem::free_form(&self.question_id, &self.question, self.answers.clone())
    }
}

/// One entry of a multiple-choice video dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McqEntry {
    pub question_id: String,
    pub video_id: String,
    pub question: String,
    pub options: Vec<String>,
    pub gold_index: usize,
}

impl McqEntry {
    pub fn item(&self) -> QaItem {
        QaItem::multiple_choice(&self.question_id, &self.question, self.options.clone(), self.gold_index)
    }
}

/// Reads a JSON list dataset.
pub fn load_dataset<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::{parse_answer, Side, Usage};
    use proptest::prelude::*;

    fn answer(id: &str, raw: &str, ty: &AnswerType) -> ModelAnswer {
        ModelAnswer {
            question_id: id.into(),
            raw_text: raw.into(),
            parsed: parse_answer(raw, ty),
            usage: Usage::default(),
            latency_ms: 0,
            retry_count: 0,
        }
    }

    fn mc_items(n: usize) -> Vec<QaItem> {
        (0..n)
            .map(|i| QaItem::multiple_choice(format!("q{i}"), "?", vec!["a".into(), "b".into(), "c".into()], 1))
            .collect()
    }

    #[test]
    fn harmonic_mean_table_values() {
        assert!((harmonic_mean(58.2, 50.0) - 53.8).abs() < 0.05);
        assert!((harmonic_mean(71.6, 70.6) - 71.1).abs() < 0.05);
        assert_eq!(harmonic_mean(0.0, 0.0), 0.0);
    }

    #[test]
    fn mcq_with_parse_failure() {
        let items = mc_items(4);
        let ty = &items[0].answer_type;
        let answers = vec![
            answer("q0", "B", ty),
            answer("q1", "(B)", ty),
            answer("q2", "option two", ty),
            answer("q3", "C", ty),
        ];
        assert_eq!(mcq_accuracy(&answers, &items).unwrap(), 0.5);
        let report = McqReport::compute(&answers, &items).unwrap();
        assert_eq!((report.n_correct, report.n_parse_failures), (2, 1));
    }

    #[test]
    fn mismatched_ids_are_rejected() {
        let items = mc_items(2);
        let ty = &items[0].answer_type;
        let answers = vec![answer("q0", "B", ty), answer("zz", "B", ty)];
        assert!(matches!(mcq_accuracy(&answers, &items), Err(EvalError::IdMismatch(_))));
        assert!(matches!(
            mcq_accuracy(&answers[..1], &items),
            Err(EvalError::IdMismatch(_))
        ));
    }

    #[test]
    fn left_right_accuracy() {
        let items = vec![
            QaItem::left_right("a", "?", Side::Left),
            QaItem::left_right("b", "?", Side::Right),
        ];
        let answers = vec![
            answer("b", "right", &items[1].answer_type),
            answer("a", "right", &items[0].answer_type),
        ];
        assert_eq!(accuracy(&answers, &items).unwrap(), 0.5);
    }

    proptest! {
        #[test]
        fn harmonic_mean_properties(a in 0.0f64..100.0, b in 0.0f64..100.0) {
            let h = harmonic_mean(a, b);
            prop_assert!((harmonic_mean(a, a) - a).abs() <= 1e-12 * a.max(1.0));
            prop_assert!(h <= (a + b) / 2.0 + 1e-12);
            prop_assert!(h >= a.min(b) - 1e-12);
            if (a - b).abs() > 1e-6 {
                prop_assert!(h < (a + b) / 2.0);
            }
        }
    }
}
