use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::backend::Backend;
use super::{parse_answer, AnswerType, ModelAnswer, ParsedAnswer, RequestPayload, Usage};
use crate::error::{BackendError, Error, QueryError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Retries after the first attempt; transient failures only.
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl RetryPolicy {
    pub fn immediate(max_retries: u32) -> Self {
        Self {
            max_retries,
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
        }
    }

    /// Wait before retry number `retry` (0-based): `base · 2^retry`, capped.
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 1u32.checked_shl(retry).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

/// Cost charged for every attempt sent to the backend.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    pub per_request: f64,
    pub per_image: f64,
}

impl CostModel {
    pub fn cost(&self, payload: &RequestPayload) -> f64 {
        self.per_request + self.per_image * payload.images.len() as f64
    }
}

/// Spend ceiling. Costs are reserved before dispatch, so the total of all
/// reservations never exceeds the cap.
#[derive(Debug)]
pub struct Budget {
    cap: Option<f64>,
    spent: Mutex<f64>,
}

impl Budget {
    pub fn new(cap: Option<f64>) -> Self {
        Self {
            cap,
            spent: Mutex::new(0.0),
        }
    }

    pub fn unlimited() -> Self {
        Self::new(None)
    }

    pub fn reserve(&self, cost: f64) -> Result<(), QueryError> {
        let mut spent = self.spent.lock().expect("budget lock");
        if let Some(cap) = self.cap {
            if *spent + cost > cap {
                return Err(QueryError::BudgetExceeded {
                    cap,
                    spent: *spent,
                    cost,
                });
            }
        }
        *spent += cost;
        Ok(())
    }

    pub fn spent(&self) -> f64 {
        *self.spent.lock().expect("budget lock")
    }

    pub fn cap(&self) -> Option<f64> {
        self.cap
    }
}

/// Sends payloads to a backend with retries, a spend ceiling, and a
/// concurrency ceiling.
pub struct QueryRunner {
    backend: Arc<dyn Backend>,
    retry: RetryPolicy,
    cost: CostModel,
    budget: Budget,
    concurrency: usize,
}

/// One unit of work for [`QueryRunner::query_all`].
#[derive(Debug, Clone)]
pub struct Job {
    pub payload: RequestPayload,
    pub answer_type: AnswerType,
}

impl QueryRunner {
    pub fn new(
        backend: Arc<dyn Backend>,
        retry: RetryPolicy,
        cost: CostModel,
        budget: Budget,
        concurrency: usize,
    ) -> Self {
        Self {
            backend,
            retry,
            cost,
            budget,
            concurrency: concurrency.max(1),
        }
    }

    pub fn budget(&self) -> &Budget {
        &self.budget
    }

    pub fn query(&self, payload: &RequestPayload, answer_type: &AnswerType) -> Result<ModelAnswer, QueryError> {
        let cost = self.cost.cost(payload);
        let started = Instant::now();
        let mut retries = 0;
        loop {
            self.budget.reserve(cost)?;
            match self.backend.complete(payload) {
                Ok(reply) => {
                    return Ok(ModelAnswer {
                        question_id: payload.question_id.clone(),
                        parsed: parse_answer(&reply.text, answer_type),
                        raw_text: reply.text,
                        usage: reply.usage,
                        latency_ms: started.elapsed().as_millis() as u64,
                        retry_count: retries,
                    })
                }
                Err(BackendError::Transient(msg)) => {
                    if retries == self.retry.max_retries {
                        return Err(QueryError::TransportExhausted {
                            attempts: retries + 1,
                            last: msg,
                        });
                    }
                    std::thread::sleep(self.retry.delay(retries));
                    retries += 1;
                }
                Err(other) => return Err(QueryError::Backend(other)),
            }
        }
    }

    /// Runs every job with at most `concurrency` in flight. `on_done` sees
    /// each result as it completes. After a budget stop no new job starts;
    /// jobs never started are `None`.
    pub fn query_all(
        &self,
        jobs: &[Job],
        on_done: impl Fn(usize, &Result<ModelAnswer, QueryError>) + Sync,
    ) -> Vec<Option<Result<ModelAnswer, QueryError>>> {
        let results: Mutex<Vec<Option<Result<ModelAnswer, QueryError>>>> =
            Mutex::new((0..jobs.len()).map(|_| None).collect());
        let next = AtomicUsize::new(0);
        let halted = AtomicBool::new(false);
        let workers = self.concurrency.min(jobs.len());
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    if halted.load(Ordering::SeqCst) {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= jobs.len() {
                        break;
                    }
                    let r = self.query(&jobs[i].payload, &jobs[i].answer_type);
                    if matches!(r, Err(QueryError::BudgetExceeded { .. })) {
                        halted.store(true, Ordering::SeqCst);
                    }
                    on_done(i, &r);
                    results.lock().expect("results lock")[i] = Some(r);
                });
            }
        });
        results.into_inner().expect("results lock")
    }
}

/// One line of the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub question_id: String,
    pub payload_hash: String,
    pub raw_text: String,
    pub parsed: ParsedAnswer,
    pub usage: Usage,
    pub latency_ms: u64,
    #[serde(default)]
    pub retry_count: u32,
}

impl RunRecord {
    pub fn new(answer: &ModelAnswer, payload_hash: &str) -> Self {
        Self {
            question_id: answer.question_id.clone(),
            payload_hash: payload_hash.to_string(),
            raw_text: answer.raw_text.clone(),
            parsed: answer.parsed.clone(),
            usage: answer.usage,
            latency_ms: answer.latency_ms,
            retry_count: answer.retry_count,
        }
    }

    pub fn to_answer(&self) -> ModelAnswer {
        ModelAnswer {
            question_id: self.question_id.clone(),
            raw_text: self.raw_text.clone(),
            parsed: self.parsed.clone(),
            usage: self.usage,
            latency_ms: self.latency_ms,
            retry_count: self.retry_count,
        }
    }
}

/// Append-only JSON-lines log, ordered by completion.
#[derive(Debug)]
pub struct RunLog {
    path: PathBuf,
    file: Mutex<File>,
}

impl RunLog {
    /// Opens `path` for appending, creating it if needed. A partial trailing
    /// line left by an interrupted run is cut off first.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, Error> {
        let path = path.as_ref().to_path_buf();
        if path.exists() {
            let text = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let keep = text.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
            if keep != text.len() {
                std::fs::write(&path, &text[..keep]).map_err(|e| Error::io(&path, e))?;
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            path,
            file: Mutex::new(file),
        })
    }

    pub fn append(&self, record: &RunRecord) -> Result<(), Error> {
        let mut line = serde_json::to_string(record).map_err(|e| Error::json(&self.path, e))?;
        line.push('\n');
        let mut file = self.file.lock().expect("log lock");
        file.write_all(line.as_bytes())
            .and_then(|_| file.flush())
            .map_err(|e| Error::io(&self.path, e))
    }

    /// All complete records in `path`; a missing file is an empty log and an
    /// unterminated final line is ignored.
    pub fn read(path: impl AsRef<Path>) -> Result<Vec<RunRecord>, Error> {
        let path = path.as_ref();
        if !path.exists() {
            return Ok(Vec::new());
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let complete = match text.rfind('\n') {
            Some(p) => &text[..p],
            None => "",
        };
        complete
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| Error::json(path, e)))
            .collect()
    }

    /// Latest record per `(question_id, payload_hash)`.
    pub fn completed(records: &[RunRecord]) -> HashMap<(String, String), RunRecord> {
        records
            .iter()
            .map(|r| ((r.question_id.clone(), r.payload_hash.clone()), r.clone()))
            .collect()
    }
}
