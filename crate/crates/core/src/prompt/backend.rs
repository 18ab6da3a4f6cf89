use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use base64::Engine;
use serde_json::{json, Value};

use super::{ParsedAnswer, QaItem, RequestPayload, Usage};
use crate::error::BackendError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendReply {
    pub text: String,
    pub usage: Usage,
}

/// A model endpoint. Implementations must be callable from several threads.
pub trait Backend: Send + Sync {
    fn complete(&self, payload: &RequestPayload) -> Result<BackendReply, BackendError>;

    fn name(&self) -> &str;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMode {
    /// Always answers the gold label.
    Perfect,
    /// Always answers a wrong label.
    Anti,
}

/// Deterministic offline backend: scripted replies by question id, with an
/// optional answer key standing in for a model that knows the ground truth.
#[derive(Debug, Default)]
pub struct MockBackend {
    script: HashMap<String, String>,
    answer_key: HashMap<String, String>,
    transient_failures: Mutex<HashMap<String, u32>>,
    calls: AtomicUsize,
}

impl MockBackend {
    pub fn scripted(script: HashMap<String, String>) -> Self {
        Self {
            script,
            ..Self::default()
        }
    }

    /// Answers every item from its gold label (or a wrong one for `Anti`).
    pub fn oracle<'a>(items: impl IntoIterator<Item = &'a QaItem>, mode: OracleMode) -> Self {
        let answer_key = items
            .into_iter()
            .map(|item| (item.question_id.clone(), oracle_text(item, mode)))
            .collect();
        Self {
            answer_key,
            ..Self::default()
        }
    }

    /// Fails the next `times` requests for `question_id` with a transient error.
    pub fn fail_transiently(self, question_id: impl Into<String>, times: u32) -> Self {
        self.transient_failures
            .lock()
            .expect("mock lock")
            .insert(question_id.into(), times);
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

fn oracle_text(item: &QaItem, mode: OracleMode) -> String {
    let gold = item.gold();
    let answer = match (mode, gold) {
        (OracleMode::Perfect, g) => g,
        (OracleMode::Anti, ParsedAnswer::Side(s)) => ParsedAnswer::Side(s.flipped()),
        (OracleMode::Anti, ParsedAnswer::Choice(i)) => {
            let n = match &item.answer_type {
                super::AnswerType::MultipleChoice { options, .. } => options.len(),
                _ => 2,
            };
            ParsedAnswer::Choice((i + 1) % n)
        }
        (OracleMode::Anti, _) => ParsedAnswer::Text("zzz".into()),
    };
    answer.canonical_text()
}

impl Backend for MockBackend {
    fn complete(&self, payload: &RequestPayload) -> Result<BackendReply, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let qid = &payload.question_id;
        {
            let mut failures = self.transient_failures.lock().expect("mock lock");
            if let Some(left) = failures.get_mut(qid).filter(|n| **n > 0) {
                *left -= 1;
                return Err(BackendError::Transient("simulated timeout".into()));
            }
        }
        let text = self
            .script
            .get(qid)
            .or_else(|| self.answer_key.get(qid))
            .cloned()
            .ok_or_else(|| BackendError::UnscriptedQuestion(qid.clone()))?;
        let input_tokens =
            (payload.system_text.len() + payload.user_text.len()) as u64 / 4 + 85 * payload.images.len() as u64;
        let output_tokens = text.split_whitespace().count() as u64;
        Ok(BackendReply {
            text,
            usage: Usage {
                input_tokens,
                output_tokens,
            },
        })
    }

    fn name(&self) -> &str {
        "mock"
    }
}

/// OpenAI-compatible chat-completions endpoint with inline PNG data URLs.
pub struct HttpBackend {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        api_key: Option<String>,
        timeout: Duration,
    ) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Fatal(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key,
            client,
        })
    }

    pub fn request_body(&self, payload: &RequestPayload) -> Value {
        let mut content = vec![json!({"type": "text", "text": payload.user_text})];
        for img in &payload.images {
            let data = base64::engine::general_purpose::STANDARD.encode(&img.data);
            content.push(json!({
                "type": "image_url",
                "image_url": {"url": format!("data:{};base64,{}", img.media_type, data)}
            }));
        }
        json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": payload.system_text},
                {"role": "user", "content": content},
            ],
            "max_tokens": payload.generation.max_tokens,
            "temperature": payload.generation.temperature,
        })
    }
}

impl Backend for HttpBackend {
    fn complete(&self, payload: &RequestPayload) -> Result<BackendReply, BackendError> {
        let mut req = self.client.post(&self.endpoint).json(&self.request_body(payload));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() || e.is_connect() || e.is_request() {
                BackendError::Transient(e.to_string())
            } else {
                BackendError::Fatal(e.to_string())
            }
        })?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(BackendError::Transient(format!("http {status}")));
        }
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(BackendError::Fatal(format!("http {status}: {body}")));
        }
        let body: Value = resp
            .json()
            .map_err(|e| BackendError::Fatal(format!("malformed response: {e}")))?;
        let text = body["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| BackendError::Fatal("response has no message content".into()))?
            .to_string();
        let usage = Usage {
            input_tokens: body["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
            output_tokens: body["usage"]["completion_tokens"].as_u64().unwrap_or(0),
        };
        Ok(BackendReply { text, usage })
    }

    fn name(&self) -> &str {
        "http"
    }
}
