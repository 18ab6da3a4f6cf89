use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::backend::{Backend, HttpBackend, MockBackend, OracleMode};
use super::dispatch::{CostModel, RetryPolicy};
use super::QaItem;
use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    /// Scripted replies loaded from a JSON map of question id to text.
    #[default]
    Mock,
    Oracle,
    AntiOracle,
    Http,
}

impl FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mock" => Ok(Self::Mock),
            "oracle" => Ok(Self::Oracle),
            "anti-oracle" => Ok(Self::AntiOracle),
            "http" => Ok(Self::Http),
            other => Err(Error::Config(format!("unknown backend {other:?}"))),
        }
    }
}

/// Backend selection and dispatch limits.
///
/// Resolution order, later wins: built-in defaults, `CORRMARK_*` environment
/// variables, the TOML config file, explicit overrides applied by the caller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    /// Never serialized, so it stays out of config hashes and logs.
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub script: Option<String>,
    pub concurrency: usize,
    pub budget_cap: Option<f64>,
    pub cost_per_request: f64,
    pub cost_per_image: f64,
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub timeout_secs: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Mock,
            endpoint: None,
            model: None,
            api_key: None,
            script: None,
            concurrency: 4,
            budget_cap: None,
            cost_per_request: 1.0,
            cost_per_image: 0.0,
            max_retries: 3,
            base_delay_ms: 500,
            timeout_secs: 60,
        }
    }
}

fn parse_env<T: FromStr>(name: &str, value: &str) -> Result<T, Error> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse {name}={value:?}")))
}

impl BackendConfig {
    /// Applies `CORRMARK_*` variables looked up through `var`.
    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) -> Result<(), Error> {
        for name in [
            "CORRMARK_BACKEND",
            "CORRMARK_ENDPOINT",
            "CORRMARK_MODEL",
            "CORRMARK_API_KEY",
            "CORRMARK_CONCURRENCY",
            "CORRMARK_BUDGET_CAP",
        ] {
            let Some(v) = var(name) else { continue };
            match name {
                "CORRMARK_BACKEND" => self.kind = v.parse()?,
                "CORRMARK_ENDPOINT" => self.endpoint = Some(v),
                "CORRMARK_MODEL" => self.model = Some(v),
                "CORRMARK_API_KEY" => self.api_key = Some(v),
                "CORRMARK_CONCURRENCY" => self.concurrency = parse_env(name, &v)?,
                _ => self.budget_cap = Some(parse_env(name, &v)?),
            }
        }
        Ok(())
    }

    /// Overlays every key present in the TOML document `text`.
    pub fn apply_toml(&mut self, text: &str) -> Result<(), Error> {
        let file: toml::Table = text.parse().map_err(|e| Error::Config(format!("config file: {e}")))?;
        let mut merged = toml::Table::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        merged.extend(file);
        let api_key = self.api_key.take();
        *self = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("config file: {e}")))?;
        self.api_key = self.api_key.take().or(api_key);
        Ok(())
    }

    /// Defaults, then the process environment, then `file` if given.
    pub fn resolve(file: Option<&Path>) -> Result<Self, Error> {
        let mut cfg = Self::default();
        cfg.apply_env(|k| std::env::var(k).ok())?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            cfg.apply_toml(&text)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.concurrency == 0 {
            return Err(Error::Config("concurrency must be at least 1".into()));
        }
        if let Some(cap) = self.budget_cap {
            if cap.is_nan() || cap < 0.0 {
                return Err(Error::Config("budget cap must be non-negative".into()));
            }
        }
        if self.cost_per_request < 0.0 || self.cost_per_image < 0.0 {
            return Err(Error::Config("costs must be non-negative".into()));
        }
        if self.kind == BackendKind::Http && (self.endpoint.is_none() || self.model.is_none()) {
            return Err(Error::Config("http backend needs endpoint and model".into()));
        }
        Ok(())
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.max_retries,
            base_delay: Duration::from_millis(self.base_delay_ms),
            max_delay: Duration::from_millis(self.base_delay_ms.saturating_mul(32)),
        }
    }

    pub fn cost_model(&self) -> CostModel {
        CostModel {
            per_request: self.cost_per_request,
            per_image: self.cost_per_image,
        }
    }

    /// Instantiates the configured backend. Oracle kinds answer from `items`.
    pub fn build_backend(&self, items: &[QaItem]) -> Result<Arc<dyn Backend>, Error> {
        Ok(match self.kind {
            BackendKind::Mock => {
                let script = match &self.script {
                    Some(path) => {
                        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                        serde_json::from_str(&text).map_err(|e| Error::json(path, e))?
                    }
                    None => Default::default(),
                };
                Arc::new(MockBackend::scripted(script))
            }
            BackendKind::Oracle => Arc::new(MockBackend::oracle(items, OracleMode::Perfect)),
            BackendKind::AntiOracle => Arc::new(MockBackend::oracle(items, OracleMode::Anti)),
            BackendKind::Http => {
                let (Some(endpoint), Some(model)) = (&self.endpoint, &self.model) else {
                    return Err(Error::Config("http backend needs endpoint and model".into()));
                };
                Arc::new(
                    HttpBackend::new(
                        endpoint.clone(),
                        model.clone(),
                        self.api_key.clone(),
                        Duration::from_secs(self.timeout_secs),
                    )
                    .map_err(|e| Error::Config(e.to_string()))?,
                )
            }
        })
    }
}
