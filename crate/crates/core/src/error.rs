//! Error types for every pipeline stage, plus the crate-wide [`Error`] the CLI
//! maps onto exit codes.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("path does not exist: {0}")]
    MissingPath(PathBuf),
    #[error("no frame_*.png files found in {0}")]
    EmptySequence(PathBuf),
    #[error("{file}: expected {expected_w}x{expected_h}, found {found_w}x{found_h}")]
    DimensionMismatch {
        file: String,
        expected_w: u32,
        expected_h: u32,
        found_w: u32,
        found_h: u32,
    },
    #[error("{file}: unsupported pixel format {format}")]
    UnsupportedPixelFormat { file: String, format: String },
    #[error("mask count {masks} does not match frame count {frames}")]
    FrameCountMismatch { frames: usize, masks: usize },
    #[error("corrupt RLE: runs cover {covered} cells, expected {expected}")]
    CorruptRle { covered: u64, expected: u64 },
    #[error("mark override for frame {frame} at ({x}, {y}) lies outside {width}x{height}")]
    OverrideOutOfBounds {
        frame: usize,
        x: f64,
        y: f64,
        width: u32,
        height: u32,
    },
    #[error("empty grid")]
    EmptyGrid,
    #[error("image error in {file}: {source}")]
    Image {
        file: String,
        #[source]
        source: image::ImageError,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed json in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("invalid retained count m={m} for n={n} frames (need 1 <= m <= n)")]
    InvalidCount { n: usize, m: usize },
    #[error("k must be at least 1")]
    InvalidK,
    #[error(transparent)]
    Mask(#[from] MaskError),
}

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("instance {0} is absent from the mask")]
    AbsentInstance(u16),
    #[error("placement for instance {id} at ({x}, {y}) lies outside {width}x{height}")]
    PlacementOutOfBounds {
        id: u16,
        x: f64,
        y: f64,
        width: u32,
        height: u32,
    },
    #[error("invalid mark style: {0}")]
    InvalidStyle(String),
    #[error("frame {0} is not part of the plan inputs")]
    MissingFrame(usize),
    #[error("thread pool: {0}")]
    ThreadPool(String),
    #[error("png encoding failed: {0}")]
    Encode(#[from] image::ImageError),
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("unknown prompt template {0:?}")]
    UnknownTemplate(String),
    #[error("request needs at least one frame")]
    NoFrames,
    #[error("invalid question item {id}: {reason}")]
    InvalidItem { id: String, reason: String },
    #[error("png encoding failed: {0}")]
    Encode(#[from] image::ImageError),
}

/// Failures a backend adapter can report for a single request.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    /// Timeouts, rate limits, 5xx: retried by the dispatcher.
    #[error("transient backend failure: {0}")]
    Transient(String),
    #[error("backend failure: {0}")]
    Fatal(String),
    #[error("no scripted response for question {0:?}")]
    UnscriptedQuestion(String),
}

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("backend still failing after {attempts} attempts: {last}")]
    TransportExhausted { attempts: u32, last: String },
    #[error("budget cap {cap} would be exceeded (spent {spent}, request costs {cost})")]
    BudgetExceeded { cap: f64, spent: f64, cost: f64 },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("answers and items do not align: {0}")]
    IdMismatch(String),
    #[error("every reference in the corpus is empty")]
    DegenerateCorpus,
    #[error("malformed scene {scene}: {reason}")]
    MalformedScene { scene: String, reason: String },
    #[error("no reference answers for item {0}")]
    NoReferences(String),
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("object {0} never enters the viewport")]
    InvisibleObject(u16),
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("unknown question {0:?}")]
    UnknownQuestion(String),
}

/// Top-level error used by orchestration code and the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed json in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 config, 3 data, 4 backend, 5 budget stop.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Prompt(PromptError::UnknownTemplate(_)) => 2,
            Error::Query(QueryError::BudgetExceeded { .. }) => 5,
            Error::Query(_) => 4,
            _ => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
