//! Coarse-correspondence visual prompting: pick the instance tracklets that
//! matter across a frame sequence, mark them consistently, ask a multimodal
//! model about the marked frames, and score the answers.
//!
//! Pipeline stages map onto modules:
//! - [`mask_store`]: frames, instance-ID masks, RLE, overrides;
//! - [`correspondence`]: sparsification, tracklet selection, mark placement;
//! - [`render`]: deterministic drawing of marks, outlines and fills;
//! - [`prompt`]: request assembly, backends, retries and budget;
//! - [`eval`]: captioning metrics, accuracy and the orientation test;
//! - [`synthgen`]: synthetic scenes with analytic ground truth;
//! - [`cli`]: the command-line front end.

pub mod cli;
pub mod correspondence;
pub mod error;
pub mod eval;
pub mod mask_store;
pub mod prompt;
pub mod render;
pub mod synthgen;

pub use error::{Error, Result};
