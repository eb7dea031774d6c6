//! Derives dataset snapshot `t` from snapshot `t-1` and the difficult samples
//! selected at epoch `t`, and the one-shot static and few-shot transforms.

mod action;
mod generate;
mod modes;
mod policy;

pub use action::{apply_actions, ActionKind, CaptionChange, CurationAction, SynthesizedImage};
pub use generate::{synthesized_image_id, Generation, SynthJob, Synthesized};
pub use modes::{apply_static_replace, few_shot_augment, select_shots, StaticMode};
pub use policy::{
    apply_remove, apply_replace_cap, apply_replace_img, curate, pick_sibling_caption, CaptionMode, Policy, PolicyConfig,
};

use serde::{Deserialize, Serialize};

use crate::backend::BackendError;
use crate::dataset::{DatasetError, DatasetSnapshot};
use crate::ledger::LedgerError;
use crate::promptgen::PromptError;

/// Fraction of samples removed per epoch by the Remove policy.
pub const REMOVE_TOP_FRACTION: f64 = 0.01;
/// Sigma multiplier used to flag samples for ReplaceCap.
pub const REPLACE_CAP_SIGMA: f64 = 2.0;
/// ReplaceImg ratio that works best on Flickr30K-style corpora.
pub const FLICKR30K_REPLACE_IMG_RATIO: f64 = 0.4;
/// ReplaceImg ratio that works best on COCO-style corpora.
pub const COCO_REPLACE_IMG_RATIO: f64 = 0.1;
pub const DEFAULT_EPOCHS: u32 = 5;

#[derive(Debug, thiserror::Error)]
pub enum CurationError {
    #[error("sample {0} is not in the snapshot")]
    UnknownSample(String),
    #[error("invalid curation mode: {0}")]
    InvalidMode(String),
    #[error("generation backend unavailable: {0}")]
    BackendUnavailable(BackendError),
    #[error("generation failed for {sample_id}: {backend_message}")]
    GenerationFailed { sample_id: String, backend_message: String },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("action #{index} cannot be replayed: {message}")]
    Replay { index: usize, message: String },
    #[error("policy {0} needs an image generator")]
    GeneratorRequired(&'static str),
}

/// A selected sample left unmodified, with the reason.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skipped {
    pub sample_id: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurationOutcome {
    pub snapshot: DatasetSnapshot,
    pub skipped: Vec<Skipped>,
}
