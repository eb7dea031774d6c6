//! Boundary to external model processes: loss oracle, captioner, image
//! generator, sentence embedder and image-text scorer.
//!
//! Each role is a trait. [`client::ProcessBackend`] implements every role over
//! the `curette/1` NDJSON protocol (see [`protocol`]); [`synthetic`] holds
//! deterministic in-process implementations for tests and dry runs.

pub mod client;
pub mod protocol;
pub mod server;
pub mod synthetic;
pub mod transcript;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("backend speaks {found:?}, expected {expected:?}")]
    VersionMismatch { expected: String, found: String },
    #[error("request timed out")]
    Timeout,
    #[error("backend error [{code}]: {message}")]
    Remote { code: String, message: String },
    #[error("protocol violation: {0}")]
    Protocol(String),
}

impl BackendError {
    pub fn remote(code: impl Into<String>, message: impl Into<String>) -> Self {
        BackendError::Remote { code: code.into(), message: message.into() }
    }

    /// Wire error code.
    pub fn code(&self) -> &str {
        match self {
            BackendError::Unavailable(_) => "unavailable",
            BackendError::VersionMismatch { .. } => "version_mismatch",
            BackendError::Timeout => "timeout",
            BackendError::Remote { code, .. } => code,
            BackendError::Protocol(_) => "protocol",
        }
    }

    /// Errors after which no further requests to the backend can succeed.
    pub fn is_fatal(&self) -> bool {
        matches!(self, BackendError::Unavailable(_) | BackendError::VersionMismatch { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossQuery {
    pub sample_id: String,
    pub image_uri: String,
    pub caption_text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleLoss {
    pub sample_id: String,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub prompt: String,
    pub prompt_id: String,
    pub seed: u64,
    pub out_uri: String,
    /// Image the prompt was built from; lets identity backends return the original.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_image_id: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedImage {
    pub image_uri: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageTextPair {
    pub image_uri: String,
    pub text: String,
}

/// Computes the training loss of image-caption pairs at an epoch.
pub trait LossOracle: Send + Sync {
    fn loss_batch(&self, epoch: u32, samples: &[LossQuery]) -> Result<Vec<SampleLoss>, BackendError>;
}

pub trait ImageGenerator: Send + Sync {
    fn generate_image(&self, request: &GenerateRequest) -> Result<GeneratedImage, BackendError>;

    /// Answers several requests, in order. The default runs them on the current rayon pool.
    fn generate_many(&self, requests: &[GenerateRequest]) -> Vec<Result<GeneratedImage, BackendError>> {
        use rayon::prelude::*;
        requests.par_iter().map(|r| self.generate_image(r)).collect()
    }
}

pub trait Captioner: Send + Sync {
    fn caption_batch(&self, image_uris: &[String]) -> Result<Vec<String>, BackendError>;
}

pub trait Embedder: Send + Sync {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError>;
}

/// Scalar image-text compatibility (the CLIPScore role).
pub trait PairScorer: Send + Sync {
    fn pair_score_batch(&self, pairs: &[ImageTextPair]) -> Result<Vec<f64>, BackendError>;
}

/// Queries the oracle in batches of at most `batch_size` and checks that every
/// batch answers each sample once, in order, with a finite non-negative loss.
pub fn collect_losses(
    oracle: &dyn LossOracle,
    epoch: u32,
    samples: &[LossQuery],
    batch_size: usize,
) -> Result<Vec<SampleLoss>, BackendError> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let losses = oracle.loss_batch(epoch, chunk)?;
        if losses.len() != chunk.len() {
            return Err(BackendError::Protocol(format!(
                "loss_batch returned {} losses for {} samples",
                losses.len(),
                chunk.len()
            )));
        }
        for (q, l) in chunk.iter().zip(&losses) {
            if q.sample_id != l.sample_id {
                return Err(BackendError::Protocol(format!(
                    "loss_batch out of order: expected {}, got {}",
                    q.sample_id, l.sample_id
                )));
            }
            if !l.loss.is_finite() || l.loss < 0.0 {
                return Err(BackendError::Protocol(format!("loss {} for {} is not finite and >= 0", l.loss, l.sample_id)));
            }
        }
        out.extend(losses);
    }
    Ok(out)
}
