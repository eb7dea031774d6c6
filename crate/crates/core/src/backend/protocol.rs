//! `curette/1` wire format: newline-delimited JSON over a child process' stdio.
//!
//! The backend first writes a handshake line
//! `{"protocol":"curette/1","ops":[...],"embed_dim":N}`; afterwards every request
//! line `{"id":1,"op":"loss_batch","payload":{...}}` is answered by exactly one
//! response line `{"id":1,"ok":true,"result":{...}}` or
//! `{"id":1,"ok":false,"error":{"code":"...","message":"..."}}`. Responses may
//! arrive out of order.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{BackendError, GenerateRequest, GeneratedImage, ImageTextPair, LossQuery, SampleLoss};

pub const PROTOCOL_VERSION: &str = "curette/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    LossBatch,
    CaptionBatch,
    GenerateImage,
    EmbedBatch,
    PairScoreBatch,
}

impl Op {
    pub fn as_str(self) -> &'static str {
        match self {
            Op::LossBatch => "loss_batch",
            Op::CaptionBatch => "caption_batch",
            Op::GenerateImage => "generate_image",
            Op::EmbedBatch => "embed_batch",
            Op::PairScoreBatch => "pair_score_batch",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Handshake {
    pub protocol: String,
    pub ops: Vec<Op>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embed_dim: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackendRequest {
    pub id: u64,
    pub op: Op,
    pub payload: Value,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireError {
    pub code: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackendResponse {
    pub id: u64,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<WireError>,
}

impl BackendResponse {
    pub fn success(id: u64, result: Value) -> Self {
        Self { id, ok: true, result: Some(result), error: None }
    }

    pub fn failure(id: u64, err: &BackendError) -> Self {
        let message = match err {
            BackendError::Remote { message, .. } => message.clone(),
            other => other.to_string(),
        };
        Self { id, ok: false, result: None, error: Some(WireError { code: err.code().to_owned(), message }) }
    }

    pub fn into_result(self) -> Result<Value, BackendError> {
        match (self.ok, self.result, self.error) {
            (true, Some(v), _) => Ok(v),
            (true, None, _) => Err(BackendError::Protocol(format!("response {} has ok=true but no result", self.id))),
            (false, _, Some(e)) => Err(match e.code.as_str() {
                "timeout" => BackendError::Timeout,
                _ => BackendError::Remote { code: e.code, message: e.message },
            }),
            (false, _, None) => Err(BackendError::Protocol(format!("response {} has ok=false but no error", self.id))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBatchPayload {
    pub epoch: u32,
    pub samples: Vec<LossQuery>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBatchResult {
    pub losses: Vec<SampleLoss>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub image_uri: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionBatchPayload {
    pub images: Vec<ImageRef>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionText {
    pub caption_text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionBatchResult {
    pub captions: Vec<CaptionText>,
}

pub type GenerateImagePayload = GenerateRequest;
pub type GenerateImageResult = GeneratedImage;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedBatchPayload {
    pub texts: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbedBatchResult {
    pub embeddings: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairScorePayload {
    pub pairs: Vec<ImageTextPair>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairScoreResult {
    pub scores: Vec<f64>,
}

pub(crate) fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("wire types serialize")
}

pub(crate) fn from_value<T: serde::de::DeserializeOwned>(v: Value, what: &str) -> Result<T, BackendError> {
    serde_json::from_value(v).map_err(|e| BackendError::Protocol(format!("malformed {what}: {e}")))
}
