//! Backend side of the NDJSON protocol, serving in-process role implementations.

use std::io::{BufRead, Write};

use serde_json::Value;

use super::protocol::{
    from_value, to_value, BackendRequest, BackendResponse, CaptionBatchPayload, CaptionBatchResult, CaptionText,
    EmbedBatchPayload, EmbedBatchResult, Handshake, LossBatchPayload, LossBatchResult, Op, PairScorePayload,
    PairScoreResult, PROTOCOL_VERSION,
};
use super::{BackendError, Captioner, Embedder, GenerateRequest, ImageGenerator, LossOracle, PairScorer};

/// Role implementations exposed by [`serve`]. Absent roles are not advertised.
#[derive(Default)]
pub struct BackendSet {
    pub loss: Option<Box<dyn LossOracle>>,
    pub captioner: Option<Box<dyn Captioner>>,
    pub generator: Option<Box<dyn ImageGenerator>>,
    pub embedder: Option<Box<dyn Embedder>>,
    pub embed_dim: Option<usize>,
    pub scorer: Option<Box<dyn PairScorer>>,
}

impl BackendSet {
    pub fn handshake(&self) -> Handshake {
        let mut ops = Vec::new();
        if self.loss.is_some() {
            ops.push(Op::LossBatch);
        }
        if self.captioner.is_some() {
            ops.push(Op::CaptionBatch);
        }
        if self.generator.is_some() {
            ops.push(Op::GenerateImage);
        }
        if self.embedder.is_some() {
            ops.push(Op::EmbedBatch);
        }
        if self.scorer.is_some() {
            ops.push(Op::PairScoreBatch);
        }
        Handshake {
            protocol: PROTOCOL_VERSION.into(),
            ops,
            embed_dim: self.embedder.as_ref().and(self.embed_dim),
        }
    }

    fn unsupported(op: Op) -> BackendError {
        BackendError::remote("unsupported_op", format!("{} is not served here", op.as_str()))
    }

    fn empty() -> BackendError {
        BackendError::remote("empty_batch", "batch is empty")
    }

    /// Answers one request.
    pub fn dispatch(&self, op: Op, payload: Value) -> Result<Value, BackendError> {
        let bad = |e: BackendError| match e {
            BackendError::Protocol(m) => BackendError::remote("bad_request", m),
            other => other,
        };
        match op {
            Op::LossBatch => {
                let oracle = self.loss.as_ref().ok_or_else(|| Self::unsupported(op))?;
                let p: LossBatchPayload = from_value(payload, "loss_batch payload").map_err(bad)?;
                if p.samples.is_empty() {
                    return Err(Self::empty());
                }
                Ok(to_value(&LossBatchResult { losses: oracle.loss_batch(p.epoch, &p.samples)? }))
            }
            Op::CaptionBatch => {
                let captioner = self.captioner.as_ref().ok_or_else(|| Self::unsupported(op))?;
                let p: CaptionBatchPayload = from_value(payload, "caption_batch payload").map_err(bad)?;
                if p.images.is_empty() {
                    return Err(Self::empty());
                }
                let uris: Vec<String> = p.images.into_iter().map(|i| i.image_uri).collect();
                let captions = captioner.caption_batch(&uris)?;
                Ok(to_value(&CaptionBatchResult {
                    captions: captions.into_iter().map(|caption_text| CaptionText { caption_text }).collect(),
                }))
            }
            Op::GenerateImage => {
                let generator = self.generator.as_ref().ok_or_else(|| Self::unsupported(op))?;
                let p: GenerateRequest = from_value(payload, "generate_image payload").map_err(bad)?;
                Ok(to_value(&generator.generate_image(&p)?))
            }
            Op::EmbedBatch => {
                let embedder = self.embedder.as_ref().ok_or_else(|| Self::unsupported(op))?;
                let p: EmbedBatchPayload = from_value(payload, "embed_batch payload").map_err(bad)?;
                if p.texts.is_empty() {
                    return Err(Self::empty());
                }
                Ok(to_value(&EmbedBatchResult { embeddings: embedder.embed_batch(&p.texts)? }))
            }
            Op::PairScoreBatch => {
                let scorer = self.scorer.as_ref().ok_or_else(|| Self::unsupported(op))?;
                let p: PairScorePayload = from_value(payload, "pair_score_batch payload").map_err(bad)?;
                if p.pairs.is_empty() {
                    return Err(Self::empty());
                }
                Ok(to_value(&PairScoreResult { scores: scorer.pair_score_batch(&p.pairs)? }))
            }
        }
    }

    /// Answers one raw request line with one raw response line (no newline).
    pub fn respond_line(&self, line: &str) -> String {
        let response = match serde_json::from_str::<BackendRequest>(line) {
            Ok(req) => match self.dispatch(req.op, req.payload) {
                Ok(result) => BackendResponse::success(req.id, result),
                Err(e) => BackendResponse::failure(req.id, &e),
            },
            Err(e) => {
                let id = serde_json::from_str::<Value>(line).ok().and_then(|v| v.get("id")?.as_u64()).unwrap_or(0);
                BackendResponse::failure(id, &BackendError::remote("bad_request", e.to_string()))
            }
        };
        serde_json::to_string(&response).expect("response serializes")
    }
}

/// Writes the handshake, then answers request lines until end of input.
pub fn serve<R: BufRead, W: Write>(backends: &BackendSet, input: R, mut output: W) -> std::io::Result<()> {
    serde_json::to_writer(&mut output, &backends.handshake())?;
    output.write_all(b"\n")?;
    output.flush()?;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        output.write_all(backends.respond_line(&line).as_bytes())?;
        output.write_all(b"\n")?;
        output.flush()?;
    }
    Ok(())
}
