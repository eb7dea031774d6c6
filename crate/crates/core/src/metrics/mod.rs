//! Caption metrics: BLEU-n, ROUGE-L, CIDEr and METEOR-lite, plus the shared tokenizer.

mod bleu;
mod cider;
mod meteor;
mod report;
mod rouge;
mod tokenize;

pub use bleu::{bleu, corpus_bleu_all, sentence_bleu_all, BleuStats};
pub use cider::{cider, CiderScorer, CIDER_MAX_N, CIDER_SCALE};
pub use meteor::{align, count_chunks, meteor_lite};
pub use report::{score_corpus, MetricName, MetricReport};
pub use rouge::{lcs_len, rouge_l, ROUGE_L_BETA};
pub use tokenize::{tokenize, TokenizedCaption};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("no references for candidate {0:?}")]
    NoReferences(String),
    #[error("candidate/reference keys do not match: {0}")]
    KeyMismatch(String),
    #[error("n-gram order must be at least 1, got {0}")]
    InvalidOrder(usize),
    #[error("unknown metric name {0:?}")]
    UnknownMetric(String),
}
