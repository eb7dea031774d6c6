//! Loss-driven curation of image-caption datasets, and caption metrics.
//!
//! Core types are generic over the scalar used for losses and scores
//! (`f32` or `f64`); the aliases at the crate root fix it to `f64`.

pub mod analysis;
pub mod backend;
pub mod curation;
pub mod dataset;
pub mod hashing;
pub mod ledger;
pub mod metrics;
pub mod orchestrator;
pub mod promptgen;
pub mod roundtrip;
pub mod scalar;

pub use scalar::Scalar;

pub type LossLedger = ledger::LossLedger<f64>;
pub type LossRecord = ledger::LossRecord<f64>;
pub type EpochStats = ledger::EpochStats<f64>;
pub type MetricReport = metrics::MetricReport<f64>;
