//! Round-trip captioning evaluation: captions -> generated images -> predicted
//! captions -> metrics against the original captions.
//!
//! The upper bound captions the original images with the same captioner.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, Captioner, Embedder, ImageGenerator};
use crate::curation::{CurationError, Generation, Skipped, SynthJob};
use crate::dataset::Dataset;
use crate::metrics::{score_corpus, MetricError, MetricName, MetricReport};
use crate::promptgen::{PromptError, PromptSpec};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundTripConfig {
    pub name: String,
    #[serde(default)]
    pub prompt: PromptSpec,
    #[serde(default = "MetricName::all")]
    pub metrics: BTreeSet<MetricName>,
    #[serde(default)]
    pub seed: u64,
    /// Also caption the original images.
    #[serde(default = "yes")]
    pub upper_bound: bool,
}

fn yes() -> bool {
    true
}

impl RoundTripConfig {
    pub fn new(name: impl Into<String>, prompt: PromptSpec) -> Self {
        Self { name: name.into(), prompt, metrics: MetricName::all(), seed: 0, upper_bound: true }
    }
}

pub struct RoundTripBackends<'a> {
    pub generator: &'a dyn ImageGenerator,
    pub captioner: &'a dyn Captioner,
    pub embedder: Option<&'a dyn Embedder>,
    pub cache_dir: PathBuf,
    pub max_in_flight: usize,
    pub batch_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundTripReport<T> {
    pub config: RoundTripConfig,
    pub report: MetricReport<T>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub upper_bound: Option<MetricReport<T>>,
    pub skipped: Vec<Skipped>,
    /// image_id -> (prompt_id, synthetic image uri, predicted caption)
    pub predictions: BTreeMap<String, Prediction>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub prompt_id: String,
    pub image_uri: String,
    pub caption: String,
}

#[derive(Debug, thiserror::Error)]
pub enum RoundTripError {
    #[error("no configurations to compare")]
    NoConfigs,
    #[error("image {0} has no captions")]
    ImageWithoutCaptions(String),
    #[error("backend unavailable: {0}")]
    BackendUnavailable(BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("every image was skipped")]
    NothingScored,
    #[error("captioner error: {0}")]
    Captioner(BackendError),
}

impl From<CurationError> for RoundTripError {
    fn from(e: CurationError) -> Self {
        match e {
            CurationError::BackendUnavailable(b) => RoundTripError::BackendUnavailable(b),
            CurationError::Prompt(p) => RoundTripError::Prompt(p),
            other => RoundTripError::Captioner(BackendError::Protocol(other.to_string())),
        }
    }
}

/// Captions `uris` in batches; per-batch failures mark that batch's entries as failed.
fn caption_all(
    captioner: &dyn Captioner,
    uris: &[String],
    batch_size: usize,
) -> Result<Vec<Result<String, String>>, RoundTripError> {
    let mut out = Vec::with_capacity(uris.len());
    for chunk in uris.chunks(batch_size.max(1)) {
        match captioner.caption_batch(chunk) {
            Ok(c) if c.len() == chunk.len() => out.extend(c.into_iter().map(Ok)),
            Ok(c) => {
                let msg = format!("captioner returned {} captions for {} images", c.len(), chunk.len());
                out.extend(chunk.iter().map(|_| Err(msg.clone())));
            }
            Err(e) if e.is_fatal() => return Err(RoundTripError::BackendUnavailable(e)),
            Err(e) => out.extend(chunk.iter().map(|_| Err(format!("captioning failed: {e}")))),
        }
    }
    Ok(out)
}

/// One synthetic image per original image, prompted from that image's caption set.
/// Images skipped at any step are excluded from both the report and the upper bound.
pub fn run_roundtrip<T: Scalar>(
    dataset: &Dataset,
    config: &RoundTripConfig,
    backends: &RoundTripBackends<'_>,
) -> Result<RoundTripReport<T>, RoundTripError> {
    let images: Vec<_> = dataset.images().iter().collect();
    let mut jobs = Vec::with_capacity(images.len());
    for img in &images {
        let captions = dataset.captions_of(&img.image_id);
        if captions.is_empty() {
            return Err(RoundTripError::ImageWithoutCaptions(img.image_id.clone()));
        }
        jobs.push(SynthJob {
            key: img.image_id.clone(),
            epoch: 0,
            captions: captions.to_vec(),
            source_image_id: Some(img.image_id.clone()),
        });
    }
    let generation = Generation {
        generator: backends.generator,
        embedder: backends.embedder,
        prompt: config.prompt.clone(),
        cache_dir: backends.cache_dir.clone(),
        rng_seed: config.seed,
        max_in_flight: backends.max_in_flight,
    };
    let generated = generation.synthesize(&jobs)?;

    let mut skipped = Vec::new();
    let mut kept = Vec::new();
    for (img, g) in images.iter().zip(generated) {
        match g {
            Ok(s) => kept.push((img, s)),
            Err(reason) => skipped.push(Skipped { sample_id: img.image_id.clone(), reason }),
        }
    }
    let synthetic_uris: Vec<String> = kept.iter().map(|(_, s)| s.image_uri.clone()).collect();
    let predicted = caption_all(backends.captioner, &synthetic_uris, backends.batch_size)?;
    let upper = if config.upper_bound {
        let uris: Vec<String> = kept.iter().map(|(img, _)| img.uri.clone()).collect();
        Some(caption_all(backends.captioner, &uris, backends.batch_size)?)
    } else {
        None
    };

    let mut predictions = BTreeMap::new();
    let mut candidates = BTreeMap::new();
    let mut upper_candidates = BTreeMap::new();
    let mut references = BTreeMap::new();
    for (i, ((img, syn), pred)) in kept.into_iter().zip(predicted).enumerate() {
        let upper_pred = upper.as_ref().map(|u| u[i].clone());
        let (pred, upper_pred) = match (pred, upper_pred.transpose()) {
            (Ok(p), Ok(u)) => (p, u),
            (Err(reason), _) | (_, Err(reason)) => {
                skipped.push(Skipped { sample_id: img.image_id.clone(), reason });
                continue;
            }
        };
        let id = img.image_id.clone();
        let refs = dataset.captions_of(&id).iter().map(|c| c.text().to_owned()).collect();
        references.insert(id.clone(), refs);
        candidates.insert(id.clone(), pred.clone());
        if let Some(u) = upper_pred {
            upper_candidates.insert(id.clone(), u);
        }
        predictions.insert(id, Prediction { prompt_id: syn.prompt.prompt_id, image_uri: syn.image_uri, caption: pred });
    }
    if candidates.is_empty() {
        return Err(RoundTripError::NothingScored);
    }
    skipped.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    let report = score_corpus(&candidates, &references, &config.metrics)?;
    let upper_bound =
        if config.upper_bound { Some(score_corpus(&upper_candidates, &references, &config.metrics)?) } else { None };
    Ok(RoundTripReport { config: config.clone(), report, upper_bound, skipped, predictions })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow<T> {
    pub name: String,
    /// 1-based rank among successful configs.
    pub rank: Option<usize>,
    pub score: Option<T>,
    pub skipped: usize,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison<T> {
    pub metric: MetricName,
    pub rows: Vec<ComparisonRow<T>>,
    pub reports: Vec<Option<RoundTripReport<T>>>,
}

/// Runs every config and ranks the successful ones by `metric`, best first.
/// Ties keep config order; failed configs are listed after the ranked ones.
pub fn compare_configs<T: Scalar>(
    dataset: &Dataset,
    configs: &[RoundTripConfig],
    backends: &RoundTripBackends<'_>,
    metric: MetricName,
) -> Result<Comparison<T>, RoundTripError> {
    if configs.is_empty() {
        return Err(RoundTripError::NoConfigs);
    }
    let mut rows = Vec::with_capacity(configs.len());
    let mut reports = Vec::with_capacity(configs.len());
    for config in configs {
        match run_roundtrip::<T>(dataset, config, backends) {
            Ok(r) => {
                rows.push(ComparisonRow {
                    name: config.name.clone(),
                    rank: None,
                    score: r.report.get(metric),
                    skipped: r.skipped.len(),
                    error: None,
                });
                reports.push(Some(r));
            }
            Err(e) => {
                log::warn!("round-trip config {} failed: {e}", config.name);
                rows.push(ComparisonRow { name: config.name.clone(), rank: None, score: None, skipped: 0, error: Some(e.to_string()) });
                reports.push(None);
            }
        }
    }
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| {
        let key = |i: usize| (rows[i].error.is_some(), rows[i].score);
        let (ea, sa) = key(a);
        let (eb, sb) = key(b);
        ea.cmp(&eb).then_with(|| match (sa, sb) {
            (Some(x), Some(y)) => y.partial_cmp(&x).unwrap_or(std::cmp::Ordering::Equal),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => std::cmp::Ordering::Equal,
        })
    });
    let mut rank = 0;
    for &i in &order {
        if rows[i].error.is_none() {
            rank += 1;
            rows[i].rank = Some(rank);
        }
    }
    let rows = order.iter().map(|&i| rows[i].clone()).collect();
    let reports = order.into_iter().map(|i| reports[i].take()).collect::<Vec<_>>();
    Ok(Comparison { metric, rows, reports })
}
