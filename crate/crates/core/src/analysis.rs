//! Post-hoc reports: human error annotations of generated images, and sweeps
//! over completed curation runs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ledger::SelectionRule;
use crate::orchestrator::{read_run_config, RunReport, REPORT_FILE};

/// Error categories annotators choose from unless a taxonomy file is given.
pub const DEFAULT_TAXONOMY: [&str; 25] = [
    "color",
    "count",
    "deformation",
    "face",
    "body",
    "hands",
    "object_missing",
    "object_extra",
    "object_wrong",
    "spatial_relation",
    "size",
    "text_rendering",
    "background",
    "scene",
    "action",
    "pose",
    "clothing",
    "gender",
    "age",
    "animal",
    "food",
    "vehicle",
    "lighting",
    "style",
    "other",
];

pub const DEFAULT_MIN_ANNOTATORS: usize = 3;

/// Metric file expected next to `report.json` for sweep reports.
pub const METRICS_FILE: &str = "metrics.json";

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("image {image_id}, annotator {annotator_id}: category {category:?} is not in the taxonomy")]
    UnknownCategory { image_id: String, annotator_id: String, category: String },
    #[error("annotator {annotator_id} annotated image {image_id} twice")]
    DuplicateAnnotator { image_id: String, annotator_id: String },
    #[error("image {0} is annotated as both high and low loss")]
    InconsistentGroup(String),
    #[error("annotation CSV: {0}")]
    Csv(String),
    #[error("run directory {dir} is incomplete: {reason}")]
    IncompleteRun { dir: PathBuf, reason: String },
    #[error("taxonomy: {0}")]
    Taxonomy(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossGroup {
    High,
    Low,
}

impl fmt::Display for LossGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossGroup::High => "high",
            LossGroup::Low => "low",
        })
    }
}

impl FromStr for LossGroup {
    type Err = AnalysisError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "high" => Ok(LossGroup::High),
            "low" => Ok(LossGroup::Low),
            other => Err(AnalysisError::Csv(format!("loss_group must be high or low, got {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image_id: String,
    pub annotator_id: String,
    pub loss_group: LossGroup,
    pub error_categories: BTreeSet<String>,
    /// Loss of the image's sample, when known; used for the rank correlation.
    pub loss: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    image_id: String,
    annotator_id: String,
    loss_group: String,
    #[serde(default)]
    categories: String,
    #[serde(default)]
    loss: Option<f64>,
}

/// Parses `image_id,annotator_id,loss_group,categories[,loss]` with a header row;
/// categories are semicolon-joined and may be empty.
pub fn parse_annotations<R: Read>(input: R) -> Result<Vec<AnnotationRecord>, AnalysisError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(input);
    let mut out = Vec::new();
    for row in reader.deserialize::<CsvRow>() {
        let row = row.map_err(|e| AnalysisError::Csv(e.to_string()))?;
        out.push(AnnotationRecord {
            loss_group: row.loss_group.parse()?,
            error_categories: row
                .categories
                .split(';')
                .map(str::trim)
                .filter(|c| !c.is_empty())
                .map(str::to_owned)
                .collect(),
            image_id: row.image_id,
            annotator_id: row.annotator_id,
            loss: row.loss,
        });
    }
    Ok(out)
}

/// Reads a taxonomy given as a JSON array of strings.
pub fn parse_taxonomy(json: &str) -> Result<BTreeSet<String>, AnalysisError> {
    let list: Vec<String> = serde_json::from_str(json).map_err(|e| AnalysisError::Taxonomy(e.to_string()))?;
    if list.is_empty() {
        return Err(AnalysisError::Taxonomy("taxonomy is empty".into()));
    }
    Ok(list.into_iter().collect())
}

pub fn default_taxonomy() -> BTreeSet<String> {
    DEFAULT_TAXONOMY.iter().map(|s| s.to_string()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageErrors {
    pub image_id: String,
    pub loss_group: LossGroup,
    pub annotators: usize,
    /// Category selections per annotator.
    pub mean_errors: f64,
    pub loss: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSummary {
    pub images: usize,
    pub excluded_images: usize,
    /// Selections per category over the included images.
    pub category_counts: BTreeMap<String, usize>,
    pub total_selections: usize,
    pub per_image: Vec<ImageErrors>,
    /// Mean of per-image mean error counts within each loss group.
    pub group_means: BTreeMap<LossGroup, f64>,
    /// Spearman correlation between per-image loss and mean error count, when every
    /// included image has a loss and the correlation is defined.
    pub spearman: Option<f64>,
}

/// Keeps images with at least `min_annotators` distinct annotators and summarises them.
pub fn aggregate_annotations(
    records: &[AnnotationRecord],
    taxonomy: &BTreeSet<String>,
    min_annotators: usize,
) -> Result<AnnotationSummary, AnalysisError> {
    let mut by_image: BTreeMap<&str, BTreeMap<&str, &AnnotationRecord>> = BTreeMap::new();
    for r in records {
        if let Some(c) = r.error_categories.iter().find(|c| !taxonomy.contains(*c)) {
            return Err(AnalysisError::UnknownCategory {
                image_id: r.image_id.clone(),
                annotator_id: r.annotator_id.clone(),
                category: c.clone(),
            });
        }
        if by_image.entry(&r.image_id).or_default().insert(&r.annotator_id, r).is_some() {
            return Err(AnalysisError::DuplicateAnnotator { image_id: r.image_id.clone(), annotator_id: r.annotator_id.clone() });
        }
    }

    let mut summary = AnnotationSummary::default();
    for (image_id, annotations) in by_image {
        if annotations.len() < min_annotators {
            summary.excluded_images += 1;
            continue;
        }
        let first = annotations.values().next().expect("non-empty");
        if annotations.values().any(|a| a.loss_group != first.loss_group) {
            return Err(AnalysisError::InconsistentGroup(image_id.to_owned()));
        }
        let mut selections = 0;
        for a in annotations.values() {
            for c in &a.error_categories {
                *summary.category_counts.entry(c.clone()).or_insert(0) += 1;
                selections += 1;
            }
        }
        summary.total_selections += selections;
        summary.per_image.push(ImageErrors {
            image_id: image_id.to_owned(),
            loss_group: first.loss_group,
            annotators: annotations.len(),
            mean_errors: selections as f64 / annotations.len() as f64,
            loss: annotations.values().find_map(|a| a.loss),
        });
    }
    summary.images = summary.per_image.len();

    let mut groups: BTreeMap<LossGroup, Vec<f64>> = BTreeMap::new();
    for img in &summary.per_image {
        groups.entry(img.loss_group).or_default().push(img.mean_errors);
    }
    summary.group_means = groups.into_iter().map(|(g, v)| (g, v.iter().sum::<f64>() / v.len() as f64)).collect();

    let pairs: Option<Vec<(f64, f64)>> = summary.per_image.iter().map(|i| i.loss.map(|l| (l, i.mean_errors))).collect();
    summary.spearman = pairs.and_then(|p| {
        let (x, y): (Vec<f64>, Vec<f64>) = p.into_iter().unzip();
        spearman(&x, &y)
    });
    Ok(summary)
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson correlation of average ranks); `None` when
/// fewer than two points or either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    (vx > 0.0 && vy > 0.0).then(|| cov / (vx * vy).sqrt())
}

/// Category histogram as CSV (`category,count`).
pub fn category_csv(summary: &AnnotationSummary) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["category", "count"]).expect("in-memory write");
    for (c, n) in &summary.category_counts {
        w.write_record([c.as_str(), &n.to_string()]).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

/// Per-image mean error counts as CSV (`image_id,loss_group,annotators,mean_errors,loss`).
pub fn per_image_csv(summary: &AnnotationSummary) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["image_id", "loss_group", "annotators", "mean_errors", "loss"]).expect("in-memory write");
    for i in &summary.per_image {
        w.write_record([
            i.image_id.clone(),
            i.loss_group.to_string(),
            i.annotators.to_string(),
            i.mean_errors.to_string(),
            i.loss.map(|l| l.to_string()).unwrap_or_default(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub run: String,
    pub policy: String,
    pub rule: String,
    /// Ratio for top-fraction rules, k for sigma rules.
    pub rule_value: f64,
    pub epochs: u32,
    pub initial_samples: usize,
    pub final_samples: usize,
    pub actions: usize,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Deserialize)]
struct MetricsFile {
    corpus: BTreeMap<String, f64>,
}

/// One row per completed run directory, in the given order.
pub fn sweep_report(run_dirs: &[PathBuf]) -> Result<Vec<SweepRow>, AnalysisError> {
    run_dirs.iter().map(|d| sweep_row(d)).collect()
}

fn sweep_row(dir: &Path) -> Result<SweepRow, AnalysisError> {
    let incomplete = |reason: String| AnalysisError::IncompleteRun { dir: dir.to_owned(), reason };
    let config = read_run_config(dir).map_err(|e| incomplete(e.to_string()))?;
    let report_bytes = std::fs::read(dir.join(REPORT_FILE)).map_err(|_| incomplete(format!("no {REPORT_FILE}")))?;
    let report: RunReport<f64> = serde_json::from_slice(&report_bytes).map_err(|e| incomplete(format!("{REPORT_FILE}: {e}")))?;
    if !report.complete {
        return Err(incomplete("run did not finish".into()));
    }
    let metrics_bytes = std::fs::read(dir.join(METRICS_FILE)).map_err(|_| incomplete(format!("no {METRICS_FILE}")))?;
    let metrics: MetricsFile = serde_json::from_slice(&metrics_bytes).map_err(|e| incomplete(format!("{METRICS_FILE}: {e}")))?;
    let (rule, rule_value) = match config.policy.rule {
        SelectionRule::TopFraction { ratio } => ("top_fraction", ratio),
        SelectionRule::SigmaThreshold { k } => ("sigma_threshold", k),
    };
    Ok(SweepRow {
        run: dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| dir.display().to_string()),
        policy: report.policy,
        rule: rule.into(),
        rule_value,
        epochs: config.epochs,
        initial_samples: report.initial_samples,
        final_samples: report.final_samples,
        actions: report.cumulative_actions.values().sum(),
        metrics: metrics.corpus,
    })
}

/// Sweep rows as CSV; metric columns are the union of all runs' metrics.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let metric_names: BTreeSet<&str> = rows.iter().flat_map(|r| r.metrics.keys().map(String::as_str)).collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["run", "policy", "rule", "rule_value", "epochs", "initial_samples", "final_samples", "actions"];
    header.extend(metric_names.iter());
    w.write_record(&header).expect("in-memory write");
    for r in rows {
        let mut rec = vec![
            r.run.clone(),
            r.policy.clone(),
            r.rule.clone(),
            r.rule_value.to_string(),
            r.epochs.to_string(),
            r.initial_samples.to_string(),
            r.final_samples.to_string(),
            r.actions.to_string(),
        ];
        rec.extend(metric_names.iter().map(|m| r.metrics.get(*m).map(|v| v.to_string()).unwrap_or_default()));
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}
