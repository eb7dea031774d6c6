use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

use super::{corpus_bleu_all, meteor_lite, rouge_l, sentence_bleu_all, tokenize, BleuStats, CiderScorer, MetricError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MetricName {
    #[serde(rename = "bleu1")]
    Bleu1,
    #[serde(rename = "bleu2")]
    Bleu2,
    #[serde(rename = "bleu3")]
    Bleu3,
    #[serde(rename = "bleu4")]
    Bleu4,
    #[serde(rename = "rougeL")]
    RougeL,
    #[serde(rename = "cider")]
    Cider,
    #[serde(rename = "meteor_lite")]
    MeteorLite,
}

impl MetricName {
    pub const ALL: [MetricName; 7] = [
        MetricName::Bleu1,
        MetricName::Bleu2,
        MetricName::Bleu3,
        MetricName::Bleu4,
        MetricName::RougeL,
        MetricName::Cider,
        MetricName::MeteorLite,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricName::Bleu1 => "bleu1",
            MetricName::Bleu2 => "bleu2",
            MetricName::Bleu3 => "bleu3",
            MetricName::Bleu4 => "bleu4",
            MetricName::RougeL => "rougeL",
            MetricName::Cider => "cider",
            MetricName::MeteorLite => "meteor_lite",
        }
    }

    fn bleu_order(self) -> Option<usize> {
        match self {
            MetricName::Bleu1 => Some(1),
            MetricName::Bleu2 => Some(2),
            MetricName::Bleu3 => Some(3),
            MetricName::Bleu4 => Some(4),
            _ => None,
        }
    }

    pub fn all() -> BTreeSet<MetricName> {
        Self::ALL.into_iter().collect()
    }
}

impl fmt::Display for MetricName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricName {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| MetricError::UnknownMetric(s.to_owned()))
    }
}

/// Corpus-level and per-image scores for one candidate set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport<T> {
    pub corpus: BTreeMap<MetricName, T>,
    pub per_sample: BTreeMap<String, BTreeMap<MetricName, T>>,
}

impl<T> Default for MetricReport<T> {
    fn default() -> Self {
        Self { corpus: BTreeMap::new(), per_sample: BTreeMap::new() }
    }
}

impl<T: Scalar> MetricReport<T> {
    pub fn get(&self, metric: MetricName) -> Option<T> {
        self.corpus.get(&metric).copied()
    }

    /// CSV with one row per image and a trailing `__corpus__` row.
    pub fn to_csv(&self) -> String {
        let metrics: Vec<MetricName> = self.corpus.keys().copied().collect();
        let mut w = csv::Writer::from_writer(Vec::new());
        let header: Vec<&str> = std::iter::once("image_id").chain(metrics.iter().map(|m| m.as_str())).collect();
        w.write_record(&header).expect("in-memory write");
        let rows = self.per_sample.iter().map(|(k, v)| (k.as_str(), v)).chain(std::iter::once(("__corpus__", &self.corpus)));
        for (key, scores) in rows {
            let mut rec = vec![key.to_owned()];
            rec.extend(metrics.iter().map(|m| scores.get(m).map(|v| v.to_string()).unwrap_or_default()));
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }
}

/// Scores one candidate per image against that image's references.
///
/// Corpus BLEU aggregates n-gram statistics before the geometric mean and is
/// unsmoothed; per-image BLEU is add-one smoothed. ROUGE-L, METEOR-lite and
/// CIDEr corpus values are means of the per-image scores.
pub fn score_corpus<T: Scalar>(
    candidates: &BTreeMap<String, String>,
    references: &BTreeMap<String, Vec<String>>,
    metrics: &BTreeSet<MetricName>,
) -> Result<MetricReport<T>, MetricError> {
    if let Some(k) = candidates.keys().find(|k| !references.contains_key(*k)) {
        return Err(MetricError::KeyMismatch(format!("candidate {k:?} has no reference entry")));
    }
    if let Some(k) = references.keys().find(|k| !candidates.contains_key(*k)) {
        return Err(MetricError::KeyMismatch(format!("reference {k:?} has no candidate")));
    }
    if let Some((k, _)) = references.iter().find(|(_, r)| r.is_empty()) {
        return Err(MetricError::NoReferences(k.clone()));
    }
    if metrics.is_empty() {
        return Ok(MetricReport::default());
    }

    let keys: Vec<&String> = candidates.keys().collect();
    let cands: Vec<_> = keys.iter().map(|k| tokenize(&candidates[*k])).collect();
    let refs: Vec<Vec<_>> = keys.iter().map(|k| references[*k].iter().map(|r| tokenize(r)).collect()).collect();

    let max_bleu = metrics.iter().filter_map(|m| m.bleu_order()).max().unwrap_or(0);
    let cider = if metrics.contains(&MetricName::Cider) { Some(CiderScorer::new(&refs)?) } else { None };

    struct Row<T> {
        bleu: Option<BleuStats>,
        scores: BTreeMap<MetricName, T>,
    }

    let rows: Vec<Row<T>> = cands
        .par_iter()
        .zip(refs.par_iter())
        .map(|(c, r)| -> Result<Row<T>, MetricError> {
            let mut scores = BTreeMap::new();
            let bleu = if max_bleu > 0 {
                let stats = BleuStats::compute(c, r, max_bleu)?;
                let sentence = sentence_bleu_all::<T>(&stats);
                for m in metrics.iter().filter(|m| m.bleu_order().is_some()) {
                    scores.insert(*m, sentence[m.bleu_order().unwrap() - 1]);
                }
                Some(stats)
            } else {
                None
            };
            if metrics.contains(&MetricName::RougeL) {
                scores.insert(MetricName::RougeL, rouge_l::<T>(c, r)?);
            }
            if metrics.contains(&MetricName::MeteorLite) {
                scores.insert(MetricName::MeteorLite, meteor_lite::<T>(c, r)?);
            }
            if let Some(scorer) = &cider {
                scores.insert(MetricName::Cider, scorer.score::<T>(c, r)?);
            }
            Ok(Row { bleu, scores })
        })
        .collect::<Result<_, _>>()?;

    let mut corpus = BTreeMap::new();
    if max_bleu > 0 {
        let stats: Vec<BleuStats> = rows.iter().filter_map(|r| r.bleu.clone()).collect();
        let all = corpus_bleu_all::<T>(&stats, max_bleu);
        for m in metrics.iter().filter(|m| m.bleu_order().is_some()) {
            corpus.insert(*m, all[m.bleu_order().unwrap() - 1]);
        }
    }
    for m in [MetricName::RougeL, MetricName::MeteorLite, MetricName::Cider] {
        if metrics.contains(&m) {
            let values: Vec<T> = rows.iter().map(|r| r.scores[&m]).collect();
            corpus.insert(m, crate::scalar::mean(&values));
        }
    }
    let per_sample = keys.into_iter().cloned().zip(rows.into_iter().map(|r| r.scores)).collect();
    Ok(MetricReport { corpus, per_sample })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    fn refs(pairs: &[(&str, &[&str])]) -> BTreeMap<String, Vec<String>> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.iter().map(|s| s.to_string()).collect())).collect()
    }

    #[test]
    fn identical_candidates_score_one() {
        let c = map(&[("i1", "a man rides a horse"), ("i2", "two cats sleep on a sofa")]);
        let r = refs(&[("i1", &["a man rides a horse", "a rider"]), ("i2", &["two cats sleep on a sofa"])]);
        let report: MetricReport<f64> = score_corpus(&c, &r, &MetricName::all()).unwrap();
        assert!((report.get(MetricName::Bleu4).unwrap() - 1.0).abs() < 1e-12);
        assert!((report.get(MetricName::RougeL).unwrap() - 1.0).abs() < 1e-12);
        assert!(report.get(MetricName::MeteorLite).unwrap() >= 0.99);
        assert_eq!(report.per_sample.len(), 2);
    }

    #[test]
    fn empty_metric_set_gives_empty_report() {
        let c = map(&[("i1", "a")]);
        let r = refs(&[("i1", &["a"])]);
        let report: MetricReport<f64> = score_corpus(&c, &r, &BTreeSet::new()).unwrap();
        assert_eq!(report, MetricReport::default());
    }

    #[test]
    fn key_mismatch() {
        let c = map(&[("i1", "a")]);
        let r = refs(&[("i2", &["a"])]);
        assert!(matches!(score_corpus::<f64>(&c, &r, &MetricName::all()), Err(MetricError::KeyMismatch(_))));
    }

    #[test]
    fn metric_names_round_trip() {
        for m in MetricName::ALL {
            assert_eq!(m.as_str().parse::<MetricName>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.as_str()));
        }
        assert!("spice".parse::<MetricName>().is_err());
    }

    #[test]
    fn csv_has_corpus_row() {
        let c = map(&[("i1", "a b")]);
        let r = refs(&[("i1", &["a b"])]);
        let set = [MetricName::Bleu1, MetricName::RougeL].into_iter().collect();
        let csv = score_corpus::<f64>(&c, &r, &set).unwrap().to_csv();
        assert_eq!(csv, "image_id,bleu1,rougeL\ni1,1,1\n__corpus__,1,1\n");
    }
}
