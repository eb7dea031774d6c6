//! Per-sample, per-epoch loss records and the selection of difficult samples.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::scalar::{self, Scalar};

/// Number of equal-width histogram bins over `[0, max loss]`.
pub const HISTOGRAM_BINS: usize = 50;

#[derive(Debug, thiserror::Error)]
pub enum LedgerError {
    #[error("duplicate loss record for sample {sample_id} at epoch {epoch}")]
    DuplicateRecord { sample_id: String, epoch: u32 },
    #[error("epoch {epoch}: loss records do not match the snapshot ({detail})")]
    MissingSample { epoch: u32, detail: String },
    #[error("non-finite loss for sample {sample_id} at epoch {epoch}")]
    NonFiniteLoss { sample_id: String, epoch: u32 },
    #[error("negative loss for sample {sample_id} at epoch {epoch}")]
    NegativeLoss { sample_id: String, epoch: u32 },
    #[error("record for sample {sample_id} carries epoch {found}, expected {expected}")]
    EpochMismatch { sample_id: String, found: u32, expected: u32 },
    #[error("epoch {epoch} must be greater than the last recorded epoch {last}")]
    NonIncreasingEpoch { epoch: u32, last: u32 },
    #[error("no statistics recorded for epoch {0}")]
    NoSuchEpoch(u32),
    #[error("invalid selection rule: {0}")]
    InvalidRule(String),
    #[error("malformed ledger line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord<T> {
    pub sample_id: String,
    pub epoch: u32,
    pub loss: T,
}

/// Equal-width histogram over `[0, max]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram<T> {
    pub bin_width: T,
    pub counts: Vec<usize>,
}

impl<T: Scalar> Histogram<T> {
    fn build(values: &[T]) -> Self {
        let max = values.iter().copied().fold(T::zero(), T::max);
        let bin_width = max / T::count(HISTOGRAM_BINS);
        let mut counts = vec![0; HISTOGRAM_BINS];
        for &v in values {
            let idx = if bin_width > T::zero() {
                (v / bin_width).floor().to_usize().unwrap_or(0).min(HISTOGRAM_BINS - 1)
            } else {
                0
            };
            counts[idx] += 1;
        }
        Self { bin_width, counts }
    }

    pub fn bin_bounds(&self, bin: usize) -> (T, T) {
        (self.bin_width * T::count(bin), self.bin_width * T::count(bin + 1))
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats<T> {
    pub epoch: u32,
    pub mean: T,
    /// Population standard deviation.
    pub std: T,
    pub count: usize,
    pub histogram: Histogram<T>,
}

impl<T: Scalar> EpochStats<T> {
    fn compute(epoch: u32, losses: &[T]) -> Self {
        let mean = scalar::mean(losses);
        let std = scalar::population_std(losses, mean);
        Self { epoch, mean, std, count: losses.len(), histogram: Histogram::build(losses) }
    }

    /// `mean + k * std`.
    pub fn sigma_threshold(&self, k: f64) -> T {
        self.mean + T::lit(k) * self.std
    }
}

/// Which samples count as difficult at an epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SelectionRule {
    /// The `ceil(ratio * N)` highest-loss samples.
    TopFraction { ratio: f64 },
    /// Every sample with `loss >= mean + k * std`.
    SigmaThreshold { k: f64 },
}

impl SelectionRule {
    pub fn validate(&self) -> Result<(), LedgerError> {
        match *self {
            SelectionRule::TopFraction { ratio } if !(0.0..=1.0).contains(&ratio) => {
                Err(LedgerError::InvalidRule(format!("ratio {ratio} outside [0, 1]")))
            }
            SelectionRule::SigmaThreshold { k } if !(k > 0.0 && k.is_finite()) => {
                Err(LedgerError::InvalidRule(format!("k = {k} must be positive")))
            }
            _ => Ok(()),
        }
    }
}

/// `ceil(ratio * n)`, treating products within rounding noise of an integer as that integer.
pub fn top_fraction_count(ratio: f64, n: usize) -> usize {
    let x = ratio * n as f64;
    let nearest = x.round();
    let k = if (x - nearest).abs() <= 1e-9 * nearest.max(1.0) { nearest } else { x.ceil() };
    (k as usize).min(n)
}

#[derive(Clone, Debug)]
struct EpochEntry<T> {
    losses: BTreeMap<String, T>,
    stats: EpochStats<T>,
}

/// Append-only loss ledger. Epochs are sealed once recorded.
#[derive(Clone, Debug)]
pub struct LossLedger<T> {
    epochs: BTreeMap<u32, EpochEntry<T>>,
}

impl<T> Default for LossLedger<T> {
    fn default() -> Self {
        Self { epochs: BTreeMap::new() }
    }
}

/// One histogram row of the loss-distribution export.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow<T> {
    pub epoch: u32,
    pub bin_low: T,
    pub bin_high: T,
    pub count: usize,
}

impl<T: Scalar> LossLedger<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records one epoch's losses; `expected` is the sample set of the snapshot
    /// the losses were computed on.
    pub fn record_epoch<'a>(
        &mut self,
        epoch: u32,
        records: Vec<LossRecord<T>>,
        expected: impl IntoIterator<Item = &'a str>,
    ) -> Result<&EpochStats<T>, LedgerError> {
        if let Some((&last, _)) = self.epochs.iter().next_back() {
            if epoch <= last {
                return Err(LedgerError::NonIncreasingEpoch { epoch, last });
            }
        }
        let mut losses = BTreeMap::new();
        for rec in records {
            if rec.epoch != epoch {
                return Err(LedgerError::EpochMismatch { sample_id: rec.sample_id, found: rec.epoch, expected: epoch });
            }
            if !rec.loss.is_finite() {
                return Err(LedgerError::NonFiniteLoss { sample_id: rec.sample_id, epoch });
            }
            if rec.loss < T::zero() {
                return Err(LedgerError::NegativeLoss { sample_id: rec.sample_id, epoch });
            }
            if losses.insert(rec.sample_id.clone(), rec.loss).is_some() {
                return Err(LedgerError::DuplicateRecord { sample_id: rec.sample_id, epoch });
            }
        }
        let expected: BTreeSet<&str> = expected.into_iter().collect();
        if let Some(missing) = expected.iter().find(|s| !losses.contains_key(**s)) {
            return Err(LedgerError::MissingSample { epoch, detail: format!("no loss for sample {missing}") });
        }
        if let Some(extra) = losses.keys().find(|s| !expected.contains(s.as_str())) {
            return Err(LedgerError::MissingSample { epoch, detail: format!("sample {extra} is not in the snapshot") });
        }
        let values: Vec<T> = losses.values().copied().collect();
        let stats = EpochStats::compute(epoch, &values);
        let entry = self.epochs.entry(epoch).or_insert(EpochEntry { losses, stats });
        Ok(&entry.stats)
    }

    pub fn stats(&self, epoch: u32) -> Option<&EpochStats<T>> {
        self.epochs.get(&epoch).map(|e| &e.stats)
    }

    pub fn epochs(&self) -> impl Iterator<Item = u32> + '_ {
        self.epochs.keys().copied()
    }

    pub fn last_epoch(&self) -> Option<u32> {
        self.epochs.keys().next_back().copied()
    }

    pub fn loss(&self, epoch: u32, sample_id: &str) -> Option<T> {
        self.epochs.get(&epoch)?.losses.get(sample_id).copied()
    }

    /// Most recent recorded loss of a sample.
    pub fn latest_loss(&self, sample_id: &str) -> Option<T> {
        self.epochs.values().rev().find_map(|e| e.losses.get(sample_id).copied())
    }

    /// Records of an epoch, ordered by sample id.
    pub fn records(&self, epoch: u32) -> Result<Vec<LossRecord<T>>, LedgerError> {
        let entry = self.epochs.get(&epoch).ok_or(LedgerError::NoSuchEpoch(epoch))?;
        Ok(entry
            .losses
            .iter()
            .map(|(id, &loss)| LossRecord { sample_id: id.clone(), epoch, loss })
            .collect())
    }

    /// Difficult samples at `epoch`, ordered by descending loss then ascending sample id.
    pub fn select_difficult(&self, epoch: u32, rule: SelectionRule) -> Result<Vec<String>, LedgerError> {
        rule.validate()?;
        let entry = self.epochs.get(&epoch).ok_or(LedgerError::NoSuchEpoch(epoch))?;
        let mut ranked: Vec<(&String, T)> = entry.losses.iter().map(|(id, &l)| (id, l)).collect();
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then_with(|| a.0.cmp(b.0)));
        let chosen: Vec<String> = match rule {
            SelectionRule::TopFraction { ratio } => {
                let k = top_fraction_count(ratio, ranked.len());
                ranked.into_iter().take(k).map(|(id, _)| id.clone()).collect()
            }
            SelectionRule::SigmaThreshold { k } => {
                let threshold = entry.stats.sigma_threshold(k);
                ranked.into_iter().take_while(|(_, l)| *l >= threshold).map(|(id, _)| id.clone()).collect()
            }
        };
        Ok(chosen)
    }

    /// Number of samples at or above `mean + k * std` at an epoch.
    pub fn count_above_sigma(&self, epoch: u32, k: f64) -> Result<usize, LedgerError> {
        let entry = self.epochs.get(&epoch).ok_or(LedgerError::NoSuchEpoch(epoch))?;
        let threshold = entry.stats.sigma_threshold(k);
        Ok(entry.losses.values().filter(|&&l| l >= threshold).count())
    }

    /// Per-epoch histogram rows for every epoch in `epochs`.
    pub fn export_loss_distribution(&self, epochs: RangeInclusive<u32>) -> Result<Vec<HistogramRow<T>>, LedgerError> {
        let mut rows = Vec::new();
        for epoch in epochs {
            let stats = self.stats(epoch).ok_or(LedgerError::NoSuchEpoch(epoch))?;
            for (bin, &count) in stats.histogram.counts.iter().enumerate() {
                let (bin_low, bin_high) = stats.histogram.bin_bounds(bin);
                rows.push(HistogramRow { epoch, bin_low, bin_high, count });
            }
        }
        Ok(rows)
    }

    /// Writes an epoch's records as NDJSON, one record per line.
    pub fn write_ndjson<W: Write>(&self, epoch: u32, mut out: W) -> Result<(), LedgerError>
    where
        T: Serialize,
    {
        for rec in self.records(epoch)? {
            serde_json::to_writer(&mut out, &rec).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Reads NDJSON loss records (blank lines ignored).
pub fn read_ndjson<T: Scalar + serde::de::DeserializeOwned, R: BufRead>(input: R) -> Result<Vec<LossRecord<T>>, LedgerError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| LedgerError::Parse { line: i + 1, message: e.to_string() })?;
        out.push(rec);
    }
    Ok(out)
}

/// CSV with columns `epoch,bin_low,bin_high,count`.
pub fn histogram_csv<T: Scalar>(rows: &[HistogramRow<T>]) -> String {
    let mut out = String::from("epoch,bin_low,bin_high,count\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.epoch, r.bin_low, r.bin_high, r.count));
    }
    out
}
