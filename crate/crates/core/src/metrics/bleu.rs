//! BLEU: clipped modified n-gram precision with a brevity penalty.

use crate::scalar::Scalar;

use super::{MetricError, TokenizedCaption};

/// Sufficient statistics for BLEU of one candidate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BleuStats {
    /// Clipped n-gram matches, index `n - 1`.
    pub matches: Vec<usize>,
    /// Candidate n-gram totals, index `n - 1`.
    pub totals: Vec<usize>,
    pub candidate_len: usize,
    /// Length of the reference closest to the candidate (shorter wins ties).
    pub reference_len: usize,
}

impl BleuStats {
    pub fn compute(
        candidate: &TokenizedCaption,
        references: &[TokenizedCaption],
        max_n: usize,
    ) -> Result<Self, MetricError> {
        if references.is_empty() {
            return Err(MetricError::NoReferences(candidate.to_string()));
        }
        let mut matches = Vec::with_capacity(max_n);
        let mut totals = Vec::with_capacity(max_n);
        for n in 1..=max_n {
            let cand_counts = candidate.ngram_counts(n);
            let ref_counts: Vec<_> = references.iter().map(|r| r.ngram_counts(n)).collect();
            let mut clipped = 0;
            for (gram, &count) in &cand_counts {
                let max_ref = ref_counts.iter().filter_map(|rc| rc.get(gram)).copied().max().unwrap_or(0);
                clipped += count.min(max_ref);
            }
            matches.push(clipped);
            totals.push(candidate.len().saturating_sub(n - 1));
        }
        let c = candidate.len();
        let reference_len = references
            .iter()
            .map(TokenizedCaption::len)
            .min_by_key(|&r| (r.abs_diff(c), r))
            .unwrap_or(0);
        Ok(Self { matches, totals, candidate_len: c, reference_len })
    }

    fn accumulate(&mut self, other: &BleuStats) {
        for (a, b) in self.matches.iter_mut().zip(&other.matches) {
            *a += b;
        }
        for (a, b) in self.totals.iter_mut().zip(&other.totals) {
            *a += b;
        }
        self.candidate_len += other.candidate_len;
        self.reference_len += other.reference_len;
    }
}

fn brevity_penalty<T: Scalar>(candidate_len: usize, reference_len: usize) -> T {
    if candidate_len == 0 {
        T::zero()
    } else if candidate_len >= reference_len {
        T::one()
    } else {
        (T::one() - T::count(reference_len) / T::count(candidate_len)).exp()
    }
}

/// Sentence-level BLEU-`n` for `n` in `1..=max_n`, with add-one smoothing on
/// the precisions of order two and above.
pub fn sentence_bleu_all<T: Scalar>(stats: &BleuStats) -> Vec<T> {
    let max_n = stats.matches.len();
    let mut out = Vec::with_capacity(max_n);
    if stats.totals.first().copied().unwrap_or(0) == 0 || stats.matches[0] == 0 {
        out.resize(max_n, T::zero());
        return out;
    }
    let bp: T = brevity_penalty(stats.candidate_len, stats.reference_len);
    let mut log_sum = T::zero();
    for n in 0..max_n {
        let p = if n == 0 {
            T::count(stats.matches[0]) / T::count(stats.totals[0])
        } else {
            T::count(stats.matches[n] + 1) / T::count(stats.totals[n] + 1)
        };
        log_sum = log_sum + p.ln();
        out.push(bp * (log_sum / T::count(n + 1)).exp());
    }
    out
}

/// Corpus-level BLEU-`n` for `n` in `1..=max_n`: numerators and denominators
/// are summed over the corpus before the geometric mean. Unsmoothed.
pub fn corpus_bleu_all<T: Scalar>(per_candidate: &[BleuStats], max_n: usize) -> Vec<T> {
    let mut total = BleuStats { matches: vec![0; max_n], totals: vec![0; max_n], candidate_len: 0, reference_len: 0 };
    for s in per_candidate {
        total.accumulate(s);
    }
    let bp: T = brevity_penalty(total.candidate_len, total.reference_len);
    let mut out = Vec::with_capacity(max_n);
    let mut log_sum = T::zero();
    let mut zero = false;
    for n in 0..max_n {
        if total.matches[n] == 0 || total.totals[n] == 0 {
            zero = true;
        }
        if zero {
            out.push(T::zero());
            continue;
        }
        log_sum = log_sum + (T::count(total.matches[n]) / T::count(total.totals[n])).ln();
        out.push(bp * (log_sum / T::count(n + 1)).exp());
    }
    out
}

/// Smoothed sentence BLEU-`max_n` of one candidate.
pub fn bleu<T: Scalar>(
    candidate: &TokenizedCaption,
    references: &[TokenizedCaption],
    max_n: usize,
) -> Result<T, MetricError> {
    if max_n == 0 {
        return Err(MetricError::InvalidOrder(max_n));
    }
    let stats = BleuStats::compute(candidate, references, max_n)?;
    Ok(sentence_bleu_all::<T>(&stats)[max_n - 1])
}
