//! ROUGE-L: longest-common-subsequence F-measure.

use crate::scalar::Scalar;

use super::{MetricError, TokenizedCaption};

/// Recall weight of the F-measure.
pub const ROUGE_L_BETA: f64 = 1.2;

/// Length of the longest common subsequence of two token sequences.
pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut curr = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            curr[j + 1] = if x == y { prev[j] + 1 } else { curr[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

fn f_measure<T: Scalar>(lcs: usize, cand_len: usize, ref_len: usize) -> T {
    if lcs == 0 {
        return T::zero();
    }
    let p = T::count(lcs) / T::count(cand_len);
    let r = T::count(lcs) / T::count(ref_len);
    let beta2 = T::lit(ROUGE_L_BETA * ROUGE_L_BETA);
    (T::one() + beta2) * p * r / (r + beta2 * p)
}

/// ROUGE-L of a candidate: the best F-measure over the references.
pub fn rouge_l<T: Scalar>(candidate: &TokenizedCaption, references: &[TokenizedCaption]) -> Result<T, MetricError> {
    if references.is_empty() {
        return Err(MetricError::NoReferences(candidate.to_string()));
    }
    Ok(references
        .iter()
        .map(|r| f_measure::<T>(lcs_len(candidate.tokens(), r.tokens()), candidate.len(), r.len()))
        .fold(T::zero(), T::max))
}
