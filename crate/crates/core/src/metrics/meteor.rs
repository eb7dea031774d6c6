//! Exact-match METEOR variant ("METEOR-lite").
//!
//! Only the exact unigram stage is implemented: there is no stemming, synonymy
//! or paraphrase matching, so scores are not comparable to published METEOR.

use crate::scalar::Scalar;

use super::{MetricError, TokenizedCaption};

/// Greedy left-to-right exact alignment: each candidate token takes the first
/// unused identical reference token. Returns `(candidate_pos, reference_pos)`.
pub fn align(candidate: &[String], reference: &[String]) -> Vec<(usize, usize)> {
    let mut used = vec![false; reference.len()];
    let mut pairs = Vec::new();
    for (i, tok) in candidate.iter().enumerate() {
        if let Some(j) = (0..reference.len()).find(|&j| !used[j] && &reference[j] == tok) {
            used[j] = true;
            pairs.push((i, j));
        }
    }
    pairs
}

/// Number of runs in which consecutive matches are adjacent in both sequences.
pub fn count_chunks(alignment: &[(usize, usize)]) -> usize {
    let mut chunks = 0;
    let mut prev: Option<(usize, usize)> = None;
    for &(i, j) in alignment {
        match prev {
            Some((pi, pj)) if i == pi + 1 && j == pj + 1 => {}
            _ => chunks += 1,
        }
        prev = Some((i, j));
    }
    chunks
}

fn score_against<T: Scalar>(candidate: &[String], reference: &[String]) -> T {
    let alignment = align(candidate, reference);
    let m = alignment.len();
    if m == 0 {
        return T::zero();
    }
    let p = T::count(m) / T::count(candidate.len());
    let r = T::count(m) / T::count(reference.len());
    let f_mean = T::lit(10.0) * p * r / (r + T::lit(9.0) * p);
    let frag = T::count(count_chunks(&alignment)) / T::count(m);
    let penalty = T::lit(0.5) * frag * frag * frag;
    f_mean * (T::one() - penalty)
}

/// METEOR-lite of a candidate: the best score over the references.
pub fn meteor_lite<T: Scalar>(
    candidate: &TokenizedCaption,
    references: &[TokenizedCaption],
) -> Result<T, MetricError> {
    if references.is_empty() {
        return Err(MetricError::NoReferences(candidate.to_string()));
    }
    Ok(references
        .iter()
        .map(|r| score_against::<T>(candidate.tokens(), r.tokens()))
        .fold(T::zero(), T::max))
}
