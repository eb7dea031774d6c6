//! CIDEr: consensus-based TF-IDF n-gram cosine similarity.
//!
//! Document frequency counts the images whose reference set contains an n-gram.
//! Each candidate is compared to the mean of its references' TF-IDF vectors for
//! n = 1..=4; the per-n cosines are averaged and scaled by 10. No length penalty
//! is applied (this is CIDEr, not CIDEr-D).

use std::collections::{BTreeMap, BTreeSet};

use crate::scalar::Scalar;

use super::{MetricError, TokenizedCaption};

pub const CIDER_MAX_N: usize = 4;
pub const CIDER_SCALE: f64 = 10.0;

type Gram = Vec<String>;

/// IDF table built over a reference corpus.
#[derive(Clone, Debug)]
pub struct CiderScorer {
    doc_freq: BTreeMap<Gram, usize>,
    num_images: usize,
}

impl CiderScorer {
    /// Builds document frequencies from the per-image reference sets.
    pub fn new(references: &[Vec<TokenizedCaption>]) -> Result<Self, MetricError> {
        let mut doc_freq: BTreeMap<Gram, usize> = BTreeMap::new();
        for refs in references {
            if refs.is_empty() {
                return Err(MetricError::NoReferences("<cider reference set>".into()));
            }
            let mut seen: BTreeSet<&[String]> = BTreeSet::new();
            for r in refs {
                for n in 1..=CIDER_MAX_N {
                    seen.extend(r.tokens().windows(n));
                }
            }
            for gram in seen {
                *doc_freq.entry(gram.to_vec()).or_insert(0) += 1;
            }
        }
        Ok(Self { doc_freq, num_images: references.len() })
    }

    fn idf<T: Scalar>(&self, gram: &[String]) -> T {
        let df = self.doc_freq.get(gram).copied().unwrap_or(0).max(1);
        (T::count(self.num_images) / T::count(df)).ln()
    }

    fn tfidf<'a, T: Scalar>(&self, caption: &'a TokenizedCaption, n: usize) -> BTreeMap<&'a [String], T> {
        caption
            .ngram_counts(n)
            .into_iter()
            .map(|(gram, count)| (gram, T::count(count) * self.idf::<T>(gram)))
            .collect()
    }

    /// CIDEr of one candidate against its references, in `[0, 10]`.
    pub fn score<T: Scalar>(
        &self,
        candidate: &TokenizedCaption,
        references: &[TokenizedCaption],
    ) -> Result<T, MetricError> {
        if references.is_empty() {
            return Err(MetricError::NoReferences(candidate.to_string()));
        }
        let mut total = T::zero();
        for n in 1..=CIDER_MAX_N {
            let cand = self.tfidf::<T>(candidate, n);
            let mut mean_ref: BTreeMap<&[String], T> = BTreeMap::new();
            for r in references {
                for (gram, w) in self.tfidf::<T>(r, n) {
                    let slot = mean_ref.entry(gram).or_insert_with(T::zero);
                    *slot = *slot + w;
                }
            }
            let k = T::count(references.len());
            for w in mean_ref.values_mut() {
                *w = *w / k;
            }
            total = total + cosine(&cand, &mean_ref);
        }
        Ok(T::lit(CIDER_SCALE) * total / T::count(CIDER_MAX_N))
    }
}

fn cosine<T: Scalar>(a: &BTreeMap<&[String], T>, b: &BTreeMap<&[String], T>) -> T {
    let norm = |v: &BTreeMap<&[String], T>| v.values().map(|&w| w * w).sum::<T>().sqrt();
    let (na, nb) = (norm(a), norm(b));
    if na == T::zero() || nb == T::zero() {
        return T::zero();
    }
    let dot = a.iter().filter_map(|(g, &w)| b.get(g).map(|&v| w * v)).sum::<T>();
    dot / (na * nb)
}

/// Corpus CIDEr: `(mean over images, per-image scores)`.
pub fn cider<T: Scalar>(
    candidates: &[TokenizedCaption],
    references: &[Vec<TokenizedCaption>],
) -> Result<(T, Vec<T>), MetricError> {
    if candidates.len() != references.len() {
        return Err(MetricError::KeyMismatch(format!(
            "{} candidates vs {} reference sets",
            candidates.len(),
            references.len()
        )));
    }
    let scorer = CiderScorer::new(references)?;
    let per_image = candidates
        .iter()
        .zip(references)
        .map(|(c, r)| scorer.score::<T>(c, r))
        .collect::<Result<Vec<T>, _>>()?;
    Ok((crate::scalar::mean(&per_image), per_image))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::tokenize;

    fn refs(texts: &[&str]) -> Vec<TokenizedCaption> {
        texts.iter().map(|t| tokenize(t)).collect()
    }

    #[test]
    fn single_image_corpus_is_zero() {
        let (c, per): (f64, _) = cider(&[tokenize("a dog runs")], &[refs(&["a dog runs", "a dog"])]).unwrap();
        assert_eq!(c, 0.0);
        assert_eq!(per, vec![0.0]);
    }

    #[test]
    fn disjoint_vocabulary_is_zero() {
        let (c, _): (f64, _) =
            cider(&[tokenize("zz yy"), tokenize("qq")], &[refs(&["a dog"]), refs(&["a cat"])]).unwrap();
        assert_eq!(c, 0.0);
    }

    #[test]
    fn two_image_hand_value() {
        // Unigram "dog" appears only in image 0's references: idf = ln 2, "a"
        // appears in both: idf 0. Candidate "a dog" vs mean ref vector over
        // {"a dog", "dog"}: both vectors reduce to ln2 * e_dog for n = 1
        // (cosine 1). For n = 2 the candidate has {"a dog": ln2}, refs have
        // {"a dog": ln2 / 2}: cosine 1. n = 3, 4: empty → 0. CIDEr = 10 * 2/4 = 5.
        let (c, per): (f64, _) =
            cider(&[tokenize("a dog"), tokenize("a cat")], &[refs(&["a dog", "dog"]), refs(&["a bird"])]).unwrap();
        assert!((per[0] - 5.0).abs() < 1e-12, "{per:?}");
        assert_eq!(per[1], 0.0);
        assert!((c - 2.5).abs() < 1e-12);
    }

    #[test]
    fn bounded_by_ten() {
        let corpus = [refs(&["a b c d e"]), refs(&["f g h i j"]), refs(&["k l m"])];
        let cands = [tokenize("a b c d e"), tokenize("f g h i j"), tokenize("k l m")];
        let (_, per): (f64, _) = cider(&cands, &corpus).unwrap();
        for s in per {
            assert!((0.0..=10.0 + 1e-12).contains(&s));
        }
    }
}
