//! Text-to-image prompts built from an image's caption set.

use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, Embedder};
use crate::dataset::Caption;
use crate::hashing::content_id;

pub const DEFAULT_STYLER: &str = "national geographic, high quality photography, Canon EOS R3, Flickr";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StylerConfig {
    pub text: String,
}

impl Default for StylerConfig {
    fn default() -> Self {
        Self { text: DEFAULT_STYLER.into() }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PromptStrategy {
    /// All captions joined by a single space, in list order.
    #[default]
    Concat,
    /// The caption whose embedding is closest (cosine) to the mean embedding.
    RepresentativeSelection,
    SingleCaption { index: usize },
}

/// Strategy and styler choice as it appears in run configs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    #[serde(default)]
    pub strategy: PromptStrategy,
    #[serde(default = "default_styler")]
    pub styler: Option<StylerConfig>,
}

fn default_styler() -> Option<StylerConfig> {
    Some(StylerConfig::default())
}

impl Default for PromptSpec {
    fn default() -> Self {
        Self { strategy: PromptStrategy::Concat, styler: default_styler() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub prompt_id: String,
    pub text: String,
    pub strategy: PromptStrategy,
    pub styler_applied: bool,
    pub source_caption_ids: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("no captions to build a prompt from")]
    EmptyCaptionList,
    #[error("representative selection needs an embedder")]
    EmbedderUnavailable,
    #[error("caption index {index} out of range for {len} captions")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("embedding failed: {0}")]
    Embedding(#[from] BackendError),
    #[error("embedder returned {found} vectors of mixed or wrong shape for {expected} captions")]
    DimensionMismatch { expected: usize, found: usize },
}

pub fn build_prompt(
    captions: &[Caption],
    strategy: PromptStrategy,
    styler: Option<&StylerConfig>,
    embedder: Option<&dyn Embedder>,
) -> Result<Prompt, PromptError> {
    if captions.is_empty() {
        return Err(PromptError::EmptyCaptionList);
    }
    let (mut text, sources) = match strategy {
        PromptStrategy::Concat => (
            captions.iter().map(Caption::text).collect::<Vec<_>>().join(" "),
            captions.iter().map(|c| c.caption_id().to_owned()).collect(),
        ),
        PromptStrategy::SingleCaption { index } => {
            let c = captions.get(index).ok_or(PromptError::IndexOutOfRange { index, len: captions.len() })?;
            (c.text().to_owned(), vec![c.caption_id().to_owned()])
        }
        PromptStrategy::RepresentativeSelection => {
            let embedder = embedder.ok_or(PromptError::EmbedderUnavailable)?;
            let texts: Vec<String> = captions.iter().map(|c| c.text().to_owned()).collect();
            let vectors = embedder.embed_batch(&texts)?;
            let c = &captions[representative_index(captions, &vectors)?];
            (c.text().to_owned(), vec![c.caption_id().to_owned()])
        }
    };
    if let Some(s) = styler {
        text.push_str(", ");
        text.push_str(&s.text);
    }
    Ok(Prompt { prompt_id: content_id(&text), text, strategy, styler_applied: styler.is_some(), source_caption_ids: sources })
}

/// Index of the vector with maximum cosine to the mean of the non-zero vectors;
/// ties go to the lowest index. With no non-zero vector, the shortest caption wins.
pub fn representative_index(captions: &[Caption], vectors: &[Vec<f64>]) -> Result<usize, PromptError> {
    let dim = vectors.first().map_or(0, Vec::len);
    if vectors.len() != captions.len() || vectors.iter().any(|v| v.len() != dim) {
        return Err(PromptError::DimensionMismatch { expected: captions.len(), found: vectors.len() });
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let live: Vec<&Vec<f64>> = vectors.iter().filter(|v| norm(v) > 0.0).collect();
    if live.is_empty() {
        let mut best = 0;
        for (i, c) in captions.iter().enumerate() {
            if c.token_count() < captions[best].token_count() {
                best = i;
            }
        }
        return Ok(best);
    }
    let mut mean = vec![0.0; dim];
    for v in &live {
        for (m, x) in mean.iter_mut().zip(v.iter()) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= live.len() as f64);
    let mean_norm = norm(&mean);
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in vectors.iter().enumerate() {
        let n = norm(v);
        if n == 0.0 {
            continue;
        }
        let cos = if mean_norm == 0.0 { 0.0 } else { v.iter().zip(&mean).map(|(a, b)| a * b).sum::<f64>() / (n * mean_norm) };
        if best.is_none_or(|(_, b)| cos > b) {
            best = Some((i, cos));
        }
    }
    Ok(best.map_or(0, |(i, _)| i))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::synthetic::HashedBagOfWords;

    fn caps(texts: &[&str]) -> Vec<Caption> {
        texts.iter().enumerate().map(|(i, t)| Caption::new(format!("c{i}"), *t)).collect()
    }

    #[test]
    fn concat_with_styler() {
        let p = build_prompt(&caps(&["a dog runs", "dog running"]), PromptStrategy::Concat, Some(&StylerConfig::default()), None)
            .unwrap();
        assert_eq!(
            p.text,
            "a dog runs dog running, national geographic, high quality photography, Canon EOS R3, Flickr"
        );
        assert!(p.styler_applied);
        assert_eq!(p.source_caption_ids, ["c0", "c1"]);
        assert_eq!(p.prompt_id, content_id(&p.text));
    }

    #[test]
    fn single_caption_verbatim() {
        let p = build_prompt(&caps(&["First one.", "second"]), PromptStrategy::SingleCaption { index: 0 }, None, None).unwrap();
        assert_eq!(p.text, "First one.");
        assert!(!p.styler_applied);
        assert!(matches!(
            build_prompt(&caps(&["x"]), PromptStrategy::SingleCaption { index: 3 }, None, None),
            Err(PromptError::IndexOutOfRange { index: 3, len: 1 })
        ));
    }

    #[test]
    fn errors() {
        assert!(matches!(build_prompt(&[], PromptStrategy::Concat, None, None), Err(PromptError::EmptyCaptionList)));
        assert!(matches!(
            build_prompt(&caps(&["x"]), PromptStrategy::RepresentativeSelection, None, None),
            Err(PromptError::EmbedderUnavailable)
        ));
    }

    #[test]
    fn representative_tie_goes_to_lowest_index() {
        let c = caps(&["a", "b", "c"]);
        let v = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]];
        assert_eq!(representative_index(&c, &v).unwrap(), 1);
    }

    #[test]
    fn zero_vectors_excluded_and_all_zero_falls_back_to_shortest() {
        let c = caps(&["one two three", "one", "one two"]);
        assert_eq!(representative_index(&c, &[vec![0.0; 2], vec![0.0; 2], vec![0.0; 2]]).unwrap(), 1);
        assert_eq!(representative_index(&c, &[vec![0.0, 0.0], vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap(), 2);
    }

    #[test]
    fn representative_with_default_embedder_is_a_member() {
        let c = caps(&["a dog on grass", "a dog running on grass", "a cat"]);
        let p = build_prompt(&c, PromptStrategy::RepresentativeSelection, None, Some(&HashedBagOfWords::default())).unwrap();
        assert!(c.iter().any(|x| x.text() == p.text));
        // dot products with the unnormalised mean: 1 + 4/(2*sqrt5) + 1/(2*sqrt2) beats 1 + 4/(2*sqrt5) + 1/sqrt10
        assert_eq!(p.text, "a dog on grass");
    }
}
