use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Lowercased word tokens of a caption, as produced by [`tokenize`].
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenizedCaption {
    tokens: Vec<String>,
}

impl TokenizedCaption {
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Counts of every `n`-gram, keyed by token slice.
    pub(crate) fn ngram_counts(&self, n: usize) -> BTreeMap<&[String], usize> {
        let mut counts = BTreeMap::new();
        if n == 0 {
            return counts;
        }
        for gram in self.tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
        counts
    }
}

impl fmt::Display for TokenizedCaption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tokens.join(" "))
    }
}

/// Canonical caption tokenizer.
///
/// Lowercases, maps every character outside `[a-z0-9']` to a space and splits on
/// whitespace. Token counts for length statistics use the same routine.
pub fn tokenize(text: &str) -> TokenizedCaption {
    let cleaned: String = text
        .to_lowercase()
        .chars()
        .map(|c| if c.is_ascii_lowercase() || c.is_ascii_digit() || c == '\'' { c } else { ' ' })
        .collect();
    TokenizedCaption { tokens: cleaned.split_whitespace().map(str::to_owned).collect() }
}
