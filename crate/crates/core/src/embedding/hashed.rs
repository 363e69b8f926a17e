use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{EmbedError, EmbeddingProvider, EmbeddingVector};

/// Splits on non-alphanumerics and lowercases.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

/// Document-frequency table used for idf weighting; persisted as `stats.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub num_docs: u64,
    pub document_frequency: BTreeMap<String, u64>,
}

impl CorpusStats {
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut stats = CorpusStats::default();
        for text in texts {
            stats.num_docs += 1;
            let mut tokens = tokenize(text);
            tokens.sort();
            tokens.dedup();
            for t in tokens {
                *stats.document_frequency.entry(t).or_default() += 1;
            }
        }
        stats
    }

    /// `ln(1 + N / df)`; unseen tokens count as df = 1.
    pub fn idf(&self, token: &str) -> f64 {
        let df = self.document_frequency.get(token).copied().unwrap_or(0).max(1);
        (1.0 + self.num_docs as f64 / df as f64).ln()
    }
}

/// Hashed bag-of-words embedder: each token lands in one of `dim` buckets,
/// weighted by term frequency (times idf when stats are attached).
#[derive(Debug, Clone)]
pub struct HashedBowEmbedder {
    dim: usize,
    stats: Option<CorpusStats>,
}

impl HashedBowEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim, stats: None }
    }

    pub fn with_stats(dim: usize, stats: CorpusStats) -> Self {
        Self { stats: Some(stats), ..Self::new(dim) }
    }

    pub fn stats(&self) -> Option<&CorpusStats> {
        self.stats.as_ref()
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a(token.as_bytes()) % self.dim as u64) as usize
    }
}

impl EmbeddingProvider for HashedBowEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let mut tf: BTreeMap<String, f64> = BTreeMap::new();
        for token in tokenize(text) {
            *tf.entry(token).or_default() += 1.0;
        }
        if tf.is_empty() {
            return Err(EmbedError::NoTokens);
        }
        let mut values = vec![0.0; self.dim];
        for (token, count) in &tf {
            let weight = match &self.stats {
                Some(stats) => count * stats.idf(token),
                None => *count,
            };
            values[self.bucket(token)] += weight;
        }
        EmbeddingVector::normalized(values)
    }
}
