use std::collections::{HashMap, HashSet};

use super::MetricsError;

const DEFAULT_STOPWORDS: &str = include_str!("../../assets/stopwords.txt");

/// Parses a stop-word list: one word per line, `#` starts a comment line.
pub fn parse_stopwords(text: &str) -> HashSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

/// The bundled English stop-word list.
pub fn default_stopwords() -> HashSet<String> {
    parse_stopwords(DEFAULT_STOPWORDS)
}

/// Word vectors of one fixed width.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Panics if `vector` has the wrong width.
    pub fn insert(&mut self, word: &str, vector: Vec<f64>) {
        assert_eq!(vector.len(), self.dim, "embedding width");
        self.vectors.insert(word.to_string(), vector);
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }

    /// Mean vector of the non-stop, in-table words; `None` when there are none.
    pub fn sentence_vector<S: AsRef<str>>(
        &self,
        words: &[S],
        stopwords: &HashSet<String>,
    ) -> Option<Vec<f64>> {
        let mut acc = vec![0.0; self.dim];
        let mut n = 0usize;
        for w in words {
            let w = w.as_ref();
            if stopwords.contains(w) {
                continue;
            }
            if let Some(v) = self.get(w) {
                acc.iter_mut().zip(v).for_each(|(a, b)| *a += b);
                n += 1;
            }
        }
        (n > 0).then(|| acc.into_iter().map(|a| a / n as f64).collect())
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Mean over references of the cosine between stop-word-filtered mean
/// embeddings. Sentences without embeddable words contribute 0.
pub fn cos_similarity<S: AsRef<str>, T: AsRef<str>>(
    prediction: &[S],
    references: &[Vec<T>],
    table: &EmbeddingTable,
    stopwords: &HashSet<String>,
) -> Result<f64, MetricsError> {
    if prediction.is_empty() {
        return Err(MetricsError::EmptyPrediction);
    }
    if references.is_empty() {
        return Err(MetricsError::NoReferences);
    }
    let Some(p) = table.sentence_vector(prediction, stopwords) else {
        return Ok(0.0);
    };
    let total: f64 = references
        .iter()
        .map(|r| {
            table
                .sentence_vector(r, stopwords)
                .map_or(0.0, |v| cosine(&p, &v))
        })
        .sum();
    Ok(total / references.len() as f64)
}
