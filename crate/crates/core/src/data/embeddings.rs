use std::collections::HashSet;
use std::fs;
use std::path::Path;

use super::DataError;
use crate::metrics::EmbeddingTable;

/// Result of loading a word-vector file.
#[derive(Clone, Debug)]
pub struct LoadedEmbeddings {
    pub table: EmbeddingTable,
    /// Percentage of `keep` words found in the file (100 when `keep` is empty).
    pub coverage: f64,
}

/// Parses `word v1 v2 ...` lines. When `keep` is nonempty only those words
/// are retained. Line numbers in errors start at 1.
pub fn parse_embeddings(text: &str, keep: &HashSet<String>) -> Result<LoadedEmbeddings, DataError> {
    let mut table = EmbeddingTable::new(0);
    let mut width = None;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let vec: Vec<f64> = parts
            .map(|p| p.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| DataError::MalformedLine { line: lineno })?;
        if vec.is_empty() || vec.iter().any(|v| !v.is_finite()) {
            return Err(DataError::MalformedLine { line: lineno });
        }
        match width {
            None => {
                width = Some(vec.len());
                table = EmbeddingTable::new(vec.len());
            }
            Some(w) if w != vec.len() => return Err(DataError::InconsistentWidth(lineno)),
            _ => {}
        }
        if keep.is_empty() || keep.contains(word) {
            table.insert(word, vec);
        }
    }
    let coverage = if keep.is_empty() {
        100.0
    } else {
        100.0 * keep.iter().filter(|w| table.get(w).is_some()).count() as f64 / keep.len() as f64
    };
    Ok(LoadedEmbeddings { table, coverage })
}

pub fn load_embeddings(path: &Path, keep: &HashSet<String>) -> Result<LoadedEmbeddings, DataError> {
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    parse_embeddings(&text, keep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_file() {
        let keep: HashSet<String> = ["a", "b", "zzz", "c"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let l = parse_embeddings("a 1 0\nb 0 1\nc 0.5 0.5\n", &keep).unwrap();
        assert_eq!(l.table.len(), 3);
        assert!((l.coverage - 75.0).abs() < 1e-12);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let none = HashSet::new();
        assert!(matches!(
            parse_embeddings("a 1 0\nb 0 1 2\n", &none),
            Err(DataError::InconsistentWidth(2))
        ));
        assert!(matches!(
            parse_embeddings("a 1 0\n\nb x 1\n", &none),
            Err(DataError::MalformedLine { line: 3 })
        ));
    }
}
