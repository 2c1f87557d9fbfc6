//! Dataset records, vocabularies, feature and word-vector files, and the
//! synthetic captioning world.

mod dataset;
mod embeddings;
pub mod synth;
mod vocab;

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::syntax::SyntaxError;

pub use dataset::{
    dataset_to_string, load_dataset, read_features, read_instances, save_dataset, write_features,
    CaptionInstance, FeatureSource, Sentence, Vocabularies,
};
pub use embeddings::{load_embeddings, parse_embeddings, LoadedEmbeddings};
pub use vocab::{Vocabulary, BEGIN, END, PAD, UNK};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("dataset has no rows")]
    EmptyDataset,
    #[error("row {row}: {message}")]
    Schema { row: usize, message: String },
    #[error("row {row}: {source}")]
    Parse { row: usize, source: SyntaxError },
    #[error("row {row}: feature width {found}, expected {expected}")]
    FeatureWidthMismatch {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("feature file {path}: {message}")]
    BadFeatureFile { path: String, message: String },
    #[error("malformed embedding line {line}")]
    MalformedLine { line: usize },
    #[error("inconsistent embedding width on line {0}")]
    InconsistentWidth(usize),
    #[error("invalid synthetic spec: {0}")]
    SpecInvalid(String),
}

impl DataError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        DataError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}

/// Lowercases, strips sentence-final punctuation and splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let trimmed = lower
        .trim_end()
        .trim_end_matches(['.', '!', '?', ',', ';', ':']);
    trimmed.split_whitespace().map(str::to_string).collect()
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        DataError::io(path, e)
    })
}
