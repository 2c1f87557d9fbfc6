use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{tokenize, write_atomic, DataError, Vocabulary};
use crate::syntax::{parse_bracketed, syntax_tokens};
use crate::tensor::Tensor;

/// A sentence with its bracketed constituency parse.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sentence {
    pub text: String,
    pub parse: String,
}

/// Where a row's features come from: an SMFV file path (relative paths
/// resolve against the dataset file's directory) or an inline matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeatureSource {
    Path(String),
    Inline(Vec<Vec<f64>>),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    video_id: String,
    features: FeatureSource,
    captions: Vec<Sentence>,
    #[serde(default)]
    exemplars: Vec<Sentence>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaptionInstance {
    pub video_id: String,
    pub source: FeatureSource,
    /// [m × D_v]
    pub features: Tensor,
    pub captions: Vec<Sentence>,
    pub exemplars: Vec<Sentence>,
}

/// Word vocabulary from captions and syntax vocabulary from every parse.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabularies {
    pub words: Vocabulary,
    pub syntax: Vocabulary,
}

impl Vocabularies {
    pub fn build(instances: &[CaptionInstance], min_freq: usize) -> Self {
        let words: Vec<String> = instances
            .iter()
            .flat_map(|i| &i.captions)
            .flat_map(|c| tokenize(&c.text))
            .collect();
        let syntax: Vec<String> = instances
            .iter()
            .flat_map(|i| i.captions.iter().chain(&i.exemplars))
            .flat_map(|s| syntax_tokens(&s.parse).expect("validated at load").tokens)
            .collect();
        Self {
            words: Vocabulary::build(words.iter().map(String::as_str), min_freq),
            syntax: Vocabulary::build(syntax.iter().map(String::as_str), 1),
        }
    }
}

const SMFV_MAGIC: &[u8; 4] = b"SMFV";
const SMFV_VERSION: u32 = 1;

/// Writes an [m × D_v] matrix as an SMFV feature file (values stored as f32).
pub fn write_features(path: &Path, features: &Tensor) -> Result<(), DataError> {
    let (m, d) = (features.rows(), features.last_dim());
    let mut bytes = Vec::with_capacity(16 + 4 * m * d);
    bytes.extend_from_slice(SMFV_MAGIC);
    for v in [SMFV_VERSION, m as u32, d as u32] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    for &x in features.data() {
        bytes.extend_from_slice(&(x as f32).to_le_bytes());
    }
    write_atomic(path, &bytes)
}

pub fn read_features(path: &Path) -> Result<Tensor, DataError> {
    let bad = |message: &str| DataError::BadFeatureFile {
        path: path.display().to_string(),
        message: message.to_string(),
    };
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    if bytes.len() < 16 || &bytes[..4] != SMFV_MAGIC {
        return Err(bad("missing SMFV header"));
    }
    let word = |i: usize| {
        u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes")) as usize
    };
    if word(1) != SMFV_VERSION as usize {
        return Err(bad("unsupported version"));
    }
    let (m, d) = (word(2), word(3));
    if m == 0 || d == 0 {
        return Err(bad("empty feature matrix"));
    }
    if bytes.len() != 16 + 4 * m * d {
        return Err(bad("length does not match header"));
    }
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
        .collect();
    Tensor::matrix(m, d, data).map_err(|e| bad(&e.to_string()))
}

fn resolve_features(source: &FeatureSource, base: &Path, row: usize) -> Result<Tensor, DataError> {
    match source {
        FeatureSource::Path(p) => {
            let path = PathBuf::from(p);
            let path = if path.is_absolute() {
                path
            } else {
                base.join(path)
            };
            read_features(&path)
        }
        FeatureSource::Inline(rows) => {
            let width = rows.first().map_or(0, Vec::len);
            if width == 0 {
                return Err(DataError::Schema {
                    row,
                    message: "features must have at least one nonempty frame".into(),
                });
            }
            Tensor::from_rows(rows).map_err(|_| DataError::Schema {
                row,
                message: "ragged inline feature matrix".into(),
            })
        }
    }
}

/// Reads and validates a line-delimited dataset. Rows are numbered from 1.
pub fn read_instances(path: &Path) -> Result<Vec<CaptionInstance>, DataError> {
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out: Vec<CaptionInstance> = Vec::new();
    let mut width: Option<usize> = None;
    for (i, line) in text.lines().enumerate() {
        let row = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(line).map_err(|e| DataError::Schema {
            row,
            message: e.to_string(),
        })?;
        if out.iter().any(|x| x.video_id == rec.video_id) {
            return Err(DataError::Schema {
                row,
                message: format!("duplicate video_id {:?}", rec.video_id),
            });
        }
        for s in rec.captions.iter().chain(&rec.exemplars) {
            parse_bracketed(&s.parse).map_err(|source| DataError::Parse { row, source })?;
        }
        let features = resolve_features(&rec.features, base, row)?;
        let d = features.last_dim();
        match width {
            Some(w) if w != d => {
                return Err(DataError::FeatureWidthMismatch {
                    row,
                    expected: w,
                    found: d,
                })
            }
            _ => width = Some(d),
        }
        out.push(CaptionInstance {
            video_id: rec.video_id,
            source: rec.features,
            features,
            captions: rec.captions,
            exemplars: rec.exemplars,
        });
    }
    if out.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    Ok(out)
}

/// Loads a dataset and builds its vocabularies.
pub fn load_dataset(
    path: &Path,
    min_freq: usize,
) -> Result<(Vec<CaptionInstance>, Vocabularies), DataError> {
    let instances = read_instances(path)?;
    let vocabs = Vocabularies::build(&instances, min_freq);
    Ok((instances, vocabs))
}

pub fn dataset_to_string(instances: &[CaptionInstance]) -> String {
    let mut out = String::new();
    for inst in instances {
        let rec = Record {
            video_id: inst.video_id.clone(),
            features: inst.source.clone(),
            captions: inst.captions.clone(),
            exemplars: inst.exemplars.clone(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("serializable"));
        out.push('\n');
    }
    out
}

pub fn save_dataset(path: &Path, instances: &[CaptionInstance]) -> Result<(), DataError> {
    write_atomic(path, dataset_to_string(instances).as_bytes())
}
