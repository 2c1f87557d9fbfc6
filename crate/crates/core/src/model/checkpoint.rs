//! Binary parameter file plus a JSON manifest (`<path>.json`) holding the
//! model configuration and vocabularies.
//!
//! Layout: `b"SMCG"`, u32 version, u32 parameter count, then per parameter
//! u32 name length, UTF-8 name, u32 rank, u32 extents, f32 values. All
//! integers and floats are little-endian.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError, SmcgModel};
use crate::data::{write_atomic, Vocabularies, Vocabulary};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"SMCG";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: u32,
    config: ModelConfig,
    words: Vocabulary,
    syntax: Vocabulary,
    #[serde(default)]
    extra: serde_json::Value,
}

/// A loaded model with the vocabularies it was trained on.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: SmcgModel,
    pub vocabs: Vocabularies,
    /// Free-form training metadata.
    pub extra: serde_json::Value,
}

fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> ModelError {
    ModelError::Checkpoint(format!("{}: {e}", path.display()))
}

pub fn save_checkpoint(
    path: &Path,
    model: &SmcgModel,
    vocabs: &Vocabularies,
    extra: serde_json::Value,
) -> Result<(), ModelError> {
    let mut buf = Vec::with_capacity(16 + 4 * model.store.num_scalars());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(model.store.len() as u32).to_le_bytes());
    for (name, t) in model.store.iter() {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let manifest = Manifest {
        format: CHECKPOINT_VERSION,
        config: model.config.clone(),
        words: vocabs.words.clone(),
        syntax: vocabs.syntax.clone(),
        extra,
    };
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| io_err(path, e))?;
    write_atomic(&manifest_path(path), &json).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    write_atomic(path, &buf).map_err(|e| ModelError::Checkpoint(e.to_string()))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| ModelError::Checkpoint("truncated parameter file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    let mpath = manifest_path(path);
    let text = fs::read_to_string(&mpath).map_err(|e| io_err(&mpath, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| io_err(&mpath, e))?;
    if manifest.format != CHECKPOINT_VERSION {
        return Err(io_err(
            &mpath,
            format!("unsupported format {}", manifest.format),
        ));
    }
    let c = &manifest.config;
    if c.word_vocab != manifest.words.len() || c.syntax_vocab != manifest.syntax.len() {
        return Err(io_err(
            &mpath,
            "vocabulary sizes disagree with the model configuration",
        ));
    }
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
    };
    if r.take(4)? != MAGIC {
        return Err(io_err(path, "not a checkpoint file"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(io_err(path, format!("unsupported version {version}")));
    }
    let mut model = SmcgModel::new(manifest.config.clone(), 0);
    let count = r.u32()? as usize;
    if count != model.store.len() {
        return Err(io_err(
            path,
            format!("{count} parameters, model has {}", model.store.len()),
        ));
    }
    let mut seen = vec![false; count];
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|e| io_err(path, e))?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let id = model
            .store
            .find(&name)
            .ok_or_else(|| io_err(path, format!("unknown parameter {name}")))?;
        if model.store.get(id).shape() != shape.as_slice() {
            return Err(io_err(
                path,
                format!("parameter {name} has shape {shape:?}"),
            ));
        }
        if std::mem::replace(&mut seen[id.index()], true) {
            return Err(io_err(path, format!("parameter {name} repeated")));
        }
        let n: usize = shape.iter().product();
        let raw = r.take(4 * n)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes(b.try_into().expect("4 bytes"))))
            .collect();
        *model.store.get_mut(id) = Tensor::new(shape, data)?;
    }
    if r.pos != bytes.len() {
        return Err(io_err(path, "trailing bytes"));
    }
    Ok(Checkpoint {
        model,
        vocabs: Vocabularies {
            words: manifest.words,
            syntax: manifest.syntax,
        },
        extra: manifest.extra,
    })
}
