//! Single-file persistence for trained models and a keyed feature cache.
//!
//! Layout on disk: 4 magic bytes, a little-endian u32 format version, then
//! the bincode-encoded payload. Loading validates magic, version, payload
//! integrity, and that the classifier's feature fingerprint matches the
//! pipeline it is stored with, each failure mapping to its own error.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Essay;
use crate::error::{Error, ModelFileError, Result};
use crate::features::FeatureMatrix;
use crate::gbt::GBTModel;
use crate::pipeline::{transform_pipeline, FittedPipeline};
use crate::seed::ContentHasher;

pub const MODEL_MAGIC: [u8; 4] = *b"CEFR";
pub const MODEL_VERSION: u32 = 1;

/// A fitted pipeline and the classifier trained on its features.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SavedModel {
    pub pipeline: FittedPipeline,
    pub model: GBTModel,
}

/// Serialization twin of [`SavedModel`] that borrows instead of cloning.
#[derive(Serialize)]
struct SavedModelRef<'a> {
    pipeline: &'a FittedPipeline,
    model: &'a GBTModel,
}

/// Write path atomically: serialize to a temporary file in the same
/// directory, then rename over the destination.
fn write_atomic(path: &Path, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(parent) if !parent.as_os_str().is_empty() => parent,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    write(&mut tmp)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Save a trained model. The payload is written as-is; validation happens on
/// load, so tests can construct deliberately inconsistent files.
pub fn save_model(path: impl AsRef<Path>, pipeline: &FittedPipeline, model: &GBTModel) -> Result<()> {
    let payload = SavedModelRef { pipeline, model };
    write_atomic(path.as_ref(), |w| {
        w.write_all(&MODEL_MAGIC)?;
        w.write_all(&MODEL_VERSION.to_le_bytes())?;
        bincode::serialize_into(w, &payload)
            .map_err(|e| Error::Data(format!("model serialization: {e}")))
    })
}

/// Load and validate a model file.
pub fn load_model(path: impl AsRef<Path>) -> Result<SavedModel> {
    let bytes = std::fs::read(path.as_ref())?;
    if bytes.len() < MODEL_MAGIC.len() + 4 {
        return Err(ModelFileError::Truncated(format!(
            "{} bytes is shorter than the file header",
            bytes.len()
        ))
        .into());
    }
    if bytes[..4] != MODEL_MAGIC {
        return Err(ModelFileError::BadMagic.into());
    }
    let found = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if found != MODEL_VERSION {
        return Err(ModelFileError::VersionMismatch {
            found,
            supported: MODEL_VERSION,
        }
        .into());
    }
    let saved: SavedModel = bincode::deserialize(&bytes[8..])
        .map_err(|e| ModelFileError::Truncated(e.to_string()))?;
    let expected = saved.pipeline.fingerprint();
    if saved.model.fingerprint != expected {
        return Err(ModelFileError::FingerprintMismatch {
            model: saved.model.fingerprint,
            expected,
        }
        .into());
    }
    Ok(saved)
}

/// Content hash of a batch of essays: ids, labels, and tokens.
pub fn essays_content_hash(essays: &[Essay]) -> u64 {
    let mut hasher = ContentHasher::new();
    hasher.update_str("essay-batch");
    hasher.update_u64(essays.len() as u64);
    for essay in essays {
        hasher.update_str(&essay.id);
        hasher.update_str(essay.label.map(|l| l.name()).unwrap_or("-"));
        hasher.update_u64(essay.tokens.len() as u64);
        for token in &essay.tokens {
            hasher.update_str(token);
        }
    }
    hasher.finish()
}

/// Transform through an on-disk cache keyed by layout fingerprint plus essay
/// content, so repeated runs skip topic inference and language-model scoring.
/// A missing, stale, or unreadable cache entry falls back to recomputing and
/// rewrites the entry atomically.
pub fn transform_cached(
    essays: &[Essay],
    pipe: &FittedPipeline,
    cache_dir: impl AsRef<Path>,
) -> Result<FeatureMatrix> {
    let cache_dir = cache_dir.as_ref();
    std::fs::create_dir_all(cache_dir)?;
    let mut hasher = ContentHasher::new();
    hasher.update_str("feature-cache");
    hasher.update_u64(pipe.fingerprint());
    hasher.update_u64(essays_content_hash(essays));
    let key = hasher.finish();
    let path = cache_dir.join(format!("features-{key:016x}.bin"));

    if let Ok(bytes) = std::fs::read(&path) {
        if let Ok(matrix) = bincode::deserialize::<FeatureMatrix>(&bytes) {
            if matrix.fingerprint() == pipe.fingerprint() && matrix.rows() == essays.len() {
                return Ok(matrix);
            }
        }
    }

    let matrix = transform_pipeline(essays, pipe)?;
    write_atomic(&path, |w| {
        bincode::serialize_into(w, &matrix)
            .map_err(|e| Error::Data(format!("feature cache serialization: {e}")))
    })?;
    Ok(matrix)
}
