//! Content-addressed on-disk memoization of evaluations.
//!
//! Layout: `<dir>/<first two hex digits>/<64-hex key>`. Each file holds
//! `u64 BE length | edited image bytes | u64 BE length | JSON {scores, model_id}`.
//! Files are written to a temporary sibling and renamed into place, so a
//! reader never observes a partial record.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EditRequest, EvalContext, EvaluationResult, Evaluator, GatewayError};
use crate::metrics::PerceptionScores;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CacheKey([u8; 32]);

impl CacheKey {
    fn digest(tag: &[u8], fields: &[&[u8]], tail: &[u8]) -> Self {
        let mut h = Sha256::new();
        h.update(tag);
        for f in fields {
            h.update((f.len() as u64).to_be_bytes());
            h.update(f);
        }
        h.update(tail);
        Self(h.finalize().into())
    }

    /// Key of an edit request: image, mask and prompt (each length-prefixed),
    /// then the big-endian seed, guidance-scale bits and step count.
    pub fn for_edit(request: &EditRequest) -> Self {
        let mut tail = Vec::with_capacity(20);
        tail.extend_from_slice(&request.seed.to_be_bytes());
        // -0.0 and 0.0 are the same guidance scale
        let g = if request.params.guidance_scale == 0.0 { 0.0 } else { request.params.guidance_scale };
        tail.extend_from_slice(&g.to_bits().to_be_bytes());
        tail.extend_from_slice(&request.params.steps.to_be_bytes());
        Self::digest(
            b"renewal-edit-v1\0",
            &[&request.image, &request.mask, request.prompt.as_bytes()],
            &tail,
        )
    }

    /// Key of a raw-image scoring call.
    pub fn for_score(image: &[u8]) -> Self {
        Self::digest(b"renewal-score-v1\0", &[image], &[])
    }

    pub fn hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.hex())
    }
}

#[derive(Serialize, Deserialize)]
struct StoredMeta {
    scores: PerceptionScores,
    model_id: String,
}

fn encode_record(image: &[u8], scores: &PerceptionScores, model_id: &str) -> Vec<u8> {
    let meta = serde_json::to_vec(&StoredMeta { scores: *scores, model_id: model_id.to_string() })
        .expect("scores serialize");
    let mut out = Vec::with_capacity(16 + image.len() + meta.len());
    out.extend_from_slice(&(image.len() as u64).to_be_bytes());
    out.extend_from_slice(image);
    out.extend_from_slice(&(meta.len() as u64).to_be_bytes());
    out.extend_from_slice(&meta);
    out
}

fn decode_record(bytes: &[u8]) -> Option<(Vec<u8>, PerceptionScores, String)> {
    fn take<'a>(buf: &mut &'a [u8]) -> Option<&'a [u8]> {
        let len = u64::from_be_bytes(buf.get(..8)?.try_into().ok()?);
        let len = usize::try_from(len).ok()?;
        let rest = &buf[8..];
        let (head, tail) = (rest.get(..len)?, &rest[len..]);
        *buf = tail;
        Some(head)
    }
    let mut buf = bytes;
    let image = take(&mut buf)?.to_vec();
    let meta: StoredMeta = serde_json::from_slice(take(&mut buf)?).ok()?;
    if !buf.is_empty() || meta.scores.as_array().iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some((image, meta.scores, meta.model_id))
}

/// Wraps a backend with a content-addressed disk cache.
#[derive(Debug)]
pub struct CachedBackend<B> {
    inner: B,
    dir: PathBuf,
}

impl<B> CachedBackend<B> {
    pub fn new(inner: B, dir: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { inner, dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    pub fn path_for(&self, key: &CacheKey) -> PathBuf {
        let hex = key.hex();
        self.dir.join(&hex[..2]).join(hex)
    }

    fn load(&self, key: &CacheKey) -> Option<(Vec<u8>, PerceptionScores, String)> {
        let path = self.path_for(key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return None,
            Err(e) => {
                log::warn!("cache read {} failed: {e}; treating as miss", path.display());
                return None;
            }
        };
        let decoded = decode_record(&bytes);
        if decoded.is_none() {
            log::warn!("corrupt cache entry {}; treating as miss", path.display());
        }
        decoded
    }

    fn store(&self, key: &CacheKey, image: &[u8], scores: &PerceptionScores, model_id: &str) -> Result<(), GatewayError> {
        let path = self.path_for(key);
        let parent = path.parent().expect("keyed path has a parent");
        fs::create_dir_all(parent)?;
        let mut tmp = tempfile::NamedTempFile::new_in(parent)?;
        tmp.write_all(&encode_record(image, scores, model_id))?;
        tmp.as_file().sync_all()?;
        tmp.persist(&path).map_err(|e| GatewayError::Cache(e.error))?;
        Ok(())
    }
}

impl<B: Evaluator> Evaluator for CachedBackend<B> {
    fn edit_and_score(&self, request: &EditRequest, ctx: &EvalContext) -> Result<EvaluationResult, GatewayError> {
        let key = CacheKey::for_edit(request);
        if let Some((edited_image, scores, model_id)) = self.load(&key) {
            return Ok(EvaluationResult { edited_image, scores, model_id, cache_hit: true });
        }
        let result = self.inner.edit_and_score(request, ctx)?;
        if let Err(e) = self.store(&key, &result.edited_image, &result.scores, &result.model_id) {
            log::warn!("cache store for {key} failed: {e}");
        }
        Ok(EvaluationResult { cache_hit: false, ..result })
    }

    fn score_raw(&self, image: &[u8], ctx: &EvalContext) -> Result<PerceptionScores, GatewayError> {
        let key = CacheKey::for_score(image);
        if let Some((_, scores, _)) = self.load(&key) {
            return Ok(scores);
        }
        let scores = self.inner.score_raw(image, ctx)?;
        if let Err(e) = self.store(&key, &[], &scores, "raw") {
            log::warn!("cache store for {key} failed: {e}");
        }
        Ok(scores)
    }
}
