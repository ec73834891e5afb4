//! The single boundary through which images are edited and scored.
//!
//! Every backend implements [`Evaluator`]. Three are provided: [`RemoteBackend`]
//! speaks the HTTP/JSON protocol to an external model service,
//! [`SyntheticOracle`] is a deterministic stand-in with a known optimum, and
//! [`CachedBackend`] memoizes any other backend on disk. [`CountingBackend`]
//! counts the calls that reach the backend it wraps.

mod cache;
mod oracle;
pub mod raster;
mod remote;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{MetricsError, PerceptionScores};

pub use cache::{CachedBackend, CacheKey};
pub use oracle::{scan_argmax, OracleParams, ScanRow, SyntheticOracle, ORACLE_MODEL_ID};
pub use remote::{RemoteBackend, RetryPolicy};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("model unavailable (HTTP 503): {0}")]
    Unavailable(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("mask is {mask_w}x{mask_h} but image is {image_w}x{image_h}")]
    DimensionMismatch {
        image_w: u32,
        image_h: u32,
        mask_w: u32,
        mask_h: u32,
    },
    #[error("invalid raster: {0}")]
    InvalidImage(String),
    #[error("mask must be single-channel 8-bit, got {0}")]
    MaskFormat(String),
    #[error("empty prompt")]
    EmptyPrompt,
    #[error("trigger {0:?} not in oracle vocabulary")]
    UnknownTrigger(String),
    #[error("request context carries no trigger word")]
    MissingTrigger,
    #[error("oracle configuration: {0}")]
    OracleConfig(String),
    #[error("invalid scores: {0}")]
    Scores(#[from] MetricsError),
    #[error("cache i/o: {0}")]
    Cache(#[from] std::io::Error),
}

impl GatewayError {
    /// Transport-level failures are worth retrying; everything else is not.
    pub fn is_retryable(&self) -> bool {
        matches!(self, GatewayError::Transport(_) | GatewayError::Unavailable(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EditParams {
    pub guidance_scale: f64,
    pub steps: u32,
}

impl Default for EditParams {
    fn default() -> Self {
        Self { guidance_scale: 7.5, steps: 30 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditRequest {
    /// PNG-encoded street-view image.
    pub image: Vec<u8>,
    /// PNG-encoded single-channel mask; values >= 128 are editable.
    pub mask: Vec<u8>,
    pub prompt: String,
    pub seed: u64,
    pub params: EditParams,
}

impl EditRequest {
    /// Local checks run before any backend sees the request.
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.prompt.trim().is_empty() {
            return Err(GatewayError::EmptyPrompt);
        }
        if self.params.steps == 0 || !self.params.guidance_scale.is_finite() {
            return Err(GatewayError::Protocol(format!("bad edit params {:?}", self.params)));
        }
        let image = raster::inspect(&self.image)?;
        let mask = raster::inspect(&self.mask)?;
        if (image.width, image.height) != (mask.width, mask.height) {
            return Err(GatewayError::DimensionMismatch {
                image_w: image.width,
                image_h: image.height,
                mask_w: mask.width,
                mask_h: mask.height,
            });
        }
        if !mask.is_luma8() {
            return Err(GatewayError::MaskFormat(format!("{:?}", mask.color)));
        }
        Ok(())
    }
}

/// Out-of-band information about a request. It never travels over the wire
/// and is not part of the cache key; the synthetic oracle uses it to look up
/// the record's base scores and the trigger word's embedding.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EvalContext {
    pub record_id: String,
    pub trigger: Option<String>,
}

impl EvalContext {
    pub fn new(record_id: impl Into<String>, trigger: Option<&str>) -> Self {
        Self { record_id: record_id.into(), trigger: trigger.map(str::to_string) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationResult {
    pub edited_image: Vec<u8>,
    pub scores: PerceptionScores,
    pub model_id: String,
    pub cache_hit: bool,
}

pub trait Evaluator: Send + Sync {
    /// Edits the image with the prompt, then scores the edit.
    fn edit_and_score(
        &self,
        request: &EditRequest,
        ctx: &EvalContext,
    ) -> Result<EvaluationResult, GatewayError>;

    /// Scores an unedited image.
    fn score_raw(&self, image: &[u8], ctx: &EvalContext) -> Result<PerceptionScores, GatewayError>;
}

impl<T: Evaluator + ?Sized> Evaluator for &T {
    fn edit_and_score(&self, r: &EditRequest, c: &EvalContext) -> Result<EvaluationResult, GatewayError> {
        (**self).edit_and_score(r, c)
    }
    fn score_raw(&self, i: &[u8], c: &EvalContext) -> Result<PerceptionScores, GatewayError> {
        (**self).score_raw(i, c)
    }
}

impl<T: Evaluator + ?Sized> Evaluator for Arc<T> {
    fn edit_and_score(&self, r: &EditRequest, c: &EvalContext) -> Result<EvaluationResult, GatewayError> {
        (**self).edit_and_score(r, c)
    }
    fn score_raw(&self, i: &[u8], c: &EvalContext) -> Result<PerceptionScores, GatewayError> {
        (**self).score_raw(i, c)
    }
}

impl<T: Evaluator + ?Sized> Evaluator for Box<T> {
    fn edit_and_score(&self, r: &EditRequest, c: &EvalContext) -> Result<EvaluationResult, GatewayError> {
        (**self).edit_and_score(r, c)
    }
    fn score_raw(&self, i: &[u8], c: &EvalContext) -> Result<PerceptionScores, GatewayError> {
        (**self).score_raw(i, c)
    }
}

/// Validates the request locally, then evaluates it. A malformed request
/// never reaches the backend.
pub fn edit_and_score<E: Evaluator + ?Sized>(
    backend: &E,
    request: &EditRequest,
    ctx: &EvalContext,
) -> Result<EvaluationResult, GatewayError> {
    request.validate()?;
    let result = backend.edit_and_score(request, ctx)?;
    result.scores.validate()?;
    if result.model_id.is_empty() {
        return Err(GatewayError::Protocol("empty model_id".into()));
    }
    Ok(result)
}

pub fn score_raw<E: Evaluator + ?Sized>(
    backend: &E,
    image: &[u8],
    ctx: &EvalContext,
) -> Result<PerceptionScores, GatewayError> {
    raster::inspect(image)?;
    let scores = backend.score_raw(image, ctx)?;
    scores.validate()?;
    Ok(scores)
}

/// Counts calls that reach the wrapped backend.
#[derive(Debug, Default)]
pub struct CountingBackend<B> {
    inner: B,
    edits: AtomicUsize,
    scores: AtomicUsize,
}

impl<B> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self { inner, edits: AtomicUsize::new(0), scores: AtomicUsize::new(0) }
    }

    pub fn edit_calls(&self) -> usize {
        self.edits.load(Ordering::SeqCst)
    }

    pub fn score_calls(&self) -> usize {
        self.scores.load(Ordering::SeqCst)
    }

    pub fn total_calls(&self) -> usize {
        self.edit_calls() + self.score_calls()
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: Evaluator> Evaluator for CountingBackend<B> {
    fn edit_and_score(&self, r: &EditRequest, c: &EvalContext) -> Result<EvaluationResult, GatewayError> {
        self.edits.fetch_add(1, Ordering::SeqCst);
        self.inner.edit_and_score(r, c)
    }

    fn score_raw(&self, i: &[u8], c: &EvalContext) -> Result<PerceptionScores, GatewayError> {
        self.scores.fetch_add(1, Ordering::SeqCst);
        self.inner.score_raw(i, c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Unreachable;

    impl Evaluator for Unreachable {
        fn edit_and_score(&self, _: &EditRequest, _: &EvalContext) -> Result<EvaluationResult, GatewayError> {
            panic!("backend must not be called")
        }
        fn score_raw(&self, _: &[u8], _: &EvalContext) -> Result<PerceptionScores, GatewayError> {
            panic!("backend must not be called")
        }
    }

    fn request(img: (u32, u32), mask: (u32, u32)) -> EditRequest {
        EditRequest {
            image: raster::encode_rgb(img.0, img.1, &vec![90; (img.0 * img.1 * 3) as usize]).unwrap(),
            mask: raster::encode_luma(mask.0, mask.1, &vec![255; (mask.0 * mask.1) as usize]).unwrap(),
            prompt: "Tyne Building in a street".into(),
            seed: 1,
            params: EditParams::default(),
        }
    }

    #[test]
    fn mismatched_mask_never_reaches_backend() {
        let backend = CountingBackend::new(Unreachable);
        let err = edit_and_score(&backend, &request((640, 480), (512, 512)), &EvalContext::default())
            .unwrap_err();
        assert!(matches!(
            err,
            GatewayError::DimensionMismatch { image_w: 640, image_h: 480, mask_w: 512, mask_h: 512 }
        ));
        assert_eq!(backend.total_calls(), 0);
    }

    #[test]
    fn rgb_mask_rejected() {
        let mut r = request((8, 8), (8, 8));
        r.mask = raster::encode_rgb(8, 8, &[0; 192]).unwrap();
        assert!(matches!(r.validate(), Err(GatewayError::MaskFormat(_))));
    }

    #[test]
    fn garbage_image_rejected() {
        let mut r = request((8, 8), (8, 8));
        r.image = b"not a png".to_vec();
        assert!(matches!(r.validate(), Err(GatewayError::InvalidImage(_))));
        let mut r = request((8, 8), (8, 8));
        r.prompt = "  ".into();
        assert!(matches!(r.validate(), Err(GatewayError::EmptyPrompt)));
    }

    #[test]
    fn retryable_classification() {
        assert!(GatewayError::Transport("x".into()).is_retryable());
        assert!(GatewayError::Unavailable("x".into()).is_retryable());
        assert!(!GatewayError::Protocol("x".into()).is_retryable());
        assert!(!GatewayError::EmptyPrompt.is_retryable());
    }
}
