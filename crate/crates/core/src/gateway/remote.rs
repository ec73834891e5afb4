//! HTTP client for an external edit/score model service.
//!
//! Protocol (UTF-8 JSON bodies):
//!
//! - `POST /v1/edit`  `{"image_b64", "mask_b64", "prompt", "seed", "params": {"guidance_scale", "steps"}}`
//!   → `{"image_b64", "model_id"}`; 400 malformed, 422 dimension mismatch, 503 unavailable.
//! - `POST /v1/score` `{"image_b64"}` → `{"safe", "beauty", "lively", "model_id"}`.
//! - `GET /v1/health` → `{"status": "ok"}`.

use std::thread;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use reqwest::blocking::{Client, Response};
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{EditParams, EditRequest, EvalContext, EvaluationResult, Evaluator, GatewayError};
use crate::metrics::PerceptionScores;

/// Delays before each retry of a transport failure. The number of delays is
/// the number of retries.
#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub delays: Vec<Duration>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            delays: vec![Duration::from_millis(500), Duration::from_secs(2), Duration::from_secs(8)],
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self { delays: Vec::new() }
    }
}

#[derive(Serialize)]
struct EditBody<'a> {
    image_b64: String,
    mask_b64: String,
    prompt: &'a str,
    seed: u64,
    params: EditParams,
}

#[derive(Serialize)]
struct ScoreBody {
    image_b64: String,
}

#[derive(Deserialize)]
struct EditReply {
    image_b64: String,
    model_id: String,
}

#[derive(Deserialize)]
struct ScoreReply {
    safe: f64,
    beauty: f64,
    lively: f64,
    model_id: String,
}

#[derive(Deserialize)]
struct HealthReply {
    status: String,
}

#[derive(Debug, Clone)]
pub struct RemoteBackend {
    base_url: String,
    client: Client,
    retry: RetryPolicy,
}

impl RemoteBackend {
    pub fn new(base_url: &str, timeout: Duration, retry: RetryPolicy) -> Result<Self, GatewayError> {
        let client = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        Ok(Self { base_url: base_url.trim_end_matches('/').to_string(), client, retry })
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    /// Exact bytes sent to `/v1/edit` for a request.
    pub fn edit_body(request: &EditRequest) -> Vec<u8> {
        serde_json::to_vec(&EditBody {
            image_b64: B64.encode(&request.image),
            mask_b64: B64.encode(&request.mask),
            prompt: &request.prompt,
            seed: request.seed,
            params: request.params,
        })
        .expect("edit body serializes")
    }

    /// Exact bytes sent to `/v1/score` for an image.
    pub fn score_body(image: &[u8]) -> Vec<u8> {
        serde_json::to_vec(&ScoreBody { image_b64: B64.encode(image) }).expect("score body serializes")
    }

    pub fn health(&self) -> Result<(), GatewayError> {
        let url = format!("{}/v1/health", self.base_url);
        let resp = self.client.get(&url).send().map_err(|e| GatewayError::Transport(e.to_string()))?;
        let reply: HealthReply = parse(check_status(resp)?)?;
        if reply.status != "ok" {
            return Err(GatewayError::Unavailable(format!("health status {:?}", reply.status)));
        }
        Ok(())
    }

    fn post<T: DeserializeOwned>(&self, path: &str, body: Vec<u8>) -> Result<T, GatewayError> {
        let url = format!("{}{}", self.base_url, path);
        let mut attempt = 0;
        loop {
            let outcome = self
                .client
                .post(&url)
                .header(reqwest::header::CONTENT_TYPE, "application/json")
                .body(body.clone())
                .send()
                .map_err(|e| GatewayError::Transport(e.to_string()))
                .and_then(check_status)
                .and_then(parse);
            match outcome {
                Err(e) if e.is_retryable() && attempt < self.retry.delays.len() => {
                    log::warn!("{path} attempt {} failed: {e}; retrying", attempt + 1);
                    thread::sleep(self.retry.delays[attempt]);
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    fn score_image(&self, image: &[u8]) -> Result<(PerceptionScores, String), GatewayError> {
        let reply: ScoreReply = self.post("/v1/score", Self::score_body(image))?;
        if reply.model_id.is_empty() {
            return Err(GatewayError::Protocol("score reply has empty model_id".into()));
        }
        Ok((PerceptionScores::new(reply.safe, reply.beauty, reply.lively), reply.model_id))
    }
}

fn check_status(resp: Response) -> Result<Response, GatewayError> {
    let status = resp.status();
    if status.is_success() {
        return Ok(resp);
    }
    let text = resp.text().unwrap_or_default();
    let msg = format!("HTTP {}: {}", status.as_u16(), text.trim());
    Err(match status {
        StatusCode::SERVICE_UNAVAILABLE => GatewayError::Unavailable(msg),
        s if s.is_server_error() => GatewayError::Transport(msg),
        _ => GatewayError::Protocol(msg),
    })
}

fn parse<T: DeserializeOwned>(resp: Response) -> Result<T, GatewayError> {
    let bytes = resp.bytes().map_err(|e| GatewayError::Transport(e.to_string()))?;
    serde_json::from_slice(&bytes).map_err(|e| GatewayError::Protocol(format!("bad reply body: {e}")))
}

impl Evaluator for RemoteBackend {
    fn edit_and_score(&self, request: &EditRequest, _ctx: &EvalContext) -> Result<EvaluationResult, GatewayError> {
        request.validate()?;
        let edit: EditReply = self.post("/v1/edit", Self::edit_body(request))?;
        let edited_image = B64
            .decode(edit.image_b64.as_bytes())
            .map_err(|e| GatewayError::Protocol(format!("edited image is not base64: {e}")))?;
        if edit.model_id.is_empty() {
            return Err(GatewayError::Protocol("edit reply has empty model_id".into()));
        }
        let (scores, score_model) = self.score_image(&edited_image)?;
        Ok(EvaluationResult {
            edited_image,
            scores,
            model_id: format!("{}+{}", edit.model_id, score_model),
            cache_hit: false,
        })
    }

    fn score_raw(&self, image: &[u8], _ctx: &EvalContext) -> Result<PerceptionScores, GatewayError> {
        Ok(self.score_image(image)?.0)
    }
}
