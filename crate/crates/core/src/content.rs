//! Media items, captions and the captioner interface.
//!
//! Captioning is gated by an [`InvocationPolicy`]: a captioner is only asked
//! for items with media whose value score clears a threshold. Two backends
//! implement [`Captioner`]: [`SyntheticCaptioner`], a deterministic template
//! expander over the synthetic world, and [`RemoteCaptioner`], a JSON-over-HTTP
//! client for an external captioning service.

use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::datagen::GroundTruth;

#[derive(Debug, thiserror::Error)]
pub enum CaptionError {
    #[error("caption unavailable for item {item_id} after {attempts} attempts: {last}")]
    CaptionUnavailable {
        item_id: u64,
        attempts: u32,
        last: String,
    },
    #[error("item {0} does not pass the invocation policy")]
    InvocationSkipped(u64),
    #[error("request timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("item {0} has no ground-truth reference")]
    MissingGroundTruth(u64),
    #[error("invalid invocation policy: {0}")]
    InvalidPolicy(String),
}

/// An item flowing through captioning and tokenization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediaItem {
    pub item_id: u64,
    pub visual_embedding: Vec<f64>,
    pub has_media: bool,
    /// Priority proxy in `[0, 1]` consulted by the invocation gate.
    pub value_score: f64,
    /// Index into the synthetic world; `None` for real items.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth_ref: Option<usize>,
}

impl MediaItem {
    /// Reference sent to remote captioners in place of media bytes.
    pub fn media_ref(&self) -> String {
        format!("media/{}", self.item_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Caption {
    pub item_id: u64,
    pub text: String,
    pub captioner_id: String,
    /// Seconds since the epoch.
    pub created_at: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvocationPolicy {
    #[serde(default = "default_true")]
    pub require_media: bool,
    #[serde(default)]
    pub min_value_score: f64,
}

fn default_true() -> bool {
    true
}

impl Default for InvocationPolicy {
    fn default() -> Self {
        Self {
            require_media: true,
            min_value_score: 0.0,
        }
    }
}

impl InvocationPolicy {
    pub fn validate(&self) -> Result<(), CaptionError> {
        if !(0.0..=1.0).contains(&self.min_value_score) {
            return Err(CaptionError::InvalidPolicy(format!(
                "min_value_score {} outside [0, 1]",
                self.min_value_score
            )));
        }
        Ok(())
    }
}

/// True iff the item has media (when required) and its value score reaches
/// the policy threshold. The threshold is inclusive.
pub fn should_invoke(item: &MediaItem, policy: &InvocationPolicy) -> bool {
    (!policy.require_media || item.has_media) && item.value_score >= policy.min_value_score
}

/// A caption backend. Implementations hold no mutable state across calls.
pub trait Captioner: Send + Sync {
    fn id(&self) -> &str;

    fn caption(&self, item: &MediaItem) -> Result<Caption, CaptionError>;
}

/// Applies the invocation policy in front of a captioner. Items that fail the
/// gate are reported as [`CaptionError::InvocationSkipped`].
pub struct GatedCaptioner<C> {
    policy: InvocationPolicy,
    inner: C,
}

impl<C: Captioner> GatedCaptioner<C> {
    pub fn new(policy: InvocationPolicy, inner: C) -> Result<Self, CaptionError> {
        policy.validate()?;
        Ok(Self { policy, inner })
    }

    pub fn policy(&self) -> &InvocationPolicy {
        &self.policy
    }

    pub fn caption(&self, item: &MediaItem) -> Result<Caption, CaptionError> {
        if !should_invoke(item, &self.policy) {
            return Err(CaptionError::InvocationSkipped(item.item_id));
        }
        self.inner.caption(item)
    }

    /// Captions only items passing the gate; skipped items yield `Ok(None)`.
    pub fn caption_if_eligible(&self, item: &MediaItem) -> Result<Option<Caption>, CaptionError> {
        match self.caption(item) {
            Ok(c) => Ok(Some(c)),
            Err(CaptionError::InvocationSkipped(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }
}

/// Deterministic captioner that expands the world's caption templates.
#[derive(Debug, Clone)]
pub struct SyntheticCaptioner {
    truth: Arc<GroundTruth>,
    created_at: i64,
}

impl SyntheticCaptioner {
    pub const ID: &'static str = "synthetic-template-v1";

    pub fn new(truth: Arc<GroundTruth>, created_at: i64) -> Self {
        Self { truth, created_at }
    }
}

impl Captioner for SyntheticCaptioner {
    fn id(&self) -> &str {
        Self::ID
    }

    fn caption(&self, item: &MediaItem) -> Result<Caption, CaptionError> {
        let idx = item
            .ground_truth_ref
            .ok_or(CaptionError::MissingGroundTruth(item.item_id))?;
        let text = self
            .truth
            .caption_text(idx)
            .map_err(|_| CaptionError::MissingGroundTruth(item.item_id))?;
        Ok(Caption {
            item_id: item.item_id,
            text,
            captioner_id: Self::ID.to_string(),
            created_at: self.created_at,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteCaptionerConfig {
    pub endpoint: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
}

fn default_timeout_ms() -> u64 {
    200
}

fn default_retries() -> u32 {
    2
}

#[derive(Serialize)]
struct CaptionRequest<'a> {
    item_id: u64,
    media_ref: &'a str,
}

#[derive(Deserialize)]
struct CaptionReply {
    item_id: u64,
    caption: String,
}

/// Client for a captioning service speaking single-object JSON over HTTP.
///
/// Each attempt is bounded by `timeout_ms`; timeouts and connection failures
/// are retried up to `retries` times. Protocol violations are not retried.
pub struct RemoteCaptioner {
    config: RemoteCaptionerConfig,
    agent: ureq::Agent,
    id: String,
}

impl RemoteCaptioner {
    pub fn new(config: RemoteCaptionerConfig) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build();
        let id = format!("remote:{}", config.endpoint);
        Self { config, agent, id }
    }

    pub fn config(&self) -> &RemoteCaptionerConfig {
        &self.config
    }

    /// One request/response exchange, no retries.
    pub fn request_once(&self, item: &MediaItem) -> Result<Caption, CaptionError> {
        let media_ref = item.media_ref();
        let body = CaptionRequest {
            item_id: item.item_id,
            media_ref: &media_ref,
        };
        let payload = serde_json::to_string(&body).map_err(|e| CaptionError::Transport(e.to_string()))?;
        let response = match self
            .agent
            .post(&self.config.endpoint)
            .set("Content-Type", "application/json")
            .send_string(&payload)
        {
            Ok(r) => r,
            Err(ureq::Error::Status(code, _)) => {
                return Err(CaptionError::MalformedResponse(format!("status {code}")))
            }
            Err(ureq::Error::Transport(t)) => return Err(classify_transport(&t)),
        };
        if response.status() != 200 {
            return Err(CaptionError::MalformedResponse(format!(
                "status {}",
                response.status()
            )));
        }
        let text = response
            .into_string()
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock => CaptionError::Timeout,
                _ => CaptionError::MalformedResponse(e.to_string()),
            })?;
        parse_reply(item.item_id, &text).map(|caption| Caption {
            item_id: item.item_id,
            text: caption,
            captioner_id: self.id.clone(),
            created_at: now_secs(),
        })
    }
}

impl Captioner for RemoteCaptioner {
    fn id(&self) -> &str {
        &self.id
    }

    fn caption(&self, item: &MediaItem) -> Result<Caption, CaptionError> {
        let attempts = self.config.retries + 1;
        let mut last = String::new();
        for _ in 0..attempts {
            match self.request_once(item) {
                Ok(c) => return Ok(c),
                Err(e @ CaptionError::MalformedResponse(_)) => return Err(e),
                Err(e) => last = e.to_string(),
            }
        }
        Err(CaptionError::CaptionUnavailable {
            item_id: item.item_id,
            attempts,
            last,
        })
    }
}

/// Parses a reply body, checking the schema and the echoed item id.
pub fn parse_reply(expected_item: u64, body: &str) -> Result<String, CaptionError> {
    let reply: CaptionReply = serde_json::from_str(body)
        .map_err(|e| CaptionError::MalformedResponse(e.to_string()))?;
    if reply.item_id != expected_item {
        return Err(CaptionError::MalformedResponse(format!(
            "reply for item {} while waiting for {expected_item}",
            reply.item_id
        )));
    }
    if reply.caption.trim().is_empty() {
        return Err(CaptionError::MalformedResponse("empty caption".into()));
    }
    Ok(reply.caption)
}

fn classify_transport(t: &ureq::Transport) -> CaptionError {
    let mut source: Option<&(dyn std::error::Error + 'static)> = std::error::Error::source(t);
    while let Some(err) = source {
        if let Some(io) = err.downcast_ref::<std::io::Error>() {
            if matches!(
                io.kind(),
                std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock
            ) {
                return CaptionError::Timeout;
            }
        }
        source = err.source();
    }
    if t.to_string().contains("timed out") {
        CaptionError::Timeout
    } else {
        CaptionError::Transport(t.to_string())
    }
}

fn now_secs() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs() as i64)
        .unwrap_or(0)
}
