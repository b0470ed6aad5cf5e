//! Wire protocol shared with the training service.
//!
//! Every call is a `POST` of a JSON object to one of six endpoints. The
//! engine-side client is [`HttpTransport`]; [`LoopbackTransport`] routes the
//! same bodies to an in-process [`ServiceHandler`].

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::seed::sha256_hex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Endpoint {
    Infer,
    Train,
    Checkpoint,
    Restore,
    Embed,
    Analyze,
}

impl Endpoint {
    pub const ALL: [Endpoint; 6] = [
        Endpoint::Infer,
        Endpoint::Train,
        Endpoint::Checkpoint,
        Endpoint::Restore,
        Endpoint::Embed,
        Endpoint::Analyze,
    ];

    pub fn path(self) -> &'static str {
        match self {
            Endpoint::Infer => "/infer",
            Endpoint::Train => "/train",
            Endpoint::Checkpoint => "/checkpoint",
            Endpoint::Restore => "/restore",
            Endpoint::Embed => "/embed",
            Endpoint::Analyze => "/analyze",
        }
    }

    pub fn from_path(path: &str) -> Option<Endpoint> {
        Endpoint::ALL.into_iter().find(|e| e.path() == path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferRequest {
    pub instruction_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferResponse {
    pub response_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireTrainItem {
    pub instruction_text: String,
    pub target: String,
    /// `simple` or `contrastive`.
    pub weight_hint: String,
    /// The relation the model wrongly predicted for a contrastive item.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wrong_relation: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRequest {
    pub items: Vec<WireTrainItem>,
    pub epochs: u32,
    pub learning_rate: f64,
    pub batch_size: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResponse {
    pub items_seen: u64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CheckpointRequest {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointResponse {
    pub checkpoint_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestoreRequest {
    pub checkpoint_id: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RestoreResponse {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub texts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub vectors: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeRequest {
    pub prompt_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeResponse {
    pub response_text: String,
}

/// Any request the engine can send.
#[derive(Debug, Clone, PartialEq)]
pub enum WireRequest {
    Infer(InferRequest),
    Train(TrainRequest),
    Checkpoint(CheckpointRequest),
    Restore(RestoreRequest),
    Embed(EmbedRequest),
    Analyze(AnalyzeRequest),
}

impl WireRequest {
    pub fn endpoint(&self) -> Endpoint {
        match self {
            WireRequest::Infer(_) => Endpoint::Infer,
            WireRequest::Train(_) => Endpoint::Train,
            WireRequest::Checkpoint(_) => Endpoint::Checkpoint,
            WireRequest::Restore(_) => Endpoint::Restore,
            WireRequest::Embed(_) => Endpoint::Embed,
            WireRequest::Analyze(_) => Endpoint::Analyze,
        }
    }

    pub fn to_body(&self) -> Result<Value> {
        Ok(match self {
            WireRequest::Infer(r) => serde_json::to_value(r)?,
            WireRequest::Train(r) => serde_json::to_value(r)?,
            WireRequest::Checkpoint(r) => serde_json::to_value(r)?,
            WireRequest::Restore(r) => serde_json::to_value(r)?,
            WireRequest::Embed(r) => serde_json::to_value(r)?,
            WireRequest::Analyze(r) => serde_json::to_value(r)?,
        })
    }

    pub fn parse(endpoint: Endpoint, body: Value) -> Result<Self> {
        let bad = |e: serde_json::Error| Error::Protocol(format!("{}: {e}", endpoint.path()));
        Ok(match endpoint {
            Endpoint::Infer => WireRequest::Infer(serde_json::from_value(body).map_err(bad)?),
            Endpoint::Train => WireRequest::Train(serde_json::from_value(body).map_err(bad)?),
            Endpoint::Checkpoint => {
                WireRequest::Checkpoint(serde_json::from_value(body).map_err(bad)?)
            }
            Endpoint::Restore => WireRequest::Restore(serde_json::from_value(body).map_err(bad)?),
            Endpoint::Embed => WireRequest::Embed(serde_json::from_value(body).map_err(bad)?),
            Endpoint::Analyze => WireRequest::Analyze(serde_json::from_value(body).map_err(bad)?),
        })
    }
}

/// Decode a typed response body.
pub fn decode<T: serde::de::DeserializeOwned>(endpoint: Endpoint, body: Value) -> Result<T> {
    serde_json::from_value(body)
        .map_err(|e| Error::Protocol(format!("bad {} response: {e}", endpoint.path())))
}

/// Sends a request body and returns the response body.
pub trait Transport: Send + Sync {
    fn post(&self, endpoint: Endpoint, body: &Value) -> Result<Value>;
}

/// Settings for [`HttpTransport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub base_url: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
}

fn default_timeout() -> u64 {
    600
}

fn default_retries() -> u32 {
    3
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        EndpointConfig {
            base_url: base_url.into(),
            auth_env: None,
            timeout_secs: default_timeout(),
            retries: default_retries(),
        }
    }
}

/// Blocking HTTP client for the wire protocol.
///
/// Each logical call carries an `X-Request-Id` header that stays fixed
/// across retries, so the service can de-duplicate a retried `/train`.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
    config: EndpointConfig,
    token: Option<String>,
    counter: AtomicU64,
    backoff: Duration,
}

impl HttpTransport {
    pub fn new(config: EndpointConfig) -> Result<Self> {
        let token = match &config.auth_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                Error::InvalidArgument(format!(
                    "environment variable {var} must hold the auth token for {}",
                    config.base_url
                ))
            })?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| Error::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(HttpTransport {
            client,
            config,
            token,
            counter: AtomicU64::new(0),
            backoff: Duration::from_millis(200),
        })
    }

    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    fn request_id(&self, endpoint: Endpoint, body: &Value) -> String {
        let n = self.counter.fetch_add(1, Ordering::Relaxed);
        let digest = sha256_hex(format!("{}:{n}:{body}", endpoint.path()).as_bytes());
        format!("req-{n}-{}", &digest[..16])
    }
}

impl Transport for HttpTransport {
    fn post(&self, endpoint: Endpoint, body: &Value) -> Result<Value> {
        let url = format!("{}{}", self.config.base_url.trim_end_matches('/'), endpoint.path());
        let request_id = self.request_id(endpoint, body);
        let attempts = self.config.retries + 1;
        let mut last = String::new();
        for attempt in 1..=attempts {
            let mut req = self
                .client
                .post(&url)
                .header("X-Request-Id", &request_id)
                .json(body);
            if let Some(token) = &self.token {
                req = req.bearer_auth(token);
            }
            match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        return resp.json::<Value>().map_err(|e| {
                            Error::Protocol(format!("{}: undecodable body: {e}", endpoint.path()))
                        });
                    }
                    let text = resp.text().unwrap_or_default();
                    if status.is_client_error() {
                        return Err(Error::Protocol(format!(
                            "{} rejected with {status}: {text}",
                            endpoint.path()
                        )));
                    }
                    last = format!("{status}: {text}");
                }
                Err(e) => last = e.to_string(),
            }
            log::warn!("{} attempt {attempt}/{attempts} failed: {last}", endpoint.path());
            if attempt < attempts {
                std::thread::sleep(self.backoff * 2u32.pow(attempt - 1));
            }
        }
        Err(Error::Transport {
            attempts,
            message: last,
        })
    }
}

/// Server side of the protocol.
pub trait ServiceHandler: Send {
    fn handle(&mut self, request: WireRequest) -> Result<Value>;
}

/// In-process transport that hands bodies straight to a handler.
pub struct LoopbackTransport<H> {
    handler: Mutex<H>,
}

impl<H: ServiceHandler> LoopbackTransport<H> {
    pub fn new(handler: H) -> Self {
        LoopbackTransport {
            handler: Mutex::new(handler),
        }
    }

    pub fn into_inner(self) -> H {
        self.handler.into_inner().unwrap_or_else(|p| p.into_inner())
    }
}

impl<H: ServiceHandler> Transport for LoopbackTransport<H> {
    fn post(&self, endpoint: Endpoint, body: &Value) -> Result<Value> {
        let request = WireRequest::parse(endpoint, body.clone())?;
        let mut handler = self.handler.lock().unwrap_or_else(|p| p.into_inner());
        handler.handle(request)
    }
}
