//! Text-in/text-out LLM provider contract with a scripted mock and a plain
//! JSON-over-HTTP client.
//!
//! Wire format: `POST {"prompt": <text>, "image_ref": <text|null>}` answered
//! by `{"text": <text>}`.

use std::collections::{HashMap, VecDeque};
use std::fs;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderRequest {
    pub prompt: String,
    pub image_ref: Option<String>,
}

impl ProviderRequest {
    pub fn new(prompt: String, image_ref: Option<String>) -> Self {
        Self { prompt, image_ref }
    }

    /// Hex SHA-256 of the serialized wire body. Used to key mock fixtures.
    pub fn key(&self) -> String {
        let body = serde_json::to_vec(self).expect("request serializes");
        hex::encode(Sha256::digest(body))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProviderResponse {
    /// Raw model output, kept verbatim for audit logs.
    pub text: String,
    pub status: u16,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProviderError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("provider returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed provider response: {0}")]
    Malformed(String),
    #[error("no scripted response for request {0}")]
    MissingFixture(String),
}

pub trait LlmProvider: Send + Sync {
    fn complete(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError>;
}

impl<T: LlmProvider + ?Sized> LlmProvider for &T {
    fn complete(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        (**self).complete(request)
    }
}

/// Replays canned responses, either keyed by [`ProviderRequest::key`] or
/// popped from a FIFO sequence when no keyed response matches.
#[derive(Debug, Default)]
pub struct ScriptedProvider {
    by_key: HashMap<String, String>,
    sequence: Mutex<VecDeque<String>>,
}

impl ScriptedProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_sequence<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            by_key: HashMap::new(),
            sequence: Mutex::new(responses.into_iter().map(Into::into).collect()),
        }
    }

    pub fn insert(&mut self, request: &ProviderRequest, response: impl Into<String>) {
        self.by_key.insert(request.key(), response.into());
    }

    pub fn insert_key(&mut self, key: String, response: impl Into<String>) {
        self.by_key.insert(key, response.into());
    }

    pub fn len(&self) -> usize {
        self.by_key.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_key.is_empty()
    }

    /// Keyed responses in arbitrary order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.by_key.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Loads every `<key>.txt` file in `dir` as a keyed response.
    pub fn from_dir(dir: &Path) -> std::io::Result<Self> {
        let mut provider = Self::new();
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                provider.insert_key(stem.to_string(), fs::read_to_string(&path)?);
            }
        }
        Ok(provider)
    }

    /// Writes keyed responses as `<key>.txt` files.
    pub fn write_dir(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        let mut keys: Vec<_> = self.by_key.keys().collect();
        keys.sort();
        for key in keys {
            fs::write(dir.join(format!("{key}.txt")), &self.by_key[key])?;
        }
        Ok(())
    }
}

impl LlmProvider for ScriptedProvider {
    fn complete(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        let key = request.key();
        if let Some(text) = self.by_key.get(&key) {
            return Ok(ProviderResponse {
                text: text.clone(),
                status: 200,
            });
        }
        let next = self.sequence.lock().expect("sequence lock").pop_front();
        next.map(|text| ProviderResponse { text, status: 200 })
            .ok_or(ProviderError::MissingFixture(key))
    }
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    text: String,
}

/// Blocking JSON client for any endpoint speaking the wire format above.
pub struct HttpProvider {
    client: reqwest::blocking::Client,
    url: String,
    token: Option<String>,
}

impl HttpProvider {
    pub fn new(
        url: impl Into<String>,
        token: Option<String>,
        timeout: Duration,
    ) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        Ok(Self {
            client,
            url: url.into(),
            token,
        })
    }
}

impl LlmProvider for HttpProvider {
    fn complete(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        let mut req = self.client.post(&self.url).json(request);
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req
            .send()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .text()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(ProviderError::Status { status, body });
        }
        let parsed: WireResponse =
            serde_json::from_str(&body).map_err(|e| ProviderError::Malformed(e.to_string()))?;
        Ok(ProviderResponse {
            text: parsed.text,
            status,
        })
    }
}
