use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};

/// An image as sent to a provider, with the digest of the original file.
#[derive(Debug, Clone)]
pub struct ImagePayload {
    pub bytes: Vec<u8>,
    pub mime: &'static str,
    /// Hex SHA-256 of the file content before any resizing.
    pub sha256: String,
}

impl ImagePayload {
    /// Reads an image file. With `max_side`, larger images are downscaled
    /// and re-encoded as PNG; the digest still covers the original bytes.
    pub fn from_file(path: &Path, max_side: Option<u32>) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(bytes, max_side).map_err(|source| Error::Image {
            path: path.to_owned(),
            source,
        })
    }

    pub fn from_bytes(bytes: Vec<u8>, max_side: Option<u32>) -> Result<Self, image::ImageError> {
        use sha2::Digest;
        let sha256 = hex::encode(sha2::Sha256::digest(&bytes));
        let format = image::guess_format(&bytes)?;
        let mime = format.to_mime_type();
        if let Some(limit) = max_side {
            let img = image::load_from_memory_with_format(&bytes, format)?;
            if img.width().max(img.height()) > limit {
                let small = img.resize(limit, limit, image::imageops::FilterType::Triangle);
                let mut out = std::io::Cursor::new(Vec::new());
                small.write_to(&mut out, image::ImageFormat::Png)?;
                return Ok(Self {
                    bytes: out.into_inner(),
                    mime: "image/png",
                    sha256,
                });
            }
        }
        Ok(Self {
            bytes,
            mime,
            sha256,
        })
    }

    fn data_url(&self) -> String {
        format!(
            "data:{};base64,{}",
            self.mime,
            base64::engine::general_purpose::STANDARD.encode(&self.bytes)
        )
    }
}

/// A vision-language model that answers a text prompt about one image.
pub trait VisionProvider: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, image: &ImagePayload, prompt: &str) -> Result<String>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub backoff_multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 4,
            initial_backoff_ms: 500,
            backoff_multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    fn delay(&self, retry: u32) -> Duration {
        let ms = self.initial_backoff_ms as f64 * self.backoff_multiplier.powi(retry as i32);
        Duration::from_millis(ms.min(60_000.0) as u64)
    }
}

/// Canned responses keyed by image SHA-256, for offline runs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StubResponses {
    #[serde(default)]
    pub responses: HashMap<String, String>,
    /// Answer for images with no entry in `responses`.
    #[serde(default)]
    pub default: Option<String>,
}

#[derive(Debug)]
pub struct StubProvider {
    name: String,
    canned: StubResponses,
    calls: AtomicUsize,
}

impl StubProvider {
    pub fn new(canned: StubResponses) -> Self {
        Self {
            name: "stub".into(),
            canned,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("stub responses {}: {e}", path.display())))?;
        let canned = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("stub responses {}: {e}", path.display())))?;
        Ok(Self::new(canned))
    }

    /// Number of `complete` calls so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl VisionProvider for StubProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, image: &ImagePayload, _prompt: &str) -> Result<String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.canned
            .responses
            .get(&image.sha256)
            .or(self.canned.default.as_ref())
            .cloned()
            .ok_or_else(|| Error::Provider {
                provider: self.name.clone(),
                detail: format!("no canned response for image {}", image.sha256),
            })
    }
}

fn default_api_key_env() -> String {
    "OPENAI_API_KEY".into()
}
fn default_endpoint() -> String {
    "https://api.openai.com/v1/chat/completions".into()
}
fn default_model() -> String {
    "gpt-4.1".into()
}
fn default_timeout() -> u64 {
    60
}
fn default_max_tokens() -> u32 {
    120
}

/// Chat-completions style HTTP provider. Only the *name* of the environment
/// variable holding the key is part of the config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpProviderConfig {
    #[serde(default = "default_endpoint")]
    pub endpoint: String,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub retry: RetryPolicy,
    /// Client-side cap on request starts per minute.
    #[serde(default)]
    pub requests_per_minute: Option<u32>,
    /// Longest image side sent; larger images are downscaled. `None` sends
    /// the original file.
    #[serde(default)]
    pub max_image_side: Option<u32>,
}

impl Default for HttpProviderConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

pub struct HttpProvider {
    name: String,
    config: HttpProviderConfig,
    api_key: String,
    client: reqwest::blocking::Client,
    next_slot: Mutex<Instant>,
}

impl std::fmt::Debug for HttpProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpProvider")
            .field("name", &self.name)
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

enum Attempt {
    Done(String),
    Retry(String),
    TimedOut,
}

impl HttpProvider {
    pub fn new(name: impl Into<String>, config: HttpProviderConfig) -> Result<Self> {
        let name = name.into();
        let api_key = std::env::var(&config.api_key_env).map_err(|_| Error::Auth {
            provider: name.clone(),
            detail: format!("environment variable {} is not set", config.api_key_env),
        })?;
        if api_key.trim().is_empty() {
            return Err(Error::Auth {
                provider: name,
                detail: format!("environment variable {} is empty", config.api_key_env),
            });
        }
        if config.retry.max_attempts == 0 {
            return Err(Error::Config("retry.max_attempts must be at least 1".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs.max(1)))
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(Self {
            name,
            config,
            api_key,
            client,
            next_slot: Mutex::new(Instant::now()),
        })
    }

    /// Timeout override for tests against slow local servers.
    pub fn with_timeout(mut self, timeout: Duration) -> Result<Self> {
        self.client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(self)
    }

    fn wait_for_slot(&self) {
        let Some(rpm) = self.config.requests_per_minute.filter(|&r| r > 0) else {
            return;
        };
        let interval = Duration::from_secs_f64(60.0 / f64::from(rpm));
        let wait = {
            let mut next = self.next_slot.lock().expect("rate limiter lock");
            let now = Instant::now();
            let start = (*next).max(now);
            *next = start + interval;
            start - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }

    fn body(&self, image: &ImagePayload, prompt: &str) -> serde_json::Value {
        json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
            "messages": [{
                "role": "user",
                "content": [
                    {"type": "text", "text": prompt},
                    {"type": "image_url", "image_url": {"url": image.data_url()}}
                ]
            }]
        })
    }

    fn attempt(&self, body: &serde_json::Value) -> Result<Attempt> {
        self.wait_for_slot();
        let resp = match self
            .client
            .post(&self.config.endpoint)
            .bearer_auth(&self.api_key)
            .json(body)
            .send()
        {
            Ok(r) => r,
            Err(e) if e.is_timeout() => return Ok(Attempt::TimedOut),
            Err(e) if e.is_connect() || e.is_request() => {
                return Ok(Attempt::Retry(format!("transport: {}", e.without_url())))
            }
            Err(e) => {
                return Err(Error::Provider {
                    provider: self.name.clone(),
                    detail: e.without_url().to_string(),
                })
            }
        };
        let status = resp.status();
        if status == reqwest::StatusCode::UNAUTHORIZED || status == reqwest::StatusCode::FORBIDDEN {
            return Err(Error::Auth {
                provider: self.name.clone(),
                detail: format!("HTTP {status}"),
            });
        }
        if status == reqwest::StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
            return Ok(Attempt::Retry(format!("HTTP {status}")));
        }
        let text = match resp.text() {
            Ok(t) => t,
            Err(e) if e.is_timeout() => return Ok(Attempt::TimedOut),
            Err(e) => return Ok(Attempt::Retry(format!("reading body: {}", e.without_url()))),
        };
        if !status.is_success() {
            return Err(Error::Provider {
                provider: self.name.clone(),
                detail: format!("HTTP {status}: {}", truncate(&text, 300)),
            });
        }
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|_| Error::Provider {
            provider: self.name.clone(),
            detail: format!("response is not JSON: {}", truncate(&text, 300)),
        })?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(|s| Attempt::Done(s.to_owned()))
            .ok_or_else(|| Error::Provider {
                provider: self.name.clone(),
                detail: format!("no message content in response: {}", truncate(&text, 300)),
            })
    }
}

fn truncate(s: &str, n: usize) -> String {
    s.chars().take(n).collect()
}

impl VisionProvider for HttpProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, image: &ImagePayload, prompt: &str) -> Result<String> {
        let body = self.body(image, prompt);
        let policy = &self.config.retry;
        let mut last = String::new();
        let mut all_timeouts = true;
        for attempt in 0..policy.max_attempts {
            if attempt > 0 {
                std::thread::sleep(policy.delay(attempt - 1));
            }
            match self.attempt(&body)? {
                Attempt::Done(s) => return Ok(s),
                Attempt::TimedOut => last = "timed out".into(),
                Attempt::Retry(why) => {
                    all_timeouts = false;
                    last = why;
                }
            }
            tracing::debug!(provider = %self.name, attempt, reason = %last, "retrying");
        }
        if all_timeouts {
            Err(Error::Timeout {
                provider: self.name.clone(),
                attempts: policy.max_attempts,
            })
        } else {
            Err(Error::Provider {
                provider: self.name.clone(),
                detail: format!("gave up after {} attempts: {last}", policy.max_attempts),
            })
        }
    }
}

/// Provider selection as it appears in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProviderKind {
    Stub {
        #[serde(default)]
        responses: Option<PathBuf>,
    },
    Http(HttpProviderConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    /// Label used in provenance and as the cache namespace.
    pub name: String,
    #[serde(flatten)]
    pub kind: ProviderKind,
}

impl ProviderConfig {
    pub fn stub() -> Self {
        Self {
            name: "stub".into(),
            kind: ProviderKind::Stub { responses: None },
        }
    }

    pub fn build(&self) -> Result<Box<dyn VisionProvider>> {
        match &self.kind {
            ProviderKind::Stub { responses } => {
                let mut p = match responses {
                    Some(path) => StubProvider::from_file(path)?,
                    None => StubProvider::new(StubResponses::default()),
                };
                p.name = self.name.clone();
                Ok(Box::new(p))
            }
            ProviderKind::Http(cfg) => Ok(Box::new(HttpProvider::new(&self.name, cfg.clone())?)),
        }
    }
}
