//! HTTP plumbing shared by the live clients: a pluggable transport, an
//! on-disk response cache, and retry with exponential backoff.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::quota::{QuotaLedger, Service};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Get,
    Post,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpRequest {
    pub method: Method,
    pub url: String,
    /// Form-encoded body for POST requests.
    pub body: Option<String>,
    /// Query parameter holding a secret; dropped from cache keys and sidecars.
    pub secret_param: Option<&'static str>,
}

impl HttpRequest {
    pub fn get(url: impl Into<String>) -> Self {
        HttpRequest {
            method: Method::Get,
            url: url.into(),
            body: None,
            secret_param: None,
        }
    }

    pub fn post_form(url: impl Into<String>, body: impl Into<String>) -> Self {
        HttpRequest {
            method: Method::Post,
            url: url.into(),
            body: Some(body.into()),
            secret_param: None,
        }
    }

    /// URL with the secret parameter removed.
    pub fn redacted_url(&self) -> String {
        let Some(secret) = self.secret_param else {
            return self.url.clone();
        };
        let Some((base, query)) = self.url.split_once('?') else {
            return self.url.clone();
        };
        let kept: Vec<&str> = query
            .split('&')
            .filter(|kv| kv.split('=').next() != Some(secret))
            .collect();
        if kept.is_empty() {
            base.to_string()
        } else {
            format!("{base}?{}", kept.join("&"))
        }
    }

    /// Hex SHA-256 over method, redacted URL and body.
    pub fn cache_key(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("{:?}\n", self.method));
        h.update(self.redacted_url());
        h.update("\n");
        h.update(self.body.as_deref().unwrap_or(""));
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: Vec<u8>,
}

/// Sends one request. Errors are transport-level (connection, timeout).
pub trait Transport: Send + Sync {
    fn send(&self, request: &HttpRequest) -> std::result::Result<HttpResponse, String>;
}

/// Blocking reqwest transport.
pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new(timeout: Duration) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .user_agent(concat!("crosswalk/", env!("CARGO_PKG_VERSION")))
            .build()
            .map_err(|e| Error::InvalidConfig(format!("cannot build HTTP client: {e}")))?;
        Ok(ReqwestTransport { client })
    }
}

impl Transport for ReqwestTransport {
    fn send(&self, request: &HttpRequest) -> std::result::Result<HttpResponse, String> {
        let builder = match request.method {
            Method::Get => self.client.get(&request.url),
            Method::Post => self
                .client
                .post(&request.url)
                .header("Content-Type", "application/x-www-form-urlencoded")
                .body(request.body.clone().unwrap_or_default()),
        };
        let resp = builder.send().map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let body = resp.bytes().map_err(|e| e.to_string())?.to_vec();
        Ok(HttpResponse { status, body })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheSidecar {
    method: Method,
    url: String,
    status: u16,
    bytes: usize,
    fetched_unix: u64,
}

/// Response cache laid out as `<root>/<service>/<key>` plus `<key>.meta.json`.
#[derive(Debug, Clone)]
pub struct DiskCache {
    root: PathBuf,
}

impl DiskCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DiskCache { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, service: Service, key: &str) -> PathBuf {
        self.root.join(service.name()).join(key)
    }

    pub fn get(&self, service: Service, request: &HttpRequest) -> Option<Vec<u8>> {
        fs::read(self.path(service, &request.cache_key())).ok()
    }

    pub fn put(&self, service: Service, request: &HttpRequest, status: u16, body: &[u8]) -> Result<()> {
        let key = request.cache_key();
        let path = self.path(service, &key);
        fs::create_dir_all(path.parent().expect("cache path has a parent"))?;
        let sidecar = CacheSidecar {
            method: request.method,
            url: request.redacted_url(),
            status,
            bytes: body.len(),
            fetched_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        };
        write_atomic(&path.with_file_name(format!("{key}.meta.json")), &serde_json::to_vec_pretty(&sidecar)?)?;
        // Body last: its presence marks a complete entry.
        write_atomic(&path, body)
    }
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    static NEXT: AtomicU64 = AtomicU64::new(0);
    let n = NEXT.fetch_add(1, Ordering::Relaxed);
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(format!(".tmp{}-{n}", std::process::id()));
    let tmp = path.with_file_name(name);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn delay_before(&self, attempt: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(attempt.saturating_sub(1))
    }
}

fn retryable_status(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

/// Everything a live client needs to talk to one service.
#[derive(Clone)]
pub struct ServiceClient {
    pub service: Service,
    pub transport: Arc<dyn Transport>,
    pub ledger: Arc<QuotaLedger>,
    pub cache: Option<DiskCache>,
    pub retry: RetryPolicy,
    /// Serve from cache only; a miss is an error instead of a network call.
    pub offline: bool,
}

impl ServiceClient {
    fn error(&self, message: String, attempts: u32, retryable: bool) -> Error {
        Error::Provider {
            service: self.service.name(),
            message,
            attempts,
            retryable,
        }
    }

    /// Fetches a response body, consulting the cache first. Only 2xx bodies are
    /// cached and returned.
    pub fn fetch(&self, request: &HttpRequest) -> Result<Vec<u8>> {
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(self.service, request)) {
            return Ok(hit);
        }
        if self.offline {
            return Err(self.error(format!("offline and not cached: {}", request.redacted_url()), 0, false));
        }
        let mut last = String::new();
        for attempt in 1..=self.retry.attempts {
            if attempt > 1 {
                std::thread::sleep(self.retry.delay_before(attempt));
            }
            self.ledger.charge(self.service)?;
            self.ledger.throttle(self.service);
            match self.transport.send(request) {
                Ok(resp) if (200..300).contains(&resp.status) => {
                    if let Some(c) = &self.cache {
                        c.put(self.service, request, resp.status, &resp.body)?;
                    }
                    return Ok(resp.body);
                }
                Ok(resp) if retryable_status(resp.status) => {
                    last = format!("HTTP {}", resp.status);
                }
                Ok(resp) => {
                    let snippet = String::from_utf8_lossy(&resp.body[..resp.body.len().min(200)]).into_owned();
                    return Err(self.error(format!("HTTP {}: {snippet}", resp.status), attempt, false));
                }
                Err(e) => last = e,
            }
            log::debug!("{} attempt {attempt} failed: {last}", self.service);
        }
        Err(self.error(last, self.retry.attempts, true))
    }
}
