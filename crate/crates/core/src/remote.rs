//! Blocking JSON-over-HTTP client shared by the remote backends.
//!
//! Must not be called from inside an async runtime worker; async callers
//! wrap calls in `spawn_blocking`.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub endpoint: String,
    /// Bearer token; never written back out.
    #[serde(skip_serializing)]
    pub token: Option<String>,
    /// Attempts after the first one.
    pub retries: u32,
    pub backoff_ms: u64,
    pub timeout_ms: u64,
    pub max_in_flight: usize,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            token: None,
            retries: 3,
            backoff_ms: 200,
            timeout_ms: 30_000,
            max_in_flight: 4,
        }
    }
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.endpoint.trim().is_empty() {
            return Err(Error::Param("remote endpoint must be non-empty".into()));
        }
        if self.max_in_flight == 0 {
            return Err(Error::Param("max_in_flight must be at least 1".into()));
        }
        Ok(())
    }

    fn client(&self) -> Result<reqwest::blocking::Client> {
        reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(self.timeout_ms))
            .build()
            .map_err(|e| Error::Backend {
                status: None,
                retryable: false,
                message: e.to_string(),
            })
    }

    /// POSTs `body` and parses the JSON response, retrying retryable failures
    /// with exponential backoff.
    pub fn post_json(&self, body: &Value) -> Result<Value> {
        let bytes = self.post(body)?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Backend {
            status: None,
            retryable: false,
            message: format!("invalid JSON response: {e}"),
        })
    }

    /// POSTs `body` and returns the raw response bytes.
    pub fn post(&self, body: &Value) -> Result<Vec<u8>> {
        let client = self.client()?;
        let mut attempt = 0;
        loop {
            match self.post_once(&client, body) {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() && attempt < self.retries => {
                    let wait = self.backoff_ms.saturating_mul(1 << attempt.min(16));
                    tracing::warn!(endpoint = %self.endpoint, attempt, "retrying after {e}");
                    std::thread::sleep(Duration::from_millis(wait));
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn post_once(&self, client: &reqwest::blocking::Client, body: &Value) -> Result<Vec<u8>> {
        let mut req = client.post(&self.endpoint).json(body);
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| Error::Backend {
            // Gateway-timeout status for client-side timeouts so callers can
            // surface one consistently.
            status: if e.is_timeout() { Some(504) } else { e.status().map(|s| s.as_u16()) },
            retryable: true,
            message: e.to_string(),
        })?;
        let status = resp.status();
        if !status.is_success() {
            let code = status.as_u16();
            return Err(Error::Backend {
                status: Some(code),
                retryable: code == 408 || code == 429 || status.is_server_error(),
                message: resp.text().unwrap_or_default(),
            });
        }
        resp.bytes()
            .map(|b| b.to_vec())
            .map_err(|e| Error::Backend {
                status: Some(status.as_u16()),
                retryable: true,
                message: e.to_string(),
            })
    }
}

/// Runs `jobs` with at most `limit` in flight, returning results in job order.
pub fn run_bounded<T, R, F>(jobs: Vec<T>, limit: usize, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync,
{
    let limit = limit.max(1);
    let mut out = Vec::with_capacity(jobs.len());
    let mut jobs = jobs.into_iter().peekable();
    while jobs.peek().is_some() {
        let wave: Vec<T> = jobs.by_ref().take(limit).collect();
        let results: Vec<R> = std::thread::scope(|s| {
            let handles: Vec<_> = wave.into_iter().map(|j| s.spawn(|| f(j))).collect();
            handles.into_iter().map(|h| h.join().expect("remote worker panicked")).collect()
        });
        out.extend(results);
    }
    out
}
