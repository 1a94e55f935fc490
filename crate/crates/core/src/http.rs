//! Minimal HTTP POST transport shared by the remote embedding provider and
//! the remote chat gateway. The trait boundary exists so tests can substitute
//! a scripted transport and assert exactly what went over the wire (or that
//! nothing did).

use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::Duration;

use thiserror::Error;

/// A plain HTTP response: status code plus body text.
#[derive(Debug, Clone)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Error, Clone)]
pub enum TransportError {
    #[error("connection failed: {0}")]
    Connection(String),
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
}

/// Blocking JSON-POST transport.
pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &serde_json::Value,
        timeout: Duration,
    ) -> Result<HttpResponse, TransportError>;
}

/// Production transport backed by a blocking HTTP client.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new() -> Self {
        Self {
            client: reqwest::blocking::Client::new(),
        }
    }
}

impl Default for HttpTransport {
    fn default() -> Self {
        Self::new()
    }
}

impl Transport for HttpTransport {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &serde_json::Value,
        timeout: Duration,
    ) -> Result<HttpResponse, TransportError> {
        let mut req = self.client.post(url).timeout(timeout).json(body);
        for (name, value) in headers {
            req = req.header(name.as_str(), value.as_str());
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout(timeout)
            } else {
                TransportError::Connection(e.to_string())
            }
        })?;
        let status = resp.status().as_u16();
        let body = resp
            .text()
            .map_err(|e| TransportError::Connection(e.to_string()))?;
        Ok(HttpResponse { status, body })
    }
}

/// Outcome of a single attempt inside [`post_with_retries`], reported to the
/// caller's observer so retry schedules stay visible in call logs.
#[derive(Debug, Clone)]
pub enum AttemptOutcome {
    Ok { status: u16 },
    RetryableStatus { status: u16, backoff_ms: u64 },
    TransportError { detail: String, backoff_ms: u64 },
}

/// POSTs `body`, retrying on transport errors and HTTP 429/5xx with
/// exponential backoff (`backoff_base_ms * 2^attempt`). `retries` counts
/// re-attempts after the first try. Every attempt is reported to `observe`.
#[allow(clippy::too_many_arguments)]
pub fn post_with_retries(
    transport: &dyn Transport,
    url: &str,
    headers: &[(String, String)],
    body: &serde_json::Value,
    timeout: Duration,
    retries: u32,
    backoff_base_ms: u64,
    observe: &mut dyn FnMut(u32, &AttemptOutcome),
) -> Result<HttpResponse, TransportError> {
    let mut last_err = TransportError::Connection("no attempt made".into());
    for attempt in 0..=retries {
        let backoff_ms = backoff_base_ms.saturating_mul(1u64 << attempt.min(16));
        match transport.post_json(url, headers, body, timeout) {
            Ok(resp) if (resp.status == 429 || resp.status >= 500) && attempt < retries => {
                observe(
                    attempt,
                    &AttemptOutcome::RetryableStatus {
                        status: resp.status,
                        backoff_ms,
                    },
                );
                if backoff_ms > 0 {
                    std::thread::sleep(Duration::from_millis(backoff_ms));
                }
            }
            Ok(resp) => {
                observe(
                    attempt,
                    &AttemptOutcome::Ok {
                        status: resp.status,
                    },
                );
                return Ok(resp);
            }
            Err(e) => {
                observe(
                    attempt,
                    &AttemptOutcome::TransportError {
                        detail: e.to_string(),
                        backoff_ms,
                    },
                );
                last_err = e;
                if attempt < retries && backoff_ms > 0 {
                    std::thread::sleep(Duration::from_millis(backoff_ms));
                }
            }
        }
    }
    Err(last_err)
}

/// One request captured by [`StaticTransport`].
#[derive(Debug, Clone)]
pub struct RecordedCall {
    pub url: String,
    pub headers: Vec<(String, String)>,
    pub body: serde_json::Value,
}

/// Test transport: replays a fixed queue of responses and records every
/// call it receives. Once the queue is empty it returns a connection error.
#[derive(Default)]
pub struct StaticTransport {
    calls: Mutex<Vec<RecordedCall>>,
    responses: Mutex<VecDeque<Result<HttpResponse, TransportError>>>,
}

impl StaticTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_response(&self, response: Result<HttpResponse, TransportError>) {
        self.responses.lock().unwrap().push_back(response);
    }

    pub fn push_ok(&self, status: u16, body: impl Into<String>) {
        self.push_response(Ok(HttpResponse {
            status,
            body: body.into(),
        }));
    }

    pub fn calls(&self) -> Vec<RecordedCall> {
        self.calls.lock().unwrap().clone()
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().unwrap().len()
    }
}

impl Transport for StaticTransport {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &serde_json::Value,
        _timeout: Duration,
    ) -> Result<HttpResponse, TransportError> {
        self.calls.lock().unwrap().push(RecordedCall {
            url: url.to_string(),
            headers: headers.to_vec(),
            body: body.clone(),
        });
        self.responses
            .lock()
            .unwrap()
            .pop_front()
            .unwrap_or_else(|| Err(TransportError::Connection("no scripted response".into())))
    }
}
