//! Uniform chat-completion interface. Every model call in the pipeline
//! flows through a [`Gateway`], which is backed either by a remote
//! OpenAI-style endpoint or by a deterministic offline oracle (scripted
//! rules, or any custom [`PromptOracle`]).
//!
//! The gateway owns a structured call log and a bounded batch executor;
//! batch output order always equals input order regardless of completion
//! order.

use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hashing::fnv1a64;
use crate::http::{post_with_retries, AttemptOutcome, HttpTransport, Transport};

pub const DEFAULT_MAX_TOKENS: u32 = 512;
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

#[derive(Debug, Error, Clone)]
pub enum GatewayError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("API key environment variable {0} is not set")]
    AuthMissing(String),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("scripted oracle failure: {0}")]
    Script(String),
}

/// One chat-completion request.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>, model: impl Into<String>) -> Result<Self, GatewayError> {
        let prompt = prompt.into();
        if prompt.trim().is_empty() {
            return Err(GatewayError::EmptyPrompt);
        }
        Ok(Self {
            prompt,
            model: model.into(),
            temperature: 0.0,
            max_tokens: DEFAULT_MAX_TOKENS,
        })
    }
}

/// Deterministic prompt-to-response function used by offline gateways.
pub trait PromptOracle: Send + Sync {
    fn respond(&self, prompt: &str) -> Result<String, GatewayError>;

    fn oracle_id(&self) -> &str {
        "oracle"
    }
}

#[derive(Debug, Clone)]
pub enum RuleMatcher {
    Substring(String),
    Pattern(Regex),
}

impl RuleMatcher {
    fn matches(&self, prompt: &str) -> bool {
        match self {
            RuleMatcher::Substring(s) => prompt.contains(s.as_str()),
            RuleMatcher::Pattern(re) => re.is_match(prompt),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScriptRule {
    pub matcher: RuleMatcher,
    pub response: String,
}

/// Ordered first-match-wins rules with a default response, making the
/// scripted gateway a total function of the prompt.
#[derive(Debug, Clone)]
pub struct ScriptedBehavior {
    rules: Vec<ScriptRule>,
    default: String,
}

impl ScriptedBehavior {
    pub fn new(default: impl Into<String>) -> Self {
        Self {
            rules: Vec::new(),
            default: default.into(),
        }
    }

    pub fn rule_substring(
        mut self,
        needle: impl Into<String>,
        response: impl Into<String>,
    ) -> Self {
        self.rules.push(ScriptRule {
            matcher: RuleMatcher::Substring(needle.into()),
            response: response.into(),
        });
        self
    }

    pub fn rule_pattern(
        mut self,
        pattern: &str,
        response: impl Into<String>,
    ) -> Result<Self, regex::Error> {
        self.rules.push(ScriptRule {
            matcher: RuleMatcher::Pattern(Regex::new(pattern)?),
            response: response.into(),
        });
        Ok(self)
    }
}

impl PromptOracle for ScriptedBehavior {
    fn respond(&self, prompt: &str) -> Result<String, GatewayError> {
        for rule in &self.rules {
            if rule.matcher.matches(prompt) {
                return Ok(rule.response.clone());
            }
        }
        Ok(self.default.clone())
    }

    fn oracle_id(&self) -> &str {
        "scripted"
    }
}

/// On-disk form of [`ScriptedBehavior`]: `{"rules": [{"substring"|
/// "pattern": ..., "response": ...}], "default": ...}`.
#[derive(Debug, Serialize, Deserialize)]
pub struct ScriptedBehaviorFile {
    #[serde(default)]
    pub rules: Vec<ScriptRuleFile>,
    pub default: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ScriptRuleFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub substring: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
    pub response: String,
}

impl ScriptedBehaviorFile {
    pub fn into_behavior(self) -> Result<ScriptedBehavior, GatewayError> {
        let mut behavior = ScriptedBehavior::new(self.default);
        for rule in self.rules {
            behavior = match (rule.substring, rule.pattern) {
                (Some(s), None) => behavior.rule_substring(s, rule.response),
                (None, Some(p)) => behavior
                    .rule_pattern(&p, rule.response)
                    .map_err(|e| GatewayError::Script(format!("bad pattern: {e}")))?,
                _ => {
                    return Err(GatewayError::Script(
                        "each rule needs exactly one of substring/pattern".into(),
                    ))
                }
            };
        }
        Ok(behavior)
    }
}

/// Remote endpoint configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemoteLlmConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_backoff_base_ms")]
    pub backoff_base_ms: u64,
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
}

fn default_timeout_secs() -> u64 {
    30
}
fn default_retries() -> u32 {
    3
}
fn default_backoff_base_ms() -> u64 {
    1000
}
fn default_api_key_env() -> String {
    "NEGANCHOR_API_KEY".to_string()
}

/// One line of the structured call log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CallLogEntry {
    pub timestamp_ms: u64,
    pub prompt_hash: String,
    pub model: String,
    pub latency_ms: u64,
    pub outcome: String,
}

/// Append-only, thread-safe call log with an optional JSONL file sink.
#[derive(Clone, Default)]
pub struct CallLog {
    entries: Arc<Mutex<Vec<CallLogEntry>>>,
    sink: Option<PathBuf>,
}

impl CallLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_sink(path: PathBuf) -> Self {
        Self {
            entries: Arc::new(Mutex::new(Vec::new())),
            sink: Some(path),
        }
    }

    pub fn append(&self, entry: CallLogEntry) {
        if let Some(path) = &self.sink {
            if let Ok(mut f) = OpenOptions::new().create(true).append(true).open(path) {
                if let Ok(line) = serde_json::to_string(&entry) {
                    let _ = writeln!(f, "{line}");
                }
            }
        }
        self.entries.lock().unwrap().push(entry);
    }

    pub fn entries(&self) -> Vec<CallLogEntry> {
        self.entries.lock().unwrap().clone()
    }
}

enum GatewayMode {
    Oracle(Arc<dyn PromptOracle>),
    Remote(RemoteLlmConfig),
}

/// Chat-completion gateway. Construction picks a mode; `complete` and
/// `complete_batch` behave identically across modes.
pub struct Gateway {
    mode: GatewayMode,
    transport: Arc<dyn Transport>,
    log: CallLog,
    max_in_flight: usize,
}

impl Gateway {
    pub fn scripted(behavior: ScriptedBehavior) -> Self {
        Self::oracle(Arc::new(behavior))
    }

    pub fn oracle(oracle: Arc<dyn PromptOracle>) -> Self {
        Self {
            mode: GatewayMode::Oracle(oracle),
            transport: Arc::new(HttpTransport::new()),
            log: CallLog::new(),
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
        }
    }

    pub fn remote(config: RemoteLlmConfig) -> Self {
        Self {
            mode: GatewayMode::Remote(config),
            transport: Arc::new(HttpTransport::new()),
            log: CallLog::new(),
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
        }
    }

    /// Replaces the HTTP transport. Only the remote mode ever touches it;
    /// tests inject a recording transport to prove offline modes stay
    /// offline.
    pub fn with_transport(mut self, transport: Arc<dyn Transport>) -> Self {
        self.transport = transport;
        self
    }

    pub fn with_log(mut self, log: CallLog) -> Self {
        self.log = log;
        self
    }

    pub fn with_max_in_flight(mut self, cap: usize) -> Self {
        self.max_in_flight = cap.max(1);
        self
    }

    pub fn log(&self) -> &CallLog {
        &self.log
    }

    pub fn model_name(&self) -> &str {
        match &self.mode {
            GatewayMode::Oracle(o) => o.oracle_id(),
            GatewayMode::Remote(c) => &c.model,
        }
    }

    /// Completes one request and appends a call-log entry.
    pub fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        if request.prompt.trim().is_empty() {
            return Err(GatewayError::EmptyPrompt);
        }
        let started = Instant::now();
        let result = match &self.mode {
            GatewayMode::Oracle(oracle) => oracle.respond(&request.prompt),
            GatewayMode::Remote(config) => self.complete_remote(config, request),
        };
        let outcome = match &result {
            Ok(_) => "ok".to_string(),
            Err(e) => format!("error: {e}"),
        };
        self.log.append(CallLogEntry {
            timestamp_ms: now_ms(),
            prompt_hash: format!("{:016x}", fnv1a64(request.prompt.as_bytes())),
            model: request.model.clone(),
            latency_ms: started.elapsed().as_millis() as u64,
            outcome,
        });
        result
    }

    fn complete_remote(
        &self,
        config: &RemoteLlmConfig,
        request: &CompletionRequest,
    ) -> Result<String, GatewayError> {
        let key = std::env::var(&config.api_key_env)
            .map_err(|_| GatewayError::AuthMissing(config.api_key_env.clone()))?;
        let body = serde_json::json!({
            "model": request.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let headers = vec![
            ("authorization".to_string(), format!("Bearer {key}")),
            ("content-type".to_string(), "application/json".to_string()),
        ];
        let prompt_hash = format!("{:016x}", fnv1a64(request.prompt.as_bytes()));
        let log = &self.log;
        let model = request.model.clone();
        let mut last_status = 0u16;
        let resp = post_with_retries(
            self.transport.as_ref(),
            &config.endpoint,
            &headers,
            &body,
            Duration::from_secs(config.timeout_secs),
            config.retries,
            config.backoff_base_ms,
            &mut |attempt, outcome| {
                let described = match outcome {
                    AttemptOutcome::Ok { status } => {
                        last_status = *status;
                        format!("attempt {attempt}: http {status}")
                    }
                    AttemptOutcome::RetryableStatus { status, backoff_ms } => {
                        last_status = *status;
                        format!("attempt {attempt}: http {status}, retrying after {backoff_ms} ms")
                    }
                    AttemptOutcome::TransportError { detail, backoff_ms } => {
                        format!("attempt {attempt}: {detail}, retrying after {backoff_ms} ms")
                    }
                };
                log.append(CallLogEntry {
                    timestamp_ms: now_ms(),
                    prompt_hash: prompt_hash.clone(),
                    model: model.clone(),
                    latency_ms: 0,
                    outcome: described,
                });
            },
        )
        .map_err(|e| GatewayError::Transport(e.to_string()))?;
        if resp.status == 429 {
            return Err(GatewayError::RateLimited {
                attempts: config.retries + 1,
            });
        }
        if resp.status >= 500 {
            return Err(GatewayError::Transport(format!(
                "http {} after {} attempts",
                resp.status,
                config.retries + 1
            )));
        }
        if resp.status != 200 {
            return Err(GatewayError::Transport(format!(
                "http {}: {}",
                resp.status, resp.body
            )));
        }
        let parsed: serde_json::Value = serde_json::from_str(&resp.body)
            .map_err(|e| GatewayError::Transport(format!("malformed response: {e}")))?;
        parsed
            .get("choices")
            .and_then(|c| c.get(0))
            .and_then(|c| c.get("message"))
            .and_then(|m| m.get("content"))
            .and_then(|c| c.as_str())
            .map(|s| s.to_string())
            .ok_or_else(|| {
                GatewayError::Transport("response missing choices[0].message.content".into())
            })
    }

    /// Completes many requests with at most `max_in_flight` concurrent
    /// calls. Results come back in request order; failures are per-item.
    pub fn complete_batch(
        &self,
        requests: &[CompletionRequest],
    ) -> Vec<Result<String, GatewayError>> {
        let n = requests.len();
        if n == 0 {
            return Vec::new();
        }
        let workers = self.max_in_flight.min(n);
        if workers <= 1 {
            return requests.iter().map(|r| self.complete(r)).collect();
        }
        let cursor = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<String, GatewayError>>>> =
            (0..n).map(|_| Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = cursor.fetch_add(1, Ordering::SeqCst);
                    if i >= n {
                        break;
                    }
                    let result = self.complete(&requests[i]);
                    *slots[i].lock().unwrap() = Some(result);
                });
            }
        });
        slots
            .into_iter()
            .map(|slot| slot.into_inner().unwrap().expect("batch slot filled"))
            .collect()
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::http::StaticTransport;

    fn req(prompt: &str) -> CompletionRequest {
        CompletionRequest::new(prompt, "test-model").unwrap()
    }

    #[test]
    fn scripted_default_applies_to_everything() {
        let gw = Gateway::scripted(ScriptedBehavior::new("The answer is 7."));
        assert_eq!(
            gw.complete(&req("anything at all")).unwrap(),
            "The answer is 7."
        );
        assert_eq!(gw.complete(&req("else")).unwrap(), "The answer is 7.");
    }

    #[test]
    fn scripted_first_matching_rule_wins() {
        let behavior = ScriptedBehavior::new("I do not know.")
            .rule_substring(
                "2 + 2",
                "Let's think step by step. 2 + 2 = 4. The answer is 4.",
            )
            .rule_substring("2", "The answer is 2.");
        let gw = Gateway::scripted(behavior);
        assert_eq!(
            gw.complete(&req("Q: what is 2 + 2?")).unwrap(),
            "Let's think step by step. 2 + 2 = 4. The answer is 4."
        );
        assert_eq!(gw.complete(&req("just 2")).unwrap(), "The answer is 2.");
        assert_eq!(gw.complete(&req("hello")).unwrap(), "I do not know.");
    }

    #[test]
    fn empty_prompt_rejected() {
        assert!(matches!(
            CompletionRequest::new("  ", "m"),
            Err(GatewayError::EmptyPrompt)
        ));
    }

    #[test]
    fn remote_auth_missing_before_any_io() {
        let transport = Arc::new(StaticTransport::new());
        let gw = Gateway::remote(RemoteLlmConfig {
            endpoint: "http://example.test/v1/chat/completions".into(),
            model: "gpt-x".into(),
            timeout_secs: 1,
            retries: 3,
            backoff_base_ms: 0,
            api_key_env: "NEGANCHOR_TEST_KEY_THAT_IS_NEVER_SET".into(),
        })
        .with_transport(transport.clone());
        assert!(matches!(
            gw.complete(&req("hi")),
            Err(GatewayError::AuthMissing(_))
        ));
        assert_eq!(transport.call_count(), 0);
    }

    #[test]
    fn remote_parses_first_choice() {
        let transport = Arc::new(StaticTransport::new());
        transport.push_ok(
            200,
            r#"{"choices":[{"message":{"role":"assistant","content":"The answer is 4."}}]}"#,
        );
        let gw = Gateway::remote(RemoteLlmConfig {
            endpoint: "http://example.test/v1/chat/completions".into(),
            model: "gpt-x".into(),
            timeout_secs: 1,
            retries: 0,
            backoff_base_ms: 0,
            api_key_env: "PATH".into(),
        })
        .with_transport(transport.clone());
        assert_eq!(gw.complete(&req("2+2?")).unwrap(), "The answer is 4.");
        let calls = transport.calls();
        assert_eq!(calls[0].body["messages"][0]["role"], "user");
        assert_eq!(calls[0].body["messages"][0]["content"], "2+2?");
        assert_eq!(calls[0].body["temperature"], 0.0);
    }

    #[test]
    fn remote_retries_then_succeeds_with_observable_schedule() {
        let transport = Arc::new(StaticTransport::new());
        transport.push_ok(500, "boom");
        transport.push_ok(429, "slow down");
        transport.push_ok(200, r#"{"choices":[{"message":{"content":"ok"}}]}"#);
        let gw = Gateway::remote(RemoteLlmConfig {
            endpoint: "http://example.test".into(),
            model: "gpt-x".into(),
            timeout_secs: 1,
            retries: 3,
            backoff_base_ms: 0,
            api_key_env: "PATH".into(),
        })
        .with_transport(transport.clone());
        assert_eq!(gw.complete(&req("q")).unwrap(), "ok");
        assert_eq!(transport.call_count(), 3);
        let entries = gw.log().entries();
        // Two retry attempts, one final ok attempt, one request-level entry.
        assert_eq!(entries.len(), 4);
        assert!(entries[0].outcome.contains("http 500"));
        assert!(entries[1].outcome.contains("http 429"));
        assert!(entries[2].outcome.contains("http 200"));
        assert_eq!(entries[3].outcome, "ok");
    }

    #[test]
    fn remote_rate_limited_after_exhausted_retries() {
        let transport = Arc::new(StaticTransport::new());
        for _ in 0..3 {
            transport.push_ok(429, "slow down");
        }
        let gw = Gateway::remote(RemoteLlmConfig {
            endpoint: "http://example.test".into(),
            model: "gpt-x".into(),
            timeout_secs: 1,
            retries: 2,
            backoff_base_ms: 0,
            api_key_env: "PATH".into(),
        })
        .with_transport(transport.clone());
        assert!(matches!(
            gw.complete(&req("q")),
            Err(GatewayError::RateLimited { attempts: 3 })
        ));
        assert_eq!(transport.call_count(), 3);
    }

    #[test]
    fn scripted_gateway_performs_no_network_io() {
        let transport = Arc::new(StaticTransport::new());
        let gw = Gateway::scripted(ScriptedBehavior::new("The answer is 1."))
            .with_transport(transport.clone());
        for i in 0..50 {
            gw.complete(&req(&format!("prompt {i}"))).unwrap();
        }
        assert_eq!(transport.call_count(), 0);
        assert_eq!(gw.log().entries().len(), 50);
    }

    #[test]
    fn batch_preserves_request_order() {
        let behavior = ScriptedBehavior::new("default")
            .rule_pattern(r"prompt (\d+)", "matched")
            .unwrap();
        let gw = Gateway::scripted(behavior).with_max_in_flight(4);
        let reqs: Vec<CompletionRequest> = (0..10)
            .map(|i| CompletionRequest::new(format!("echo {i}"), "m").unwrap())
            .collect();
        let sequential: Vec<_> = reqs.iter().map(|r| gw.complete(r).unwrap()).collect();
        let batched: Vec<_> = gw
            .complete_batch(&reqs)
            .into_iter()
            .map(|r| r.unwrap())
            .collect();
        assert_eq!(sequential, batched);
    }

    #[test]
    fn batch_isolates_single_failure() {
        struct FailOn3;
        impl PromptOracle for FailOn3 {
            fn respond(&self, prompt: &str) -> Result<String, GatewayError> {
                if prompt.contains("item 3") {
                    Err(GatewayError::Transport("injected".into()))
                } else {
                    Ok(format!("echo: {prompt}"))
                }
            }
        }
        let gw = Gateway::oracle(Arc::new(FailOn3)).with_max_in_flight(2);
        let reqs: Vec<CompletionRequest> = (0..5)
            .map(|i| CompletionRequest::new(format!("item {i}"), "m").unwrap())
            .collect();
        let results = gw.complete_batch(&reqs);
        assert_eq!(results.iter().filter(|r| r.is_ok()).count(), 4);
        assert!(results[3].is_err());
    }

    #[test]
    fn batch_identical_across_caps() {
        struct Echo;
        impl PromptOracle for Echo {
            fn respond(&self, prompt: &str) -> Result<String, GatewayError> {
                Ok(format!("[{prompt}]"))
            }
        }
        let reqs: Vec<CompletionRequest> = (0..100)
            .map(|i| CompletionRequest::new(format!("r{i}"), "m").unwrap())
            .collect();
        let mut outputs = Vec::new();
        for cap in [1usize, 4, 16] {
            let gw = Gateway::oracle(Arc::new(Echo)).with_max_in_flight(cap);
            let out: Vec<String> = gw
                .complete_batch(&reqs)
                .into_iter()
                .map(|r| r.unwrap())
                .collect();
            outputs.push(out);
        }
        assert_eq!(outputs[0], outputs[1]);
        assert_eq!(outputs[1], outputs[2]);
    }

    #[test]
    fn scripted_file_roundtrip() {
        let file: ScriptedBehaviorFile = serde_json::from_str(
            r#"{"rules":[{"substring":"alpha","response":"A"},{"pattern":"b\\d+","response":"B"}],"default":"D"}"#,
        )
        .unwrap();
        let behavior = file.into_behavior().unwrap();
        let gw = Gateway::scripted(behavior);
        assert_eq!(gw.complete(&req("has alpha inside")).unwrap(), "A");
        assert_eq!(gw.complete(&req("b42!")).unwrap(), "B");
        assert_eq!(gw.complete(&req("nothing")).unwrap(), "D");
    }
}
