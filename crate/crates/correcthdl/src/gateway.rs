//! Provider-agnostic chat-completion client.
//!
//! The pipeline never talks to a model directly; it renders a
//! [`PromptTemplate`], calls [`complete`] against a [`Provider`], and pulls
//! code out of the response with [`extract_fenced_code`]. The
//! [`ScriptedMock`] provider makes every agentic loop testable offline and
//! deterministically: it consumes an ordered script of
//! (expect-substring, response) records and fails loudly on any call that
//! does not match the next record.

use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("template {template_id}: missing binding for placeholder {placeholder:?}")]
    MissingBinding {
        template_id: String,
        placeholder: String,
    },
    #[error("template {template_id}: unresolved placeholder {placeholder:?} after rendering")]
    UnresolvedPlaceholder {
        template_id: String,
        placeholder: String,
    },
    #[error("provider error after {attempts} attempts: {last}")]
    Provider { attempts: u32, last: String },
    #[error("provider timed out after {0:?}")]
    Timeout(Duration),
    #[error("no code fence found in response")]
    NoFence,
    #[error("unterminated code fence in response")]
    UnterminatedFence,
    #[error("scripted mock: call {call_index} did not match next script entry (expected substring {expected:?}, prompt head {prompt_head:?})")]
    ScriptMismatch {
        call_index: usize,
        expected: String,
        prompt_head: String,
    },
    #[error("scripted mock: script exhausted at call {0}")]
    ScriptExhausted(usize),
    #[error("prompt must be non-empty")]
    EmptyPrompt,
}

/// A prompt body with `{name}` placeholders. `{{` and `}}` encode literal braces.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub template_id: String,
    pub body: String,
    pub required_bindings: Vec<String>,
}

impl PromptTemplate {
    pub fn new(id: &str, body: &str, required: &[&str]) -> Self {
        PromptTemplate {
            template_id: id.to_string(),
            body: body.to_string(),
            required_bindings: required.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Substitute every placeholder; extra bindings are ignored.
pub fn render_template(
    template: &PromptTemplate,
    bindings: &BTreeMap<String, String>,
) -> Result<String, GatewayError> {
    for name in &template.required_bindings {
        if !bindings.contains_key(name) {
            return Err(GatewayError::MissingBinding {
                template_id: template.template_id.clone(),
                placeholder: name.clone(),
            });
        }
    }
    let mut out = String::with_capacity(template.body.len());
    let mut chars = template.body.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '{' if chars.peek() == Some(&'{') => {
                chars.next();
                out.push('{');
            }
            '}' if chars.peek() == Some(&'}') => {
                chars.next();
                out.push('}');
            }
            '{' => {
                let mut name = String::new();
                let mut closed = false;
                for n in chars.by_ref() {
                    if n == '}' {
                        closed = true;
                        break;
                    }
                    name.push(n);
                }
                if !closed {
                    return Err(GatewayError::UnresolvedPlaceholder {
                        template_id: template.template_id.clone(),
                        placeholder: name,
                    });
                }
                match bindings.get(&name) {
                    Some(v) => out.push_str(v),
                    None => {
                        return Err(GatewayError::MissingBinding {
                            template_id: template.template_id.clone(),
                            placeholder: name,
                        })
                    }
                }
            }
            other => out.push(other),
        }
    }
    Ok(out)
}

/// One completed round trip through a provider.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatExchange {
    pub prompt: String,
    pub response: String,
    pub provider_id: String,
    pub latency_secs: f64,
    pub temperature: f64,
    pub transport_attempts: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProviderConfig {
    /// HTTP endpoint URL, or a mock-script path for the scripted provider.
    pub endpoint: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_retries: u32,
    pub timeout_secs: f64,
    /// Name of the environment variable holding the API key. Credentials are
    /// never stored in manifests or configs.
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    /// Token-bucket rate limit, requests per minute. 0 disables limiting.
    #[serde(default)]
    pub requests_per_minute: u32,
}

fn default_api_key_env() -> String {
    "LLM_API_KEY".to_string()
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            endpoint: "mock".to_string(),
            model_name: "mock-model".to_string(),
            temperature: 0.2,
            max_retries: 3,
            timeout_secs: 60.0,
            api_key_env: default_api_key_env(),
            requests_per_minute: 0,
        }
    }
}

/// One transport attempt against a model endpoint.
pub trait Provider: Send + Sync {
    fn id(&self) -> String;
    fn attempt(&self, prompt: &str) -> Result<String, String>;
}

/// Complete a prompt with retry on transport failure.
///
/// Total attempts never exceed `max_retries + 1`. Backoff doubles per retry
/// starting from `base_backoff` (kept configurable so tests run instantly).
pub fn complete_with_backoff(
    config: &ProviderConfig,
    provider: &dyn Provider,
    prompt: &str,
    base_backoff: Duration,
) -> Result<ChatExchange, GatewayError> {
    if prompt.is_empty() {
        return Err(GatewayError::EmptyPrompt);
    }
    let start = Instant::now();
    let mut last_err = String::new();
    let mut attempts = 0u32;
    while attempts <= config.max_retries {
        attempts += 1;
        match provider.attempt(prompt) {
            Ok(response) => {
                return Ok(ChatExchange {
                    prompt: prompt.to_string(),
                    response,
                    provider_id: provider.id(),
                    latency_secs: start.elapsed().as_secs_f64(),
                    temperature: config.temperature,
                    transport_attempts: attempts,
                });
            }
            Err(e) => {
                last_err = e;
                if attempts <= config.max_retries {
                    let backoff = base_backoff * 2u32.saturating_pow(attempts - 1);
                    std::thread::sleep(backoff);
                }
            }
        }
        if start.elapsed().as_secs_f64() > config.timeout_secs {
            return Err(GatewayError::Timeout(start.elapsed()));
        }
    }
    Err(GatewayError::Provider {
        attempts,
        last: last_err,
    })
}

pub fn complete(
    config: &ProviderConfig,
    provider: &dyn Provider,
    prompt: &str,
) -> Result<ChatExchange, GatewayError> {
    complete_with_backoff(config, provider, prompt, Duration::from_millis(200))
}

/// Extract the first triple-backtick fence, optionally filtered by info string.
///
/// Fence lines themselves are removed; interior bytes are untouched.
pub fn extract_fenced_code(
    response: &str,
    language_tag: Option<&str>,
) -> Result<String, GatewayError> {
    let mut in_fence = false;
    let mut matched = false;
    let mut body = String::new();
    for line in response.lines() {
        let trimmed = line.trim_end();
        if !in_fence {
            if let Some(info) = trimmed.strip_prefix("```") {
                in_fence = true;
                matched = match language_tag {
                    Some(tag) => info.trim() == tag,
                    None => true,
                };
                body.clear();
            }
        } else if trimmed.trim_start().starts_with("```") {
            if matched {
                return Ok(body);
            }
            in_fence = false;
        } else if matched {
            body.push_str(line);
            body.push('\n');
        }
    }
    if in_fence && matched {
        return Err(GatewayError::UnterminatedFence);
    }
    Err(GatewayError::NoFence)
}

/// Wrap code in a fence; inverse of [`extract_fenced_code`] for fence-free code.
pub fn wrap_fenced(code: &str, tag: &str) -> String {
    let body = if code.ends_with('\n') || code.is_empty() {
        code.to_string()
    } else {
        format!("{code}\n")
    };
    format!("```{tag}\n{body}```\n")
}

/// One record of a mock script: the call's prompt must contain
/// `expect_substring`, and the scripted action is played back.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub expect_substring: String,
    #[serde(flatten)]
    pub action: ScriptAction,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptAction {
    Respond { response_text: String },
    TransportFail { error_text: String },
}

impl ScriptEntry {
    pub fn respond(expect: &str, response: &str) -> Self {
        ScriptEntry {
            expect_substring: expect.to_string(),
            action: ScriptAction::Respond {
                response_text: response.to_string(),
            },
        }
    }

    pub fn fail(expect: &str, error: &str) -> Self {
        ScriptEntry {
            expect_substring: expect.to_string(),
            action: ScriptAction::TransportFail {
                error_text: error.to_string(),
            },
        }
    }
}

/// Deterministic scripted provider. Calls are serialized so script order is
/// preserved even under concurrent callers.
pub struct ScriptedMock {
    state: Mutex<MockState>,
}

struct MockState {
    script: Vec<ScriptEntry>,
    cursor: usize,
    exchanges: Vec<(String, Result<String, String>)>,
}

impl ScriptedMock {
    pub fn new(script: Vec<ScriptEntry>) -> Self {
        ScriptedMock {
            state: Mutex::new(MockState {
                script,
                cursor: 0,
                exchanges: Vec::new(),
            }),
        }
    }

    /// Load a script from its file format: line-delimited JSON records of
    /// `{expect_substring, response_text}` (or `{expect_substring, error_text}`).
    pub fn from_script_text(text: &str) -> Result<Self, serde_json::Error> {
        let mut script = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            script.push(serde_json::from_str::<ScriptEntry>(line)?);
        }
        Ok(ScriptedMock::new(script))
    }

    pub fn calls_made(&self) -> usize {
        self.state.lock().unwrap().cursor
    }

    pub fn remaining(&self) -> usize {
        let st = self.state.lock().unwrap();
        st.script.len() - st.cursor
    }

    /// Prompts seen and results returned, in call order.
    pub fn transcript(&self) -> Vec<(String, Result<String, String>)> {
        self.state.lock().unwrap().exchanges.clone()
    }
}

impl Provider for ScriptedMock {
    fn id(&self) -> String {
        "scripted-mock".to_string()
    }

    fn attempt(&self, prompt: &str) -> Result<String, String> {
        let mut st = self.state.lock().unwrap();
        let idx = st.cursor;
        let entry = match st.script.get(idx) {
            Some(e) => e.clone(),
            None => {
                let msg = GatewayError::ScriptExhausted(idx).to_string();
                st.exchanges.push((prompt.to_string(), Err(msg.clone())));
                return Err(msg);
            }
        };
        if !prompt.contains(&entry.expect_substring) {
            let msg = GatewayError::ScriptMismatch {
                call_index: idx,
                expected: entry.expect_substring.clone(),
                prompt_head: prompt.chars().take(80).collect(),
            }
            .to_string();
            st.exchanges.push((prompt.to_string(), Err(msg.clone())));
            return Err(msg);
        }
        st.cursor += 1;
        let result = match entry.action {
            ScriptAction::Respond { response_text } => Ok(response_text),
            ScriptAction::TransportFail { error_text } => Err(error_text),
        };
        st.exchanges.push((prompt.to_string(), result.clone()));
        result
    }
}

/// HTTP provider speaking the OpenAI-style chat-completion wire format.
///
/// The API key is read from the env var named in the config at call time.
pub struct HttpChatProvider {
    config: ProviderConfig,
}

impl HttpChatProvider {
    pub fn new(config: ProviderConfig) -> Self {
        HttpChatProvider { config }
    }
}

impl Provider for HttpChatProvider {
    fn id(&self) -> String {
        format!("http:{}", self.config.model_name)
    }

    fn attempt(&self, prompt: &str) -> Result<String, String> {
        let key = std::env::var(&self.config.api_key_env)
            .map_err(|_| format!("env var {} not set", self.config.api_key_env))?;
        let body = serde_json::json!({
            "model": self.config.model_name,
            "temperature": self.config.temperature,
            "messages": [{"role": "user", "content": prompt}],
        });
        let resp = ureq::post(&self.config.endpoint)
            .set("Authorization", &format!("Bearer {key}"))
            .timeout(Duration::from_secs_f64(self.config.timeout_secs))
            .send_json(body)
            .map_err(|e| format!("transport: {e}"))?;
        let parsed: serde_json::Value = resp.into_json().map_err(|e| format!("decode: {e}"))?;
        parsed["choices"][0]["message"]["content"]
            .as_str()
            .map(|s| s.to_string())
            .ok_or_else(|| "malformed chat-completion response".to_string())
    }
}

/// Token-bucket rate limiter shared by callers of one provider.
pub struct RateLimiter {
    state: Mutex<BucketState>,
    capacity: f64,
    refill_per_sec: f64,
}

struct BucketState {
    tokens: f64,
    last: Instant,
}

impl RateLimiter {
    pub fn per_minute(requests: u32) -> Self {
        let capacity = requests.max(1) as f64;
        RateLimiter {
            state: Mutex::new(BucketState {
                tokens: capacity,
                last: Instant::now(),
            }),
            capacity,
            refill_per_sec: capacity / 60.0,
        }
    }

    /// Block until a token is available, then consume it.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut st = self.state.lock().unwrap();
                let now = Instant::now();
                let dt = now.duration_since(st.last).as_secs_f64();
                st.tokens = (st.tokens + dt * self.refill_per_sec).min(self.capacity);
                st.last = now;
                if st.tokens >= 1.0 {
                    st.tokens -= 1.0;
                    return;
                }
                (1.0 - st.tokens) / self.refill_per_sec
            };
            std::thread::sleep(Duration::from_secs_f64(wait.min(0.25)));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bind(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[test]
    fn render_substitutes_placeholders() {
        let t = PromptTemplate::new("fix", "Fix: {code}", &["code"]);
        let out = render_template(&t, &bind(&[("code", "module m;")])).unwrap();
        assert_eq!(out, "Fix: module m;");
    }

    #[test]
    fn render_reports_missing_binding_by_name() {
        let t = PromptTemplate::new("repair", "{code}\n{log}", &["code", "log"]);
        let err = render_template(&t, &bind(&[("code", "x")])).unwrap_err();
        assert!(err.to_string().contains("log"), "{err}");
    }

    #[test]
    fn doubled_braces_escape_literals() {
        let t = PromptTemplate::new("esc", "a {{literal}} {x} b", &["x"]);
        let out = render_template(&t, &bind(&[("x", "X")])).unwrap();
        assert_eq!(out, "a {literal} X b");
    }

    #[test]
    fn extra_bindings_ignored() {
        let t = PromptTemplate::new("t", "{x}", &["x"]);
        let out = render_template(&t, &bind(&[("x", "1"), ("unused", "2")])).unwrap();
        assert_eq!(out, "1");
    }

    #[test]
    fn scripted_single_response() {
        let mock = ScriptedMock::new(vec![ScriptEntry::respond("", "A")]);
        let cfg = ProviderConfig::default();
        let ex = complete_with_backoff(&cfg, &mock, "hello", Duration::ZERO).unwrap();
        assert_eq!(ex.response, "A");
        assert!(ex.latency_secs >= 0.0);
    }

    #[test]
    fn retries_until_scripted_success() {
        let mock = ScriptedMock::new(vec![
            ScriptEntry::fail("", "boom1"),
            ScriptEntry::fail("", "boom2"),
            ScriptEntry::respond("", "B"),
        ]);
        let mut cfg = ProviderConfig::default();
        cfg.max_retries = 3;
        let ex = complete_with_backoff(&cfg, &mock, "go", Duration::ZERO).unwrap();
        assert_eq!(ex.response, "B");
        assert_eq!(ex.transport_attempts, 3);
    }

    #[test]
    fn retries_exhausted_is_provider_error() {
        let mock = ScriptedMock::new(vec![
            ScriptEntry::fail("", "boom"),
            ScriptEntry::fail("", "boom"),
            ScriptEntry::fail("", "boom"),
        ]);
        let mut cfg = ProviderConfig::default();
        cfg.max_retries = 1;
        let err = complete_with_backoff(&cfg, &mock, "go", Duration::ZERO).unwrap_err();
        match err {
            GatewayError::Provider { attempts, .. } => assert_eq!(attempts, 2),
            other => panic!("wrong error: {other}"),
        }
        assert_eq!(mock.calls_made(), 2);
    }

    #[test]
    fn mock_is_deterministic_for_same_script() {
        let script = vec![
            ScriptEntry::respond("one", "first"),
            ScriptEntry::respond("two", "second"),
        ];
        let run = |script: Vec<ScriptEntry>| {
            let mock = ScriptedMock::new(script);
            let cfg = ProviderConfig::default();
            let a = complete_with_backoff(&cfg, &mock, "call one", Duration::ZERO).unwrap();
            let b = complete_with_backoff(&cfg, &mock, "call two", Duration::ZERO).unwrap();
            (a.response, b.response)
        };
        assert_eq!(run(script.clone()), run(script));
    }

    #[test]
    fn mock_mismatch_is_error() {
        let mock = ScriptedMock::new(vec![ScriptEntry::respond("expected-token", "X")]);
        let mut cfg = ProviderConfig::default();
        cfg.max_retries = 0;
        let err = complete_with_backoff(&cfg, &mock, "other", Duration::ZERO).unwrap_err();
        assert!(err.to_string().contains("did not match"));
    }

    #[test]
    fn extract_first_matching_fence() {
        let resp = "x\n```verilog\nmodule m; endmodule\n```\ny";
        let code = extract_fenced_code(resp, Some("verilog")).unwrap();
        assert_eq!(code, "module m; endmodule\n");
    }

    #[test]
    fn extract_first_fence_when_tag_absent() {
        let resp = "```\nfirst\n```\n```\nsecond\n```\n";
        assert_eq!(extract_fenced_code(resp, None).unwrap(), "first\n");
    }

    #[test]
    fn extract_skips_nonmatching_tags() {
        let resp = "```c\nint x;\n```\n```verilog\nwire w;\n```\n";
        assert_eq!(
            extract_fenced_code(resp, Some("verilog")).unwrap(),
            "wire w;\n"
        );
    }

    #[test]
    fn no_fence_is_error() {
        assert!(matches!(
            extract_fenced_code("no code here", None),
            Err(GatewayError::NoFence)
        ));
    }

    #[test]
    fn unterminated_fence_is_error() {
        assert!(matches!(
            extract_fenced_code("```verilog\nmodule m;", Some("verilog")),
            Err(GatewayError::UnterminatedFence)
        ));
    }

    #[test]
    fn extraction_inverts_wrapping() {
        let code = "module m(input a, output y);\n  assign y = ~a;\nendmodule\n";
        assert_eq!(
            extract_fenced_code(&wrap_fenced(code, "verilog"), Some("verilog")).unwrap(),
            code
        );
    }

    #[test]
    fn script_file_format_round_trip() {
        let text = concat!(
            r#"{"expect_substring":"a","respond":{"response_text":"A"}}"#,
            "\n",
        );
        // the flattened enum serializes as {"expect_substring":..., "respond":{...}}
        let entry = ScriptEntry::respond("a", "A");
        let line = serde_json::to_string(&entry).unwrap();
        let back: ScriptEntry = serde_json::from_str(&line).unwrap();
        assert_eq!(back.expect_substring, "a");
        let _ = text; // documented shape above
        let mock = ScriptedMock::from_script_text(&line).unwrap();
        assert_eq!(mock.remaining(), 1);
    }
}
