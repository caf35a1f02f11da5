use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{AgentRole, BackendError, CompletionRequest, LlmBackend, TokenUsage};

pub const URL_ENV: &str = "AGENTLOOM_LLM_URL";
pub const KEY_ENV: &str = "AGENTLOOM_LLM_KEY";

#[derive(Debug, Clone)]
pub struct LiveConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_in_flight: usize,
    pub timeout: Duration,
}

impl LiveConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        LiveConfig {
            base_url: base_url.into(),
            api_key: None,
            max_attempts: 3,
            base_delay: Duration::from_millis(250),
            max_in_flight: 4,
            timeout: Duration::from_secs(60),
        }
    }

    pub fn from_env() -> Result<Self, BackendError> {
        let url = std::env::var(URL_ENV).map_err(|_| BackendError::Config(format!("{URL_ENV} is not set")))?;
        let mut cfg = LiveConfig::new(url);
        cfg.api_key = std::env::var(KEY_ENV).ok().filter(|k| !k.is_empty());
        Ok(cfg)
    }
}

struct Gate {
    slots: Mutex<usize>,
    freed: Condvar,
}

impl Gate {
    fn acquire(&self) -> GateGuard<'_> {
        let mut n = self.slots.lock().unwrap_or_else(|p| p.into_inner());
        while *n == 0 {
            n = self.freed.wait(n).unwrap_or_else(|p| p.into_inner());
        }
        *n -= 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.slots.lock().unwrap_or_else(|p| p.into_inner()) += 1;
        self.0.freed.notify_one();
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
    #[serde(default)]
    model: Option<String>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

/// Chat-completion client speaking the common JSON shape with a
/// `json_schema` response format.
pub struct LiveBackend {
    cfg: LiveConfig,
    client: reqwest::blocking::Client,
    gate: Gate,
}

impl LiveBackend {
    pub fn new(cfg: LiveConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(LiveBackend {
            gate: Gate {
                slots: Mutex::new(cfg.max_in_flight.max(1)),
                freed: Condvar::new(),
            },
            cfg,
            client,
        })
    }

    fn body(req: &CompletionRequest) -> serde_json::Value {
        json!({
            "model": req.model,
            "temperature": req.temperature,
            "messages": [{ "role": "user", "content": req.prompt }],
            "response_format": {
                "type": "json_schema",
                "json_schema": { "name": schema_name(req.role), "schema": req.output_schema, "strict": true }
            }
        })
    }

    fn attempt(&self, req: &CompletionRequest) -> Result<(String, TokenUsage), BackendError> {
        let url = format!("{}/chat/completions", self.cfg.base_url.trim_end_matches('/'));
        let mut rb = self.client.post(url).json(&Self::body(req));
        if let Some(key) = &self.cfg.api_key {
            rb = rb.bearer_auth(key);
        }
        let resp = rb.send().map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 429 {
            return Err(BackendError::RateLimited);
        }
        let text = resp.text().map_err(|e| BackendError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(BackendError::Status {
                status: status.as_u16(),
                body: text,
            });
        }
        let parsed: ChatResponse = serde_json::from_str(&text).map_err(|e| BackendError::BadResponse(e.to_string()))?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendError::BadResponse("no message content".into()))?;
        let usage = parsed.usage.map(|u| (u.prompt_tokens, u.completion_tokens)).unwrap_or((0, 0));
        Ok((
            content,
            TokenUsage {
                input_tokens: usage.0,
                output_tokens: usage.1,
                model_name: parsed.model.unwrap_or_else(|| req.model.clone()),
            },
        ))
    }
}

fn schema_name(role: AgentRole) -> String {
    format!("{role}_output")
}

fn retryable(e: &BackendError) -> bool {
    match e {
        BackendError::Transport(_) | BackendError::RateLimited => true,
        BackendError::Status { status, .. } => *status >= 500,
        _ => false,
    }
}

impl LlmBackend for LiveBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<(String, TokenUsage), BackendError> {
        let _slot = self.gate.acquire();
        let mut last = None;
        for attempt in 0..self.cfg.max_attempts.max(1) {
            if attempt > 0 {
                std::thread::sleep(self.cfg.base_delay * 2u32.pow(attempt - 1));
            }
            match self.attempt(req) {
                Ok(r) => return Ok(r),
                Err(e) if retryable(&e) => {
                    tracing::warn!(attempt, error = %e, "completion attempt failed");
                    last = Some(e);
                }
                Err(e) => return Err(e),
            }
        }
        Err(last.unwrap_or(BackendError::Transport("no attempts".into())))
    }

    fn label(&self) -> String {
        "live".into()
    }
}
