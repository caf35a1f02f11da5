//! Completion backends: scripted replay, recorder, the deterministic
//! oracle policy and a live chat-completion client.

pub mod live;
pub mod oracle;
pub mod scripted;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use live::{LiveBackend, LiveConfig};
pub use oracle::OracleBackend;
pub use scripted::{Recorder, ScriptBook, ScriptedBackend};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    Planner,
    Orchestrator,
    Contextor,
    Cortex,
    Executor,
    Outputter,
    Hopper,
    /// Single combined agent used when the multi-agent split is disabled.
    Monolith,
}

impl AgentRole {
    pub const ALL: [AgentRole; 8] = [
        AgentRole::Planner,
        AgentRole::Orchestrator,
        AgentRole::Contextor,
        AgentRole::Cortex,
        AgentRole::Executor,
        AgentRole::Outputter,
        AgentRole::Hopper,
        AgentRole::Monolith,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AgentRole::Planner => "planner",
            AgentRole::Orchestrator => "orchestrator",
            AgentRole::Contextor => "contextor",
            AgentRole::Cortex => "cortex",
            AgentRole::Executor => "executor",
            AgentRole::Outputter => "outputter",
            AgentRole::Hopper => "hopper",
            AgentRole::Monolith => "monolith",
        }
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AgentRole {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AgentRole::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| format!("unknown role {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub role: AgentRole,
    pub model: String,
    pub prompt: String,
    pub output_schema: serde_json::Value,
    #[serde(default)]
    pub temperature: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub model_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("no script entry for {role} fingerprint {fingerprint}")]
    MissingScriptEntry { role: AgentRole, fingerprint: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("rate limited")]
    RateLimited,
    #[error("provider returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("bad provider response: {0}")]
    BadResponse(String),
    #[error("backend misconfigured: {0}")]
    Config(String),
}

pub trait LlmBackend: Send + Sync {
    fn complete(&self, req: &CompletionRequest) -> Result<(String, TokenUsage), BackendError>;

    /// Short label used in trace headers.
    fn label(&self) -> String;
}

impl<B: LlmBackend + ?Sized> LlmBackend for &B {
    fn complete(&self, req: &CompletionRequest) -> Result<(String, TokenUsage), BackendError> {
        (**self).complete(req)
    }

    fn label(&self) -> String {
        (**self).label()
    }
}

impl<B: LlmBackend + ?Sized> LlmBackend for Box<B> {
    fn complete(&self, req: &CompletionRequest) -> Result<(String, TokenUsage), BackendError> {
        (**self).complete(req)
    }

    fn label(&self) -> String {
        (**self).label()
    }
}

/// Prompt fingerprint: the `TIMESTAMP:` line is dropped and whitespace runs
/// collapse to one space before hashing.
pub fn fingerprint(prompt: &str) -> String {
    let normalized = prompt
        .lines()
        .filter(|l| !l.trim_start().starts_with("TIMESTAMP:"))
        .flat_map(str::split_whitespace)
        .collect::<Vec<_>>()
        .join(" ");
    let digest = Sha256::digest(normalized.as_bytes());
    hex::encode(&digest[..16])
}

/// Token estimate used by offline backends.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

pub fn estimated_usage(prompt: &str, response: &str, model: &str) -> TokenUsage {
    TokenUsage {
        input_tokens: estimate_tokens(prompt),
        output_tokens: estimate_tokens(response),
        model_name: model.to_string(),
    }
}

/// Which model serves each agent role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelAssignment {
    pub name: String,
    pub roles: BTreeMap<AgentRole, String>,
}

impl Default for ModelAssignment {
    fn default() -> Self {
        Self::platform_default()
    }
}

impl ModelAssignment {
    pub fn platform_default() -> Self {
        let roles = [
            (AgentRole::Cortex, "Gemini 3 Pro"),
            (AgentRole::Planner, "Llama 4 Scout"),
            (AgentRole::Executor, "Llama 3.1 70B"),
            (AgentRole::Orchestrator, "GPT-OSS 120B"),
            (AgentRole::Contextor, "Llama 3.1 8B"),
            (AgentRole::Hopper, "GPT-5 Nano"),
            (AgentRole::Outputter, "GPT-5 Nano"),
            (AgentRole::Monolith, "Gemini 3 Pro"),
        ];
        ModelAssignment {
            name: "Platform Default".into(),
            roles: roles.into_iter().map(|(r, m)| (r, m.to_string())).collect(),
        }
    }

    pub fn model_for(&self, role: AgentRole) -> &str {
        self.roles
            .get(&role)
            .or_else(|| self.roles.get(&AgentRole::Cortex))
            .map(String::as_str)
            .unwrap_or("unknown")
    }
}
