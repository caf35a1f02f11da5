//! Agents: prompt assembly over fixtures plus structured-output parsing.
//! Each agent is a plain function of its inputs and a backend.

pub mod cortex;
pub mod executor;
pub mod planner;
pub mod prompts;
pub mod utility;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{fingerprint, AgentRole, BackendError, CompletionRequest, LlmBackend, ModelAssignment, TokenUsage};
use crate::domain::{AgentMessage, MessageRole};
pub use cortex::{decide, gather_context, monolith_step, CortexInput, MonolithOutput};
pub use executor::execute_decision;
pub use planner::{apply_verdict, orchestrate, plan, OrchestratorVerdict, Rejection};
pub use prompts::{PromptFixture, PromptSet};
pub use utility::{hopper, outputter};

/// Retries after the first structured-output attempt.
pub const SCHEMA_RETRIES: u32 = 2;
pub const SUMMARY_THRESHOLD: usize = 40;
pub const SUMMARY_KEEP_RECENT: usize = 10;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("{role} output malformed after retries: {reason}")]
    Malformed { role: AgentRole, reason: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("unknown action kind {0}")]
    UnknownActionKind(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error(transparent)]
    Prompt(#[from] prompts::PromptError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum CallStatus {
    Ok,
    Rejected(String),
    Error(String),
}

/// One backend exchange, kept for tracing and prompt inspection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub role: AgentRole,
    pub fingerprint: String,
    pub prompt: String,
    pub response: Option<String>,
    pub usage: Option<TokenUsage>,
    pub status: CallStatus,
}

pub struct AgentCtx<'a> {
    pub backend: &'a dyn LlmBackend,
    pub models: &'a ModelAssignment,
    pub prompts: &'a PromptSet,
    /// Device clock at assembly time; excluded from fingerprints.
    pub timestamp: String,
    pub retries: u32,
}

impl<'a> AgentCtx<'a> {
    pub fn new(backend: &'a dyn LlmBackend, models: &'a ModelAssignment, prompts: &'a PromptSet) -> Self {
        AgentCtx {
            backend,
            models,
            prompts,
            timestamp: String::new(),
            retries: SCHEMA_RETRIES,
        }
    }

    pub fn at(&self, timestamp: impl Into<String>) -> AgentCtx<'a> {
        AgentCtx {
            backend: self.backend,
            models: self.models,
            prompts: self.prompts,
            timestamp: timestamp.into(),
            retries: self.retries,
        }
    }
}

fn with_correction(prompt: &str, attempt: u32, reason: &str) -> String {
    let (body, ts) = match prompt.rfind("TIMESTAMP: ") {
        Some(i) => prompt.split_at(i),
        None => (prompt, ""),
    };
    format!(
        "{body}### CORRECTION\nattempt {}: the previous reply was rejected ({reason}). Reply with JSON that matches the schema.\n{ts}",
        attempt + 1
    )
}

/// Calls the backend and parses the reply, retrying with a correction note
/// appended so each retry is a distinct request.
pub fn call_structured<T>(
    ctx: &AgentCtx<'_>,
    role: AgentRole,
    prompt: String,
    schema: serde_json::Value,
    parse: impl Fn(&str) -> Result<T, String>,
    records: &mut Vec<CallRecord>,
) -> Result<T, AgentError> {
    let mut reason = String::new();
    for attempt in 0..=ctx.retries {
        let p = if attempt == 0 {
            prompt.clone()
        } else {
            with_correction(&prompt, attempt, &reason)
        };
        let req = CompletionRequest {
            role,
            model: ctx.models.model_for(role).to_string(),
            prompt: p,
            output_schema: schema.clone(),
            temperature: 0.0,
        };
        let fp = fingerprint(&req.prompt);
        match ctx.backend.complete(&req) {
            Err(e) => {
                records.push(CallRecord {
                    role,
                    fingerprint: fp,
                    prompt: req.prompt,
                    response: None,
                    usage: None,
                    status: CallStatus::Error(e.to_string()),
                });
                return Err(e.into());
            }
            Ok((text, usage)) => {
                let parsed = parse(&text);
                records.push(CallRecord {
                    role,
                    fingerprint: fp,
                    prompt: req.prompt,
                    response: Some(text),
                    usage: Some(usage),
                    status: match &parsed {
                        Ok(_) => CallStatus::Ok,
                        Err(r) => CallStatus::Rejected(r.clone()),
                    },
                });
                match parsed {
                    Ok(v) => return Ok(v),
                    Err(r) => reason = r,
                }
            }
        }
    }
    Err(AgentError::Malformed { role, reason })
}

/// Drops the oldest unpinned messages until the history fits `threshold`,
/// never touching pinned messages or the last `keep_recent` entries.
pub fn summarize(history: &[AgentMessage], threshold: usize, keep_recent: usize) -> Vec<AgentMessage> {
    assert!(threshold > keep_recent && keep_recent >= 1, "threshold must exceed keep_recent >= 1");
    if history.len() <= threshold {
        return history.to_vec();
    }
    let n = history.len();
    let recent_start = n.saturating_sub(keep_recent);
    let mut excess = n - threshold;
    let mut keep = vec![true; n];
    for (i, m) in history.iter().enumerate().take(recent_start) {
        if excess == 0 {
            break;
        }
        if !m.pinned {
            keep[i] = false;
            excess -= 1;
        }
    }
    history
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(m, _)| m.clone())
        .collect()
}

/// One line per message; newlines inside content are folded.
pub fn render_history<'m>(history: impl IntoIterator<Item = &'m AgentMessage>) -> String {
    let lines: Vec<String> = history
        .into_iter()
        .map(|m| {
            format!(
                "[c{} {:?}{}] {}",
                m.cycle_index,
                m.role,
                if m.pinned { " pinned" } else { "" },
                m.content.replace('\n', " / ")
            )
        })
        .collect();
    if lines.is_empty() {
        "(none)".into()
    } else {
        lines.join("\n")
    }
}

/// History as the decision agent sees it: planner messages are withheld.
pub fn cortex_view(history: &[AgentMessage]) -> impl Iterator<Item = &AgentMessage> {
    history.iter().filter(|m| m.role != MessageRole::Planner)
}

/// Extracts the first JSON object from a reply, tolerating code fences or
/// surrounding prose.
pub fn json_object(text: &str) -> Result<serde_json::Value, String> {
    let start = text.find('{').ok_or("no JSON object in reply")?;
    let end = text.rfind('}').ok_or("no JSON object in reply")?;
    if end < start {
        return Err("no JSON object in reply".into());
    }
    serde_json::from_str(&text[start..=end]).map_err(|e| format!("invalid JSON: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn msgs(n: usize) -> Vec<AgentMessage> {
        (0..n)
            .map(|i| AgentMessage::new(MessageRole::Cortex, format!("m{i}"), i as u32))
            .collect()
    }

    #[test]
    fn summarize_examples() {
        let h = msgs(10);
        assert_eq!(summarize(&h, 40, 10), h);

        let h = msgs(45);
        let s = summarize(&h, 40, 10);
        assert_eq!(s.len(), 40);
        assert_eq!(s[30..], h[35..]);
        assert_eq!(s[0].content, "m5");

        let mut h = msgs(45);
        for m in h.iter_mut().take(3) {
            m.pinned = true;
        }
        let s = summarize(&h, 40, 10);
        assert_eq!(s.len(), 40);
        assert!(s[..3].iter().all(|m| m.pinned));
        assert_eq!(s[3].content, "m8");
    }

    #[test]
    fn summarize_all_pinned_keeps_everything() {
        let mut h = msgs(45);
        for m in h.iter_mut() {
            m.pinned = true;
        }
        assert_eq!(summarize(&h, 40, 10).len(), 45);
    }

    #[test]
    fn correction_is_inserted_before_timestamp() {
        let p = "### A\nx\nTIMESTAMP: t\n";
        let c = with_correction(p, 1, "bad");
        assert!(c.starts_with("### A\nx\n### CORRECTION\nattempt 2"));
        assert!(c.ends_with("TIMESTAMP: t\n"));
        assert_ne!(fingerprint(p), fingerprint(&c));
    }

    #[test]
    fn json_object_tolerates_fences() {
        let v = json_object("```json\n{\"a\": 1}\n```").unwrap();
        assert_eq!(v["a"], 1);
        assert!(json_object("nothing").is_err());
    }
}
