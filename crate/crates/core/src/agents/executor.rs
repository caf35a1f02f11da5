use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{call_structured, json_object, AgentCtx, AgentError, CallRecord};
use crate::backend::AgentRole;
use crate::domain::{ActionDecision, ActionKind, SelectorBundle};
use crate::exec::ToolCall;

const UNKNOWN_KIND: &str = "unknown action kind ";

/// Tool-call wire shape: the tool is named by its binding, not the enum.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireCall {
    pub tool: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selector: Option<SelectorBundle>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<String>,
    #[serde(default)]
    pub reasoning: String,
}

impl WireCall {
    pub fn from_decision(d: &ActionDecision) -> Self {
        WireCall {
            tool: d.kind.tool_name().to_string(),
            selector: d.target.clone(),
            payload: d.payload.clone(),
            reasoning: d.reasoning.clone(),
        }
    }

    pub fn into_call(self) -> Result<ToolCall, String> {
        let name = ActionKind::from_tool_name(&self.tool).ok_or_else(|| format!("{UNKNOWN_KIND}{}", self.tool))?;
        Ok(ToolCall {
            name,
            selector: self.selector,
            payload: self.payload,
            reasoning: self.reasoning,
        })
    }
}

/// Translates decisions into tool calls through the backend, checking that
/// the reply maps one-to-one and in order.
pub fn execute_decision(
    actions: &[ActionDecision],
    ctx: &AgentCtx<'_>,
    records: &mut Vec<CallRecord>,
) -> Result<Vec<ToolCall>, AgentError> {
    if actions.is_empty() {
        return Err(AgentError::Precondition("no actions to execute".into()));
    }
    let fixture = ctx.prompts.get(AgentRole::Executor)?;
    let decisions = serde_json::to_string(actions).expect("serializable");
    let mut values = BTreeMap::new();
    values.insert("actions", decisions);
    let prompt = fixture.render(&values, &[], &ctx.timestamp);
    let schema = json!({
        "type": "object",
        "required": ["calls"],
        "properties": {
            "calls": {
                "type": "array",
                "items": {
                    "type": "object",
                    "required": ["tool"],
                    "properties": {
                        "tool": {"type": "string"},
                        "selector": {"type": "object"},
                        "payload": {"type": "string"},
                        "reasoning": {"type": "string"}
                    }
                }
            }
        }
    });
    let parse = |text: &str| -> Result<Vec<ToolCall>, String> {
        let v = json_object(text)?;
        let wire: Vec<WireCall> = serde_json::from_value(v.get("calls").cloned().ok_or("missing calls")?)
            .map_err(|e| e.to_string())?;
        let calls = wire.into_iter().map(WireCall::into_call).collect::<Result<Vec<_>, _>>()?;
        if calls.len() != actions.len() {
            return Err(format!("{} calls for {} actions", calls.len(), actions.len()));
        }
        for (c, a) in calls.iter().zip(actions) {
            if c.name != a.kind || c.selector != a.target || c.payload != a.payload {
                return Err(format!("call {} does not match decision {}", c.name.tool_name(), a.kind.tool_name()));
            }
        }
        Ok(calls)
    };
    call_structured(ctx, AgentRole::Executor, prompt, schema, parse, records).map_err(|e| match e {
        AgentError::Malformed { reason, .. } if reason.starts_with(UNKNOWN_KIND) => {
            AgentError::UnknownActionKind(reason[UNKNOWN_KIND.len()..].to_string())
        }
        other => other,
    })
}
