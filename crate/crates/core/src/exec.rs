//! Tool execution: the sequential tool node and checked text entry.

use serde::{Deserialize, Serialize};

use crate::domain::{ActionDecision, ActionKind, DomainError, SelectorBundle};
use crate::flags::AblationFlags;
use crate::scratchpad::Scratchpad;
use crate::metacog::state_fingerprint;
use crate::sim::{resolve_selector, ActionError, ActionResult, ActionStatus, DeviceController, SelectorTier};

/// Attempts allowed for one verified text entry.
pub const TEXT_RETRY_BUDGET: u32 = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selector: Option<SelectorBundle>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<String>,
    #[serde(default)]
    pub reasoning: String,
}

impl ToolCall {
    pub fn from_decision(d: &ActionDecision) -> Result<Self, DomainError> {
        d.validate()?;
        Ok(ToolCall {
            name: d.kind,
            selector: d.target.clone(),
            payload: d.payload.clone(),
            reasoning: d.reasoning.clone(),
        })
    }

    pub fn tap(sel: SelectorBundle) -> Self {
        ToolCall {
            name: ActionKind::Tap,
            selector: Some(sel),
            payload: None,
            reasoning: String::new(),
        }
    }

    pub fn type_text(sel: SelectorBundle, text: impl Into<String>) -> Self {
        ToolCall {
            name: ActionKind::TypeText,
            selector: Some(sel),
            payload: Some(text.into()),
            reasoning: String::new(),
        }
    }

    pub fn simple(name: ActionKind, payload: Option<&str>) -> Self {
        ToolCall {
            name,
            selector: None,
            payload: payload.map(str::to_string),
            reasoning: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationFeedback {
    pub verified: bool,
    pub expected: String,
    /// Complete field content after the last attempt.
    pub actual: String,
    /// Field content before the first attempt.
    pub prior: String,
    pub tier_used: SelectorTier,
    pub attempts: u32,
}

impl VerificationFeedback {
    pub fn describe(&self) -> String {
        if self.verified {
            format!("verified: field now reads {:?}", self.actual)
        } else {
            format!(
                "NOT verified after {} attempts: expected to end with {:?}, field reads {:?} (was {:?})",
                self.attempts, self.expected, self.actual, self.prior
            )
        }
    }
}

fn field_content(device: &mut dyn DeviceController, sel: &SelectorBundle) -> Option<String> {
    let st = device.get_state().ok()?;
    let (node, _) = resolve_selector(sel, &st.hierarchy).ok()?;
    Some(node.text.clone().unwrap_or_default())
}

/// Focus the field and move the cursor to the end. A stolen focus shows up
/// as the cursor move failing; it gets one more focus attempt.
fn focus_at_end(device: &mut dyn DeviceController, sel: &SelectorBundle) -> Result<(SelectorTier, bool), ActionError> {
    let mut tier = None;
    for _ in 0..2 {
        let r = device.focus(sel);
        match &r.status {
            ActionStatus::Failed(e) => return Err(e.clone()),
            _ => tier = r.tier,
        }
        if device.set_cursor_end(sel).is_ok() {
            return Ok((tier.unwrap_or(SelectorTier::ResourceId), true));
        }
    }
    Ok((tier.unwrap_or(SelectorTier::ResourceId), false))
}

/// Checked text entry: focus (with selector fallback), cursor to end, type,
/// read back, compare. With post-validation off the readback is skipped and
/// the entry is reported as verified.
pub fn input_text_verified(
    sel: &SelectorBundle,
    text: &str,
    device: &mut dyn DeviceController,
    post_validation: bool,
) -> Result<VerificationFeedback, ActionError> {
    if text.is_empty() {
        return Err(ActionError::InvalidCall("empty text".into()));
    }
    let prior = field_content(device, sel).ok_or_else(|| ActionError::ElementNotFound(sel.canonical()))?;

    if !post_validation {
        let (tier, _) = focus_at_end(device, sel)?;
        let _ = device.type_text(text);
        return Ok(VerificationFeedback {
            verified: true,
            expected: text.to_string(),
            actual: format!("{prior}{text}"),
            prior,
            tier_used: tier,
            attempts: 1,
        });
    }

    let mut attempts = 0;
    loop {
        attempts += 1;
        let (tier, focused) = focus_at_end(device, sel)?;
        let tier_used = tier;
        let before = field_content(device, sel).unwrap_or_default();
        if focused {
            let _ = device.type_text(text);
        }
        let actual = field_content(device, sel).unwrap_or_default();
        if focused && actual.ends_with(text) {
            return Ok(VerificationFeedback {
                verified: true,
                expected: text.to_string(),
                actual,
                prior,
                tier_used,
                attempts,
            });
        }
        // Remove only what this attempt appended.
        let appended = actual.chars().count().saturating_sub(before.chars().count());
        if focused && appended > 0 {
            let _ = device.delete_backward(appended);
        }
        if attempts >= TEXT_RETRY_BUDGET {
            let actual = field_content(device, sel).unwrap_or_default();
            return Ok(VerificationFeedback {
                verified: false,
                expected: text.to_string(),
                actual,
                prior,
                tier_used,
                attempts,
            });
        }
    }
}

/// Runs a note tool against the scratchpad.
fn run_note_tool(call: &ToolCall, notes: &mut Scratchpad, cycle: u32, seq: u64) -> ActionResult {
    let payload = call.payload.as_deref().unwrap_or("");
    match call.name {
        ActionKind::SaveNote => {
            let Some((k, v)) = payload.split_once('=') else {
                return ActionResult::failed(ActionError::InvalidCall("save_note wants key=value".into()), seq);
            };
            match notes.save_note(k.trim(), v, cycle) {
                Ok(()) => ActionResult::ok(format!("saved {}", k.trim()), seq),
                Err(e) => ActionResult::failed(ActionError::InvalidCall(e.to_string()), seq),
            }
        }
        ActionKind::ReadNote => match notes.read_note(payload.trim()) {
            Some(v) => ActionResult::ok(format!("{}={v}", payload.trim()), seq),
            None => ActionResult::ok(format!("{} absent", payload.trim()), seq),
        },
        _ => ActionResult::ok(notes.list_notes().join(","), seq),
    }
}

/// Executes one call. Text entry always goes through the checked procedure.
pub fn execute_one(
    call: &ToolCall,
    device: &mut dyn DeviceController,
    notes: &mut Scratchpad,
    flags: &AblationFlags,
    cycle: u32,
) -> ActionResult {
    let seq = device.get_state().map(|s| s.seq).unwrap_or(0);
    match call.name {
        ActionKind::SaveNote | ActionKind::ReadNote | ActionKind::ListNotes => {
            if !flags.scratchpad {
                return ActionResult::failed(ActionError::ToolUnavailable(call.name.tool_name().into()), seq);
            }
            run_note_tool(call, notes, cycle, seq)
        }
        ActionKind::StartRecording | ActionKind::StopRecording if !flags.video => {
            ActionResult::failed(ActionError::ToolUnavailable(call.name.tool_name().into()), seq)
        }
        ActionKind::TypeText => {
            let (Some(sel), Some(text)) = (&call.selector, &call.payload) else {
                return ActionResult::failed(ActionError::InvalidCall("type_text needs target and text".into()), seq);
            };
            match input_text_verified(sel, text, device, flags.post_validation) {
                Ok(fb) => {
                    let seq = device.get_state().map(|s| s.seq).unwrap_or(seq);
                    let mut r = if fb.verified {
                        ActionResult::ok(fb.describe(), seq)
                    } else {
                        ActionResult::failed(ActionError::VerificationFailed, seq)
                    };
                    r.detail = fb.describe();
                    r.tier = Some(fb.tier_used);
                    r.feedback = Some(fb);
                    r
                }
                Err(e) => {
                    let seq = device.get_state().map(|s| s.seq).unwrap_or(seq);
                    ActionResult::failed(e, seq)
                }
            }
        }
        _ => device.apply_action(call),
    }
}

/// Outcome of one call plus the screen it was issued against.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Executed {
    pub result: ActionResult,
    /// Fingerprint of the device state just before the call; `None` when
    /// the call was aborted and never reached the device.
    pub before: Option<String>,
}

/// Runs calls in order. After the first failure the rest are marked
/// aborted and never reach the device, unless sequential abort is disabled.
pub fn execute_sequential(
    calls: &[ToolCall],
    device: &mut dyn DeviceController,
    notes: &mut Scratchpad,
    flags: &AblationFlags,
    cycle: u32,
) -> Vec<Executed> {
    let mut out = Vec::with_capacity(calls.len());
    let mut failed = false;
    for call in calls {
        if failed && flags.sequential_exec {
            out.push(Executed {
                result: ActionResult::aborted(device.current_seq()),
                before: None,
            });
            continue;
        }
        let before = device.get_state().ok().map(|s| state_fingerprint(&s));
        let result = execute_one(call, device, notes, flags, cycle);
        failed |= !result.is_ok();
        out.push(Executed { result, before });
    }
    out
}

/// A tool outcome as written into the shared history, one JSON object per
/// call.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolReport {
    pub tool: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rid: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verified: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actual: Option<String>,
    #[serde(default)]
    pub subgoal: String,
}

impl ToolReport {
    pub fn new(call: &ToolCall, result: &ActionResult, subgoal: &str) -> Self {
        let status = match &result.status {
            ActionStatus::Ok => "ok".to_string(),
            ActionStatus::Aborted => "aborted".to_string(),
            ActionStatus::Failed(e) => format!("failed: {e}"),
        };
        ToolReport {
            tool: call.name.tool_name().to_string(),
            rid: call.selector.as_ref().and_then(|s| s.resource_id.clone()),
            text: call.payload.clone(),
            status,
            verified: result.feedback.as_ref().map(|f| f.verified),
            actual: result.feedback.as_ref().map(|f| f.actual.clone()),
            subgoal: subgoal.to_string(),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decision_mapping_preserves_fields() {
        let d = ActionDecision::type_text(SelectorBundle::resource_id("field_name"), "Alice").with_reasoning("enter name");
        let c = ToolCall::from_decision(&d).unwrap();
        assert_eq!(c.name, ActionKind::TypeText);
        assert_eq!(c.payload.as_deref(), Some("Alice"));
        assert_eq!(c.reasoning, "enter name");
        let bad = ActionDecision::new(ActionKind::Tap);
        assert!(ToolCall::from_decision(&bad).is_err());
    }
}
