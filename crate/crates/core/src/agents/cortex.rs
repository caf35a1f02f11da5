use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{call_structured, cortex_view, json_object, render_history, AgentCtx, AgentError, CallRecord};
use crate::backend::AgentRole;
use crate::domain::{ActionDecision, AgentMessage, CortexOutput, DeviceState, Plan, Subgoal, SubgoalStatus, TaskGoal};
use crate::flags::AblationFlags;
use crate::metacog::MetacogReport;
use crate::scratchpad::Scratchpad;
use crate::sim::{serialize_hierarchy, DeviceController, DeviceError};

/// Reads the device; when the goal is locked to an app that is not in the
/// foreground, relaunches it first.
pub fn gather_context(device: &mut dyn DeviceController, goal: &TaskGoal) -> Result<DeviceState, DeviceError> {
    let state = device.get_state()?;
    match &goal.app_lock {
        Some(lock) if &state.focused_package != lock => {
            let r = device.launch_app(lock);
            if !r.is_ok() {
                tracing::warn!(package = %lock, detail = %r.detail, "relaunch of locked app failed");
            }
            device.get_state()
        }
        _ => Ok(state),
    }
}

pub fn render_state(state: &DeviceState) -> String {
    format!("package: {}\n{}", state.focused_package, serialize_hierarchy(&state.hierarchy).trim_end())
}

fn render_subgoal(s: Option<&Subgoal>) -> String {
    match s {
        Some(s) => format!("id: {}\ndescription: {}", s.id, s.description),
        None => "none".into(),
    }
}

/// Sections dropped from decision prompts for the given flags.
pub fn dropped_sections(flags: &AblationFlags) -> Vec<&'static str> {
    let mut drop = Vec::new();
    if !flags.hybrid_perception {
        drop.extend(["SCREENSHOT", "PERCEPTION"]);
    }
    if !flags.data_fidelity_prompt {
        drop.push("DATA FIDELITY");
    }
    if !flags.metacog {
        drop.push("METACOGNITION");
    }
    if !flags.scratchpad {
        drop.push("NOTES");
    }
    drop
}

fn action_schema() -> serde_json::Value {
    json!({
        "type": "object",
        "required": ["kind"],
        "properties": {
            "kind": { "type": "string" },
            "target": {
                "type": "object",
                "properties": {
                    "resource_id": {"type": "string"},
                    "coordinates": { "type": "object", "properties": { "x": {"type": "integer"}, "y": {"type": "integer"} } },
                    "text_match": {"type": "string"}
                }
            },
            "payload": { "type": "string" },
            "reasoning": { "type": "string" }
        }
    })
}

fn cortex_schema() -> serde_json::Value {
    json!({
        "type": "object",
        "required": ["actions", "completions"],
        "properties": {
            "actions": { "type": "array", "items": action_schema() },
            "completions": { "type": "array", "items": {"type": "string"} },
            "pivot": { "type": ["string", "null"] }
        }
    })
}

pub struct CortexInput<'a> {
    pub goal: &'a TaskGoal,
    pub plan: &'a Plan,
    pub subgoal: &'a Subgoal,
    pub next: Option<&'a Subgoal>,
    pub state: &'a DeviceState,
    pub history: &'a [AgentMessage],
    pub notes: &'a Scratchpad,
    pub report: Option<&'a MetacogReport>,
    pub flags: &'a AblationFlags,
}

fn common_values(
    goal: &TaskGoal,
    state: &DeviceState,
    history: String,
    notes: &Scratchpad,
) -> BTreeMap<&'static str, String> {
    let mut v = BTreeMap::new();
    v.insert("goal", goal.text.clone());
    v.insert("hierarchy", render_state(state));
    v.insert("screenshot_digest", state.screenshot_digest.clone());
    v.insert("history", history);
    v.insert("notes", if notes.is_empty() { "(empty)".into() } else { notes.render() });
    v
}

/// Decision step for the active subgoal. A reply that never parses
/// degrades to an empty output, which the engine counts as a stall.
pub fn decide(input: &CortexInput<'_>, ctx: &AgentCtx<'_>, records: &mut Vec<CallRecord>) -> Result<CortexOutput, AgentError> {
    if input.subgoal.status() != SubgoalStatus::InProgress {
        return Err(AgentError::Precondition(format!("subgoal {} is not in progress", input.subgoal.id)));
    }
    let fixture = ctx.prompts.get(AgentRole::Cortex)?;
    let mut values = common_values(
        input.goal,
        input.state,
        render_history(cortex_view(input.history)),
        input.notes,
    );
    values.insert("subgoal", render_subgoal(Some(input.subgoal)));
    values.insert("next_subgoal", render_subgoal(input.next));
    values.insert(
        "metacog",
        input.report.map(MetacogReport::render).unwrap_or_else(|| "cycle: none\nstagnant: false".into()),
    );
    let prompt = fixture.render(&values, &dropped_sections(input.flags), &ctx.timestamp);
    let plan = input.plan;
    let parse = |text: &str| -> Result<CortexOutput, String> {
        let out: CortexOutput = serde_json::from_value(json_object(text)?).map_err(|e| e.to_string())?;
        out.validate(plan).map_err(|e| e.to_string())?;
        Ok(out)
    };
    match call_structured(ctx, AgentRole::Cortex, prompt, cortex_schema(), parse, records) {
        Ok(out) => Ok(out),
        Err(AgentError::Malformed { reason, .. }) => {
            tracing::debug!(%reason, "decision degraded to empty output");
            Ok(CortexOutput::default())
        }
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonolithOutput {
    #[serde(default)]
    pub actions: Vec<ActionDecision>,
    #[serde(default)]
    pub done: bool,
}

/// Single combined agent used when the multi-agent split is off: one prompt
/// carries planning, deciding and execution duties and the full history.
pub fn monolith_step(
    goal: &TaskGoal,
    state: &DeviceState,
    history: &[AgentMessage],
    notes: &Scratchpad,
    flags: &AblationFlags,
    ctx: &AgentCtx<'_>,
    records: &mut Vec<CallRecord>,
) -> Result<MonolithOutput, AgentError> {
    let fixture = ctx.prompts.get(AgentRole::Monolith)?;
    let values = common_values(goal, state, render_history(history), notes);
    let prompt = fixture.render(&values, &dropped_sections(flags), &ctx.timestamp);
    let schema = json!({
        "type": "object",
        "required": ["actions", "done"],
        "properties": { "actions": { "type": "array", "items": action_schema() }, "done": {"type": "boolean"} }
    });
    let parse = |text: &str| -> Result<MonolithOutput, String> {
        let out: MonolithOutput = serde_json::from_value(json_object(text)?).map_err(|e| e.to_string())?;
        for a in &out.actions {
            a.validate().map_err(|e| e.to_string())?;
        }
        Ok(out)
    };
    match call_structured(ctx, AgentRole::Monolith, prompt, schema, parse, records) {
        Ok(o) => Ok(o),
        Err(AgentError::Malformed { .. }) => Ok(MonolithOutput::default()),
        Err(e) => Err(e),
    }
}
