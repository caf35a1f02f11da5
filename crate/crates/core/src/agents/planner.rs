use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{call_structured, json_object, render_history, AgentCtx, AgentError, CallRecord};
use crate::backend::AgentRole;
use crate::domain::{AgentMessage, LifecycleEvent, MessageRole, Plan, Subgoal, SubgoalStatus, TaskGoal};

#[derive(Debug, Deserialize)]
struct PlanWire {
    subgoals: Vec<SubgoalWire>,
}

#[derive(Debug, Deserialize)]
struct SubgoalWire {
    id: String,
    description: String,
}

fn plan_schema() -> serde_json::Value {
    json!({
        "type": "object",
        "required": ["subgoals"],
        "properties": {
            "subgoals": {
                "type": "array",
                "minItems": 1,
                "items": {
                    "type": "object",
                    "required": ["id", "description"],
                    "properties": { "id": {"type": "string"}, "description": {"type": "string"} }
                }
            }
        }
    })
}

/// Decomposes the goal into subgoals. On a replan, `completed` holds the
/// subgoals the engine keeps; the result is only the new remainder.
pub fn plan(
    goal: &TaskGoal,
    failure_context: Option<&str>,
    completed: &[Subgoal],
    revision: u32,
    ctx: &AgentCtx<'_>,
    records: &mut Vec<CallRecord>,
) -> Result<Vec<Subgoal>, AgentError> {
    goal.validate().map_err(|e| AgentError::Precondition(e.to_string()))?;
    let fixture = ctx.prompts.get(AgentRole::Planner)?;
    let completed_text = if completed.is_empty() {
        "(none)".to_string()
    } else {
        completed
            .iter()
            .map(|s| format!("{}: {}", s.id, s.description))
            .collect::<Vec<_>>()
            .join("\n")
    };
    let mut values = BTreeMap::new();
    values.insert("goal", goal.text.clone());
    values.insert("revision", revision.to_string());
    values.insert("completed", completed_text);
    values.insert("failure", failure_context.unwrap_or("(none)").to_string());
    let drop: &[&str] = if failure_context.is_none() { &["FAILURE"] } else { &[] };
    let prompt = fixture.render(&values, drop, &ctx.timestamp);

    let taken: BTreeSet<&str> = completed.iter().map(|s| s.id.as_str()).collect();
    let parse = |text: &str| -> Result<Vec<Subgoal>, String> {
        let v = json_object(text)?;
        let wire: PlanWire = serde_json::from_value(v).map_err(|e| e.to_string())?;
        if wire.subgoals.is_empty() {
            return Err("plan has no subgoals".into());
        }
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for s in wire.subgoals {
            if s.id.trim().is_empty() || s.description.trim().is_empty() {
                return Err("subgoal with empty id or description".into());
            }
            if taken.contains(s.id.as_str()) || !seen.insert(s.id.clone()) {
                return Err(format!("duplicate subgoal id {}", s.id));
            }
            out.push(Subgoal::new(s.id, s.description));
        }
        Ok(out)
    };
    call_structured(ctx, AgentRole::Planner, prompt, plan_schema(), parse, records).map_err(|e| match e {
        AgentError::Malformed { reason, .. } => AgentError::Malformed {
            role: AgentRole::Planner,
            reason: format!("MalformedPlan: {reason}"),
        },
        other => other,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrchestratorVerdict {
    #[serde(default)]
    pub confirmed: BTreeSet<String>,
    #[serde(default)]
    pub rejected: Vec<Rejection>,
    #[serde(default)]
    pub advance_to: Option<String>,
}

fn verdict_schema() -> serde_json::Value {
    json!({
        "type": "object",
        "required": ["confirmed", "rejected"],
        "properties": {
            "confirmed": { "type": "array", "items": {"type": "string"} },
            "rejected": {
                "type": "array",
                "items": {
                    "type": "object",
                    "required": ["id", "reason"],
                    "properties": { "id": {"type": "string"}, "reason": {"type": "string"} }
                }
            },
            "advance_to": { "type": ["string", "null"] }
        }
    })
}

pub fn render_plan(plan: &Plan) -> String {
    plan.subgoals
        .iter()
        .map(|s| format!("{} [{:?}] {}", s.id, s.status(), s.description))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Reviews completion claims. An empty claim set is a no-op review and does
/// not call the backend.
pub fn orchestrate(
    plan: &Plan,
    completions: &BTreeSet<String>,
    history: &[AgentMessage],
    ctx: &AgentCtx<'_>,
    records: &mut Vec<CallRecord>,
) -> Result<OrchestratorVerdict, AgentError> {
    if let Some(bad) = completions.iter().find(|c| !plan.contains(c)) {
        return Err(AgentError::Precondition(format!("completion {bad} not in plan")));
    }
    if completions.is_empty() {
        return Ok(OrchestratorVerdict::default());
    }
    let fixture = ctx.prompts.get(AgentRole::Orchestrator)?;
    let mut values = BTreeMap::new();
    values.insert("plan", render_plan(plan));
    values.insert("claims", completions.iter().cloned().collect::<Vec<_>>().join(","));
    values.insert("history", render_history(history.iter().rev().take(12).rev()));
    let prompt = fixture.render(&values, &[], &ctx.timestamp);
    let parse = |text: &str| -> Result<OrchestratorVerdict, String> {
        let v: OrchestratorVerdict = serde_json::from_value(json_object(text)?).map_err(|e| e.to_string())?;
        if v.rejected.iter().any(|r| v.confirmed.contains(&r.id)) {
            return Err("subgoal both confirmed and rejected".into());
        }
        if let Some(x) = v
            .confirmed
            .iter()
            .chain(v.rejected.iter().map(|r| &r.id))
            .find(|id| !completions.contains(*id))
        {
            return Err(format!("verdict on unclaimed subgoal {x}"));
        }
        if let Some(a) = &v.advance_to {
            if !plan.contains(a) {
                return Err(format!("advance_to unknown subgoal {a}"));
            }
        }
        Ok(v)
    };
    call_structured(ctx, AgentRole::Orchestrator, prompt, verdict_schema(), parse, records)
}

/// Applies a verdict to the plan through lifecycle transitions, then starts
/// the next pending subgoal when nothing is active.
pub fn apply_verdict(plan: &mut Plan, verdict: &OrchestratorVerdict, cycle: u32) -> Vec<AgentMessage> {
    let mut notes = Vec::new();
    for id in &verdict.confirmed {
        let status = plan.get(id).map(Subgoal::status);
        // A claim on a pending subgoal (work done ahead of time) is started
        // first so the transition stays legal.
        if status == Some(SubgoalStatus::Pending) && plan.active().is_none() {
            let _ = plan.transition(id, LifecycleEvent::Start);
        }
        match plan.transition(id, LifecycleEvent::ConfirmComplete) {
            Ok(_) => notes.push(AgentMessage::new(MessageRole::Orchestrator, format!("confirmed {id}"), cycle)),
            Err(e) => notes.push(AgentMessage::new(
                MessageRole::Orchestrator,
                format!("could not confirm {id}: {e}"),
                cycle,
            )),
        }
    }
    for r in &verdict.rejected {
        notes.push(AgentMessage::new(
            MessageRole::Orchestrator,
            format!("rejected completion of {}: {}", r.id, r.reason),
            cycle,
        ));
    }
    if plan.active().is_none() && !plan.any_failed() {
        let target = verdict
            .advance_to
            .clone()
            .filter(|a| plan.get(a).is_some_and(|s| s.status() == SubgoalStatus::Pending));
        let started = match target {
            Some(a) => plan.transition(&a, LifecycleEvent::Start).ok().map(|_| a),
            None => plan.start_next(),
        };
        if let Some(id) = started {
            notes.push(AgentMessage::new(MessageRole::Orchestrator, format!("advanced to {id}"), cycle));
        }
    }
    notes
}
