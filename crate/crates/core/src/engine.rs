//! The decision loop. Init runs the Planner and a first Orchestrator pass;
//! each cycle then reads the device, asks the Cortex for a decision, runs
//! the Orchestrator and Executor branches side by side, trims history,
//! waits on the barrier and routes.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    self, apply_verdict, decide, execute_decision, gather_context, monolith_step, orchestrate, outputter, AgentCtx,
    AgentError, CallRecord, CortexInput, OrchestratorVerdict, SUMMARY_KEEP_RECENT, SUMMARY_THRESHOLD,
};
use crate::backend::{BackendError, TokenUsage};
use crate::domain::{
    ActionDecision, AgentMessage, CortexOutput, DeviceState, DomainError, LifecycleEvent, MessageRole, Plan, Subgoal,
    TaskGoal,
};
use crate::exec::{execute_sequential, Executed, ToolCall, ToolReport};
use crate::flags::AblationFlags;
use crate::metacog::{action_fingerprint, evaluate, HistoryEntry, MetacogReport, DEFAULT_STAGNATION, DEFAULT_WINDOW};
use crate::scratchpad::Scratchpad;
use crate::sim::{DeviceController, DeviceError, FaultProfile};
use crate::trace::{NodeEvent, Trace};

/// Consecutive empty decisions before the active subgoal is failed.
pub const STALL_THRESHOLD: u32 = 3;
/// Pinned messages beyond this count are stored unpinned, so the
/// summarizer can always get back under its threshold.
pub const PINNED_CAP: usize = SUMMARY_THRESHOLD - SUMMARY_KEEP_RECENT;
const MONOLITH_SUBGOAL: &str = "task";

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub flags: AblationFlags,
    pub fault: FaultProfile,
    pub run_id: String,
    pub stall_threshold: u32,
    pub summary_threshold: usize,
    pub keep_recent: usize,
    pub metacog_window: usize,
    pub stagnation: usize,
}

impl EngineConfig {
    pub fn new(flags: AblationFlags) -> Self {
        EngineConfig {
            flags,
            fault: FaultProfile::default(),
            run_id: "run".into(),
            stall_threshold: STALL_THRESHOLD,
            summary_threshold: SUMMARY_THRESHOLD,
            keep_recent: SUMMARY_KEEP_RECENT,
            metacog_window: DEFAULT_WINDOW,
            stagnation: DEFAULT_STAGNATION,
        }
    }

    pub fn with_run_id(mut self, id: impl Into<String>) -> Self {
        self.run_id = id.into();
        self
    }

    pub fn with_fault(mut self, fault: FaultProfile) -> Self {
        self.fault = fault;
        self
    }
}

#[derive(Debug, Clone)]
pub struct RunState {
    pub goal: TaskGoal,
    pub plan: Plan,
    pub history: Vec<AgentMessage>,
    pub last_device_state: Option<DeviceState>,
    pub cycle_index: u32,
    pub stall_count: u32,
    pub ablation: AblationFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RouteDecision {
    Continue,
    Replan,
    Terminate { success: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Branch {
    Orchestrator,
    Executor,
    Stall,
}

pub type BranchSet = BTreeSet<Branch>;

pub fn branch_after_cortex(out: &CortexOutput) -> BranchSet {
    let mut set = BranchSet::new();
    if !out.completions.is_empty() {
        set.insert(Branch::Orchestrator);
    }
    if !out.actions.is_empty() {
        set.insert(Branch::Executor);
    }
    if set.is_empty() {
        set.insert(Branch::Stall);
    }
    set
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BranchOutcome {
    OrchestratorDone,
    ExecutorDone,
    /// Some calls were aborted after a failure; a normal result.
    ExecutorAborted,
    Stalled,
    Panicked(String),
}

/// The barrier. Called once every launched branch has reported; it only
/// checks that none ended abnormally.
pub fn converge(results: &[BranchOutcome]) -> Result<(), RunErrorKind> {
    match results.iter().find_map(|r| match r {
        BranchOutcome::Panicked(m) => Some(m.clone()),
        _ => None,
    }) {
        Some(m) => Err(RunErrorKind::BranchPanic(m)),
        None => Ok(()),
    }
}

pub fn route_after_convergence(plan: &mut Plan, stall_count: u32, stall_threshold: u32, budget_left: u32) -> RouteDecision {
    if plan.any_failed() {
        return RouteDecision::Replan;
    }
    if plan.all_completed() {
        return RouteDecision::Terminate { success: true };
    }
    if budget_left == 0 {
        return RouteDecision::Terminate { success: false };
    }
    if stall_count >= stall_threshold {
        if let Some(id) = plan.active().map(|s| s.id.clone()) {
            let _ = plan.transition(&id, LifecycleEvent::MarkFailed);
        }
        return RouteDecision::Replan;
    }
    RouteDecision::Continue
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Completed,
    BudgetExhausted,
    Error(String),
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub outcome: Outcome,
    pub cycles_used: u32,
    pub replans: u32,
    pub trace: Trace,
    pub calls: Vec<CallRecord>,
    pub output: Option<serde_json::Value>,
    pub final_state: Option<DeviceState>,
    pub plan: Plan,
    pub history: Vec<AgentMessage>,
    pub notes: Scratchpad,
    pub entries: Vec<HistoryEntry>,
}

impl RunResult {
    pub fn usages(&self) -> impl Iterator<Item = &TokenUsage> {
        self.trace.usages()
    }
}

#[derive(Debug, Error)]
pub enum RunErrorKind {
    #[error("step budget exhausted")]
    BudgetExhausted,
    #[error(transparent)]
    Backend(BackendError),
    #[error(transparent)]
    Agent(AgentError),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error("branch ended abnormally: {0}")]
    BranchPanic(String),
    #[error(transparent)]
    Plan(#[from] DomainError),
}

impl From<AgentError> for RunErrorKind {
    fn from(e: AgentError) -> Self {
        match e {
            AgentError::Backend(b) => RunErrorKind::Backend(b),
            other => RunErrorKind::Agent(other),
        }
    }
}

/// A failed run keeps everything recorded up to the failure.
#[derive(Debug, Error)]
#[error("{kind}")]
pub struct RunError {
    pub kind: RunErrorKind,
    pub partial: Box<RunResult>,
}

/// Sums the usage of one node's backend calls. A node talks to one model.
fn usage_of(records: &[CallRecord]) -> (Option<TokenUsage>, Vec<String>) {
    let mut total: Option<TokenUsage> = None;
    for u in records.iter().filter_map(|r| r.usage.as_ref()) {
        let t = total.get_or_insert_with(|| TokenUsage {
            model_name: u.model_name.clone(),
            ..TokenUsage::default()
        });
        t.input_tokens += u.input_tokens;
        t.output_tokens += u.output_tokens;
    }
    (total, records.iter().map(|r| r.fingerprint.clone()).collect())
}

fn node(name: &'static str, records: &[CallRecord], output: &str, status: impl Into<String>) -> NodeEvent {
    let input = records.first().map(|r| r.prompt.as_str()).unwrap_or("");
    let (usage, calls) = usage_of(records);
    NodeEvent::new(name, input, output, status).with_usage(usage, calls)
}

fn describe_actions(actions: &[ActionDecision]) -> String {
    let parts: Vec<String> = actions
        .iter()
        .map(|a| {
            let target = a.target.as_ref().map(|t| t.canonical()).unwrap_or_default();
            match &a.payload {
                Some(p) => format!("{} {target} {p:?}", a.kind.tool_name()),
                None => format!("{} {target}", a.kind.tool_name()),
            }
        })
        .collect();
    parts.join("; ")
}

struct OrchestratorBranch {
    messages: Vec<AgentMessage>,
    event: NodeEvent,
    records: Vec<CallRecord>,
}

fn orchestrator_branch(
    plan: &mut Plan,
    completions: &BTreeSet<String>,
    history: &[AgentMessage],
    ctx: &AgentCtx<'_>,
    cycle: u32,
) -> Result<OrchestratorBranch, AgentError> {
    let mut records = Vec::new();
    let verdict = orchestrate(plan, completions, history, ctx, &mut records)?;
    let messages = apply_verdict(plan, &verdict, cycle);
    let out = serde_json::to_string(&verdict).expect("serializable");
    let status = format!("confirmed={} rejected={}", verdict.confirmed.len(), verdict.rejected.len());
    Ok(OrchestratorBranch {
        messages,
        event: node("orchestrator", &records, &out, status),
        records,
    })
}

struct ExecutorBranch {
    calls: Vec<ToolCall>,
    executed: Vec<Executed>,
    events: Vec<NodeEvent>,
    records: Vec<CallRecord>,
}

fn tools_event(calls: &[ToolCall], executed: &[Executed], seq: u64) -> NodeEvent {
    let aborted = executed.iter().filter(|e| e.result.is_aborted()).count();
    let failed = executed.iter().filter(|e| !e.result.is_ok() && !e.result.is_aborted()).count();
    let status = match (failed, aborted) {
        (0, 0) => "ok".to_string(),
        (f, a) => format!("failed={f} aborted={a}"),
    };
    let input = serde_json::to_string(calls).expect("serializable");
    let output: Vec<String> = executed.iter().map(|e| format!("{:?}|{}", e.result.status, e.result.seq)).collect();
    NodeEvent::new("tools", &input, &output.join(","), status).with_seq(seq)
}

fn executor_branch(
    actions: &[ActionDecision],
    device: &mut dyn DeviceController,
    notes: &mut Scratchpad,
    flags: &AblationFlags,
    ctx: &AgentCtx<'_>,
    cycle: u32,
) -> Result<ExecutorBranch, AgentError> {
    let mut records = Vec::new();
    let calls = execute_decision(actions, ctx, &mut records)?;
    let out = serde_json::to_string(&calls).expect("serializable");
    let mut events = vec![node("executor", &records, &out, format!("calls={}", calls.len()))];
    let executed = execute_sequential(&calls, device, notes, flags, cycle);
    let seq = device.current_seq();
    events.push(tools_event(&calls, &executed, seq));
    Ok(ExecutorBranch {
        calls,
        executed,
        events,
        records,
    })
}

fn panic_text(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "panic".into())
}

struct Runner<'r, 'c> {
    ctx: &'r AgentCtx<'c>,
    cfg: &'r EngineConfig,
    device: &'r mut dyn DeviceController,
    state: RunState,
    trace: Trace,
    calls: Vec<CallRecord>,
    notes: Scratchpad,
    entries: Vec<HistoryEntry>,
    replans: u32,
    output: Option<serde_json::Value>,
}

impl<'r, 'c> Runner<'r, 'c> {
    fn result(&mut self, outcome: Outcome) -> RunResult {
        RunResult {
            outcome,
            cycles_used: self.state.cycle_index,
            replans: self.replans,
            trace: self.trace.clone(),
            calls: std::mem::take(&mut self.calls),
            output: self.output.take(),
            final_state: self.device.get_state().ok(),
            plan: self.state.plan.clone(),
            history: self.state.history.clone(),
            notes: self.notes.clone(),
            entries: self.entries.clone(),
        }
    }

    fn fail(&mut self, kind: RunErrorKind) -> RunError {
        let outcome = match kind {
            RunErrorKind::BudgetExhausted => Outcome::BudgetExhausted,
            ref other => Outcome::Error(other.to_string()),
        };
        RunError {
            partial: Box::new(self.result(outcome)),
            kind,
        }
    }

    fn push_pinned(&mut self, content: String, cycle: u32) {
        let pinned = self.state.history.iter().filter(|m| m.pinned).count();
        let msg = AgentMessage::new(MessageRole::Cortex, content, cycle);
        self.state
            .history
            .push(if pinned < PINNED_CAP { msg.pinned() } else { msg });
    }

    /// Tool outcomes go into history as one JSON line per batch, and into
    /// the loop-analysis entries with the screen each call was issued on.
    fn record_execution(
        &mut self,
        actions: &[ActionDecision],
        calls: &[ToolCall],
        executed: &[Executed],
        subgoal: &str,
        cycle: u32,
    ) {
        let reports: Vec<ToolReport> = calls
            .iter()
            .zip(executed)
            .map(|(c, e)| ToolReport::new(c, &e.result, subgoal))
            .collect();
        self.state.history.push(AgentMessage::new(
            MessageRole::Tool,
            serde_json::to_string(&reports).expect("serializable"),
            cycle,
        ));
        for (a, e) in actions.iter().zip(executed) {
            if let Some(before) = &e.before {
                self.entries.push(HistoryEntry {
                    cycle_index: cycle,
                    state_fingerprint: before.clone(),
                    action_fingerprint: action_fingerprint(a),
                    subgoal_id: subgoal.to_string(),
                    ok: e.result.is_ok(),
                });
            }
        }
    }

    fn init(&mut self) -> Result<(), RunErrorKind> {
        let st = self.device.get_state()?;
        let ctx = self.ctx.at(st.timestamp.clone());
        if !self.cfg.flags.multi_agent {
            self.state.plan = Plan::new(vec![Subgoal::new(MONOLITH_SUBGOAL, self.state.goal.text.clone())])?;
            self.state.plan.start_next();
            return Ok(());
        }
        let mut records = Vec::new();
        let subgoals = agents::plan(&self.state.goal, None, &[], 1, &ctx, &mut records)?;
        let plan = Plan::new(subgoals)?;
        let out = serde_json::to_string(&plan.subgoals).expect("serializable");
        self.trace.push(0, node("planner", &records, &out, format!("subgoals={}", plan.subgoals.len())));
        self.calls.extend(records);
        self.state.plan = plan;
        self.state.history.push(AgentMessage::new(
            MessageRole::Planner,
            format!("plan revision 1: {}", self.state.plan.subgoals.len()),
            0,
        ));
        let msgs = apply_verdict(&mut self.state.plan, &OrchestratorVerdict::default(), 0);
        self.trace.push(0, NodeEvent::new("orchestrator", "", &format!("{msgs:?}"), "init"));
        self.state.history.extend(msgs);
        Ok(())
    }

    fn replan(&mut self, cycle: u32) -> Result<(), RunErrorKind> {
        self.replans += 1;
        self.state.stall_count = 0;
        if !self.cfg.flags.multi_agent {
            self.state
                .plan
                .replan(vec![Subgoal::new(MONOLITH_SUBGOAL, self.state.goal.text.clone())])?;
            self.state.plan.start_next();
            self.trace.push(cycle, NodeEvent::new("planner", "", "", "reset"));
            return Ok(());
        }
        let failed: Vec<String> = self
            .state
            .plan
            .subgoals
            .iter()
            .filter(|s| s.status() == crate::domain::SubgoalStatus::Failed)
            .map(|s| format!("subgoal {} ({}) made no progress", s.id, s.description))
            .collect();
        let failure = failed.join("\n");
        let completed: Vec<Subgoal> = self.state.plan.completed().cloned().collect();
        let revision = self.state.plan.revision + 1;
        let ts = self.state.last_device_state.as_ref().map(|s| s.timestamp.clone()).unwrap_or_default();
        let ctx = self.ctx.at(ts);
        let mut records = Vec::new();
        let remainder = agents::plan(&self.state.goal, Some(&failure), &completed, revision, &ctx, &mut records);
        let remainder = match remainder {
            Ok(r) => r,
            Err(e) => {
                self.calls.extend(records);
                return Err(e.into());
            }
        };
        self.state.plan.replan(remainder)?;
        let out = serde_json::to_string(&self.state.plan.subgoals).expect("serializable");
        self.trace.push(cycle, node("planner", &records, &out, format!("revision={revision}")));
        self.calls.extend(records);
        self.state.history.push(AgentMessage::new(
            MessageRole::Planner,
            format!("plan revision {revision} after failure"),
            cycle,
        ));
        let msgs = apply_verdict(&mut self.state.plan, &OrchestratorVerdict::default(), cycle);
        self.state.history.extend(msgs);
        Ok(())
    }

    fn cycle_multi(&mut self, cycle: u32, st: &DeviceState, ctx: &AgentCtx<'_>) -> Result<Vec<BranchOutcome>, RunErrorKind> {
        let Some(active) = self.state.plan.active().cloned() else {
            self.state.stall_count += 1;
            self.trace.push(cycle, NodeEvent::new("stall", "", "", "no active subgoal"));
            return Ok(vec![BranchOutcome::Stalled]);
        };
        let next = self.state.plan.pending_after(&active.id).cloned();
        let report: Option<MetacogReport> = self.cfg.flags.metacog.then(|| {
            evaluate(&self.entries, &self.state.plan, self.cfg.metacog_window, self.cfg.stagnation)
        });
        if let Some(r) = &report {
            let status = match (&r.cycle, r.stagnant) {
                (Some(c), _) => format!("cycle period={}", c.period),
                (None, true) => "stagnant".into(),
                _ => "clear".into(),
            };
            self.trace.push(cycle, NodeEvent::new("metacog", "", &r.render(), status));
        }
        let mut records = Vec::new();
        let input = CortexInput {
            goal: &self.state.goal,
            plan: &self.state.plan,
            subgoal: &active,
            next: next.as_ref(),
            state: st,
            history: &self.state.history,
            notes: &self.notes,
            report: report.as_ref(),
            flags: &self.cfg.flags,
        };
        let decided = decide(&input, ctx, &mut records);
        let out = match decided {
            Ok(o) => o,
            Err(e) => {
                self.calls.extend(records);
                return Err(e.into());
            }
        };
        let out_text = serde_json::to_string(&out).expect("serializable");
        let status = format!("actions={} completions={}", out.actions.len(), out.completions.len());
        self.trace.push(cycle, node("cortex", &records, &out_text, status));
        self.calls.extend(records);

        if let Some(p) = &out.pivot {
            self.push_pinned(format!("PIVOT[{}] {p}", active.id), cycle);
        }
        let claims: Vec<&str> = out.completions.iter().map(String::as_str).collect();
        self.state.history.push(AgentMessage::new(
            MessageRole::Cortex,
            format!("decided [{}] claims [{}]", describe_actions(&out.actions), claims.join(",")),
            cycle,
        ));

        let branches = branch_after_cortex(&out);
        let acting_for = match (&next, out.completions.contains(&active.id)) {
            (Some(n), true) => n.id.clone(),
            _ => active.id.clone(),
        };
        let history_view = self.state.history.clone();
        let flags = self.cfg.flags;
        let plan = &mut self.state.plan;
        let device = &mut *self.device;
        let notes = &mut self.notes;
        let (orch, exec) = std::thread::scope(|s| {
            let oh = branches
                .contains(&Branch::Orchestrator)
                .then(|| s.spawn(|| orchestrator_branch(plan, &out.completions, &history_view, ctx, cycle)));
            let eh = branches
                .contains(&Branch::Executor)
                .then(|| s.spawn(|| executor_branch(&out.actions, device, notes, &flags, ctx, cycle)));
            (oh.map(|h| h.join()), eh.map(|h| h.join()))
        });

        let mut outcomes = Vec::new();
        let mut first_err: Option<RunErrorKind> = None;
        if let Some(r) = orch {
            match r {
                Err(p) => outcomes.push(BranchOutcome::Panicked(panic_text(p))),
                Ok(Err(e)) => {
                    first_err.get_or_insert(e.into());
                    outcomes.push(BranchOutcome::OrchestratorDone);
                }
                Ok(Ok(b)) => {
                    self.trace.push(cycle, b.event);
                    self.calls.extend(b.records);
                    self.state.history.extend(b.messages);
                    outcomes.push(BranchOutcome::OrchestratorDone);
                }
            }
        }
        if let Some(r) = exec {
            match r {
                Err(p) => outcomes.push(BranchOutcome::Panicked(panic_text(p))),
                Ok(Err(e)) => {
                    first_err.get_or_insert(e.into());
                    outcomes.push(BranchOutcome::ExecutorDone);
                }
                Ok(Ok(b)) => {
                    for ev in b.events {
                        self.trace.push(cycle, ev);
                    }
                    self.calls.extend(b.records);
                    self.record_execution(&out.actions, &b.calls, &b.executed, &acting_for, cycle);
                    let aborted = b.executed.iter().any(|e| e.result.is_aborted());
                    outcomes.push(if aborted {
                        BranchOutcome::ExecutorAborted
                    } else {
                        BranchOutcome::ExecutorDone
                    });
                }
            }
        }
        if branches.contains(&Branch::Stall) {
            self.state.stall_count += 1;
            self.trace.push(
                cycle,
                NodeEvent::new("stall", "", "", format!("count={}", self.state.stall_count)),
            );
            outcomes.push(BranchOutcome::Stalled);
        } else {
            self.state.stall_count = 0;
        }
        match first_err {
            Some(e) => Err(e),
            None => Ok(outcomes),
        }
    }

    fn cycle_mono(&mut self, cycle: u32, st: &DeviceState, ctx: &AgentCtx<'_>) -> Result<Vec<BranchOutcome>, RunErrorKind> {
        let mut records = Vec::new();
        let step = monolith_step(
            &self.state.goal,
            st,
            &self.state.history,
            &self.notes,
            &self.cfg.flags,
            ctx,
            &mut records,
        );
        let out = match step {
            Ok(o) => o,
            Err(e) => {
                self.calls.extend(records);
                return Err(e.into());
            }
        };
        let out_text = serde_json::to_string(&out).expect("serializable");
        let status = format!("actions={} done={}", out.actions.len(), out.done);
        self.trace.push(cycle, node("monolith", &records, &out_text, status));
        self.calls.extend(records);
        self.state.history.push(AgentMessage::new(
            MessageRole::Cortex,
            format!("decided [{}] done={}", describe_actions(&out.actions), out.done),
            cycle,
        ));
        let mut outcomes = Vec::new();
        if !out.actions.is_empty() {
            let calls: Vec<ToolCall> = out.actions.iter().filter_map(|a| ToolCall::from_decision(a).ok()).collect();
            let executed = execute_sequential(&calls, &mut *self.device, &mut self.notes, &self.cfg.flags, cycle);
            let seq = self.device.current_seq();
            self.trace.push(cycle, tools_event(&calls, &executed, seq));
            self.record_execution(&out.actions, &calls, &executed, MONOLITH_SUBGOAL, cycle);
            outcomes.push(BranchOutcome::ExecutorDone);
        }
        if out.done {
            if let Some(id) = self.state.plan.active().map(|s| s.id.clone()) {
                let _ = self.state.plan.transition(&id, LifecycleEvent::ConfirmComplete);
            }
            outcomes.push(BranchOutcome::OrchestratorDone);
        }
        if outcomes.is_empty() {
            self.state.stall_count += 1;
            self.trace.push(
                cycle,
                NodeEvent::new("stall", "", "", format!("count={}", self.state.stall_count)),
            );
            outcomes.push(BranchOutcome::Stalled);
        } else {
            self.state.stall_count = 0;
        }
        Ok(outcomes)
    }

    fn finish(&mut self) -> Result<(), RunErrorKind> {
        let Some(schema) = self.state.goal.output_schema.clone() else {
            return Ok(());
        };
        let st = self.device.get_state()?;
        let ctx = self.ctx.at(st.timestamp.clone());
        let mut records = Vec::new();
        let r = outputter(&self.state.goal.text, &st, &self.notes, &schema, &ctx, &mut records);
        let cycle = self.state.cycle_index;
        match r {
            Ok(v) => {
                let text = serde_json::to_string(&v).expect("serializable");
                self.trace.push(cycle, node("outputter", &records, &text, "ok"));
                self.calls.extend(records);
                self.output = Some(v);
                Ok(())
            }
            Err(e) => {
                self.trace.push(cycle, node("outputter", &records, "", "error"));
                self.calls.extend(records);
                Err(e.into())
            }
        }
    }

    fn run(&mut self) -> Result<(), RunErrorKind> {
        self.init()?;
        loop {
            let cycle = self.state.cycle_index + 1;
            self.state.cycle_index = cycle;
            let prev_seq = self.state.last_device_state.as_ref().map(|s| s.seq).unwrap_or(0);
            let st = gather_context(&mut *self.device, &self.state.goal)?;
            self.trace.push(
                cycle,
                NodeEvent::new("contextor", &prev_seq.to_string(), &st.screenshot_digest, "ok").with_seq(st.seq),
            );
            let ctx = self.ctx.at(st.timestamp.clone());
            let outcomes = if self.cfg.flags.multi_agent {
                self.cycle_multi(cycle, &st, &ctx)?
            } else {
                self.cycle_mono(cycle, &st, &ctx)?
            };
            self.state.last_device_state = Some(self.device.get_state()?);

            let before = self.state.history.len();
            self.state.history = agents::summarize(&self.state.history, self.cfg.summary_threshold, self.cfg.keep_recent);
            let after = self.state.history.len();
            self.trace.push(cycle, NodeEvent::new("summarizer", "", "", format!("{before}->{after}")));

            converge(&outcomes)?;
            let labels: Vec<String> = outcomes.iter().map(|o| format!("{o:?}")).collect();
            self.trace.push(cycle, NodeEvent::new("convergence", &labels.join(","), "", "ok"));

            let budget_left = self.state.goal.step_budget.saturating_sub(cycle);
            let d = route_after_convergence(
                &mut self.state.plan,
                self.state.stall_count,
                self.cfg.stall_threshold,
                budget_left,
            );
            self.trace.push(cycle, NodeEvent::new("route", "", "", format!("{d:?}")));
            match d {
                RouteDecision::Continue => {}
                RouteDecision::Replan => self.replan(cycle)?,
                RouteDecision::Terminate { success: true } => return self.finish(),
                RouteDecision::Terminate { success: false } => return Err(RunErrorKind::BudgetExhausted),
            }
        }
    }
}

/// Runs one task to completion, budget exhaustion, or error. The device
/// must already be at the task's starting snapshot.
pub fn run_task(
    goal: &TaskGoal,
    device: &mut dyn DeviceController,
    ctx: &AgentCtx<'_>,
    cfg: &EngineConfig,
) -> Result<RunResult, RunError> {
    let placeholder = Plan {
        subgoals: Vec::new(),
        revision: 0,
    };
    let mut runner = Runner {
        ctx,
        cfg,
        device,
        state: RunState {
            goal: goal.clone(),
            plan: placeholder,
            history: Vec::new(),
            last_device_state: None,
            cycle_index: 0,
            stall_count: 0,
            ablation: cfg.flags,
        },
        trace: Trace::new(&cfg.run_id, &goal.id, cfg.flags, cfg.fault.clone()),
        calls: Vec::new(),
        notes: Scratchpad::default(),
        entries: Vec::new(),
        replans: 0,
        output: None,
    };
    if let Err(e) = goal.validate() {
        return Err(runner.fail(RunErrorKind::Plan(e)));
    }
    match runner.run() {
        Ok(()) => Ok(runner.result(Outcome::Completed)),
        Err(kind) => Err(runner.fail(kind)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::SelectorBundle;

    fn plan3() -> Plan {
        Plan::new(vec![Subgoal::new("a", "x"), Subgoal::new("b", "y"), Subgoal::new("c", "z")]).unwrap()
    }

    #[test]
    fn branching() {
        let mut out = CortexOutput::default();
        assert_eq!(branch_after_cortex(&out), BranchSet::from([Branch::Stall]));
        out.actions.push(ActionDecision::tap(SelectorBundle::resource_id("fab_add")));
        assert_eq!(branch_after_cortex(&out), BranchSet::from([Branch::Executor]));
        out.completions.insert("sg1".into());
        assert_eq!(
            branch_after_cortex(&out),
            BranchSet::from([Branch::Orchestrator, Branch::Executor])
        );
        out.actions.clear();
        assert_eq!(branch_after_cortex(&out), BranchSet::from([Branch::Orchestrator]));
    }

    #[test]
    fn barrier() {
        assert!(converge(&[BranchOutcome::OrchestratorDone]).is_ok());
        assert!(converge(&[BranchOutcome::ExecutorAborted]).is_ok());
        assert!(matches!(
            converge(&[BranchOutcome::OrchestratorDone, BranchOutcome::Panicked("x".into())]),
            Err(RunErrorKind::BranchPanic(_))
        ));
    }

    #[test]
    fn routing() {
        let mut p = plan3();
        p.start_next();
        assert_eq!(route_after_convergence(&mut p, 0, 3, 5), RouteDecision::Continue);
        assert_eq!(route_after_convergence(&mut p, 0, 3, 0), RouteDecision::Terminate { success: false });
        assert_eq!(route_after_convergence(&mut p, 3, 3, 5), RouteDecision::Replan);
        assert!(p.any_failed());
        assert_eq!(route_after_convergence(&mut p, 0, 3, 5), RouteDecision::Replan);

        let mut done = plan3();
        for id in ["a", "b", "c"] {
            done.transition(id, LifecycleEvent::Start).unwrap();
            done.transition(id, LifecycleEvent::ConfirmComplete).unwrap();
        }
        assert_eq!(route_after_convergence(&mut done, 0, 3, 0), RouteDecision::Terminate { success: true });
    }
}
