//! Shared domain types and the subgoal lifecycle.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DomainError {
    #[error("task goal text must be nonempty")]
    EmptyGoal,
    #[error("step budget must be at least 1")]
    ZeroBudget,
    #[error("illegal transition: {from:?} + {event:?}")]
    IllegalTransition {
        from: SubgoalStatus,
        event: LifecycleEvent,
    },
    #[error("unknown subgoal id {0:?}")]
    UnknownSubgoal(String),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("selector bundle has no selector")]
    EmptySelector,
    #[error("invalid action: {0}")]
    InvalidAction(String),
}

/// A natural-language task handed to the engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskGoal {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub output_schema: Option<serde_json::Value>,
    pub step_budget: u32,
    #[serde(default)]
    pub app_lock: Option<String>,
}

impl TaskGoal {
    pub fn new(id: impl Into<String>, text: impl Into<String>, step_budget: u32) -> Result<Self, DomainError> {
        let goal = TaskGoal {
            id: id.into(),
            text: text.into(),
            output_schema: None,
            step_budget,
            app_lock: None,
        };
        goal.validate()?;
        Ok(goal)
    }

    pub fn with_app_lock(mut self, package: impl Into<String>) -> Self {
        self.app_lock = Some(package.into());
        self
    }

    pub fn with_output_schema(mut self, schema: serde_json::Value) -> Self {
        self.output_schema = Some(schema);
        self
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if self.text.trim().is_empty() {
            return Err(DomainError::EmptyGoal);
        }
        if self.step_budget == 0 {
            return Err(DomainError::ZeroBudget);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SubgoalStatus {
    Pending,
    InProgress,
    Completed,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LifecycleEvent {
    Start,
    ConfirmComplete,
    MarkFailed,
    ResetOnReplan,
}

/// The fixed lifecycle table. Completed and Failed are terminal; a replan
/// resets only work that is still open.
pub fn transition_subgoal(current: SubgoalStatus, event: LifecycleEvent) -> Result<SubgoalStatus, DomainError> {
    use LifecycleEvent::*;
    use SubgoalStatus::*;
    match (current, event) {
        (Pending, Start) => Ok(InProgress),
        (InProgress, ConfirmComplete) => Ok(Completed),
        (InProgress, MarkFailed) => Ok(Failed),
        (Pending | InProgress, ResetOnReplan) => Ok(Pending),
        (from, event) => Err(DomainError::IllegalTransition { from, event }),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subgoal {
    pub id: String,
    pub description: String,
    status: SubgoalStatus,
}

impl Subgoal {
    pub fn new(id: impl Into<String>, description: impl Into<String>) -> Self {
        Subgoal {
            id: id.into(),
            description: description.into(),
            status: SubgoalStatus::Pending,
        }
    }

    pub fn status(&self) -> SubgoalStatus {
        self.status
    }

    pub fn apply(&mut self, event: LifecycleEvent) -> Result<SubgoalStatus, DomainError> {
        self.status = transition_subgoal(self.status, event)?;
        Ok(self.status)
    }

    /// Sets a status without consulting the lifecycle table. Only meant for
    /// building malformed plans in tests and for loading persisted plans.
    #[doc(hidden)]
    pub fn force_status(&mut self, status: SubgoalStatus) {
        self.status = status;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub subgoals: Vec<Subgoal>,
    pub revision: u32,
}

impl Plan {
    /// Builds a first-revision plan, rejecting duplicate ids and empty plans.
    pub fn new(subgoals: Vec<Subgoal>) -> Result<Self, DomainError> {
        let plan = Plan { subgoals, revision: 1 };
        let report = validate_plan(&plan);
        if plan.subgoals.is_empty() {
            return Err(DomainError::InvalidPlan("plan has no subgoals".into()));
        }
        if !report.is_valid() {
            return Err(DomainError::InvalidPlan(report.to_string()));
        }
        Ok(plan)
    }

    pub fn get(&self, id: &str) -> Option<&Subgoal> {
        self.subgoals.iter().find(|s| s.id == id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.get(id).is_some()
    }

    pub fn transition(&mut self, id: &str, event: LifecycleEvent) -> Result<SubgoalStatus, DomainError> {
        let sg = self
            .subgoals
            .iter_mut()
            .find(|s| s.id == id)
            .ok_or_else(|| DomainError::UnknownSubgoal(id.to_string()))?;
        sg.apply(event)
    }

    pub fn active(&self) -> Option<&Subgoal> {
        self.subgoals.iter().find(|s| s.status == SubgoalStatus::InProgress)
    }

    pub fn next_pending(&self) -> Option<&Subgoal> {
        self.subgoals.iter().find(|s| s.status == SubgoalStatus::Pending)
    }

    /// The subgoal after `id` in plan order that is still pending.
    pub fn pending_after(&self, id: &str) -> Option<&Subgoal> {
        let pos = self.subgoals.iter().position(|s| s.id == id)?;
        self.subgoals[pos + 1..]
            .iter()
            .find(|s| s.status == SubgoalStatus::Pending)
    }

    pub fn all_completed(&self) -> bool {
        !self.subgoals.is_empty() && self.subgoals.iter().all(|s| s.status == SubgoalStatus::Completed)
    }

    pub fn any_failed(&self) -> bool {
        self.subgoals.iter().any(|s| s.status == SubgoalStatus::Failed)
    }

    pub fn completed(&self) -> impl Iterator<Item = &Subgoal> {
        self.subgoals.iter().filter(|s| s.status == SubgoalStatus::Completed)
    }

    /// Starts the first pending subgoal if nothing is in progress.
    pub fn start_next(&mut self) -> Option<String> {
        if self.active().is_some() {
            return None;
        }
        let id = self.next_pending()?.id.clone();
        self.transition(&id, LifecycleEvent::Start).ok()?;
        Some(id)
    }

    /// Replaces all non-completed work with `remainder`, keeping completed
    /// subgoals in place and bumping the revision.
    pub fn replan(&mut self, remainder: Vec<Subgoal>) -> Result<(), DomainError> {
        let mut kept: Vec<Subgoal> = self.completed().cloned().collect();
        for mut sg in remainder {
            if sg.status != SubgoalStatus::Pending {
                sg.apply(LifecycleEvent::ResetOnReplan)?;
            }
            kept.push(sg);
        }
        let candidate = Plan {
            subgoals: kept,
            revision: self.revision + 1,
        };
        let report = validate_plan(&candidate);
        if !report.is_valid() {
            return Err(DomainError::InvalidPlan(report.to_string()));
        }
        *self = candidate;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlanIssue {
    DuplicateId(String),
    EmptyDescription(String),
    MultipleActive,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub issues: Vec<PlanIssue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.issues.is_empty() {
            return write!(f, "valid");
        }
        let parts: Vec<String> = self.issues.iter().map(|i| format!("{i:?}")).collect();
        write!(f, "{}", parts.join(", "))
    }
}

pub fn validate_plan(plan: &Plan) -> ValidationReport {
    let mut issues = Vec::new();
    let mut seen = HashSet::new();
    let mut dup_reported = HashSet::new();
    for sg in &plan.subgoals {
        if !seen.insert(sg.id.as_str()) && dup_reported.insert(sg.id.as_str()) {
            issues.push(PlanIssue::DuplicateId(sg.id.clone()));
        }
        if sg.description.trim().is_empty() {
            issues.push(PlanIssue::EmptyDescription(sg.id.clone()));
        }
    }
    let active = plan
        .subgoals
        .iter()
        .filter(|s| s.status == SubgoalStatus::InProgress)
        .count();
    if active > 1 {
        issues.push(PlanIssue::MultipleActive);
    }
    ValidationReport { issues }
}

/// Integer screen rectangle, `[left, top, right, bottom)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Bounds {
    pub left: i32,
    pub top: i32,
    pub right: i32,
    pub bottom: i32,
}

impl Bounds {
    pub const fn new(left: i32, top: i32, right: i32, bottom: i32) -> Self {
        Bounds { left, top, right, bottom }
    }

    pub fn contains_point(&self, p: Point) -> bool {
        p.x >= self.left && p.x < self.right && p.y >= self.top && p.y < self.bottom
    }

    pub fn contains(&self, other: &Bounds) -> bool {
        other.left >= self.left && other.top >= self.top && other.right <= self.right && other.bottom <= self.bottom
    }

    pub fn area(&self) -> i64 {
        let w = (self.right - self.left).max(0) as i64;
        let h = (self.bottom - self.top).max(0) as i64;
        w * h
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    pub fn center(&self) -> Point {
        Point {
            x: (self.left + self.right) / 2,
            y: (self.top + self.bottom) / 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Point {
    pub x: i32,
    pub y: i32,
}

impl Point {
    pub const fn new(x: i32, y: i32) -> Self {
        Point { x, y }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UiNode {
    pub node_id: String,
    pub resource_id: Option<String>,
    pub text: Option<String>,
    pub content_desc: Option<String>,
    pub bounds: Bounds,
    pub focusable: bool,
    pub focused: bool,
    pub editable: bool,
    pub children: Vec<UiNode>,
}

impl UiNode {
    pub fn new(node_id: impl Into<String>, bounds: Bounds) -> Self {
        UiNode {
            node_id: node_id.into(),
            resource_id: None,
            text: None,
            content_desc: None,
            bounds,
            focusable: false,
            focused: false,
            editable: false,
            children: Vec::new(),
        }
    }

    /// Pre-order (document order) traversal.
    pub fn iter(&self) -> NodeIter<'_> {
        NodeIter { stack: vec![self] }
    }

    pub fn find_by_resource_id(&self, rid: &str) -> Option<&UiNode> {
        self.iter().find(|n| n.resource_id.as_deref() == Some(rid))
    }

    pub fn focused_node(&self) -> Option<&UiNode> {
        self.iter().find(|n| n.focused)
    }

    pub fn len(&self) -> usize {
        self.iter().count()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Checks the structural invariants: children inside parents, unique ids.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut ids = HashSet::new();
        fn walk<'a>(n: &'a UiNode, ids: &mut HashSet<&'a str>) -> Result<(), String> {
            if !ids.insert(n.node_id.as_str()) {
                return Err(format!("duplicate node id {}", n.node_id));
            }
            for c in &n.children {
                if !n.bounds.contains(&c.bounds) {
                    return Err(format!("child {} escapes parent {}", c.node_id, n.node_id));
                }
                walk(c, ids)?;
            }
            Ok(())
        }
        walk(self, &mut ids)
    }
}

pub struct NodeIter<'a> {
    stack: Vec<&'a UiNode>,
}

impl<'a> Iterator for NodeIter<'a> {
    type Item = &'a UiNode;

    fn next(&mut self) -> Option<Self::Item> {
        let node = self.stack.pop()?;
        self.stack.extend(node.children.iter().rev());
        Some(node)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceState {
    pub screenshot_digest: String,
    pub hierarchy: UiNode,
    pub focused_package: String,
    /// RFC 3339 (virtual clock on the simulator).
    pub timestamp: String,
    pub seq: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SelectorBundle {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resource_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coordinates: Option<Point>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_match: Option<String>,
}

impl SelectorBundle {
    pub fn resource_id(rid: impl Into<String>) -> Self {
        SelectorBundle {
            resource_id: Some(rid.into()),
            ..Default::default()
        }
    }

    pub fn text(text: impl Into<String>) -> Self {
        SelectorBundle {
            text_match: Some(text.into()),
            ..Default::default()
        }
    }

    pub fn point(x: i32, y: i32) -> Self {
        SelectorBundle {
            coordinates: Some(Point::new(x, y)),
            ..Default::default()
        }
    }

    pub fn with_coordinates(mut self, x: i32, y: i32) -> Self {
        self.coordinates = Some(Point::new(x, y));
        self
    }

    pub fn with_text(mut self, text: impl Into<String>) -> Self {
        self.text_match = Some(text.into());
        self
    }

    pub fn is_empty(&self) -> bool {
        self.resource_id.is_none() && self.coordinates.is_none() && self.text_match.is_none()
    }

    /// Stable textual form used in fingerprints.
    pub fn canonical(&self) -> String {
        let rid = self.resource_id.as_deref().unwrap_or("-");
        let xy = self
            .coordinates
            .map(|p| format!("{},{}", p.x, p.y))
            .unwrap_or_else(|| "-".into());
        let text = self.text_match.as_deref().unwrap_or("-");
        format!("rid={rid};xy={xy};text={text}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActionKind {
    Tap,
    Swipe,
    TypeText,
    Back,
    LaunchApp,
    SaveNote,
    ReadNote,
    ListNotes,
    StartRecording,
    StopRecording,
    Wait,
}

impl ActionKind {
    pub const ALL: [ActionKind; 11] = [
        ActionKind::Tap,
        ActionKind::Swipe,
        ActionKind::TypeText,
        ActionKind::Back,
        ActionKind::LaunchApp,
        ActionKind::SaveNote,
        ActionKind::ReadNote,
        ActionKind::ListNotes,
        ActionKind::StartRecording,
        ActionKind::StopRecording,
        ActionKind::Wait,
    ];

    /// Tool name the executor binds this action to.
    pub fn tool_name(self) -> &'static str {
        match self {
            ActionKind::Tap => "tap",
            ActionKind::Swipe => "swipe",
            ActionKind::TypeText => "type_text",
            ActionKind::Back => "back",
            ActionKind::LaunchApp => "launch_app",
            ActionKind::SaveNote => "save_note",
            ActionKind::ReadNote => "read_note",
            ActionKind::ListNotes => "list_notes",
            ActionKind::StartRecording => "start_video_recording",
            ActionKind::StopRecording => "stop_video_recording",
            ActionKind::Wait => "wait",
        }
    }

    pub fn from_tool_name(name: &str) -> Option<ActionKind> {
        ActionKind::ALL.into_iter().find(|k| k.tool_name() == name)
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionDecision {
    pub kind: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<SelectorBundle>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<String>,
    #[serde(default)]
    pub reasoning: String,
}

impl ActionDecision {
    pub fn new(kind: ActionKind) -> Self {
        ActionDecision {
            kind,
            target: None,
            payload: None,
            reasoning: String::new(),
        }
    }

    pub fn tap(target: SelectorBundle) -> Self {
        ActionDecision {
            target: Some(target),
            ..ActionDecision::new(ActionKind::Tap)
        }
    }

    pub fn type_text(target: SelectorBundle, text: impl Into<String>) -> Self {
        ActionDecision {
            target: Some(target),
            payload: Some(text.into()),
            ..ActionDecision::new(ActionKind::TypeText)
        }
    }

    pub fn launch(package: impl Into<String>) -> Self {
        ActionDecision {
            payload: Some(package.into()),
            ..ActionDecision::new(ActionKind::LaunchApp)
        }
    }

    pub fn with_reasoning(mut self, reasoning: impl Into<String>) -> Self {
        self.reasoning = reasoning.into();
        self
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if let Some(t) = &self.target {
            if t.is_empty() {
                return Err(DomainError::EmptySelector);
            }
        }
        match self.kind {
            ActionKind::TypeText if self.target.is_none() || self.payload.is_none() => Err(
                DomainError::InvalidAction("TypeText requires target and payload".into()),
            ),
            ActionKind::LaunchApp if self.payload.as_deref().is_none_or(str::is_empty) => {
                Err(DomainError::InvalidAction("LaunchApp requires a package".into()))
            }
            ActionKind::Tap if self.target.is_none() => {
                Err(DomainError::InvalidAction("Tap requires a target".into()))
            }
            ActionKind::SaveNote | ActionKind::ReadNote if self.payload.is_none() => Err(
                DomainError::InvalidAction(format!("{} requires a payload", self.kind)),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CortexOutput {
    #[serde(default)]
    pub actions: Vec<ActionDecision>,
    #[serde(default)]
    pub completions: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pivot: Option<String>,
}

impl CortexOutput {
    pub fn is_empty(&self) -> bool {
        self.actions.is_empty() && self.completions.is_empty()
    }

    pub fn validate(&self, plan: &Plan) -> Result<(), DomainError> {
        for id in &self.completions {
            if !plan.contains(id) {
                return Err(DomainError::UnknownSubgoal(id.clone()));
            }
        }
        for a in &self.actions {
            a.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MessageRole {
    System,
    Planner,
    Orchestrator,
    Contextor,
    Cortex,
    Executor,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentMessage {
    pub role: MessageRole,
    pub content: String,
    #[serde(default)]
    pub pinned: bool,
    pub cycle_index: u32,
}

impl AgentMessage {
    pub fn new(role: MessageRole, content: impl Into<String>, cycle_index: u32) -> Self {
        AgentMessage {
            role,
            content: content.into(),
            pinned: false,
            cycle_index,
        }
    }

    pub fn pinned(mut self) -> Self {
        self.pinned = true;
        self
    }
}
