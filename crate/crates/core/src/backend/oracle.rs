//! Deterministic policy standing in for a language model. It sees nothing
//! but the assembled prompt: goal, subgoal, serialized hierarchy, notes,
//! history and the loop-analysis report. Behavior per goal comes from
//! playbook files.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{estimated_usage, AgentRole, BackendError, CompletionRequest, LlmBackend, TokenUsage};
use crate::agents::prompts::sections;
use crate::exec::ToolReport;
use crate::domain::{ActionDecision, ActionKind, CortexOutput, Point, SelectorBundle, UiNode};
use crate::sim::parse_hierarchy;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cond {
    #[serde(default)]
    pub package: Option<String>,
    #[serde(default)]
    pub package_not: Option<String>,
    #[serde(default)]
    pub visible: Option<String>,
    #[serde(default)]
    pub not_visible: Option<String>,
    #[serde(default)]
    pub text_visible: Option<String>,
    #[serde(default)]
    pub text_not_visible: Option<String>,
    #[serde(default)]
    pub field: Option<String>,
    #[serde(default)]
    pub equals: Option<String>,
    /// Most recent text entry into this field was reported verified.
    #[serde(default)]
    pub typed: Option<String>,
    /// A tap on this resource id was reported ok.
    #[serde(default)]
    pub tapped: Option<String>,
    #[serde(default)]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionSpec {
    pub kind: String,
    #[serde(default)]
    pub rid: Option<String>,
    #[serde(default)]
    pub xy: Option<[i32; 2]>,
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub payload: Option<String>,
    #[serde(default)]
    pub reasoning: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Move {
    #[serde(default)]
    pub when: Vec<Cond>,
    pub actions: Vec<ActionSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Strategy {
    #[serde(default)]
    pub note: String,
    /// All conditions must hold; an empty list never counts as done.
    #[serde(default)]
    pub done: Vec<Cond>,
    #[serde(default)]
    pub moves: Vec<Move>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubgoalSpec {
    pub id: String,
    pub description: String,
    pub strategies: Vec<Strategy>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Replan {
    pub revision: u32,
    pub subgoals: Vec<SubgoalSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Playbook {
    pub goal: String,
    pub subgoals: Vec<SubgoalSpec>,
    #[serde(default)]
    pub replans: Vec<Replan>,
    #[serde(default)]
    pub output: BTreeMap<String, String>,
}

impl Playbook {
    fn spec(&self, id: &str) -> Option<&SubgoalSpec> {
        self.subgoals
            .iter()
            .chain(self.replans.iter().flat_map(|r| &r.subgoals))
            .find(|s| s.id == id)
    }
}

/// What the policy can see, parsed back out of a prompt.
struct View {
    package: String,
    root: Option<UiNode>,
    notes: BTreeMap<String, String>,
    tools: Vec<ToolReport>,
    pivots: Vec<String>,
    needs_pivot: bool,
    fidelity: bool,
}

impl View {
    fn parse(prompt: &str) -> View {
        let s = sections(prompt);
        let (package, root) = match s.get("HIERARCHY") {
            Some(h) => {
                let mut lines = h.lines();
                let pkg = lines
                    .next()
                    .and_then(|l| l.strip_prefix("package: "))
                    .unwrap_or("")
                    .to_string();
                let rest: Vec<&str> = lines.collect();
                (pkg, parse_hierarchy(&rest.join("\n")).ok())
            }
            None => (String::new(), None),
        };
        let notes = s
            .get("NOTES")
            .map(|n| {
                n.lines()
                    .filter_map(|l| l.split_once(": "))
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .collect()
            })
            .unwrap_or_default();
        let mut tools = Vec::new();
        let mut pivots = Vec::new();
        for line in s.get("HISTORY").map(String::as_str).unwrap_or("").lines() {
            let Some((head, body)) = line.split_once("] ") else { continue };
            if head.contains(" Tool") {
                if let Ok(batch) = serde_json::from_str::<Vec<ToolReport>>(body) {
                    tools.extend(batch);
                }
            } else if let Some(rest) = body.strip_prefix("PIVOT[") {
                if let Some((id, _)) = rest.split_once(']') {
                    pivots.push(id.to_string());
                }
            }
        }
        let needs_pivot = s
            .get("METACOGNITION")
            .is_some_and(|m| m.lines().any(|l| l.starts_with("cycle: period=") || l == "stagnant: true"));
        View {
            package,
            root,
            notes,
            tools,
            pivots,
            needs_pivot,
            fidelity: s.contains_key("DATA FIDELITY"),
        }
    }

    fn node(&self, rid: &str) -> Option<&UiNode> {
        self.root.as_ref()?.find_by_resource_id(rid)
    }

    fn text_visible(&self, t: &str) -> bool {
        self.root
            .as_ref()
            .is_some_and(|r| r.iter().any(|n| n.text.as_deref() == Some(t)))
    }

    fn last_type(&self, rid: &str) -> Option<&ToolReport> {
        self.tools
            .iter()
            .rev()
            .find(|t| t.tool == "type_text" && t.rid.as_deref() == Some(rid) && t.status != "aborted")
    }

    fn holds(&self, c: &Cond) -> bool {
        let checks = [
            c.package.as_ref().map(|p| &self.package == p),
            c.package_not.as_ref().map(|p| &self.package != p),
            c.visible.as_ref().map(|r| self.node(r).is_some()),
            c.not_visible.as_ref().map(|r| self.node(r).is_none()),
            c.text_visible.as_ref().map(|t| self.text_visible(t)),
            c.text_not_visible.as_ref().map(|t| !self.text_visible(t)),
            c.field.as_ref().map(|r| {
                let actual = self.node(r).and_then(|n| n.text.clone());
                match &c.equals {
                    Some(e) => actual.as_deref() == Some(e.as_str()),
                    None => actual.is_some_and(|a| !a.is_empty()),
                }
            }),
            c.typed
                .as_ref()
                .map(|r| self.last_type(r).is_some_and(|t| t.is_ok())),
            c.tapped.as_ref().map(|r| {
                self.tools
                    .iter()
                    .any(|t| t.tool == "tap" && t.rid.as_deref() == Some(r) && t.is_ok())
            }),
            c.note.as_ref().map(|k| self.notes.contains_key(k)),
        ];
        checks.iter().all(|c| c.unwrap_or(true))
    }

    fn all(&self, conds: &[Cond]) -> bool {
        conds.iter().all(|c| self.holds(c))
    }

    fn expand(&self, template: &str) -> String {
        let mut out = String::new();
        let mut rest = template;
        while let Some(i) = rest.find('{') {
            out.push_str(&rest[..i]);
            let after = &rest[i + 1..];
            let Some(j) = after.find('}') else {
                out.push_str(&rest[i..]);
                return out;
            };
            let token = &after[..j];
            let (kind, arg) = token.split_once(':').unwrap_or(("", token));
            let text = |rid: &str| self.node(rid).and_then(|n| n.text.clone()).unwrap_or_default();
            out.push_str(&match kind {
                "text" => text(arg),
                "text_num" => first_number(&text(arg)).unwrap_or_default(),
                "note" => self.notes.get(arg).cloned().unwrap_or_default(),
                _ => format!("{{{token}}}"),
            });
            rest = &after[j + 1..];
        }
        out.push_str(rest);
        out
    }
}

/// First decimal number in the text, e.g. `14.20` in `Total: $14.20`.
pub fn first_number(text: &str) -> Option<String> {
    let start = text.find(|c: char| c.is_ascii_digit())?;
    let tail = &text[start..];
    let end = tail
        .char_indices()
        .find(|&(i, c)| !(c.is_ascii_digit() || (c == '.' && tail[i + 1..].starts_with(|d: char| d.is_ascii_digit()))))
        .map(|(i, _)| i)
        .unwrap_or(tail.len());
    Some(tail[..end].to_string())
}

fn capitalize_first(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

fn build_action(spec: &ActionSpec, view: &View) -> Option<ActionDecision> {
    let kind = ActionKind::from_tool_name(&spec.kind)?;
    let mut target = SelectorBundle {
        resource_id: spec.rid.clone(),
        coordinates: spec.xy.map(|[x, y]| Point::new(x, y)),
        text_match: spec.text.as_ref().map(|t| view.expand(t)),
    };
    if target.is_empty() {
        target = SelectorBundle::default();
    }
    let mut payload = spec.payload.as_ref().map(|p| view.expand(p));
    if kind == ActionKind::TypeText && !view.fidelity {
        payload = payload.map(|p| capitalize_first(&p));
    }
    Some(ActionDecision {
        kind,
        target: (!target.is_empty()).then_some(target),
        payload,
        reasoning: spec.reasoning.clone().unwrap_or_default(),
    })
}

/// Turns a move into decisions. A text entry the history already reports
/// as verified with the same text is not repeated.
fn realize(m: &Move, view: &View) -> Vec<ActionDecision> {
    let mut out = Vec::new();
    for spec in &m.actions {
        let Some(action) = build_action(spec, view) else { continue };
        if action.kind == ActionKind::TypeText {
            let rid = spec.rid.as_deref().unwrap_or_default();
            if view.last_type(rid).is_some_and(|t| t.is_ok() && t.text == action.payload) {
                continue;
            }
        }
        out.push(action);
    }
    out
}

fn strategy_for<'a>(spec: &'a SubgoalSpec, view: &View) -> (usize, &'a Strategy) {
    let pivots = view.pivots.iter().filter(|p| **p == spec.id).count();
    let idx = pivots.min(spec.strategies.len().saturating_sub(1));
    (idx, &spec.strategies[idx])
}

fn first_move(strategy: &Strategy, view: &View) -> Vec<ActionDecision> {
    strategy
        .moves
        .iter()
        .find(|m| view.all(&m.when))
        .map(|m| realize(m, view))
        .unwrap_or_default()
}

fn is_done(strategy: &Strategy, view: &View) -> bool {
    !strategy.done.is_empty() && view.all(&strategy.done)
}

fn section_id(s: &BTreeMap<String, String>, name: &str) -> Option<String> {
    s.get(name)?
        .lines()
        .find_map(|l| l.strip_prefix("id: "))
        .map(|v| v.trim().to_string())
}

#[derive(Debug, Clone, Default)]
pub struct OracleBackend {
    playbooks: BTreeMap<String, Playbook>,
}

impl OracleBackend {
    pub fn new(playbooks: impl IntoIterator<Item = Playbook>) -> Self {
        OracleBackend {
            playbooks: playbooks.into_iter().map(|p| (p.goal.clone(), p)).collect(),
        }
    }

    pub fn load_dir(dir: &Path) -> Result<Self, String> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| format!("{}: {e}", dir.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "toml"))
            .collect();
        paths.sort();
        let mut books = Vec::new();
        for p in paths {
            let text = std::fs::read_to_string(&p).map_err(|e| format!("{}: {e}", p.display()))?;
            let pb: Playbook = toml::from_str(&text).map_err(|e| format!("{}: {e}", p.display()))?;
            books.push(pb);
        }
        Ok(Self::new(books))
    }

    pub fn playbook(&self, goal: &str) -> Option<&Playbook> {
        self.playbooks.get(goal.trim())
    }

    fn goal_of(s: &BTreeMap<String, String>) -> String {
        s.get("GOAL").map(|g| g.trim().to_string()).unwrap_or_default()
    }

    fn plan(&self, prompt: &str) -> Value {
        let s = sections(prompt);
        let Some(pb) = self.playbook(&Self::goal_of(&s)) else {
            return json!({ "subgoals": [{ "id": "sg1", "description": Self::goal_of(&s) }] });
        };
        let revision: u32 = s.get("REVISION").and_then(|r| r.trim().parse().ok()).unwrap_or(1);
        let completed: Vec<String> = s
            .get("COMPLETED")
            .map(|c| c.lines().filter_map(|l| l.split_once(':')).map(|(id, _)| id.trim().to_string()).collect())
            .unwrap_or_default();
        let chosen = pb
            .replans
            .iter()
            .filter(|r| r.revision <= revision)
            .max_by_key(|r| r.revision)
            .map(|r| &r.subgoals)
            .filter(|_| revision > 1);
        let list: Vec<&SubgoalSpec> = match chosen {
            Some(sg) => sg.iter().filter(|s| !completed.contains(&s.id)).collect(),
            None => pb.subgoals.iter().filter(|s| !completed.contains(&s.id)).collect(),
        };
        let subgoals: Vec<Value> = list
            .iter()
            .map(|s| json!({ "id": s.id, "description": s.description }))
            .collect();
        json!({ "subgoals": subgoals })
    }

    fn orchestrate(prompt: &str) -> Value {
        let s = sections(prompt);
        let claims: Vec<String> = s
            .get("CLAIMS")
            .map(|c| c.trim().split(',').filter(|x| !x.is_empty()).map(str::to_string).collect())
            .unwrap_or_default();
        let advance = s.get("PLAN").and_then(|p| {
            p.lines()
                .filter(|l| l.contains("[Pending]"))
                .filter_map(|l| l.split_whitespace().next())
                .find(|id| !claims.iter().any(|c| c == id))
                .map(str::to_string)
        });
        json!({ "confirmed": claims, "rejected": [], "advance_to": advance })
    }

    fn decide(&self, prompt: &str) -> CortexOutput {
        let s = sections(prompt);
        let view = View::parse(prompt);
        let Some(pb) = self.playbook(&Self::goal_of(&s)) else {
            return CortexOutput::default();
        };
        let Some(spec) = section_id(&s, "SUBGOAL").and_then(|id| pb.spec(&id)) else {
            return CortexOutput::default();
        };
        let (mut idx, mut strategy) = strategy_for(spec, &view);
        let mut out = CortexOutput::default();
        if view.needs_pivot && idx + 1 < spec.strategies.len() {
            idx += 1;
            strategy = &spec.strategies[idx];
            out.pivot = Some(format!("switching to strategy {}: {}", idx + 1, strategy.note));
        }
        if out.pivot.is_none() && is_done(strategy, &view) {
            out.completions.insert(spec.id.clone());
            if let Some(next) = section_id(&s, "NEXT SUBGOAL").and_then(|id| pb.spec(&id)) {
                let (_, ns) = strategy_for(next, &view);
                if !is_done(ns, &view) {
                    out.actions = first_move(ns, &view);
                }
            }
            return out;
        }
        out.actions = first_move(strategy, &view);
        out
    }

    fn monolith(&self, prompt: &str) -> Value {
        let s = sections(prompt);
        let view = View::parse(prompt);
        let Some(pb) = self.playbook(&Self::goal_of(&s)) else {
            return json!({ "actions": [], "done": false });
        };
        for spec in &pb.subgoals {
            let strategy = &spec.strategies[0];
            if !is_done(strategy, &view) {
                let actions = first_move(strategy, &view);
                return json!({ "actions": actions, "done": false });
            }
        }
        json!({ "actions": [], "done": true })
    }

    fn execute(prompt: &str) -> Value {
        let s = sections(prompt);
        let decisions: Vec<ActionDecision> = s
            .get("DECISIONS")
            .and_then(|d| serde_json::from_str(d.trim()).ok())
            .unwrap_or_default();
        let calls: Vec<_> = decisions
            .iter()
            .map(crate::agents::executor::WireCall::from_decision)
            .collect();
        json!({ "calls": calls })
    }

    fn output(&self, prompt: &str) -> Value {
        let s = sections(prompt);
        let view = View::parse(prompt);
        let schema: BTreeMap<String, String> = s
            .get("SCHEMA")
            .and_then(|x| serde_json::from_str(x.trim()).ok())
            .unwrap_or_default();
        let pb = self.playbook(&Self::goal_of(&s));
        let mut obj = serde_json::Map::new();
        for (field, ty) in schema {
            let raw = pb
                .and_then(|p| p.output.get(&field))
                .map(|t| view.expand(t))
                .unwrap_or_default();
            let v = match ty.as_str() {
                "integer" => raw.trim().parse::<i64>().map(Value::from).unwrap_or(Value::Null),
                "number" => raw.trim().parse::<f64>().map(Value::from).unwrap_or(Value::Null),
                "boolean" => Value::Bool(raw.trim() == "true"),
                _ => Value::String(raw),
            };
            obj.insert(field, v);
        }
        Value::Object(obj)
    }

    fn hop(prompt: &str) -> Value {
        let s = sections(prompt);
        let content = s.get("CONTENT").map(|c| c.trim().to_string()).unwrap_or_default();
        let extraction = first_number(&content).unwrap_or(content);
        json!({ "extraction": extraction })
    }

    pub fn respond(&self, role: AgentRole, prompt: &str) -> String {
        let v = match role {
            AgentRole::Planner => self.plan(prompt),
            AgentRole::Orchestrator => Self::orchestrate(prompt),
            AgentRole::Cortex => serde_json::to_value(self.decide(prompt)).expect("serializable"),
            AgentRole::Executor => Self::execute(prompt),
            AgentRole::Outputter => self.output(prompt),
            AgentRole::Hopper => Self::hop(prompt),
            AgentRole::Monolith => self.monolith(prompt),
            AgentRole::Contextor => json!({}),
        };
        serde_json::to_string(&v).expect("serializable")
    }
}

impl LlmBackend for OracleBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<(String, TokenUsage), BackendError> {
        let text = self.respond(req.role, &req.prompt);
        Ok((text.clone(), estimated_usage(&req.prompt, &text, &req.model)))
    }

    fn label(&self) -> String {
        "oracle".into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers() {
        assert_eq!(first_number("Total: $14.20").as_deref(), Some("14.20"));
        assert_eq!(first_number("3 items.").as_deref(), Some("3"));
        assert_eq!(first_number("none"), None);
    }

    #[test]
    fn capitalizes() {
        assert_eq!(capitalize_first("milk"), "Milk");
        assert_eq!(capitalize_first(""), "");
    }
}
