//! Task specs, starting snapshots and the suite runner.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::predicate::{check_success, PredicateSpec, World};
use super::{Fixtures, HarnessError};
use crate::agents::AgentCtx;
use crate::backend::LlmBackend;
use crate::domain::TaskGoal;
use crate::engine::{run_task, EngineConfig, Outcome, RunResult};
use crate::flags::AblationFlags;
use crate::sim::{DataValue, FaultProfile, SimDevice};
use crate::trace::Trace;

pub const TEXT_ENTRY: &str = "text-entry";
pub const LOOP_PRONE: &str = "loop-prone";

/// One line of the suite file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub id: String,
    pub goal: String,
    pub snapshot: String,
    pub predicate: PredicateSpec,
    #[serde(default)]
    pub tags: Vec<String>,
    pub step_budget: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub app_lock: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_schema: Option<serde_json::Value>,
}

impl TaskSpec {
    pub fn has_tag(&self, tag: &str) -> bool {
        self.tags.iter().any(|t| t == tag)
    }

    pub fn goal(&self) -> TaskGoal {
        TaskGoal {
            id: self.id.clone(),
            text: self.goal.clone(),
            output_schema: self.output_schema.clone(),
            step_budget: self.step_budget,
            app_lock: self.app_lock.clone(),
        }
    }
}

pub fn parse_suite(text: &str, origin: &str) -> Result<Vec<TaskSpec>, HarnessError> {
    let mut out: Vec<TaskSpec> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let spec: TaskSpec = serde_json::from_str(line).map_err(|e| HarnessError::Parse {
            path: format!("{origin}:{}", i + 1),
            msg: e.to_string(),
        })?;
        if out.iter().any(|t| t.id == spec.id) {
            return Err(HarnessError::Parse {
                path: format!("{origin}:{}", i + 1),
                msg: format!("duplicate task id {}", spec.id),
            });
        }
        out.push(spec);
    }
    Ok(out)
}

pub fn load_suite(path: &Path) -> Result<Vec<TaskSpec>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    parse_suite(&text, &path.display().to_string())
}

/// A starting state: which app is in front and per-app data overrides on
/// top of each app's defaults.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Snapshot {
    pub id: String,
    pub foreground: String,
    #[serde(default)]
    pub data: BTreeMap<String, BTreeMap<String, DataValue>>,
}

impl Snapshot {
    pub fn apply(&self, device: &mut SimDevice) -> Result<(), HarnessError> {
        for (app, values) in &self.data {
            let st = device
                .app_state_mut(app)
                .ok_or_else(|| HarnessError::UnknownSnapshot(format!("{}: no app {app}", self.id)))?;
            for (k, v) in values {
                st.data.insert(k.clone(), v.clone());
            }
        }
        if !device.set_foreground(&self.foreground) {
            return Err(HarnessError::UnknownSnapshot(format!("{}: no app {}", self.id, self.foreground)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotSet {
    #[serde(default)]
    pub snapshots: Vec<Snapshot>,
}

impl SnapshotSet {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| HarnessError::Parse {
            path: path.display().to_string(),
            msg: e.to_string(),
        })
    }

    pub fn get(&self, id: &str) -> Result<&Snapshot, HarnessError> {
        self.snapshots
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| HarnessError::UnknownSnapshot(id.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub flags: AblationFlags,
    pub fault: FaultProfile,
    pub seed: u64,
}

impl SuiteConfig {
    pub fn new(flags: AblationFlags, fault: FaultProfile, seed: u64) -> Self {
        SuiteConfig { flags, fault, seed }
    }

    /// Per-task fault seed, so tasks are independent of run order.
    pub fn device_seed(&self, task_id: &str) -> u64 {
        let h = Sha256::digest(format!("{}/{task_id}", self.seed).as_bytes());
        u64::from_le_bytes(h[..8].try_into().expect("8 bytes"))
    }

    pub fn run_id(&self, task_id: &str) -> String {
        format!("{task_id}-s{}", self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub id: String,
    pub tags: Vec<String>,
    pub success: bool,
    pub outcome: Outcome,
    pub cycles: u32,
    pub replans: u32,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub trace_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// A task result with the full run behind it.
pub struct TaskRun {
    pub result: TaskResult,
    pub run: RunResult,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenTotals {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub config: SuiteConfig,
    pub tasks: Vec<TaskResult>,
    pub total: usize,
    pub passed: usize,
    /// Undefined for an empty suite.
    pub success_rate: Option<f64>,
    /// Token totals per model, summed from the traces.
    pub tokens: BTreeMap<String, TokenTotals>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl SuiteReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }

    pub fn failed(&self) -> impl Iterator<Item = &TaskResult> {
        self.tasks.iter().filter(|t| !t.success)
    }

    pub fn task(&self, id: &str) -> Option<&TaskResult> {
        self.tasks.iter().find(|t| t.id == id)
    }

    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<24} {:<8} {:<18} {:>6} {:>7} {:>9}", "task", "result", "outcome", "cycles", "replans", "tokens");
        for t in &self.tasks {
            let outcome = match &t.outcome {
                Outcome::Error(_) => "Error".to_string(),
                o => format!("{o:?}"),
            };
            let _ = writeln!(
                s,
                "{:<24} {:<8} {:<18} {:>6} {:>7} {:>9}",
                t.id,
                if t.success { "PASS" } else { "FAIL" },
                outcome,
                t.cycles,
                t.replans,
                t.input_tokens + t.output_tokens
            );
        }
        match self.success_rate {
            Some(sr) => {
                let _ = writeln!(s, "SR {}/{} = {:.1}%", self.passed, self.total, sr * 100.0);
            }
            None => {
                let _ = writeln!(s, "SR undefined: zero tasks");
            }
        }
        s
    }
}

/// Builds a device at the task's snapshot and runs the engine on it.
fn execute(
    spec: &TaskSpec,
    fx: &Fixtures,
    backend: &dyn LlmBackend,
    flags: AblationFlags,
    fault: FaultProfile,
    run_id: &str,
) -> (SimDevice, RunResult, Option<String>) {
    let mut device = SimDevice::new(fx.catalog.clone(), fault.clone());
    let setup = fx.snapshots.get(&spec.snapshot).and_then(|s| s.apply(&mut device)).err();
    let ctx = AgentCtx::new(backend, &fx.models, &fx.prompts);
    let engine = EngineConfig::new(flags).with_run_id(run_id).with_fault(fault);
    let (mut run, error) = match run_task(&spec.goal(), &mut device, &ctx, &engine) {
        Ok(r) => (r, None),
        Err(e) => (*e.partial, Some(e.kind.to_string())),
    };
    if let Some(e) = setup {
        run.outcome = Outcome::Error(e.to_string());
        return (device, run, Some(e.to_string()));
    }
    (device, run, error)
}

/// Runs one task on a fresh device. `run_id` defaults to the config's.
pub fn run_task_spec(
    spec: &TaskSpec,
    fx: &Fixtures,
    backend: &dyn LlmBackend,
    cfg: &SuiteConfig,
    run_id: Option<&str>,
) -> TaskRun {
    let fault = cfg.fault.clone().with_seed(cfg.device_seed(&spec.id));
    let run_id = run_id.map(str::to_string).unwrap_or_else(|| cfg.run_id(&spec.id));
    let (device, run, mut error) = execute(spec, fx, backend, cfg.flags, fault, &run_id);
    let world = World {
        device: &device,
        notes: &run.notes,
        output: run.output.as_ref(),
        final_state: run.final_state.as_ref(),
    };
    let holds = match check_success(&spec.predicate, &world) {
        Ok(b) => b,
        Err(e) => {
            error.get_or_insert(e.to_string());
            false
        }
    };
    let (input_tokens, output_tokens) = run
        .usages()
        .fold((0, 0), |(i, o), u| (i + u.input_tokens, o + u.output_tokens));
    let result = TaskResult {
        id: spec.id.clone(),
        tags: spec.tags.clone(),
        success: run.outcome == Outcome::Completed && holds,
        outcome: run.outcome.clone(),
        cycles: run.cycles_used,
        replans: run.replans,
        input_tokens,
        output_tokens,
        trace_hash: run.trace.hash(),
        output: run.output.clone(),
        error,
    };
    TaskRun { result, run }
}

fn assemble(cfg: &SuiteConfig, runs: &[TaskRun]) -> SuiteReport {
    let mut tokens: BTreeMap<String, TokenTotals> = BTreeMap::new();
    for r in runs {
        for u in r.run.trace.usages() {
            let t = tokens.entry(u.model_name.clone()).or_default();
            t.input_tokens += u.input_tokens;
            t.output_tokens += u.output_tokens;
        }
    }
    let total = runs.len();
    let passed = runs.iter().filter(|r| r.result.success).count();
    SuiteReport {
        config: cfg.clone(),
        tasks: runs.iter().map(|r| r.result.clone()).collect(),
        total,
        passed,
        success_rate: (total > 0).then(|| passed as f64 / total as f64),
        tokens,
        note: (total == 0).then(|| "zero tasks".to_string()),
    }
}

/// Runs every task concurrently, each on its own device, and keeps the
/// full runs.
pub fn run_suite_with_runs(
    suite: &[TaskSpec],
    fx: &Fixtures,
    backend: &dyn LlmBackend,
    cfg: &SuiteConfig,
) -> (SuiteReport, Vec<TaskRun>) {
    let runs: Vec<TaskRun> = suite.par_iter().map(|t| run_task_spec(t, fx, backend, cfg, None)).collect();
    (assemble(cfg, &runs), runs)
}

pub fn run_suite(suite: &[TaskSpec], fx: &Fixtures, backend: &dyn LlmBackend, cfg: &SuiteConfig) -> SuiteReport {
    run_suite_with_runs(suite, fx, backend, cfg).0
}

/// Re-runs the task named in a trace header with the flags, fault profile
/// (including its device seed) and run id recorded there.
pub fn rerun_trace(original: &Trace, fx: &Fixtures, backend: &dyn LlmBackend) -> Result<Trace, HarnessError> {
    let h = &original.header;
    let spec = fx.task(&h.task_id)?;
    let (_, run, _) = execute(spec, fx, backend, h.flags, h.fault.clone(), &h.run_id);
    Ok(run.trace)
}
