//! Evaluation harness: task suites, success predicates, ablation sweeps,
//! cost ledger and Pareto analysis.

pub mod ablation;
pub mod cost;
pub mod pareto;
pub mod predicate;
pub mod suite;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use ablation::{ablation_sweep, AblationReport, AblationRow};
pub use cost::{compute_cost, CostError, PricingTable, Rate};
pub use rust_decimal::Decimal;
pub use pareto::{pareto_frontier, ConfigPoint};
pub use predicate::{check_success, PredicateSpec, World};
pub use suite::{
    load_suite, rerun_trace, run_suite, run_suite_with_runs, run_task_spec, Snapshot, SnapshotSet, SuiteConfig, SuiteReport,
    TaskResult, TaskRun, TaskSpec,
};

use crate::agents::prompts::PromptError;
use crate::agents::PromptSet;
use crate::backend::{LlmBackend, ModelAssignment, Recorder, ScriptBook};
use crate::flags::{AblationFlags, Component};
use crate::sim::FaultProfile;
use crate::sim::{AppCatalog, AppDefError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("unknown predicate {0:?}")]
    UnknownPredicate(String),
    #[error("predicate {0}: {1}")]
    BadParams(String, String),
    #[error("unknown snapshot {0:?}")]
    UnknownSnapshot(String),
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("{0}")]
    Io(String),
    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },
    #[error(transparent)]
    App(#[from] AppDefError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// The on-disk fixture tree:
///
/// ```text
/// apps/*.toml        app definitions
/// prompts/*.txt      prompt templates, one per role
/// playbooks/*.toml   oracle policies, one per goal
/// scriptbook/        recorded backend responses
/// suite.jsonl        task specs
/// snapshots.toml     starting states
/// pricing.toml       model rates
/// ```
pub struct Fixtures {
    pub dir: PathBuf,
    pub catalog: AppCatalog,
    pub prompts: PromptSet,
    pub snapshots: SnapshotSet,
    pub suite: Vec<TaskSpec>,
    pub models: ModelAssignment,
}

impl Fixtures {
    pub fn load(dir: &Path) -> Result<Self, HarnessError> {
        if !dir.is_dir() {
            return Err(HarnessError::Io(format!("fixture directory {} not found", dir.display())));
        }
        let catalog = AppCatalog::load_dir(&dir.join("apps"))?;
        let prompts = PromptSet::load_dir(&dir.join("prompts"))?;
        let snapshots = SnapshotSet::load(&dir.join("snapshots.toml"))?;
        let suite = load_suite(&dir.join("suite.jsonl"))?;
        let fx = Fixtures {
            dir: dir.to_path_buf(),
            catalog,
            prompts,
            snapshots,
            suite,
            models: ModelAssignment::platform_default(),
        };
        fx.check()?;
        Ok(fx)
    }

    /// Every task's snapshot and predicate must resolve.
    pub fn check(&self) -> Result<(), HarnessError> {
        for t in &self.suite {
            self.snapshots.get(&t.snapshot)?;
            if !t.predicate.is_registered() {
                return Err(HarnessError::UnknownPredicate(t.predicate.name.clone()));
            }
        }
        Ok(())
    }

    pub fn task(&self, id: &str) -> Result<&TaskSpec, HarnessError> {
        self.suite
            .iter()
            .find(|t| t.id == id)
            .ok_or_else(|| HarnessError::UnknownTask(id.to_string()))
    }

    pub fn playbook_dir(&self) -> PathBuf {
        self.dir.join("playbooks")
    }

    pub fn scriptbook_dir(&self) -> PathBuf {
        self.dir.join("scriptbook")
    }

    pub fn pricing_path(&self) -> PathBuf {
        self.dir.join("pricing.toml")
    }
}

/// Fault seed used by the shipped script book and the ablation checks.
pub const PINNED_SEED: u64 = 7;

/// Every configuration the shipped script book covers: the full system and
/// each single-component ablation, under both named fault profiles.
pub fn recording_matrix(seed: u64) -> Vec<SuiteConfig> {
    let mut flag_sets = vec![AblationFlags::all_on()];
    flag_sets.extend(Component::ALL.iter().map(|&c| AblationFlags::all_on().without(c)));
    let mut out = Vec::new();
    for fault in ["default", "keyboard"] {
        let fault = FaultProfile::named(fault).expect("named profile");
        for flags in &flag_sets {
            out.push(SuiteConfig::new(*flags, fault.clone(), seed));
        }
    }
    out
}

/// Runs the suite under each configuration through `backend`, capturing
/// every exchange.
pub fn record_book<B: LlmBackend>(fx: &Fixtures, backend: B, configs: &[SuiteConfig]) -> ScriptBook {
    let rec = Recorder::new(backend);
    for cfg in configs {
        run_suite(&fx.suite, fx, &rec, cfg);
    }
    rec.into_book()
}
