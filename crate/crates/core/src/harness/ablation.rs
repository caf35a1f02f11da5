//! Single-component-off sweeps against the full system.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::suite::{run_suite, SuiteConfig, SuiteReport, TaskSpec};
use super::Fixtures;
use crate::backend::LlmBackend;
use crate::engine::Outcome;
use crate::flags::Component;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    /// `None` for the full system.
    pub disabled: Option<Component>,
    pub success_rate: Option<f64>,
    /// Percentage points relative to the full system.
    pub delta_pp: f64,
    /// Tasks that pass in the full system but fail here.
    pub new_failures: Vec<String>,
    pub budget_exhausted: Vec<String>,
    pub report: SuiteReport,
}

impl AblationRow {
    pub fn label(&self) -> String {
        match self.disabled {
            None => "full system".into(),
            Some(c) => format!("-{c}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn full(&self) -> &AblationRow {
        &self.rows[0]
    }

    pub fn row(&self, c: Component) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.disabled == Some(c))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<28} {:>8} {:>8}  new failures", "configuration", "SR", "dSR(pp)");
        for r in &self.rows {
            let sr = r.success_rate.map(|v| format!("{:.1}", v * 100.0)).unwrap_or_else(|| "n/a".into());
            let _ = writeln!(
                s,
                "{:<28} {:>8} {:>+8.1}  {}",
                r.label(),
                sr,
                r.delta_pp,
                r.new_failures.join(",")
            );
        }
        s
    }
}

fn row(disabled: Option<Component>, report: SuiteReport, full: Option<&SuiteReport>) -> AblationRow {
    let pct = |r: &SuiteReport| r.success_rate.unwrap_or(0.0) * 100.0;
    let delta_pp = full.map(|f| pct(&report) - pct(f)).unwrap_or(0.0);
    let new_failures = report
        .failed()
        .filter(|t| full.is_none_or(|f| f.task(&t.id).is_some_and(|ft| ft.success)))
        .map(|t| t.id.clone())
        .collect();
    let budget_exhausted = report
        .tasks
        .iter()
        .filter(|t| t.outcome == Outcome::BudgetExhausted)
        .map(|t| t.id.clone())
        .collect();
    AblationRow {
        disabled,
        success_rate: report.success_rate,
        delta_pp,
        new_failures,
        budget_exhausted,
        report,
    }
}

/// One suite run with every component on, then one per listed component
/// with only that component off.
pub fn ablation_sweep(
    suite: &[TaskSpec],
    components: &[Component],
    fx: &Fixtures,
    backend: &dyn LlmBackend,
    base: &SuiteConfig,
) -> AblationReport {
    let mut full_cfg = base.clone();
    full_cfg.flags = crate::flags::AblationFlags::all_on();
    let full = run_suite(suite, fx, backend, &full_cfg);
    let mut rows = vec![row(None, full.clone(), None)];
    rows[0].new_failures.clear();
    for &c in components {
        let mut cfg = full_cfg.clone();
        cfg.flags = cfg.flags.without(c);
        let r = run_suite(suite, fx, backend, &cfg);
        rows.push(row(Some(c), r, Some(&full)));
    }
    AblationReport { rows }
}
