//! History analysis run before each decision: repeated state/action cycles,
//! stagnation on one subgoal, and evidence of work already done.

use std::collections::BTreeSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{ActionDecision, DeviceState, Plan, SubgoalStatus};

pub const DEFAULT_WINDOW: usize = 8;
pub const DEFAULT_STAGNATION: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub cycle_index: u32,
    pub state_fingerprint: String,
    pub action_fingerprint: String,
    pub subgoal_id: String,
    pub ok: bool,
}

fn short_hash(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    hex::encode(&h.finalize()[..8])
}

/// Screen plus package; seq and timestamp are left out on purpose so that
/// revisiting a screen yields the same fingerprint.
pub fn state_fingerprint(state: &DeviceState) -> String {
    short_hash(&[&state.screenshot_digest, &state.focused_package])
}

pub fn action_fingerprint(action: &ActionDecision) -> String {
    let sel = action.target.as_ref().map(|t| t.canonical()).unwrap_or_default();
    short_hash(&[action.kind.tool_name(), &sel, action.payload.as_deref().unwrap_or("")])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleFinding {
    pub period: usize,
    pub occurrences: usize,
    /// Indices into the full entry list covered by the repetition.
    pub span: Range<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetacogReport {
    pub cycle: Option<CycleFinding>,
    pub stagnant: bool,
    pub completed_evidence: BTreeSet<String>,
}

impl MetacogReport {
    pub fn needs_pivot(&self) -> bool {
        self.cycle.is_some() || self.stagnant
    }

    pub fn render(&self) -> String {
        let cycle = match &self.cycle {
            Some(c) => format!(
                "cycle: period={} occurrences={} span={}..{}",
                c.period, c.occurrences, c.span.start, c.span.end
            ),
            None => "cycle: none".into(),
        };
        let ev: Vec<&str> = self.completed_evidence.iter().map(String::as_str).collect();
        format!(
            "{cycle}\nstagnant: {}\ncompleted_actions: {}",
            self.stagnant,
            if ev.is_empty() { "-".into() } else { ev.join(",") }
        )
    }
}

/// Z-array: z[i] is the length of the longest common prefix of `s` and
/// `s[i..]`; z[0] is defined as `s.len()`.
fn z_array<T: PartialEq>(s: &[T]) -> Vec<usize> {
    let n = s.len();
    let mut z = vec![0; n];
    if n == 0 {
        return z;
    }
    z[0] = n;
    let (mut l, mut r) = (0, 0);
    for i in 1..n {
        if i < r {
            z[i] = (r - i).min(z[i - l]);
        }
        while i + z[i] < n && s[z[i]] == s[i + z[i]] {
            z[i] += 1;
        }
        if i + z[i] > r {
            l = i;
            r = i + z[i];
        }
    }
    z
}

/// Smallest period p <= window/2 such that the last 2p entries are the same
/// (state, action) block twice.
pub fn detect_cycle(entries: &[HistoryEntry], window: usize) -> Option<CycleFinding> {
    assert!(window >= 2, "window must be at least 2");
    let n = entries.len();
    let w = window.min(n);
    // Reversed tail, so trailing repetition becomes a prefix property.
    let rev: Vec<(&str, &str)> = entries[n - w..]
        .iter()
        .rev()
        .map(|e| (e.state_fingerprint.as_str(), e.action_fingerprint.as_str()))
        .collect();
    let z = z_array(&rev);
    (1..=w / 2).find(|&p| z[p] >= p).map(|p| {
        let occurrences = 1 + z[p] / p;
        CycleFinding {
            period: p,
            occurrences,
            span: n - occurrences * p..n,
        }
    })
}

pub fn evaluate(entries: &[HistoryEntry], plan: &Plan, window: usize, stagnation: usize) -> MetacogReport {
    let cycle = if entries.len() >= 2 { detect_cycle(entries, window) } else { None };
    let stagnant = match (plan.active(), entries.last()) {
        (Some(active), Some(last)) => {
            let run = entries
                .iter()
                .rev()
                .take_while(|e| e.subgoal_id == active.id && e.state_fingerprint == last.state_fingerprint)
                .count();
            run >= stagnation
        }
        _ => false,
    };
    let completed_evidence = entries
        .iter()
        .filter(|e| e.ok)
        .filter(|e| plan.get(&e.subgoal_id).is_some_and(|s| s.status() == SubgoalStatus::Completed))
        .map(|e| e.action_fingerprint.clone())
        .collect();
    MetacogReport {
        cycle,
        stagnant,
        completed_evidence,
    }
}
