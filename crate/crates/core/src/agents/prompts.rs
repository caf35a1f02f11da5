//! Prompt fixtures: plain-text templates split into `### NAME` sections.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::backend::AgentRole;

/// Placeholders a template may use.
pub const PLACEHOLDERS: &[&str] = &[
    "goal",
    "subgoal",
    "next_subgoal",
    "hierarchy",
    "screenshot_digest",
    "history",
    "notes",
    "metacog",
    "plan",
    "revision",
    "completed",
    "failure",
    "claims",
    "actions",
    "schema",
    "content",
    "extraction",
];

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("reading prompt {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("prompt {name}: unknown placeholder {{{placeholder}}}")]
    UnknownPlaceholder { name: String, placeholder: String },
    #[error("prompt fixture for {0} missing")]
    Missing(AgentRole),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptFixture {
    pub name: String,
    pub template: String,
    pub pinned: bool,
}

impl PromptFixture {
    pub fn new(name: impl Into<String>, template: impl Into<String>) -> Result<Self, PromptError> {
        let f = PromptFixture {
            name: name.into(),
            template: template.into(),
            pinned: true,
        };
        for p in placeholders_in(&f.template) {
            if !PLACEHOLDERS.contains(&p.as_str()) {
                return Err(PromptError::UnknownPlaceholder {
                    name: f.name.clone(),
                    placeholder: p,
                });
            }
        }
        Ok(f)
    }

    /// Fills placeholders in one pass, drops the named sections and appends
    /// the timestamp line.
    pub fn render(&self, values: &BTreeMap<&str, String>, drop_sections: &[&str], timestamp: &str) -> String {
        let mut out = String::new();
        let mut skipping = false;
        for line in self.template.lines() {
            if let Some(name) = line.strip_prefix("### ") {
                skipping = drop_sections.contains(&name.trim());
            }
            if skipping {
                continue;
            }
            out.push_str(&fill(line, values));
            out.push('\n');
        }
        out.push_str("TIMESTAMP: ");
        out.push_str(timestamp);
        out.push('\n');
        out
    }
}

fn placeholders_in(template: &str) -> Vec<String> {
    let mut found = Vec::new();
    let mut rest = template;
    while let Some(i) = rest.find('{') {
        let after = &rest[i + 1..];
        match after.find('}') {
            Some(j) if after[..j].chars().all(|c| c.is_ascii_lowercase() || c == '_') && j > 0 => {
                found.push(after[..j].to_string());
                rest = &after[j + 1..];
            }
            _ => rest = after,
        }
    }
    found
}

fn fill(line: &str, values: &BTreeMap<&str, String>) -> String {
    let mut out = String::new();
    let mut rest = line;
    while let Some(i) = rest.find('{') {
        out.push_str(&rest[..i]);
        let after = &rest[i + 1..];
        let hit = after.find('}').and_then(|j| values.get(&after[..j]).map(|v| (j, v)));
        match hit {
            Some((j, v)) => {
                out.push_str(v);
                rest = &after[j + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// One fixture per agent role, loaded from `<dir>/<role>.txt`.
#[derive(Debug, Clone, Default)]
pub struct PromptSet {
    pub fixtures: BTreeMap<AgentRole, PromptFixture>,
}

impl PromptSet {
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut fixtures = BTreeMap::new();
        for role in AgentRole::ALL {
            if role == AgentRole::Contextor {
                continue;
            }
            let path = dir.join(format!("{role}.txt"));
            let text = std::fs::read_to_string(&path).map_err(|e| PromptError::Io {
                path: path.display().to_string(),
                source: e,
            })?;
            fixtures.insert(role, PromptFixture::new(role.name(), text)?);
        }
        Ok(PromptSet { fixtures })
    }

    pub fn get(&self, role: AgentRole) -> Result<&PromptFixture, PromptError> {
        self.fixtures.get(&role).ok_or(PromptError::Missing(role))
    }
}

/// Splits an assembled prompt back into its sections (header -> body).
pub fn sections(prompt: &str) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut current: Option<String> = None;
    let mut body = String::new();
    for line in prompt.lines() {
        if let Some(name) = line.strip_prefix("### ") {
            if let Some(c) = current.take() {
                out.insert(c, std::mem::take(&mut body));
            }
            current = Some(name.trim().to_string());
            continue;
        }
        if line.starts_with("TIMESTAMP: ") {
            continue;
        }
        if current.is_some() {
            body.push_str(line);
            body.push('\n');
        }
    }
    if let Some(c) = current {
        out.insert(c, body);
    }
    out
}
