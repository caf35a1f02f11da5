//! Task-scoped key-value notes exposed to the agent as tools.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Note {
    pub key: String,
    pub value: String,
    pub written_at_cycle: u32,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("note key must be nonempty")]
pub struct EmptyKey;

/// Notes in first-write order. A fresh pad is created for every task run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scratchpad {
    notes: Vec<Note>,
}

impl Scratchpad {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn save_note(&mut self, key: &str, value: &str, cycle: u32) -> Result<(), EmptyKey> {
        if key.is_empty() {
            return Err(EmptyKey);
        }
        match self.notes.iter_mut().find(|n| n.key == key) {
            Some(n) => {
                n.value = value.to_string();
                n.written_at_cycle = cycle;
            }
            None => self.notes.push(Note {
                key: key.to_string(),
                value: value.to_string(),
                written_at_cycle: cycle,
            }),
        }
        Ok(())
    }

    pub fn read_note(&self, key: &str) -> Option<&str> {
        self.notes.iter().find(|n| n.key == key).map(|n| n.value.as_str())
    }

    pub fn list_notes(&self) -> Vec<&str> {
        self.notes.iter().map(|n| n.key.as_str()).collect()
    }

    pub fn notes(&self) -> &[Note] {
        &self.notes
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }

    /// One `key: value` line per note, for prompts.
    pub fn render(&self) -> String {
        self.notes
            .iter()
            .map(|n| format!("{}: {}", n.key, n.value))
            .collect::<Vec<_>>()
            .join("\n")
    }
}
