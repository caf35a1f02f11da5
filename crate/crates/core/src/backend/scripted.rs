use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{estimated_usage, fingerprint, AgentRole, BackendError, CompletionRequest, LlmBackend, TokenUsage};

#[derive(Debug, Serialize, Deserialize)]
struct Line {
    fingerprint: String,
    response: String,
}

/// Canned responses keyed by (role, prompt fingerprint).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScriptBook {
    pub entries: BTreeMap<(AgentRole, String), String>,
}

impl ScriptBook {
    pub fn insert(&mut self, role: AgentRole, fingerprint: String, response: String) {
        self.entries.insert((role, fingerprint), response);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn merge(&mut self, other: ScriptBook) {
        self.entries.extend(other.entries);
    }

    /// One `<role>.jsonl` file per role, one entry per line, sorted by
    /// fingerprint.
    pub fn load_dir(dir: &Path) -> std::io::Result<Self> {
        let bad = |path: &Path, n: usize, msg: String| {
            std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}:{n}: {msg}", path.display()))
        };
        let mut book = ScriptBook::default();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().is_none_or(|e| e != "jsonl") {
                continue;
            }
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            let role: AgentRole = stem.parse().map_err(|e: String| bad(&path, 0, e))?;
            let text = std::fs::read_to_string(&path)?;
            for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let l: Line = serde_json::from_str(line).map_err(|e| bad(&path, i + 1, e.to_string()))?;
                book.insert(role, l.fingerprint, l.response);
            }
        }
        Ok(book)
    }

    pub fn save_dir(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut files: BTreeMap<AgentRole, String> = BTreeMap::new();
        for ((role, fp), response) in &self.entries {
            let line = Line {
                fingerprint: fp.clone(),
                response: response.clone(),
            };
            let out = files.entry(*role).or_default();
            out.push_str(&serde_json::to_string(&line).expect("serializable"));
            out.push('\n');
        }
        for (role, text) in files {
            std::fs::write(dir.join(format!("{role}.jsonl")), text)?;
        }
        Ok(())
    }
}

/// Strict replay: a missing entry is an error.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    book: Arc<ScriptBook>,
}

impl ScriptedBackend {
    pub fn new(book: ScriptBook) -> Self {
        ScriptedBackend { book: Arc::new(book) }
    }

    pub fn from_dir(dir: &Path) -> std::io::Result<Self> {
        Ok(Self::new(ScriptBook::load_dir(dir)?))
    }
}

impl LlmBackend for ScriptedBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<(String, TokenUsage), BackendError> {
        let fp = fingerprint(&req.prompt);
        match self.book.entries.get(&(req.role, fp.clone())) {
            Some(text) => Ok((text.clone(), estimated_usage(&req.prompt, text, &req.model))),
            None => Err(BackendError::MissingScriptEntry {
                role: req.role,
                fingerprint: fp,
            }),
        }
    }

    fn label(&self) -> String {
        "scripted".into()
    }
}

/// Wraps a backend and captures every exchange into a ScriptBook.
pub struct Recorder<B> {
    inner: B,
    book: Mutex<ScriptBook>,
}

impl<B: LlmBackend> Recorder<B> {
    pub fn new(inner: B) -> Self {
        Recorder {
            inner,
            book: Mutex::new(ScriptBook::default()),
        }
    }

    pub fn into_book(self) -> ScriptBook {
        self.book.into_inner().unwrap_or_else(|p| p.into_inner())
    }

    pub fn snapshot(&self) -> ScriptBook {
        self.book.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }
}

impl<B: LlmBackend> LlmBackend for Recorder<B> {
    fn complete(&self, req: &CompletionRequest) -> Result<(String, TokenUsage), BackendError> {
        let (text, usage) = self.inner.complete(req)?;
        self.book
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .insert(req.role, fingerprint(&req.prompt), text.clone());
        Ok((text, usage))
    }

    fn label(&self) -> String {
        self.inner.label()
    }
}
