//! Run traces: one JSON header line, then one record per node invocation.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::TokenUsage;
use crate::flags::AblationFlags;
use crate::sim::FaultProfile;

pub const TRACE_FORMAT: &str = "agentloom-trace";
pub const TRACE_VERSION: u32 = 1;

/// Short hex digest used for node inputs and outputs.
pub fn digest(text: &str) -> String {
    hex::encode(&Sha256::digest(text.as_bytes())[..12])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format: String,
    pub version: u32,
    pub run_id: String,
    pub task_id: String,
    pub flags: AblationFlags,
    pub fault: FaultProfile,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub run_id: String,
    pub cycle_index: u32,
    pub node: String,
    pub start: u64,
    pub end: u64,
    pub input_digest: String,
    pub output_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<TokenUsage>,
    pub status: String,
    /// Device sequence number observed by the node, where one applies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<u64>,
    /// Fingerprints of the backend requests issued by the node.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub calls: Vec<String>,
}

/// A record before ordinals are assigned.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeEvent {
    pub node: &'static str,
    pub input: String,
    pub output: String,
    pub usage: Option<TokenUsage>,
    pub status: String,
    pub seq: Option<u64>,
    pub calls: Vec<String>,
}

impl NodeEvent {
    pub fn new(node: &'static str, input: &str, output: &str, status: impl Into<String>) -> Self {
        NodeEvent {
            node,
            input: digest(input),
            output: digest(output),
            usage: None,
            status: status.into(),
            seq: None,
            calls: Vec::new(),
        }
    }

    pub fn with_seq(mut self, seq: u64) -> Self {
        self.seq = Some(seq);
        self
    }

    pub fn with_usage(mut self, usage: Option<TokenUsage>, calls: Vec<String>) -> Self {
        self.usage = usage;
        self.calls = calls;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub records: Vec<TraceRecord>,
    next: u64,
}

impl Trace {
    pub fn new(run_id: &str, task_id: &str, flags: AblationFlags, fault: FaultProfile) -> Self {
        Trace {
            header: TraceHeader {
                format: TRACE_FORMAT.into(),
                version: TRACE_VERSION,
                run_id: run_id.into(),
                task_id: task_id.into(),
                flags,
                fault,
            },
            records: Vec::new(),
            next: 0,
        }
    }

    /// Appends an event with the next pair of ordinals.
    pub fn push(&mut self, cycle_index: u32, ev: NodeEvent) {
        let start = self.next;
        self.next += 2;
        self.records.push(TraceRecord {
            run_id: self.header.run_id.clone(),
            cycle_index,
            node: ev.node.to_string(),
            start,
            end: start + 1,
            input_digest: ev.input,
            output_digest: ev.output,
            usage: ev.usage,
            status: ev.status,
            seq: ev.seq,
            calls: ev.calls,
        });
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("serializable");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("serializable"));
            out.push('\n');
        }
        out
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_jsonl().as_bytes()))
    }

    pub fn parse(text: &str) -> Result<Trace, TraceError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or(TraceError::Empty)?;
        let header: TraceHeader = serde_json::from_str(first).map_err(|e| TraceError::Line(1, e.to_string()))?;
        if header.format != TRACE_FORMAT || header.version != TRACE_VERSION {
            return Err(TraceError::Line(1, format!("unsupported trace {} v{}", header.format, header.version)));
        }
        let mut records = Vec::new();
        for (i, line) in lines {
            let r: TraceRecord = serde_json::from_str(line).map_err(|e| TraceError::Line(i + 1, e.to_string()))?;
            records.push(r);
        }
        let next = records.last().map(|r| r.end + 1).unwrap_or(0);
        Ok(Trace { header, records, next })
    }

    /// Position of the first difference: 0 for the header, N for the N-th
    /// record. `None` when the traces are identical.
    pub fn first_mismatch(&self, other: &Trace) -> Option<usize> {
        if self.header != other.header {
            return Some(0);
        }
        let n = self.records.len().max(other.records.len());
        (0..n)
            .find(|&i| self.records.get(i) != other.records.get(i))
            .map(|i| i + 1)
    }

    pub fn cycles(&self) -> u32 {
        self.records.iter().filter(|r| r.node == "route").count() as u32
    }

    pub fn usages(&self) -> impl Iterator<Item = &TokenUsage> {
        self.records.iter().filter_map(|r| r.usage.as_ref())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TraceError {
    #[error("empty trace")]
    Empty,
    #[error("line {0}: {1}")]
    Line(usize, String),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip_and_mismatch() {
        let mut t = Trace::new("r1", "task", AblationFlags::all_on(), FaultProfile::default());
        t.push(1, NodeEvent::new("contextor", "", "state", "ok").with_seq(3));
        t.push(1, NodeEvent::new("route", "", "", "Continue"));
        let text = t.to_jsonl();
        let back = Trace::parse(&text).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.hash(), t.hash());
        assert_eq!(t.cycles(), 1);

        let edited = text.replace("Continue", "Replan");
        let e = Trace::parse(&edited).unwrap();
        assert_eq!(t.first_mismatch(&e), Some(2));
        assert!(Trace::parse("").is_err());
    }
}
