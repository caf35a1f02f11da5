//! Multi-agent mobile automation on a simulated device: agent graph,
//! checked execution, loop detection, and an evaluation harness.

pub mod agents;
pub mod backend;
pub mod domain;
pub mod engine;
pub mod exec;
pub mod flags;
pub mod harness;
pub mod metacog;
pub mod scratchpad;
pub mod sim;
pub mod trace;
