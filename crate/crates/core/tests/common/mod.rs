#![allow(dead_code)]

use std::path::PathBuf;

use agentloom::backend::{
    fingerprint, CompletionRequest, LlmBackend, OracleBackend, ScriptedBackend, TokenUsage, BackendError,
};
use agentloom::harness::Fixtures;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use sha2::{Digest, Sha256};

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn fixtures() -> Fixtures {
    Fixtures::load(&fixture_dir()).expect("shipped fixtures load")
}

pub fn oracle(fx: &Fixtures) -> OracleBackend {
    OracleBackend::load_dir(&fx.playbook_dir()).expect("playbooks load")
}

pub fn scripted(fx: &Fixtures) -> ScriptedBackend {
    ScriptedBackend::from_dir(&fx.scriptbook_dir()).expect("script book loads")
}

/// Wraps the oracle and mutates some of its answers. The choice depends
/// only on the seed, role and prompt fingerprint, so a rerun with the same
/// prompts sees the same answers.
pub struct PerturbingBackend<B> {
    pub inner: B,
    pub seed: u64,
    /// Chance that a given answer is perturbed.
    pub rate: f64,
}

impl<B: LlmBackend> PerturbingBackend<B> {
    pub fn new(inner: B, seed: u64, rate: f64) -> Self {
        PerturbingBackend { inner, seed, rate }
    }

    fn rng_for(&self, req: &CompletionRequest) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(req.role.name().as_bytes());
        h.update(fingerprint(&req.prompt).as_bytes());
        let d = h.finalize();
        ChaCha8Rng::seed_from_u64(u64::from_le_bytes(d[..8].try_into().unwrap()))
    }
}

fn strings(v: &Value, out: &mut Vec<String>) {
    match v {
        Value::String(s) => out.push(s.clone()),
        Value::Array(a) => a.iter().for_each(|x| strings(x, out)),
        Value::Object(o) => o.values().for_each(|x| strings(x, out)),
        _ => {}
    }
}

/// Picks a random node of the tree and applies one of a few edits.
fn mutate(v: &mut Value, pool: &[String], rng: &mut ChaCha8Rng) {
    match v {
        Value::Array(a) if !a.is_empty() && rng.random_bool(0.5) => {
            let i = rng.random_range(0..a.len());
            match rng.random_range(0..3) {
                0 => {
                    a.remove(i);
                }
                1 => {
                    let dup = a[i].clone();
                    a.insert(i, dup);
                }
                _ => mutate(&mut a[i], pool, rng),
            }
        }
        Value::Array(a) if !a.is_empty() => {
            let i = rng.random_range(0..a.len());
            mutate(&mut a[i], pool, rng)
        }
        Value::Object(o) if !o.is_empty() => {
            let keys: Vec<String> = o.keys().cloned().collect();
            let k = &keys[rng.random_range(0..keys.len())];
            if rng.random_bool(0.15) {
                o.remove(k);
            } else {
                mutate(o.get_mut(k).unwrap(), pool, rng);
            }
        }
        Value::String(s) if !pool.is_empty() => *s = pool[rng.random_range(0..pool.len())].clone(),
        Value::Bool(b) => *b = !*b,
        other => *other = Value::Null,
    }
}

impl<B: LlmBackend> LlmBackend for PerturbingBackend<B> {
    fn complete(&self, req: &CompletionRequest) -> Result<(String, TokenUsage), BackendError> {
        let (text, usage) = self.inner.complete(req)?;
        let mut rng = self.rng_for(req);
        if !rng.random_bool(self.rate) {
            return Ok((text, usage));
        }
        let out = match serde_json::from_str::<Value>(&text) {
            Ok(mut v) if rng.random_bool(0.9) => {
                let mut pool = Vec::new();
                strings(&v, &mut pool);
                mutate(&mut v, &pool, &mut rng);
                v.to_string()
            }
            _ => text.chars().take(text.chars().count() / 2).collect(),
        };
        Ok((out, usage))
    }

    fn label(&self) -> String {
        format!("perturbed({})", self.inner.label())
    }
}
