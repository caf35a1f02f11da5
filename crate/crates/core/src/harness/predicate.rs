//! Success predicates evaluated against the final device data.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::HarnessError;
use crate::domain::DeviceState;
use crate::scratchpad::Scratchpad;
use crate::sim::SimDevice;

pub const BUILT_INS: &[&str] = &[
    "field_equals",
    "record_exists",
    "screen_is",
    "note_equals",
    "output_equals",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredicateSpec {
    pub name: String,
    #[serde(default)]
    pub params: Map<String, Value>,
}

impl PredicateSpec {
    pub fn new(name: &str, params: Value) -> Self {
        PredicateSpec {
            name: name.to_string(),
            params: params.as_object().cloned().unwrap_or_default(),
        }
    }

    pub fn is_registered(&self) -> bool {
        BUILT_INS.contains(&self.name.as_str())
    }
}

/// Everything a predicate may look at once a run is over.
pub struct World<'a> {
    pub device: &'a SimDevice,
    pub notes: &'a Scratchpad,
    pub output: Option<&'a Value>,
    pub final_state: Option<&'a DeviceState>,
}

fn str_param<'p>(p: &'p PredicateSpec, key: &str) -> Result<&'p str, HarnessError> {
    p.params
        .get(key)
        .and_then(Value::as_str)
        .ok_or_else(|| HarnessError::BadParams(p.name.clone(), format!("missing string {key}")))
}

pub fn check_success(p: &PredicateSpec, world: &World<'_>) -> Result<bool, HarnessError> {
    match p.name.as_str() {
        "field_equals" => {
            let app = str_param(p, "app")?;
            let key = str_param(p, "key")?;
            let value = str_param(p, "value")?;
            Ok(world
                .device
                .app_state(app)
                .and_then(|s| s.text(key))
                .is_some_and(|v| v == value))
        }
        "record_exists" => {
            let app = str_param(p, "app")?;
            let coll = str_param(p, "collection")?;
            let want: BTreeMap<String, String> = match p.params.get("match") {
                Some(m) => serde_json::from_value(m.clone())
                    .map_err(|e| HarnessError::BadParams(p.name.clone(), e.to_string()))?,
                None => BTreeMap::new(),
            };
            let exists = p.params.get("exists").and_then(Value::as_bool).unwrap_or(true);
            let Some(st) = world.device.app_state(app) else { return Ok(false) };
            let recs = st.records(coll);
            let found = recs.iter().any(|r| want.iter().all(|(k, v)| r.get(k) == Some(v)));
            let count_ok = match p.params.get("count").and_then(Value::as_u64) {
                Some(n) => recs.len() as u64 == n,
                None => true,
            };
            Ok(found == exists && count_ok)
        }
        "screen_is" => {
            let app = str_param(p, "app")?;
            let screen = str_param(p, "screen")?;
            let on_screen = world.device.current_screen() == Some((app, screen));
            let shows = match p.params.get("shows").and_then(Value::as_str) {
                Some(text) => world
                    .final_state
                    .is_some_and(|st| st.hierarchy.iter().any(|n| n.text.as_deref() == Some(text))),
                None => true,
            };
            Ok(on_screen && shows)
        }
        "note_equals" => {
            let key = str_param(p, "key")?;
            let value = str_param(p, "value")?;
            Ok(world.notes.read_note(key) == Some(value))
        }
        "output_equals" => {
            let field = str_param(p, "field")?;
            let want = p
                .params
                .get("value")
                .ok_or_else(|| HarnessError::BadParams(p.name.clone(), "missing value".into()))?;
            Ok(world
                .output
                .and_then(|o| o.get(field))
                .is_some_and(|v| json_eq(v, want)))
        }
        other => Err(HarnessError::UnknownPredicate(other.to_string())),
    }
}

/// Numbers compare by value so `950.0` matches `950`.
fn json_eq(a: &Value, b: &Value) -> bool {
    match (a.as_f64(), b.as_f64()) {
        (Some(x), Some(y)) => x == y,
        _ => a == b,
    }
}
