use std::collections::BTreeMap;

use serde_json::{json, Map, Value};

use super::{call_structured, cortex::render_state, json_object, AgentCtx, AgentError, CallRecord};
use crate::backend::AgentRole;
use crate::domain::DeviceState;
use crate::scratchpad::Scratchpad;

const FIELD_TYPES: &[&str] = &["string", "number", "integer", "boolean"];

/// Output schemas are flat objects mapping field name to a type name.
fn check_schema(schema: &Value) -> Result<&Map<String, Value>, AgentError> {
    let obj = schema
        .as_object()
        .ok_or_else(|| AgentError::SchemaMismatch("schema must be an object".into()))?;
    if obj.is_empty() {
        return Err(AgentError::Precondition("empty output schema".into()));
    }
    for (k, t) in obj {
        match t.as_str() {
            Some(t) if FIELD_TYPES.contains(&t) => {}
            _ => return Err(AgentError::SchemaMismatch(format!("field {k} has unknown type {t}"))),
        }
    }
    Ok(obj)
}

pub fn conforms(value: &Value, schema: &Map<String, Value>) -> Result<(), String> {
    let obj = value.as_object().ok_or("output is not an object")?;
    for (k, t) in schema {
        let v = obj.get(k).ok_or_else(|| format!("missing field {k}"))?;
        let ok = match t.as_str().unwrap_or_default() {
            "string" => v.is_string(),
            "number" => v.is_number(),
            "integer" => v.is_i64() || v.is_u64(),
            "boolean" => v.is_boolean(),
            _ => false,
        };
        if !ok {
            return Err(format!("field {k} is not a {t}"));
        }
    }
    if let Some(extra) = obj.keys().find(|k| !schema.contains_key(*k)) {
        return Err(format!("unexpected field {extra}"));
    }
    Ok(())
}

fn to_json_schema(schema: &Map<String, Value>) -> Value {
    let props: Map<String, Value> = schema.iter().map(|(k, t)| (k.clone(), json!({ "type": t }))).collect();
    json!({ "type": "object", "required": schema.keys().collect::<Vec<_>>(), "properties": props })
}

/// Produces the task's structured answer from the final screen and notes.
pub fn outputter(
    goal_text: &str,
    final_state: &DeviceState,
    notes: &Scratchpad,
    schema: &Value,
    ctx: &AgentCtx<'_>,
    records: &mut Vec<CallRecord>,
) -> Result<Value, AgentError> {
    let fields = check_schema(schema)?;
    let fixture = ctx.prompts.get(AgentRole::Outputter)?;
    let mut values = BTreeMap::new();
    values.insert("goal", goal_text.to_string());
    values.insert("schema", serde_json::to_string(schema).expect("serializable"));
    values.insert("hierarchy", render_state(final_state));
    values.insert("notes", if notes.is_empty() { "(empty)".into() } else { notes.render() });
    let prompt = fixture.render(&values, &[], &ctx.timestamp);
    let parse = |text: &str| -> Result<Value, String> {
        let v = json_object(text)?;
        conforms(&v, fields)?;
        Ok(v)
    };
    call_structured(ctx, AgentRole::Outputter, prompt, to_json_schema(fields), parse, records).map_err(|e| match e {
        AgentError::Malformed { reason, .. } => AgentError::SchemaMismatch(reason),
        other => other,
    })
}

/// Pulls one piece of data out of free text.
pub fn hopper(
    content: &str,
    extraction_prompt: &str,
    ctx: &AgentCtx<'_>,
    records: &mut Vec<CallRecord>,
) -> Result<String, AgentError> {
    if extraction_prompt.trim().is_empty() {
        return Err(AgentError::Precondition("empty extraction prompt".into()));
    }
    if content.is_empty() {
        return Ok(String::new());
    }
    let fixture = ctx.prompts.get(AgentRole::Hopper)?;
    let mut values = BTreeMap::new();
    values.insert("content", content.to_string());
    values.insert("extraction", extraction_prompt.to_string());
    let prompt = fixture.render(&values, &[], &ctx.timestamp);
    let schema = json!({ "type": "object", "required": ["extraction"], "properties": { "extraction": {"type": "string"} } });
    let parse = |text: &str| -> Result<String, String> {
        let v = json_object(text)?;
        v.get("extraction")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| "missing extraction".into())
    };
    call_structured(ctx, AgentRole::Hopper, prompt, schema, parse, records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_checks() {
        assert!(matches!(check_schema(&json!({})), Err(AgentError::Precondition(_))));
        assert!(matches!(check_schema(&json!({"a": "blob"})), Err(AgentError::SchemaMismatch(_))));
        let s = json!({"name": "string", "n": "integer"});
        let fields = check_schema(&s).unwrap();
        assert!(conforms(&json!({"name": "Alice", "n": 3}), fields).is_ok());
        assert!(conforms(&json!({"name": "Alice"}), fields).is_err());
        assert!(conforms(&json!({"name": 1, "n": 3}), fields).is_err());
        assert!(conforms(&json!({"name": "A", "n": 3, "x": 1}), fields).is_err());
    }
}
