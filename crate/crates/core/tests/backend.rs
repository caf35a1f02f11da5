mod common;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use agentloom::backend::{
    fingerprint, AgentRole, BackendError, CompletionRequest, LiveBackend, LiveConfig, LlmBackend, Recorder,
    ScriptBook, ScriptedBackend,
};
use serde_json::{json, Value};

fn request(prompt: &str) -> CompletionRequest {
    CompletionRequest {
        role: AgentRole::Cortex,
        model: "Gemini 3 Pro".into(),
        prompt: prompt.into(),
        output_schema: json!({"type": "object"}),
        temperature: 0.0,
    }
}

struct Seen {
    auth: Option<String>,
    body: Value,
}

/// Answers each connection with the next canned (status, body) pair.
fn stub_server(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for (status, body) in replies {
            let Ok((stream, _)) = listener.accept() else { return };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            let mut auth = None;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if lower.starts_with("authorization:") {
                    auth = Some(line["authorization:".len()..].trim().to_string());
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(Seen {
                auth,
                body: serde_json::from_slice(&buf).unwrap_or(Value::Null),
            });
            let mut out = stream;
            write!(
                out,
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (url, seen)
}

fn ok_body(content: &str) -> String {
    json!({
        "model": "Gemini 3 Pro",
        "choices": [{ "message": { "role": "assistant", "content": content } }],
        "usage": { "prompt_tokens": 120, "completion_tokens": 7 }
    })
    .to_string()
}

fn fast_config(url: &str) -> LiveConfig {
    let mut cfg = LiveConfig::new(url);
    cfg.base_delay = Duration::from_millis(5);
    cfg.api_key = Some("sk-test".into());
    cfg
}

#[test]
fn live_backend_retries_rate_limits_and_reports_usage() {
    let (url, seen) = stub_server(vec![(429, "{}".into()), (200, ok_body(r#"{"actions":[]}"#))]);
    let backend = LiveBackend::new(fast_config(&url)).unwrap();
    let (text, usage) = backend.complete(&request("look at the screen")).unwrap();
    assert_eq!(text, r#"{"actions":[]}"#);
    assert_eq!((usage.input_tokens, usage.output_tokens), (120, 7));
    assert_eq!(usage.model_name, "Gemini 3 Pro");

    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 2);
    assert_eq!(seen[1].auth.as_deref(), Some("Bearer sk-test"));
    let body = &seen[1].body;
    assert_eq!(body["model"], "Gemini 3 Pro");
    assert_eq!(body["messages"][0]["content"], "look at the screen");
    assert_eq!(body["response_format"]["type"], "json_schema");
}

#[test]
fn live_backend_does_not_retry_client_errors() {
    let (url, seen) = stub_server(vec![(400, r#"{"error":"bad"}"#.into()), (200, ok_body("{}"))]);
    let backend = LiveBackend::new(fast_config(&url)).unwrap();
    match backend.complete(&request("x")) {
        Err(BackendError::Status { status: 400, .. }) => {}
        other => panic!("expected a 400, got {other:?}"),
    }
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn live_backend_gives_up_after_server_errors() {
    let (url, _) = stub_server(vec![(503, "{}".into()); 3]);
    let backend = LiveBackend::new(fast_config(&url)).unwrap();
    assert!(matches!(backend.complete(&request("x")), Err(BackendError::Status { status: 503, .. })));
}

#[test]
fn live_backend_rejects_malformed_payloads() {
    let (url, _) = stub_server(vec![(200, r#"{"choices":[]}"#.into())]);
    let backend = LiveBackend::new(fast_config(&url)).unwrap();
    assert!(matches!(backend.complete(&request("x")), Err(BackendError::BadResponse(_))));
}

#[test]
fn fingerprint_ignores_timestamp_and_spacing() {
    let a = "GOAL: add Alice\nTIMESTAMP: 2026-01-15T09:00:00Z\nscreen   list";
    let b = "GOAL: add  Alice\nTIMESTAMP: 2026-03-01T10:11:12Z\nscreen list\n";
    assert_eq!(fingerprint(a), fingerprint(b));
    assert_ne!(fingerprint(a), fingerprint("GOAL: add Bob\nscreen list"));
}

#[test]
fn scripted_backend_misses_unknown_prompts() {
    let backend = ScriptedBackend::new(ScriptBook::default());
    match backend.complete(&request("never recorded")) {
        Err(BackendError::MissingScriptEntry { role, fingerprint: fp }) => {
            assert_eq!(role, AgentRole::Cortex);
            assert_eq!(fp, fingerprint("never recorded"));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn recorder_output_replays_verbatim() {
    let fx = common::fixtures();
    let rec = Recorder::new(common::oracle(&fx));
    let prompts: Vec<CompletionRequest> = ["first prompt", "second prompt"].into_iter().map(request).collect();
    let live: Vec<String> = prompts.iter().map(|r| rec.complete(r).unwrap().0).collect();

    let dir = tempfile::tempdir().unwrap();
    rec.into_book().save_dir(dir.path()).unwrap();
    let replay = ScriptedBackend::from_dir(dir.path()).unwrap();
    for (req, want) in prompts.iter().zip(&live) {
        assert_eq!(&replay.complete(req).unwrap().0, want);
    }
}

#[test]
fn shipped_script_book_covers_the_base_suite() {
    let fx = common::fixtures();
    let backend = common::scripted(&fx);
    let cfg = agentloom::harness::SuiteConfig::new(
        agentloom::flags::AblationFlags::all_on(),
        agentloom::sim::FaultProfile::default(),
        agentloom::harness::PINNED_SEED,
    );
    let report = agentloom::harness::run_suite(&fx.suite, &fx, &backend, &cfg);
    let errors: Vec<_> = report.tasks.iter().filter_map(|t| t.error.clone()).collect();
    assert!(errors.is_empty(), "{errors:?}");
}
