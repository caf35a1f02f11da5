mod common;

use agentloom::flags::{AblationFlags, Component};
use agentloom::harness::{rerun_trace, run_task_spec, SuiteConfig, PINNED_SEED};
use agentloom::sim::FaultProfile;
use agentloom::trace::{Trace, TraceError};

fn traced(task: &str, flags: AblationFlags, fault: &str) -> Trace {
    let fx = common::fixtures();
    let cfg = SuiteConfig::new(flags, FaultProfile::named(fault).unwrap(), PINNED_SEED);
    run_task_spec(fx.task(task).unwrap(), &fx, &common::scripted(&fx), &cfg, None).run.trace
}

#[test]
fn trace_text_round_trips() {
    let t = traced("contacts_add_bob", AblationFlags::all_on(), "keyboard");
    let text = t.to_jsonl();
    let back = Trace::parse(&text).unwrap();
    assert_eq!(back.to_jsonl(), text);
    assert_eq!(back.hash(), t.hash());
    assert_eq!(back.first_mismatch(&t), None);
}

#[test]
fn ordinals_strictly_increase() {
    let t = traced("notes_find_meeting", AblationFlags::all_on(), "keyboard");
    for w in t.records.windows(2) {
        assert!(w[0].start < w[0].end && w[0].end < w[1].start);
    }
    assert!(t.records.iter().all(|r| r.run_id == t.header.run_id));
}

#[test]
fn replay_matches_for_every_task() {
    let fx = common::fixtures();
    let backend = common::scripted(&fx);
    for flags in [AblationFlags::all_on(), AblationFlags::all_on().without(Component::MultiAgent)] {
        let cfg = SuiteConfig::new(flags, FaultProfile::named("keyboard").unwrap(), PINNED_SEED);
        for spec in &fx.suite {
            let t = run_task_spec(spec, &fx, &backend, &cfg, None).run.trace;
            let again = rerun_trace(&t, &fx, &backend).unwrap();
            assert_eq!(t.first_mismatch(&again), None, "{}", spec.id);
        }
    }
}

#[test]
fn edited_record_is_reported() {
    let fx = common::fixtures();
    let t = traced("contacts_add_alice", AblationFlags::all_on(), "default");
    let mut lines: Vec<String> = t.to_jsonl().lines().map(String::from).collect();
    // Line 0 is the header, so record N sits on line N.
    let n = 3;
    lines[n] = lines[n].replace("\"status\":\"", "\"status\":\"edited ");
    let edited = Trace::parse(&lines.join("\n")).unwrap();
    let fresh = rerun_trace(&edited, &fx, &common::scripted(&fx)).unwrap();
    assert_eq!(edited.first_mismatch(&fresh), Some(n));
}

#[test]
fn malformed_traces_are_rejected() {
    assert_eq!(Trace::parse(""), Err(TraceError::Empty));
    assert!(matches!(Trace::parse("{\"format\":\"other\"}"), Err(TraceError::Line(1, _))));
    let t = traced("settings_dark_mode", AblationFlags::all_on(), "default");
    let mut text = t.to_jsonl();
    text.push_str("not json\n");
    assert!(matches!(Trace::parse(&text), Err(TraceError::Line(_, _))));
}
