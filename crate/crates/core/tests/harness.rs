mod common;

use std::collections::BTreeMap;

use agentloom::backend::TokenUsage;
use agentloom::flags::{AblationFlags, Component};
use agentloom::harness::cost::CostError;
use agentloom::harness::predicate::PredicateSpec;
use agentloom::harness::suite::parse_suite;
use agentloom::harness::{
    ablation_sweep, check_success, compute_cost, pareto_frontier, run_suite, run_suite_with_runs, run_task_spec,
    ConfigPoint, Decimal, HarnessError, PricingTable, SuiteConfig, SuiteReport, World, PINNED_SEED,
};
use agentloom::scratchpad::Scratchpad;
use agentloom::sim::{FaultProfile, SimDevice};
use proptest::prelude::*;
use serde_json::json;

fn base_cfg() -> SuiteConfig {
    SuiteConfig::new(AblationFlags::all_on(), FaultProfile::default(), PINNED_SEED)
}

fn keyboard_cfg() -> SuiteConfig {
    SuiteConfig::new(AblationFlags::all_on(), FaultProfile::named("keyboard").unwrap(), PINNED_SEED)
}

#[test]
fn record_exists_after_adding_alice() {
    let fx = common::fixtures();
    let backend = common::scripted(&fx);
    let run = run_task_spec(fx.task("contacts_add_alice").unwrap(), &fx, &backend, &base_cfg(), None);
    assert!(run.result.success, "{:?}", run.result);
}

#[test]
fn predicates_on_untouched_device() {
    let fx = common::fixtures();
    let mut dev = SimDevice::new(fx.catalog.clone(), FaultProfile::default());
    fx.snapshots.get("contacts_base").unwrap().apply(&mut dev).unwrap();
    let notes = Scratchpad::new();
    let world = World {
        device: &dev,
        notes: &notes,
        output: None,
        final_state: None,
    };
    let untouched = PredicateSpec::new("field_equals", json!({"app": "settings", "key": "dark_mode", "value": "on"}));
    assert!(!check_success(&untouched, &world).unwrap());
    let present = PredicateSpec::new("record_exists", json!({"app": "contacts", "collection": "contacts", "match": {"name": "Carol"}}));
    assert!(check_success(&present, &world).unwrap());
    let absent = PredicateSpec::new("record_exists", json!({"app": "contacts", "collection": "contacts", "match": {"name": "Alice"}}));
    assert!(!check_success(&absent, &world).unwrap());
    let note = PredicateSpec::new("note_equals", json!({"key": "total", "value": "1"}));
    assert!(!check_success(&note, &world).unwrap());

    let bogus = PredicateSpec::new("frobnicate", json!({}));
    assert!(matches!(check_success(&bogus, &world), Err(HarnessError::UnknownPredicate(n)) if n == "frobnicate"));
}

#[test]
fn suite_parser_rejects_bad_lines() {
    let fx = common::fixtures();
    let line = |id: &str, pred: &str| {
        format!(r#"{{"id":"{id}","goal":"Do it.","snapshot":"contacts_base","predicate":{{"name":"{pred}","params":{{}}}},"step_budget":5}}"#)
    };
    assert_eq!(parse_suite(&format!("# comment\n{}\n", line("a", "screen_is")), "t").unwrap().len(), 1);
    assert!(parse_suite(&format!("{}\n{}\n", line("a", "screen_is"), line("a", "screen_is")), "t").is_err());
    assert!(parse_suite("{not json", "t").is_err());
    // Registered-name check happens when fixtures are assembled.
    let parsed = parse_suite(&line("b", "frobnicate"), "t").unwrap();
    assert!(!parsed[0].predicate.is_registered());
    assert!(fx.suite.iter().all(|t| t.predicate.is_registered()));
}

#[test]
fn empty_suite_has_no_success_rate() {
    let fx = common::fixtures();
    let report = run_suite(&[], &fx, &common::scripted(&fx), &base_cfg());
    assert_eq!(report.total, 0);
    assert_eq!(report.success_rate, None);
    assert!(report.note.is_some());
}

#[test]
fn report_round_trips_and_ledger_is_conserved() {
    let fx = common::fixtures();
    let (report, runs) = run_suite_with_runs(&fx.suite, &fx, &common::scripted(&fx), &keyboard_cfg());
    let text = report.to_json();
    assert_eq!(SuiteReport::from_json(&text).unwrap(), report);

    let mut by_model: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    for r in &runs {
        let (mut i, mut o) = (0, 0);
        for rec in &r.run.trace.records {
            if let Some(u) = &rec.usage {
                let e = by_model.entry(u.model_name.clone()).or_default();
                e.0 += u.input_tokens;
                e.1 += u.output_tokens;
                i += u.input_tokens;
                o += u.output_tokens;
            }
        }
        assert_eq!((r.result.input_tokens, r.result.output_tokens), (i, o), "{}", r.result.id);
        // The per-call log and the trace agree too.
        let calls: u64 = r.run.calls.iter().filter_map(|c| c.usage.as_ref()).map(|u| u.input_tokens).sum();
        assert_eq!(calls, i, "{}", r.result.id);
    }
    let reported: BTreeMap<String, (u64, u64)> =
        report.tokens.iter().map(|(m, t)| (m.clone(), (t.input_tokens, t.output_tokens))).collect();
    assert_eq!(reported, by_model);
}

#[test]
fn full_system_dominates_every_single_ablation() {
    let fx = common::fixtures();
    let backend = common::scripted(&fx);
    for cfg in [base_cfg(), keyboard_cfg()] {
        let report = ablation_sweep(&fx.suite, &Component::ALL, &fx, &backend, &cfg);
        let full = report.full().success_rate.unwrap();
        assert_eq!(report.rows.len(), Component::ALL.len() + 1);
        for row in &report.rows[1..] {
            assert!(row.success_rate.unwrap() <= full, "{}", row.label());
            assert!(row.delta_pp <= 0.0);
        }
        let text = report.render_text();
        assert!(text.contains("-post_validation"));
    }
}

#[test]
fn ablation_sweep_shapes() {
    let fx = common::fixtures();
    let backend = common::scripted(&fx);
    let none = ablation_sweep(&fx.suite, &[], &fx, &backend, &keyboard_cfg());
    assert_eq!(none.rows.len(), 1);
    assert!(none.rows[0].disabled.is_none());

    let report = ablation_sweep(&fx.suite, &[Component::PostValidation], &fx, &backend, &keyboard_cfg());
    assert_eq!(report.rows.len(), 2);
    let row = report.row(Component::PostValidation).unwrap();
    assert!(row.delta_pp <= 0.0);
    assert!(!row.new_failures.is_empty());
}

#[test]
fn metacog_off_exhausts_loop_tasks() {
    let fx = common::fixtures();
    let loop_tasks: Vec<_> = fx.suite.iter().filter(|t| t.has_tag("loop-prone")).cloned().collect();
    let report = ablation_sweep(&loop_tasks, &[Component::Metacog], &fx, &common::scripted(&fx), &keyboard_cfg());
    let row = report.row(Component::Metacog).unwrap();
    let mut want: Vec<String> = loop_tasks.iter().map(|t| t.id.clone()).collect();
    want.sort();
    let mut got = row.budget_exhausted.clone();
    got.sort();
    assert_eq!(got, want);
    assert_eq!(report.full().success_rate, Some(1.0));
}

#[test]
fn suite_runs_are_deterministic() {
    let fx = common::fixtures();
    let backend = common::scripted(&fx);
    let cfg = keyboard_cfg().clone();
    let a = run_suite(&fx.suite, &fx, &backend, &cfg).to_json();
    let b = run_suite(&fx.suite, &fx, &backend, &cfg).to_json();
    assert_eq!(a, b);
}

fn pricing() -> PricingTable {
    PricingTable::load(&common::fixtures().pricing_path()).unwrap()
}

fn usage(model: &str, i: u64, o: u64) -> TokenUsage {
    TokenUsage {
        input_tokens: i,
        output_tokens: o,
        model_name: model.into(),
    }
}

#[test]
fn cost_edge_cases() {
    let p = pricing();
    let none: [&TokenUsage; 0] = [];
    assert_eq!(compute_cost(none, &p).unwrap(), Decimal::ZERO);
    assert_eq!(compute_cost([&usage("GPT-5 Nano", 0, 0)], &p).unwrap(), Decimal::ZERO);
    assert!(matches!(
        compute_cost([&usage("Mystery 9000", 1, 1)], &p),
        Err(CostError::UnpricedModel(m)) if m == "Mystery 9000"
    ));
    assert!(PricingTable::from_toml("[models.\"X\"]\ninput = -1.0\noutput = 0.0\n").is_err());
    // Quoted decimal rates parse the same way as bare numbers.
    let q = PricingTable::from_toml("[models.\"X\"]\ninput = \"0.08\"\noutput = 0.5\n").unwrap();
    assert_eq!(compute_cost([&usage("X", 500_000, 100_000)], &q).unwrap(), Decimal::new(9, 2));
}

fn point() -> impl Strategy<Value = ConfigPoint> {
    // A coarse grid makes ties and duplicates common.
    (0u32..=10, 0u32..=10).prop_map(|(s, c)| ConfigPoint::new(&format!("p{s}_{c}"), s as f64 / 10.0, c as f64 / 4.0))
}

proptest! {
    #[test]
    fn cost_is_additive(parts in proptest::collection::vec((0usize..11, 0u64..3_000_000, 0u64..3_000_000), 0..10)) {
        let p = pricing();
        let models: Vec<&String> = p.models.keys().collect();
        let us: Vec<TokenUsage> = parts.iter().map(|&(m, i, o)| usage(models[m], i, o)).collect();
        let total = compute_cost(&us, &p).unwrap();
        let sum: Decimal = us.iter().map(|u| compute_cost([u], &p).unwrap()).sum();
        prop_assert_eq!(total, sum);
        prop_assert!(total >= Decimal::ZERO);
    }

    #[test]
    fn frontier_is_sound(points in proptest::collection::vec(point(), 1..12)) {
        let front = pareto_frontier(&points);
        prop_assert!(!front.is_empty());
        for f in &front {
            prop_assert!(!points.iter().any(|q| q.dominates(f)));
        }
        for p in &points {
            if !front.contains(p) {
                prop_assert!(front.iter().any(|f| f.dominates(p)));
            }
        }
    }
}

#[test]
fn frontier_small_cases() {
    let a = ConfigPoint::new("a", 0.5, 1.0);
    assert_eq!(pareto_frontier(std::slice::from_ref(&a)), vec![a.clone()]);
    let twins = vec![a.clone(), ConfigPoint::new("b", 0.5, 1.0)];
    assert_eq!(pareto_frontier(&twins).len(), 2);
    assert!(ConfigPoint::new("bad", 1.2, 0.0).validate().is_err());
    assert!(ConfigPoint::new("bad", 0.2, -1.0).validate().is_err());
}
