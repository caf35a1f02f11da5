//! End-to-end acceptance checks. Runs as a plain binary so every criterion
//! prints its own verdict line.

mod common;

use std::collections::BTreeSet;
use std::time::Instant;

use agentloom::agents::SUMMARY_THRESHOLD;
use agentloom::backend::TokenUsage;
use agentloom::domain::{validate_plan, SelectorBundle};
use agentloom::engine::Outcome;
use agentloom::exec::input_text_verified;
use agentloom::flags::{AblationFlags, Component};
use agentloom::harness::{
    compute_cost, pareto::load_points, pareto_frontier, rerun_trace, run_suite, run_suite_with_runs, run_task_spec,
    Decimal, Fixtures, PricingTable, SuiteConfig, PINNED_SEED,
};
use agentloom::metacog::{detect_cycle, HistoryEntry};
use agentloom::sim::{DeviceController, FaultProfile, SimDevice};
use agentloom::trace::Trace;
use common::{fixtures, oracle, scripted, PerturbingBackend};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn mini_benchmark(fx: &Fixtures) -> Verdict {
    let backend = scripted(fx);
    let cfg = SuiteConfig::new(AblationFlags::all_on(), FaultProfile::default(), PINNED_SEED);
    let t0 = Instant::now();
    let reports: Vec<String> = (0..5).map(|_| run_suite(&fx.suite, fx, &backend, &cfg).to_json()).collect();
    let elapsed = t0.elapsed().as_secs_f64();
    let first = agentloom::harness::SuiteReport::from_json(&reports[0])?;
    ensure(first.total == 20, || format!("suite has {} tasks", first.total))?;
    ensure(first.success_rate == Some(1.0), || {
        let failed: Vec<&str> = first.failed().map(|t| t.id.as_str()).collect();
        format!("SR {:?}, failed {failed:?}", first.success_rate)
    })?;
    ensure(reports.iter().all(|r| r == &reports[0]), || "report bytes differ between runs".into())?;
    ensure(elapsed < 10.0, || format!("5 runs took {elapsed:.2}s"))?;
    Ok(format!("SR 20/20, 5 identical reports, {elapsed:.2}s"))
}

fn ablation_directions(fx: &Fixtures) -> Verdict {
    let backend = scripted(fx);
    let keyboard = FaultProfile::named("keyboard").unwrap();
    let cfg = |flags| SuiteConfig::new(flags, keyboard.clone(), PINNED_SEED);
    let (full, _) = run_suite_with_runs(&fx.suite, fx, &backend, &cfg(AblationFlags::all_on()));
    let full_sr = full.success_rate.unwrap_or(0.0);
    let newly_failed = |r: &agentloom::harness::SuiteReport| -> Vec<String> {
        r.failed()
            .filter(|t| full.task(&t.id).is_some_and(|f| f.success))
            .map(|t| t.id.clone())
            .collect()
    };

    let (pv, _) = run_suite_with_runs(&fx.suite, fx, &backend, &cfg(AblationFlags::all_on().without(Component::PostValidation)));
    let drop_pp = (full_sr - pv.success_rate.unwrap_or(0.0)) * 100.0;
    ensure(drop_pp >= 20.0 - 1e-9, || format!("post_validation off drops only {drop_pp:.1} pp"))?;
    let pv_new = newly_failed(&pv);
    let off_tag: Vec<&String> = pv_new
        .iter()
        .filter(|id| !fx.task(id).unwrap().has_tag("text-entry"))
        .collect();
    ensure(off_tag.is_empty(), || format!("non text-entry failures without post_validation: {off_tag:?}"))?;

    let (seq, seq_runs) =
        run_suite_with_runs(&fx.suite, fx, &backend, &cfg(AblationFlags::all_on().without(Component::SequentialExec)));
    // A cascade: some call in a batch failed and later calls of the same
    // batch still ran against a screen the agent never saw.
    let cascades: Vec<String> = newly_failed(&seq)
        .into_iter()
        .filter(|id| {
            let run = &seq_runs.iter().find(|r| &r.result.id == id).unwrap().run;
            run.entries.iter().enumerate().any(|(i, e)| {
                !e.ok && run.entries[i + 1..].iter().any(|l| l.cycle_index == e.cycle_index)
            })
        })
        .collect();
    ensure(!cascades.is_empty(), || "no stale-state cascade without sequential_exec".into())?;

    let (mc, _) = run_suite_with_runs(&fx.suite, fx, &backend, &cfg(AblationFlags::all_on().without(Component::Metacog)));
    let loop_tasks: Vec<&str> = fx.suite.iter().filter(|t| t.has_tag("loop-prone")).map(|t| t.id.as_str()).collect();
    ensure(!loop_tasks.is_empty(), || "no loop-prone tasks".into())?;
    for id in &loop_tasks {
        let t = mc.task(id).unwrap();
        ensure(t.outcome == Outcome::BudgetExhausted, || format!("{id} ended {:?} without metacog", t.outcome))?;
    }
    Ok(format!(
        "post_validation -{drop_pp:.0}pp ({} text-entry), sequential_exec cascade in {cascades:?}, metacog {} loop tasks exhausted",
        pv_new.len(),
        loop_tasks.len()
    ))
}

/// Published rates in cents per million tokens.
const RATES: [(&str, u64, u64); 11] = [
    ("Gemini 3 Pro", 200, 1200),
    ("Gemini 2.5 Pro", 125, 1000),
    ("GPT-4o", 250, 1000),
    ("Gemini 2.5 Flash", 30, 250),
    ("Llama 3.1 70B", 40, 40),
    ("GPT-4o Mini", 15, 60),
    ("Qwen3-VL-8B", 8, 50),
    ("Llama 4 Scout", 8, 30),
    ("GPT-OSS 120B", 4, 19),
    ("Llama 3.1 8B", 2, 5),
    ("GPT-5 Nano", 5, 40),
];

fn usage(model: &str, i: u64, o: u64) -> TokenUsage {
    TokenUsage {
        input_tokens: i,
        output_tokens: o,
        model_name: model.into(),
    }
}

fn to_f64(d: Decimal) -> f64 {
    d.to_string().parse().unwrap()
}

fn cost_arithmetic(fx: &Fixtures) -> Verdict {
    let pricing = PricingTable::load(&fx.pricing_path()).map_err(|e| e.to_string())?;
    ensure(pricing.models.len() == 11, || format!("{} priced models", pricing.models.len()))?;
    let gemini = compute_cost([&usage("Gemini 3 Pro", 1_000_000, 0)], &pricing).map_err(|e| e.to_string())?;
    ensure(gemini == Decimal::new(200, 2), || format!("1M Gemini 3 Pro input = {gemini}"))?;
    let qwen = compute_cost([&usage("Qwen3-VL-8B", 500_000, 100_000)], &pricing).map_err(|e| e.to_string())?;
    ensure(qwen == Decimal::new(9, 2), || format!("Qwen profile = {qwen}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(PINNED_SEED);
    let mut worst = 0f64;
    for _ in 0..100 {
        let n = rng.random_range(1..=8);
        let mut usages = Vec::new();
        // Exact total in units of 1e-8 USD (cents per 1e6 tokens).
        let mut exact: u128 = 0;
        for _ in 0..n {
            let (m, ri, ro) = RATES[rng.random_range(0..RATES.len())];
            let (i, o) = (rng.random_range(0..5_000_000u64), rng.random_range(0..500_000u64));
            exact += i as u128 * ri as u128 + o as u128 * ro as u128;
            usages.push(usage(m, i, o));
        }
        let got = to_f64(compute_cost(&usages, &pricing).map_err(|e| e.to_string())?);
        let want = exact as f64 / 1e8;
        worst = worst.max((got - want).abs());
    }
    ensure(worst <= 1e-9, || format!("worst error {worst:e}"))?;
    Ok(format!("exact cases hold, 100 random profiles, max error {worst:e}"))
}

fn pareto_reproduction(fx: &Fixtures) -> Verdict {
    let points = load_points(&fx.dir.join("published_points.toml"))?;
    let names: BTreeSet<String> = pareto_frontier(&points).into_iter().map(|p| p.name).collect();
    let want: BTreeSet<String> = ["Platform Default", "Degrade Planner", "Frontier Cortex Only", "Flash Cortex"]
        .into_iter()
        .map(String::from)
        .collect();
    ensure(names == want, || format!("frontier {names:?}"))?;
    Ok(format!("frontier {names:?}"))
}

fn entries(pairs: &[u8]) -> Vec<HistoryEntry> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, &k)| HistoryEntry {
            cycle_index: i as u32,
            state_fingerprint: format!("s{}", k / 3),
            action_fingerprint: format!("a{}", k % 3),
            subgoal_id: "g".into(),
            ok: true,
        })
        .collect()
}

/// Brute force: smallest p whose last two blocks of length p inside the
/// window agree, then count how many blocks repeat backwards.
fn brute_cycle(h: &[u8], window: usize) -> Option<(usize, usize)> {
    let w = window.min(h.len());
    let tail = &h[h.len() - w..];
    let block = |k: usize, p: usize| &tail[w - (k + 1) * p..w - k * p];
    (1..=w / 2).find(|&p| block(0, p) == block(1, p)).map(|p| {
        let mut k = 2;
        while (k + 1) * p <= w && block(k, p) == block(0, p) {
            k += 1;
        }
        (p, k)
    })
}

fn check_history(h: &[u8], windows: &[usize]) -> Result<(), String> {
    let es = entries(h);
    for &w in windows {
        let got = detect_cycle(&es, w).map(|c| {
            assert_eq!(c.span.end, h.len());
            assert_eq!(c.span.len(), c.period * c.occurrences);
            (c.period, c.occurrences)
        });
        let want = brute_cycle(h, w);
        if got != want {
            return Err(format!("history {h:?} window {w}: got {got:?} want {want:?}"));
        }
    }
    Ok(())
}

/// Every history up to relabeling of the nine (state, action) pairs, as
/// restricted growth strings; equality is all the detector looks at.
fn for_each_rgs(len: usize, max_blocks: u8, f: &mut impl FnMut(&[u8]) -> Result<(), String>) -> Result<u64, String> {
    fn go(buf: &mut Vec<u8>, len: usize, used: u8, max: u8, f: &mut impl FnMut(&[u8]) -> Result<(), String>, n: &mut u64) -> Result<(), String> {
        if buf.len() == len {
            *n += 1;
            return f(buf);
        }
        for k in 0..=used.min(max - 1) {
            buf.push(k);
            go(buf, len, used.max(k + 1), max, f, n)?;
            buf.pop();
        }
        Ok(())
    }
    let mut n = 0;
    go(&mut Vec::with_capacity(len), len, 0, max_blocks, f, &mut n)?;
    Ok(n)
}

fn cycle_oracle() -> Verdict {
    let t0 = Instant::now();
    let windows = [12, 8];
    let mut classes = 0;
    for len in 2..=12 {
        classes += for_each_rgs(len, 9, &mut |h| check_history(h, &windows))?;
    }
    // Plain enumeration over all labelled histories for the short lengths.
    let mut labelled = 0u64;
    for len in 2..=7u32 {
        let mut h = vec![0u8; len as usize];
        for code in 0..9u64.pow(len) {
            let mut c = code;
            for slot in h.iter_mut() {
                *slot = (c % 9) as u8;
                c /= 9;
            }
            check_history(&h, &windows)?;
            labelled += 1;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(format!("{classes} relabeling classes (len<=12) and {labelled} labelled histories (len<=7) agree, {secs:.1}s"))
}

/// Contacts edit screen, either empty or prefilled from an existing entry.
fn text_device(fx: &Fixtures, fault: FaultProfile, prefilled: bool) -> SimDevice {
    let mut d = SimDevice::new(fx.catalog.clone(), FaultProfile::default());
    fx.snapshots.get("contacts_base").unwrap().apply(&mut d).unwrap();
    if prefilled {
        assert!(d.tap(&SelectorBundle::text("Erin")).is_ok());
        assert!(d.tap(&SelectorBundle::resource_id("btn_edit")).is_ok());
    } else {
        assert!(d.tap(&SelectorBundle::resource_id("fab_add")).is_ok());
    }
    d.set_fault(fault);
    d
}

fn verified_truthfulness(fx: &Fixtures) -> Verdict {
    let field = SelectorBundle::resource_id("field_name");
    let mut silent = 0;
    let mut unverified = 0;
    for seed in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fault = FaultProfile {
            char_drop_prob: rng.random_range(0.0..0.6),
            focus_steal_prob: rng.random_range(0.0..0.4),
            latency_ticks: 1,
            rng_seed: seed,
        };
        let text: String = (0..rng.random_range(1..8)).map(|_| rng.random_range('a'..='z')).collect();
        let prefilled = rng.random_bool(0.5);
        for pv in [true, false] {
            let mut d = text_device(fx, fault.clone(), prefilled);
            let fb = input_text_verified(&field, &text, &mut d, pv).map_err(|e| format!("seed {seed}: {e}"))?;
            let now = d.field_text("field_name").unwrap_or_default();
            if !fb.verified {
                unverified += 1;
                ensure(now == fb.actual, || format!("seed {seed}: reported {:?}, field {now:?}", fb.actual))?;
            } else if pv {
                ensure(now.ends_with(&text), || format!("seed {seed}: verified but field {now:?}"))?;
            } else if !now.ends_with(&text) {
                silent += 1;
            }
        }
    }
    ensure(silent > 0, || "no silent failure with post_validation off".into())?;
    Ok(format!("1000 seeds, {unverified} honest rejections, {silent} silent failures with post_validation off"))
}

/// Structural checks on one finished run.
fn structural(trace: &Trace, run: &agentloom::engine::RunResult, flags: &AblationFlags) -> Result<(), String> {
    let plan_report = validate_plan(&run.plan);
    ensure(plan_report.is_valid(), || format!("illegal plan state: {plan_report}"))?;
    if run.outcome == Outcome::Completed && flags.multi_agent {
        ensure(run.plan.all_completed(), || "completed run with open subgoals".into())?;
    }

    for r in trace.records.iter().filter(|r| r.node == "summarizer") {
        let after: usize = r.status.split("->").nth(1).and_then(|s| s.parse().ok()).ok_or("bad summarizer status")?;
        ensure(after <= SUMMARY_THRESHOLD, || format!("history {after} after summarizing"))?;
    }

    if flags.sequential_exec {
        for r in trace.records.iter().filter(|r| r.node == "tools") {
            let failed = r
                .status
                .strip_prefix("failed=")
                .and_then(|s| s.split(' ').next())
                .map(|n| n.parse::<usize>().unwrap())
                .unwrap_or(0);
            ensure(failed <= 1, || format!("batch kept going after a failure: {}", r.status))?;
        }
        let mut by_cycle: Vec<(u32, bool)> = Vec::new();
        for e in &run.entries {
            if let Some(&(c, false)) = by_cycle.last() {
                ensure(c != e.cycle_index, || format!("call executed after a failure in cycle {c}"))?;
            }
            by_cycle.push((e.cycle_index, e.ok));
        }
    }

    let mut last_end = 0;
    for r in &trace.records {
        ensure(r.start > last_end || last_end == 0 && r.start == 0, || "ordinals not increasing".into())?;
        ensure(r.end > r.start, || "empty ordinal span".into())?;
        last_end = r.end;
    }
    let branch_nodes = ["contextor", "metacog", "cortex", "monolith", "orchestrator", "executor", "tools", "stall", "summarizer"];
    for c in 1..=trace.cycles() {
        let nodes: Vec<&str> = trace
            .records
            .iter()
            .filter(|r| r.cycle_index == c)
            .map(|r| r.node.as_str())
            .collect();
        let conv: Vec<usize> = nodes.iter().enumerate().filter(|(_, n)| **n == "convergence").map(|(i, _)| i).collect();
        ensure(conv.len() <= 1, || format!("cycle {c}: {} barriers", conv.len()))?;
        let route = nodes.iter().position(|n| *n == "route");
        match conv.first() {
            Some(&b) => {
                ensure(
                    nodes[b + 1..].iter().all(|n| !branch_nodes.contains(n)),
                    || format!("cycle {c}: branch record after the barrier: {nodes:?}"),
                )?;
                ensure(route.is_some_and(|r| r > b), || format!("cycle {c}: no route after barrier"))?;
            }
            None => {
                ensure(route.is_none(), || format!("cycle {c}: route without barrier"))?;
                ensure(c == trace.cycles() && run.outcome != Outcome::Completed, || {
                    format!("cycle {c} never reached the barrier")
                })?;
            }
        }
    }
    Ok(())
}

fn fuzz_invariants(fx: &Fixtures) -> Verdict {
    let oracle = oracle(fx);
    let mut rng = ChaCha8Rng::seed_from_u64(PINNED_SEED);
    let mut completed = 0;
    let runs = 1000;
    for i in 0..runs {
        let spec = &fx.suite[rng.random_range(0..fx.suite.len())];
        let mut flags = AblationFlags::all_on();
        if rng.random_bool(0.5) {
            flags = flags.without(Component::ALL[rng.random_range(0..Component::ALL.len())]);
        }
        let fault = FaultProfile::named(if rng.random_bool(0.5) { "keyboard" } else { "default" }).unwrap();
        let backend = PerturbingBackend::new(&oracle, rng.random(), rng.random_range(0.02..0.3));
        let cfg = SuiteConfig::new(flags, fault, rng.random_range(0..1000));
        let r = run_task_spec(spec, fx, &backend, &cfg, None);
        if r.result.outcome == Outcome::Completed {
            completed += 1;
        }
        let trace = &r.run.trace;
        let ctx = || format!("run {i} ({} {})", spec.id, flags.label());
        structural(trace, &r.run, &flags).map_err(|e| format!("{}: {e}", ctx()))?;
        let again = rerun_trace(trace, fx, &backend).map_err(|e| format!("{}: {e}", ctx()))?;
        if let Some(n) = trace.first_mismatch(&again) {
            return Err(format!("{}: replay mismatch at record {n}", ctx()));
        }
    }
    Ok(format!("{runs} perturbed runs ({completed} completed), all invariants held, all replays MATCH"))
}

fn main() {
    let fx = fixtures();
    type Criterion<'a> = (&'static str, Box<dyn Fn() -> Verdict + 'a>);
    let criteria: Vec<Criterion> = vec![
        ("1 mini-benchmark", Box::new(|| mini_benchmark(&fx))),
        ("2 ablation directions", Box::new(|| ablation_directions(&fx))),
        ("3 cost arithmetic", Box::new(|| cost_arithmetic(&fx))),
        ("4 pareto frontier", Box::new(|| pareto_reproduction(&fx))),
        ("5 cycle detector oracle", Box::new(cycle_oracle)),
        ("6 verified input", Box::new(|| verified_truthfulness(&fx))),
        ("7 fuzzed invariants", Box::new(|| fuzz_invariants(&fx))),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        match check() {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(e) => {
                failed += 1;
                println!("FAIL criterion {name}: {e}");
            }
        }
    }
    println!("acceptance: {}/{} criteria pass", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
