//! Operator entry point over the harness.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use agentloom::backend::{LiveBackend, LiveConfig, LlmBackend, OracleBackend, ScriptedBackend};
use agentloom::flags::{AblationFlags, Component};
use agentloom::harness::{
    ablation_sweep, compute_cost, pareto::load_points, pareto_frontier, record_book, recording_matrix,
    rerun_trace, run_suite_with_runs, run_task_spec, suite::load_suite, ConfigPoint, Fixtures, PricingTable,
    SuiteConfig, SuiteReport, TaskSpec, PINNED_SEED,
};
use agentloom::harness::predicate::PredicateSpec;
use agentloom::sim::FaultProfile;
use agentloom::trace::Trace;

#[derive(Parser)]
#[command(name = "agentloom", about = "Mobile automation agents on a simulated device")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one task from the suite, or a free-form goal.
    Run(RunArgs),
    /// Run a whole suite and write a report.
    Bench(BenchArgs),
    /// Full system plus one run per disabled component.
    Ablate(AblateArgs),
    /// Re-execute a trace and compare it record by record.
    Replay(ReplayArgs),
    /// Cost table and Pareto frontier.
    Analyze(AnalyzeArgs),
    /// Regenerate the script book from the oracle playbooks.
    Record(RecordArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    Scripted,
    Live,
    Oracle,
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long, value_enum, default_value = "scripted")]
    backend: BackendKind,
    #[arg(long, default_value = "fixtures")]
    fixtures: PathBuf,
    #[arg(long, default_value_t = PINNED_SEED)]
    seed: u64,
    /// Component to switch off; repeatable.
    #[arg(long = "disable")]
    disable: Vec<String>,
    #[arg(long, default_value = "default")]
    fault: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, conflicts_with = "goal")]
    task: Option<String>,
    /// Free-form goal, run from the home screen with no success predicate.
    #[arg(long)]
    goal: Option<String>,
    #[arg(long, default_value_t = 30)]
    budget: u32,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    suite: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    suite: Option<PathBuf>,
    /// Components to ablate; all when omitted.
    #[arg(long = "component")]
    components: Vec<String>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct ReplayArgs {
    trace: PathBuf,
    #[arg(long, value_enum, default_value = "scripted")]
    backend: BackendKind,
    #[arg(long, default_value = "fixtures")]
    fixtures: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Published or hand-made configuration points.
    #[arg(long)]
    points: Option<PathBuf>,
    /// Suite reports to turn into points; repeatable.
    #[arg(long = "report")]
    reports: Vec<PathBuf>,
    #[arg(long)]
    pricing: Option<PathBuf>,
}

#[derive(Args)]
struct RecordArgs {
    #[arg(long, default_value = "fixtures")]
    fixtures: PathBuf,
    #[arg(long, default_value_t = PINNED_SEED)]
    seed: u64,
}

/// Bad input or configuration; maps to exit code 2.
#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(ConfigError(msg.into()))
}

fn flags_from(disable: &[String]) -> Result<AblationFlags> {
    let mut flags = AblationFlags::all_on();
    for name in disable {
        let c: Component = name.parse().map_err(config_err)?;
        flags = flags.without(c);
    }
    Ok(flags)
}

fn fault_from(name: &str) -> Result<FaultProfile> {
    FaultProfile::named(name).ok_or_else(|| config_err(format!("unknown fault profile {name:?}")))
}

fn load_fixtures(dir: &Path) -> Result<Fixtures> {
    Fixtures::load(dir).map_err(|e| config_err(e.to_string()))
}

fn make_backend(kind: BackendKind, fx: &Fixtures) -> Result<Box<dyn LlmBackend>> {
    Ok(match kind {
        BackendKind::Scripted => {
            let dir = fx.scriptbook_dir();
            let b = ScriptedBackend::from_dir(&dir)
                .map_err(|e| config_err(format!("script book {}: {e}", dir.display())))?;
            Box::new(b)
        }
        BackendKind::Oracle => Box::new(OracleBackend::load_dir(&fx.playbook_dir()).map_err(config_err)?),
        BackendKind::Live => {
            let cfg = LiveConfig::from_env().map_err(|e| config_err(e.to_string()))?;
            Box::new(LiveBackend::new(cfg).map_err(|e| config_err(e.to_string()))?)
        }
    })
}

fn write_out(dir: &Path, name: &str, text: &str) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn cmd_run(a: RunArgs) -> Result<ExitCode> {
    let fx = load_fixtures(&a.common.fixtures)?;
    let flags = flags_from(&a.common.disable)?;
    let fault = fault_from(&a.common.fault)?;
    let spec = match (&a.task, &a.goal) {
        (Some(id), _) => fx.task(id).map_err(|e| config_err(e.to_string()))?.clone(),
        (None, Some(goal)) => {
            let home = fx
                .snapshots
                .snapshots
                .iter()
                .find(|s| s.foreground == agentloom::sim::HOME_PACKAGE)
                .map(|s| s.id.clone());
            TaskSpec {
                id: "adhoc".into(),
                goal: goal.clone(),
                snapshot: home.ok_or_else(|| config_err("no home snapshot for free-form goals"))?,
                // Always true once the run completes.
                predicate: PredicateSpec::new("record_exists", serde_json::json!({"app": "home", "collection": "none", "exists": false})),
                tags: vec![],
                step_budget: a.budget,
                app_lock: None,
                output_schema: None,
            }
        }
        (None, None) => return Err(config_err("give --task or --goal")),
    };
    let backend = make_backend(a.common.backend, &fx)?;
    let cfg = SuiteConfig::new(flags, fault, a.common.seed);
    let run = run_task_spec(&spec, &fx, backend.as_ref(), &cfg, None);
    let r = &run.result;
    println!(
        "{} {} outcome={:?} cycles={} replans={} tokens={}/{}",
        r.id,
        if r.success { "PASS" } else { "FAIL" },
        r.outcome,
        r.cycles,
        r.replans,
        r.input_tokens,
        r.output_tokens
    );
    if let Some(o) = &r.output {
        println!("output: {o}");
    }
    if let Some(e) = &r.error {
        println!("error: {e}");
    }
    if let Some(dir) = &a.common.out {
        write_out(dir, &format!("{}.trace.jsonl", r.id), &run.run.trace.to_jsonl())?;
        write_out(dir, &format!("{}.result.json", r.id), &serde_json::to_string_pretty(r)?)?;
    }
    Ok(if r.success { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn suite_of(fx: &Fixtures, path: &Option<PathBuf>) -> Result<Vec<TaskSpec>> {
    match path {
        Some(p) => load_suite(p).map_err(|e| config_err(e.to_string())),
        None => Ok(fx.suite.clone()),
    }
}

fn cmd_bench(a: BenchArgs) -> Result<ExitCode> {
    let fx = load_fixtures(&a.common.fixtures)?;
    let suite = suite_of(&fx, &a.suite)?;
    let cfg = SuiteConfig::new(flags_from(&a.common.disable)?, fault_from(&a.common.fault)?, a.common.seed);
    let backend = make_backend(a.common.backend, &fx)?;
    let (report, runs) = run_suite_with_runs(&suite, &fx, backend.as_ref(), &cfg);
    print!("{}", report.render_text());
    if let Some(dir) = &a.common.out {
        write_out(dir, "report.json", &report.to_json())?;
        write_out(dir, "report.txt", &report.render_text())?;
        for r in &runs {
            write_out(&dir.join("traces"), &format!("{}.jsonl", r.result.id), &r.run.trace.to_jsonl())?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_ablate(a: AblateArgs) -> Result<ExitCode> {
    let fx = load_fixtures(&a.common.fixtures)?;
    let suite = suite_of(&fx, &a.suite)?;
    let components: Vec<Component> = if a.components.is_empty() {
        Component::ALL.to_vec()
    } else {
        a.components
            .iter()
            .map(|c| c.parse().map_err(config_err))
            .collect::<Result<_>>()?
    };
    let base = SuiteConfig::new(AblationFlags::all_on(), fault_from(&a.common.fault)?, a.common.seed);
    let backend = make_backend(a.common.backend, &fx)?;
    let report = ablation_sweep(&suite, &components, &fx, backend.as_ref(), &base);
    print!("{}", report.render_text());
    if let Some(dir) = &a.common.out {
        write_out(dir, "ablation.json", &report.to_json())?;
        write_out(dir, "ablation.txt", &report.render_text())?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_replay(a: ReplayArgs) -> Result<ExitCode> {
    let text = std::fs::read_to_string(&a.trace).map_err(|e| config_err(format!("{}: {e}", a.trace.display())))?;
    let original = Trace::parse(&text).map_err(|e| config_err(format!("{}: {e}", a.trace.display())))?;
    let fx = load_fixtures(&a.fixtures)?;
    let backend = make_backend(a.backend, &fx)?;
    let fresh = rerun_trace(&original, &fx, backend.as_ref()).map_err(|e| config_err(e.to_string()))?;
    match original.first_mismatch(&fresh) {
        None => {
            println!("MATCH {}", fresh.hash());
            Ok(ExitCode::SUCCESS)
        }
        Some(n) => {
            println!("MISMATCH at record {n}");
            Ok(ExitCode::from(1))
        }
    }
}

fn report_point(path: &Path, pricing: &PricingTable) -> Result<(ConfigPoint, SuiteReport)> {
    let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    let report = SuiteReport::from_json(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    let usages: Vec<_> = report
        .tokens
        .iter()
        .map(|(m, t)| agentloom::backend::TokenUsage {
            input_tokens: t.input_tokens,
            output_tokens: t.output_tokens,
            model_name: m.clone(),
        })
        .collect();
    let total = compute_cost(&usages, pricing).map_err(|e| anyhow!(e))?;
    let per_task = if report.total == 0 {
        0.0
    } else {
        (total / agentloom::harness::Decimal::from(report.total as u64))
            .try_into()
            .unwrap_or(0.0)
    };
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("report").to_string();
    let point = ConfigPoint::new(&name, report.success_rate.unwrap_or(0.0), per_task);
    Ok((point, report))
}

fn cmd_analyze(a: AnalyzeArgs) -> Result<ExitCode> {
    let mut points = Vec::new();
    if let Some(p) = &a.points {
        points.extend(load_points(p).map_err(config_err)?);
    }
    if !a.reports.is_empty() {
        let path = a.pricing.clone().ok_or_else(|| config_err("--report needs --pricing"))?;
        let pricing = PricingTable::load(&path).map_err(|e| config_err(e.to_string()))?;
        println!("{:<24} {:<20} {:>12} {:>12} {:>12}", "report", "model", "input", "output", "usd");
        for r in &a.reports {
            let (point, report) = report_point(r, &pricing)?;
            for (model, t) in &report.tokens {
                let usage = agentloom::backend::TokenUsage {
                    input_tokens: t.input_tokens,
                    output_tokens: t.output_tokens,
                    model_name: model.clone(),
                };
                let usd = compute_cost([&usage], &pricing).map_err(|e| anyhow!(e))?;
                println!("{:<24} {:<20} {:>12} {:>12} {:>12}", point.name, model, t.input_tokens, t.output_tokens, usd.round_dp(6));
            }
            points.push(point);
        }
    }
    if points.is_empty() {
        return Err(config_err("nothing to analyze: give --points or --report"));
    }
    let frontier = pareto_frontier(&points);
    println!("{:<24} {:>8} {:>10}  frontier", "configuration", "SR", "cost/task");
    for p in &points {
        let on = frontier.iter().any(|f| f.name == p.name);
        println!("{:<24} {:>7.1}% {:>10.4}  {}", p.name, p.success_rate * 100.0, p.cost, if on { "*" } else { "" });
    }
    println!("frontier: {}", frontier.iter().map(|p| p.name.as_str()).collect::<Vec<_>>().join(", "));
    Ok(ExitCode::SUCCESS)
}

fn cmd_record(a: RecordArgs) -> Result<ExitCode> {
    let fx = load_fixtures(&a.fixtures)?;
    let oracle = OracleBackend::load_dir(&fx.playbook_dir()).map_err(config_err)?;
    let book = record_book(&fx, oracle, &recording_matrix(a.seed));
    let dir = fx.scriptbook_dir();
    if dir.exists() {
        std::fs::remove_dir_all(&dir).with_context(|| format!("clearing {}", dir.display()))?;
    }
    book.save_dir(&dir).with_context(|| format!("writing {}", dir.display()))?;
    println!("recorded {} entries into {}", book.len(), dir.display());
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match cli.cmd {
        Cmd::Run(a) => cmd_run(a),
        Cmd::Bench(a) => cmd_bench(a),
        Cmd::Ablate(a) => cmd_ablate(a),
        Cmd::Replay(a) => cmd_replay(a),
        Cmd::Analyze(a) => cmd_analyze(a),
        Cmd::Record(a) => cmd_record(a),
    };
    match r {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
