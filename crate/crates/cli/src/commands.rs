//! Command implementations behind the CLI surface.
//!
//! Exit codes: 0 success, 1 validation failure (config, flags, missing
//! files), 2 runtime error. A one-line machine-parsable status goes to
//! stderr either way.

use crate::config::{parse_config, resolve, ConfigError, ResolvedConfig};
use crate::output::{build_summary, svg_bar_chart, svg_line_chart, write_atomic, sha256_hex};
use serde_json::json;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use swipt_core::harness::{
    converged_phase_mean, extract_series, median, queue_cdf, rows_from_csv, rows_to_csv,
    run_sequential_resumable, sweep, sweep_to_csv, Controller, ExperimentSpec, HarnessError,
    MetricKind, MetricsRow, RunOutput, SweepParameter,
};
use swipt_core::lifelong::LifelongAgent;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

pub const PRESET_TABLE1: &str = include_str!("../presets/table1.cfg");
pub const PRESET_TABLE2: &str = include_str!("../presets/table2_domains.cfg");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
    Both,
}

impl OutputFormat {
    pub fn parse(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            "both" => Ok(OutputFormat::Both),
            other => Err(format!("unknown format `{other}` (csv, json, both)")),
        }
    }

    fn wants_csv(&self) -> bool {
        matches!(self, OutputFormat::Csv | OutputFormat::Both)
    }

    fn wants_json(&self) -> bool {
        matches!(self, OutputFormat::Json | OutputFormat::Both)
    }
}

/// A fully parsed command-line invocation.
#[derive(Debug, Clone)]
pub enum Invocation {
    Run(RunArgs),
    Sweep(SweepArgs),
    Compare(RunArgs),
    Report(ReportArgs),
    ValidateConfig(ValidateArgs),
}

#[derive(Debug, Clone)]
pub struct RunArgs {
    pub config: ConfigSource,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub format: OutputFormat,
    pub plot: bool,
    pub jobs: usize,
    pub controllers: Option<Vec<Controller>>,
    pub kb_in: Option<PathBuf>,
    pub kb_out: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct SweepArgs {
    pub common: RunArgs,
    pub parameter: SweepParameter,
}

#[derive(Debug, Clone)]
pub struct ReportArgs {
    pub input: PathBuf,
    pub out: PathBuf,
    pub plot: bool,
}

#[derive(Debug, Clone)]
pub struct ValidateArgs {
    pub config: Option<PathBuf>,
    pub stdin_text: Option<String>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone)]
pub enum ConfigSource {
    Path(PathBuf),
    Preset(String),
}

enum CommandError {
    Validation(String),
    Runtime(String),
}

impl From<ConfigError> for CommandError {
    fn from(e: ConfigError) -> Self {
        CommandError::Validation(e.to_string())
    }
}

impl From<HarnessError> for CommandError {
    fn from(e: HarnessError) -> Self {
        CommandError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CommandError {
    fn from(e: std::io::Error) -> Self {
        CommandError::Runtime(e.to_string())
    }
}

fn status_ok(command: &str, detail: &str) {
    eprintln!("swipt-bench: status=ok command={command} {detail}");
}

/// Runs an invocation to completion and maps errors onto exit codes.
pub fn run_command(invocation: Invocation) -> i32 {
    let (name, result) = match invocation {
        Invocation::Run(args) => ("run", cmd_run(args, "run")),
        Invocation::Compare(args) => ("compare", cmd_run(args, "compare")),
        Invocation::Sweep(args) => ("sweep", cmd_sweep(args)),
        Invocation::Report(args) => ("report", cmd_report(args)),
        Invocation::ValidateConfig(args) => ("validate-config", cmd_validate(args)),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(CommandError::Validation(msg)) => {
            eprintln!("swipt-bench: status=error command={name} kind=validation msg={msg:?}");
            EXIT_VALIDATION
        }
        Err(CommandError::Runtime(msg)) => {
            eprintln!("swipt-bench: status=error command={name} kind=runtime msg={msg:?}");
            EXIT_RUNTIME
        }
    }
}

pub fn env_seed() -> Option<u64> {
    std::env::var("SWIPT_BENCH_SEED").ok().and_then(|s| s.parse().ok())
}

fn load_config_text(source: &ConfigSource) -> Result<String, CommandError> {
    match source {
        ConfigSource::Path(p) => std::fs::read_to_string(p)
            .map_err(|e| CommandError::Validation(format!("cannot read config {}: {e}", p.display()))),
        ConfigSource::Preset(name) => match name.as_str() {
            "table1" => Ok(PRESET_TABLE1.to_string()),
            "table2" => Ok(PRESET_TABLE2.to_string()),
            other => Err(CommandError::Validation(format!("unknown preset `{other}` (table1, table2)"))),
        },
    }
}

fn resolve_from(args: &RunArgs) -> Result<(ResolvedConfig, String), CommandError> {
    let text = load_config_text(&args.config)?;
    let raw = parse_config(&text)?;
    let resolved = resolve(&raw, args.seed, env_seed(), args.controllers.as_deref())?;
    Ok((resolved, text))
}

struct RunResult {
    controller: Controller,
    seed: u64,
    output: RunOutput,
    agent: Option<LifelongAgent>,
}

/// Executes the (controller, seed) grid, optionally in parallel, with
/// deterministic output ordering.
fn execute_grid(
    spec: &ExperimentSpec,
    cfgs: &swipt_core::harness::ControllerConfigs,
    jobs: usize,
    resume: Option<&LifelongAgent>,
) -> Result<Vec<RunResult>, CommandError> {
    let cells: Vec<(Controller, u64)> = spec
        .controllers
        .iter()
        .flat_map(|c| spec.seeds.iter().map(move |s| (*c, *s)))
        .collect();
    let jobs = jobs.max(1).min(cells.len().max(1));
    let results: Mutex<Vec<Option<Result<RunResult, HarnessError>>>> =
        Mutex::new((0..cells.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= cells.len() {
                    break;
                }
                let (controller, seed) = cells[i];
                let resume_agent = match controller {
                    Controller::CdL2rl => resume.cloned(),
                    _ => None,
                };
                let run = run_sequential_resumable(spec, controller, seed, cfgs, resume_agent)
                    .map(|(output, agent)| RunResult { controller, seed, output, agent });
                results.lock().expect("no panics while holding lock")[i] = Some(run);
            });
        }
    });
    results
        .into_inner()
        .expect("scope joined")
        .into_iter()
        .map(|r| r.expect("every cell executed").map_err(CommandError::from))
        .collect()
}

fn collect_rows(results: &[RunResult]) -> Vec<MetricsRow> {
    results.iter().flat_map(|r| r.output.rows.iter().cloned()).collect()
}

fn queue_cdf_csv(results: &[RunResult]) -> Option<String> {
    let mut out = String::from("controller,domain,task,threshold,probability\n");
    let mut any = false;
    for r in results {
        // CDF over all seeds' converged-phase samples, first seed per controller
        // is representative; aggregate across seeds for stability.
        let mut merged: BTreeMap<(u32, usize), Vec<f64>> = BTreeMap::new();
        for ((domain, task), samples) in &r.output.queue_samples {
            merged.entry((*domain, *task)).or_default().extend(samples.iter().copied());
        }
        for ((domain, task), samples) in merged {
            if let Ok(cdf) = queue_cdf(&samples) {
                any = true;
                for (t, p) in cdf {
                    out.push_str(&format!("{},{},{},{},{}\n", r.controller, domain, task, t, p));
                }
            }
        }
    }
    any.then_some(out)
}

fn write_charts(
    dir: &Path,
    spec: &ExperimentSpec,
    rows: &[MetricsRow],
    results: &[RunResult],
) -> Result<(), CommandError> {
    let first_seed = spec.seeds[0];
    // Reward trajectories across the whole task sequence, first seed.
    let mut series = Vec::new();
    let mut boundaries = Vec::new();
    for controller in &spec.controllers {
        let mut pts = Vec::new();
        let mut global = 0usize;
        boundaries.clear();
        for dom in &spec.domain_sequence {
            for task in 1..=dom.tasks.len() {
                let vals = extract_series(rows, *controller, dom.domain.domain_id, task, first_seed, |r| {
                    r.avg_reward
                });
                for v in vals {
                    global += 1;
                    pts.push((global as f64, v));
                }
                boundaries.push(global as f64);
            }
        }
        series.push((controller.as_str().to_string(), pts));
    }
    boundaries.pop();
    let chart = svg_line_chart(
        "Average reward across the task sequence",
        "iteration (task boundaries dashed)",
        "average reward",
        &series,
        &boundaries,
    );
    write_atomic(&dir.join("reward_curves.svg"), &chart)?;

    // Converged energy per controller, last task of the sequence.
    let last_dom = spec.domain_sequence.last().expect("validated non-empty");
    let (ld, lt) = (last_dom.domain.domain_id, last_dom.tasks.len());
    let mut bars = Vec::new();
    for controller in &spec.controllers {
        let mut per_seed = Vec::new();
        for seed in &spec.seeds {
            let e = extract_series(rows, *controller, ld, lt, *seed, |r| r.avg_energy_mj_per_slot);
            if let Ok(v) = converged_phase_mean(&e) {
                per_seed.push(v);
            }
        }
        if let Ok(m) = median(&per_seed) {
            bars.push((controller.as_str().to_string(), m));
        }
    }
    let chart = svg_bar_chart("Converged energy (final task, median over seeds)", "mJ per slot", &bars);
    write_atomic(&dir.join("energy_bars.svg"), &chart)?;

    // Queue CDF for the designated task (second task of the second domain
    // when available, else the last task), first seed.
    if spec.metrics.contains(&MetricKind::QueueCdf) {
        let target = if spec.domain_sequence.len() >= 2 && spec.domain_sequence[1].tasks.len() >= 2 {
            (spec.domain_sequence[1].domain.domain_id, 2)
        } else {
            (ld, lt)
        };
        let mut cdf_series = Vec::new();
        for r in results.iter().filter(|r| r.seed == first_seed) {
            if let Some(samples) = r.output.queue_samples.get(&target) {
                if let Ok(cdf) = queue_cdf(samples) {
                    cdf_series.push((r.controller.as_str().to_string(), cdf));
                }
            }
        }
        if !cdf_series.is_empty() {
            let chart = svg_line_chart(
                &format!("Queue-length CDF (domain {}, task {})", target.0, target.1),
                "queue length (bits)",
                "P(queue <= x)",
                &cdf_series,
                &[],
            );
            write_atomic(&dir.join("queue_cdf.svg"), &chart)?;
        }
    }
    Ok(())
}

fn cmd_run(args: RunArgs, command: &str) -> Result<(), CommandError> {
    let (resolved, _raw_text) = resolve_from(&args)?;
    let spec = &resolved.spec;
    let resume = match &args.kb_in {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CommandError::Validation(format!("cannot read knowledge {}: {e}", path.display())))?;
            Some(
                LifelongAgent::restore_knowledge(&text, resolved.cfgs.lifelong.clone(), resolved.cfgs.pg.clone())
                    .map_err(|e| CommandError::Validation(e.to_string()))?,
            )
        }
        None => None,
    };
    let results = execute_grid(spec, &resolved.cfgs, args.jobs, resume.as_ref())?;
    let rows = collect_rows(&results);

    if args.format.wants_csv() {
        write_atomic(&args.out.join("rows.csv"), &rows_to_csv(&rows))?;
        if let Some(cdf) = queue_cdf_csv(&results) {
            write_atomic(&args.out.join("queue_cdf.csv"), &cdf)?;
        }
    }
    if args.format.wants_json() {
        let runs: Vec<RunOutput> = results.iter().map(|r| r.output.clone()).collect();
        let summary = build_summary(
            &spec.name,
            command,
            Some(spec),
            Some(&resolved.canonical),
            &rows,
            &runs,
        );
        let file = if command == "compare" { "comparison.json" } else { "summary.json" };
        write_atomic(&args.out.join(file), &serde_json::to_string_pretty(&summary).expect("valid json"))?;
    }
    if args.plot {
        write_charts(&args.out.join("charts"), spec, &rows, &results)?;
    }
    if let Some(kb_out) = &args.kb_out {
        let agents: Vec<&RunResult> =
            results.iter().filter(|r| r.controller == Controller::CdL2rl && r.agent.is_some()).collect();
        for r in &agents {
            let path = if agents.len() == 1 {
                kb_out.clone()
            } else {
                kb_out.with_extension(format!("seed{}.kb", r.seed))
            };
            write_atomic(&path, &r.agent.as_ref().expect("filtered").serialize_knowledge())?;
        }
    }
    status_ok(command, &format!("rows={} out={}", rows.len(), args.out.display()));
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<(), CommandError> {
    let (resolved, _) = resolve_from(&args.common)?;
    let spec = &resolved.spec;
    let base = spec.domain_sequence[0].tasks[0].clone();
    let output = sweep(
        args.parameter,
        &base,
        &spec.controllers,
        &spec.seeds,
        spec.iterations,
        &resolved.cfgs,
    )?;
    let out = &args.common.out;
    if args.common.format.wants_csv() {
        write_atomic(&out.join("sweep.csv"), &sweep_to_csv(&output.rows))?;
        write_atomic(&out.join("sweep_rows.csv"), &rows_to_csv(&output.metric_rows))?;
    }
    if args.common.format.wants_json() {
        // Median converged energy per (controller, point).
        let grouped = swipt_core::harness::aggregate(
            output.rows.iter().map(|r| ((r.controller, r.point.clone()), r.converged_avg_energy_mj)),
        )
        .map_err(|e| CommandError::Runtime(e.to_string()))?;
        let mut points: BTreeMap<String, serde_json::Value> = BTreeMap::new();
        for ((controller, point), summary) in grouped {
            points
                .entry(point)
                .or_insert_with(|| json!({}))
                .as_object_mut()
                .expect("object")
                .insert(
                    controller.as_str().to_string(),
                    json!({"median": summary.median, "mean": summary.mean, "q1": summary.q1, "q3": summary.q3}),
                );
        }
        let summary = json!({
            "command": "sweep",
            "parameter": args.parameter.as_str(),
            "config_sha256": sha256_hex(&resolved.canonical),
            "converged_energy_mj_per_slot": points,
            "metadata": {"converged_phase": "final 25% of iterations"},
        });
        write_atomic(&out.join("sweep_summary.json"), &serde_json::to_string_pretty(&summary).expect("valid json"))?;
    }
    if args.common.plot {
        let mut series = Vec::new();
        for controller in &spec.controllers {
            let mut pts: Vec<(f64, f64)> = Vec::new();
            let labels: Vec<String> = {
                let mut l: Vec<String> =
                    output.rows.iter().filter(|r| r.controller == *controller).map(|r| r.point.clone()).collect();
                l.dedup();
                l
            };
            for (i, label) in labels.iter().enumerate() {
                let vals: Vec<f64> = output
                    .rows
                    .iter()
                    .filter(|r| r.controller == *controller && &r.point == label)
                    .map(|r| r.converged_avg_energy_mj)
                    .collect();
                if let Ok(m) = median(&vals) {
                    pts.push((i as f64, m));
                }
            }
            series.push((controller.as_str().to_string(), pts));
        }
        let chart = svg_line_chart(
            &format!("Converged energy vs {}", args.parameter.as_str()),
            args.parameter.as_str(),
            "mJ per slot (median over seeds)",
            &series,
            &[],
        );
        write_atomic(&out.join("charts").join("sweep_energy.svg"), &chart)?;
    }
    status_ok("sweep", &format!("points={} out={}", output.rows.len(), out.display()));
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), CommandError> {
    let text = std::fs::read_to_string(&args.input)
        .map_err(|e| CommandError::Validation(format!("cannot read {}: {e}", args.input.display())))?;
    let rows = rows_from_csv(&text).map_err(|e| CommandError::Validation(e.to_string()))?;
    let summary = build_summary("report", "report", None, Some(&text), &rows, &[]);
    write_atomic(&args.out.join("summary.json"), &serde_json::to_string_pretty(&summary).expect("valid json"))?;
    if args.plot {
        let mut controllers: Vec<Controller> = rows.iter().map(|r| r.controller).collect();
        controllers.sort();
        controllers.dedup();
        let mut seeds: Vec<u64> = rows.iter().map(|r| r.seed).collect();
        seeds.sort();
        seeds.dedup();
        let first_seed = seeds[0];
        let mut keys: Vec<(u32, usize)> = rows.iter().map(|r| (r.domain, r.task)).collect();
        keys.sort();
        keys.dedup();
        let mut series = Vec::new();
        for controller in controllers {
            let mut pts = Vec::new();
            let mut global = 0usize;
            for (domain, task) in &keys {
                for v in extract_series(&rows, controller, *domain, *task, first_seed, |r| r.avg_reward) {
                    global += 1;
                    pts.push((global as f64, v));
                }
            }
            series.push((controller.as_str().to_string(), pts));
        }
        let chart = svg_line_chart("Average reward", "iteration", "average reward", &series, &[]);
        write_atomic(&args.out.join("charts").join("reward_curves.svg"), &chart)?;
    }
    status_ok("report", &format!("rows={} out={}", rows.len(), args.out.display()));
    Ok(())
}

fn cmd_validate(args: ValidateArgs) -> Result<(), CommandError> {
    let text = match (&args.config, &args.stdin_text) {
        (Some(path), _) => std::fs::read_to_string(path)
            .map_err(|e| CommandError::Validation(format!("cannot read config {}: {e}", path.display())))?,
        (None, Some(text)) => text.clone(),
        (None, None) => {
            return Err(CommandError::Validation("validate-config needs --config or --stdin".into()))
        }
    };
    let raw = parse_config(&text)?;
    let resolved = resolve(&raw, args.seed, env_seed(), None)?;
    println!(
        "ok: {} domains, {} tasks, controllers [{}], seeds {:?}, iterations {}",
        resolved.spec.domain_sequence.len(),
        resolved.spec.domain_sequence.iter().map(|d| d.tasks.len()).sum::<usize>(),
        resolved.spec.controllers.iter().map(|c| c.as_str()).collect::<Vec<_>>().join(", "),
        resolved.spec.seeds,
        resolved.spec.iterations,
    );
    status_ok("validate-config", "valid=true");
    Ok(())
}
