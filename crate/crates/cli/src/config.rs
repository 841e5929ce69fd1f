//! Sectioned key/value experiment configuration.
//!
//! The format is a flat INI-like text: `[experiment]`, `[lyapunov]`, `[pg]`,
//! and `[lifelong]` appear at most once; each `[domain]` opens a domain
//! segment and the `[task]` sections after it belong to that domain. Keys
//! are exactly the config keys documented in the README; unknown sections,
//! unknown keys, and duplicate keys are errors with line numbers.

use std::collections::BTreeSet;
use swipt_core::env::TaskConfig;
use swipt_core::harness::{
    Controller, ControllerConfigs, DomainSpec, ExperimentSpec, MetricKind,
};
use swipt_core::lifelong::LifelongConfig;
use swipt_core::lyapunov::LyapunovConfig;
use swipt_core::pg::PGConfig;

#[derive(Debug)]
pub enum ConfigError {
    Parse { line: usize, msg: String },
    Validation { field: String, msg: String },
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::Parse { line, msg } => write!(f, "parse error at line {line}: {msg}"),
            ConfigError::Validation { field, msg } => write!(f, "invalid `{field}`: {msg}"),
        }
    }
}

impl std::error::Error for ConfigError {}

/// Parsed but not yet finalized configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RawConfig {
    pub name: String,
    pub controllers: Vec<Controller>,
    pub seeds: Vec<u64>,
    pub iterations: Option<usize>,
    pub metrics: BTreeSet<MetricKind>,
    /// (domain id, tasks) in file order.
    pub domains: Vec<(u32, Vec<TaskConfig>)>,
    pub lyapunov: LyapunovConfig,
    pub pg: PGConfig,
    lifelong_kv: Vec<(String, String)>,
}

/// Fully validated experiment ready to execute.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub spec: ExperimentSpec,
    pub cfgs: ControllerConfigs,
    /// Canonical serialized form (stable across round trips).
    pub canonical: String,
}

fn parse_err(line: usize, msg: impl Into<String>) -> ConfigError {
    ConfigError::Parse { line, msg: msg.into() }
}

/// Parses the sectioned text into a [`RawConfig`].
pub fn parse_config(text: &str) -> Result<RawConfig, ConfigError> {
    #[derive(PartialEq, Clone, Copy, Debug)]
    enum Section {
        None,
        Experiment,
        Lyapunov,
        Pg,
        Lifelong,
        Domain,
        Task,
    }

    let mut raw = RawConfig {
        name: "experiment".into(),
        controllers: vec![Controller::Lyapunov, Controller::PgRl, Controller::CdL2rl],
        seeds: Vec::new(),
        iterations: None,
        metrics: BTreeSet::new(),
        domains: Vec::new(),
        lyapunov: LyapunovConfig::default(),
        pg: PGConfig::default(),
        lifelong_kv: Vec::new(),
    };
    let mut seen_singletons: BTreeSet<&'static str> = BTreeSet::new();
    let mut section = Section::None;
    let mut section_keys: BTreeSet<String> = BTreeSet::new();
    let mut next_domain_id: u32 = 1;
    let mut controllers_set = false;
    let mut metrics_set = false;

    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section_keys.clear();
            section = match name.trim() {
                "experiment" | "lyapunov" | "pg" | "lifelong" => {
                    let tag = match name.trim() {
                        "experiment" => "experiment",
                        "lyapunov" => "lyapunov",
                        "pg" => "pg",
                        _ => "lifelong",
                    };
                    if !seen_singletons.insert(tag) {
                        return Err(parse_err(line_no, format!("duplicate section [{tag}]")));
                    }
                    match tag {
                        "experiment" => Section::Experiment,
                        "lyapunov" => Section::Lyapunov,
                        "pg" => Section::Pg,
                        _ => Section::Lifelong,
                    }
                }
                "domain" => {
                    raw.domains.push((next_domain_id, Vec::new()));
                    next_domain_id += 1;
                    Section::Domain
                }
                "task" => {
                    let Some(last) = raw.domains.last_mut() else {
                        return Err(parse_err(line_no, "[task] before any [domain]"));
                    };
                    last.1.push(TaskConfig::default());
                    Section::Task
                }
                other => return Err(parse_err(line_no, format!("unknown section [{other}]"))),
            };
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(parse_err(line_no, format!("expected `key = value`, got `{line}`")));
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if !section_keys.insert(key.clone()) {
            return Err(parse_err(line_no, format!("duplicate key `{key}` in section")));
        }
        match section {
            Section::None => return Err(parse_err(line_no, "key/value before any section")),
            Section::Experiment => match key.as_str() {
                "name" => raw.name = value,
                "controllers" => {
                    raw.controllers = value
                        .split(',')
                        .filter(|s| !s.trim().is_empty())
                        .map(Controller::parse)
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(|msg| parse_err(line_no, msg))?;
                    controllers_set = true;
                }
                "seeds" => {
                    raw.seeds = value
                        .split(',')
                        .filter(|s| !s.trim().is_empty())
                        .map(|s| s.trim().parse::<u64>().map_err(|e| parse_err(line_no, format!("bad seed `{s}`: {e}"))))
                        .collect::<Result<Vec<_>, _>>()?;
                }
                "iterations" => {
                    raw.iterations = Some(
                        value
                            .parse::<usize>()
                            .map_err(|e| parse_err(line_no, format!("bad iterations `{value}`: {e}")))?,
                    )
                }
                "metrics" => {
                    raw.metrics = value
                        .split(',')
                        .filter(|s| !s.trim().is_empty())
                        .map(MetricKind::parse)
                        .collect::<Result<BTreeSet<_>, _>>()
                        .map_err(|msg| parse_err(line_no, msg))?;
                    metrics_set = true;
                }
                other => return Err(parse_err(line_no, format!("unknown experiment key `{other}`"))),
            },
            Section::Lyapunov => {
                raw.lyapunov.apply_kv(&key, &value).map_err(|msg| parse_err(line_no, msg))?
            }
            Section::Pg => raw.pg.apply_kv(&key, &value).map_err(|msg| parse_err(line_no, msg))?,
            Section::Lifelong => raw.lifelong_kv.push((key, value)),
            Section::Domain => match key.as_str() {
                "id" => {
                    let id = value
                        .parse::<u32>()
                        .map_err(|e| parse_err(line_no, format!("bad domain id `{value}`: {e}")))?;
                    raw.domains.last_mut().expect("inside a domain").0 = id;
                    next_domain_id = next_domain_id.max(id + 1);
                }
                other => return Err(parse_err(line_no, format!("unknown domain key `{other}`"))),
            },
            Section::Task => {
                let task = raw
                    .domains
                    .last_mut()
                    .and_then(|d| d.1.last_mut())
                    .expect("inside a task");
                task.apply_kv(&key, &value).map_err(|msg| parse_err(line_no, msg))?;
            }
        }
    }

    if !controllers_set && !metrics_set {
        // Nothing to do; defaults already set above.
    }
    if raw.metrics.is_empty() {
        raw.metrics = BTreeSet::from([
            MetricKind::AvgReward,
            MetricKind::Energy,
            MetricKind::QueueCdf,
            MetricKind::HarvestedCumulative,
            MetricKind::ConvergenceIters,
        ]);
    }
    Ok(raw)
}

/// Seed precedence: command-line override, then the config's list, then the
/// `SWIPT_BENCH_SEED` environment fallback.
pub fn resolve(
    raw: &RawConfig,
    seed_override: Option<u64>,
    env_seed: Option<u64>,
    controllers_override: Option<&[Controller]>,
) -> Result<ResolvedConfig, ConfigError> {
    let seeds = if let Some(s) = seed_override {
        vec![s]
    } else if !raw.seeds.is_empty() {
        raw.seeds.clone()
    } else if let Some(s) = env_seed {
        vec![s]
    } else {
        return Err(ConfigError::Validation {
            field: "seeds".into(),
            msg: "no seeds: set [experiment] seeds, pass --seed, or set SWIPT_BENCH_SEED".into(),
        });
    };
    if raw.domains.is_empty() {
        return Err(ConfigError::Validation { field: "domains".into(), msg: "no domains defined".into() });
    }
    let mut domain_sequence = Vec::new();
    for (id, tasks) in &raw.domains {
        if tasks.is_empty() {
            return Err(ConfigError::Validation {
                field: "domain".into(),
                msg: format!("domain {id} has no tasks"),
            });
        }
        for task in tasks {
            task.validate().map_err(|e| ConfigError::Validation { field: "task".into(), msg: e.to_string() })?;
            if task.n_secondary != tasks[0].n_secondary
                || task.secondary_power_mode != tasks[0].secondary_power_mode
            {
                return Err(ConfigError::Validation {
                    field: "n_secondary".into(),
                    msg: format!("tasks in domain {id} must share dimensions"),
                });
            }
        }
        domain_sequence.push(DomainSpec { domain: tasks[0].domain(*id), tasks: tasks.clone() });
    }
    let controllers = match controllers_override {
        Some(list) if !list.is_empty() => list.to_vec(),
        _ => raw.controllers.clone(),
    };
    let iterations = raw.iterations.unwrap_or(raw.pg.iterations);

    let mut pg = raw.pg.clone();
    pg.iterations = iterations;
    let mut lifelong = LifelongConfig::default().with_total_iterations(iterations);
    for (k, v) in &raw.lifelong_kv {
        lifelong
            .apply_kv(k, v)
            .map_err(|msg| ConfigError::Validation { field: format!("lifelong.{k}"), msg })?;
    }

    let spec = ExperimentSpec {
        name: raw.name.clone(),
        domain_sequence,
        controllers,
        seeds,
        iterations,
        metrics: raw.metrics.clone(),
    };
    spec.validate().map_err(|e| ConfigError::Validation { field: "experiment".into(), msg: e.to_string() })?;
    let cfgs = ControllerConfigs { lyapunov: raw.lyapunov.clone(), pg, lifelong };
    let canonical = serialize(&spec, &cfgs);
    Ok(ResolvedConfig { spec, cfgs, canonical })
}

/// Canonical serialization; parsing it again yields an identical spec.
pub fn serialize(spec: &ExperimentSpec, cfgs: &ControllerConfigs) -> String {
    let mut out = String::new();
    out.push_str("[experiment]\n");
    out.push_str(&format!("name = {}\n", spec.name));
    let controllers: Vec<&str> = spec.controllers.iter().map(|c| c.as_str()).collect();
    out.push_str(&format!("controllers = {}\n", controllers.join(", ")));
    let seeds: Vec<String> = spec.seeds.iter().map(|s| s.to_string()).collect();
    out.push_str(&format!("seeds = {}\n", seeds.join(", ")));
    out.push_str(&format!("iterations = {}\n", spec.iterations));
    let metrics: Vec<&str> = spec.metrics.iter().map(|m| m.as_str()).collect();
    out.push_str(&format!("metrics = {}\n", metrics.join(", ")));
    out.push_str("\n[lyapunov]\n");
    for (k, v) in cfgs.lyapunov.to_kv_lines() {
        out.push_str(&format!("{k} = {v}\n"));
    }
    out.push_str("\n[pg]\n");
    for (k, v) in cfgs.pg.to_kv_lines() {
        out.push_str(&format!("{k} = {v}\n"));
    }
    out.push_str("\n[lifelong]\n");
    for (k, v) in cfgs.lifelong.to_kv_lines() {
        out.push_str(&format!("{k} = {v}\n"));
    }
    for dom in &spec.domain_sequence {
        out.push_str(&format!("\n[domain]\nid = {}\n", dom.domain.domain_id));
        for task in &dom.tasks {
            out.push_str("\n[task]\n");
            for (k, v) in task.to_kv_lines() {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_fails_validation() {
        let raw = parse_config("").unwrap();
        let err = resolve(&raw, Some(1), None, None).unwrap_err();
        assert!(matches!(err, ConfigError::Validation { .. }));
    }

    #[test]
    fn unknown_key_is_an_error_with_line_number() {
        let text = "[experiment]\nbogus = 1\n";
        match parse_config(text) {
            Err(ConfigError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_key_rejected() {
        let text = "[experiment]\nname = a\nname = b\n";
        assert!(matches!(parse_config(text), Err(ConfigError::Parse { line: 3, .. })));
    }

    #[test]
    fn task_before_domain_rejected() {
        assert!(matches!(parse_config("[task]\n"), Err(ConfigError::Parse { line: 1, .. })));
    }

    #[test]
    fn seed_precedence_flag_config_env() {
        let text = "[experiment]\nseeds = 5, 6\n[domain]\n[task]\n";
        let raw = parse_config(text).unwrap();
        assert_eq!(resolve(&raw, Some(9), Some(3), None).unwrap().spec.seeds, vec![9]);
        assert_eq!(resolve(&raw, None, Some(3), None).unwrap().spec.seeds, vec![5, 6]);
        let no_seeds = parse_config("[domain]\n[task]\n").unwrap();
        assert_eq!(resolve(&no_seeds, None, Some(3), None).unwrap().spec.seeds, vec![3]);
        assert!(resolve(&no_seeds, None, None, None).is_err());
    }

    #[test]
    fn round_trip_preserves_spec() {
        let text = "\
[experiment]
name = trial
controllers = lyapunov, cdl2rl
seeds = 1, 2
iterations = 12
metrics = avg_reward, energy

[lyapunov]
beta = 2.5

[pg]
batch_size = 4

[lifelong]
mu1 = 0.2

[domain]
id = 3

[task]
n_secondary = 1
arrival_rate_lambda_a = 7.5

[task]
n_secondary = 1
conv_eff_lambda = 0.9
";
        let resolved = resolve(&parse_config(text).unwrap(), None, None, None).unwrap();
        let reparsed = resolve(&parse_config(&resolved.canonical).unwrap(), None, None, None).unwrap();
        assert_eq!(reparsed.spec, resolved.spec);
        assert_eq!(reparsed.cfgs.lyapunov, resolved.cfgs.lyapunov);
        assert_eq!(reparsed.cfgs.pg, resolved.cfgs.pg);
        assert_eq!(reparsed.cfgs.lifelong, resolved.cfgs.lifelong);
        assert_eq!(reparsed.canonical, resolved.canonical);
    }

    #[test]
    fn mixed_dims_within_domain_rejected() {
        let text = "[domain]\n[task]\nn_secondary = 1\n[task]\nn_secondary = 2\n";
        let raw = parse_config(text).unwrap();
        assert!(matches!(
            resolve(&raw, Some(1), None, None),
            Err(ConfigError::Validation { .. })
        ));
    }
}
