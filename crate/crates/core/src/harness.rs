//! Experiment orchestration: task/domain sequencing, benchmark metrics, and
//! deterministic multi-seed aggregation.
//!
//! A run executes a sequence of tasks grouped into domains under one
//! controller and one seed, emitting one [`MetricsRow`] per (task,
//! iteration). Lyapunov "iterations" are evaluation episodes (the policy
//! does not learn); PG-RL starts fresh on every task as the no-transfer
//! baseline; the lifelong learner carries its knowledge base across the
//! whole sequence. Every random stream derives from (controller, domain
//! index, task index, seed), so rows never depend on later tasks and runs
//! reproduce bit-exactly.

use crate::env::{state_vector, DomainConfig, EnvError, Environment, TaskConfig};
use crate::lifelong::{LifelongAgent, LifelongConfig, LifelongError};
use crate::lyapunov::{solve_slot, LyapunovConfig};
use crate::pg::{train_iteration, CriticParams, IterationMetrics, LinearGaussianPolicy, PGConfig, PgError};
use crate::rng::derive_seed;
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("empty series")]
    EmptySeries,
    #[error("invalid experiment: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Pg(#[from] PgError),
    #[error(transparent)]
    Lifelong(#[from] LifelongError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Controller {
    Lyapunov,
    PgRl,
    CdL2rl,
}

impl Controller {
    pub fn as_str(&self) -> &'static str {
        match self {
            Controller::Lyapunov => "lyapunov",
            Controller::PgRl => "pgrl",
            Controller::CdL2rl => "cdl2rl",
        }
    }

    pub fn parse(s: &str) -> Result<Self, String> {
        match s.trim() {
            "lyapunov" => Ok(Controller::Lyapunov),
            "pgrl" => Ok(Controller::PgRl),
            "cdl2rl" => Ok(Controller::CdL2rl),
            other => Err(format!("unknown controller `{other}` (lyapunov, pgrl, cdl2rl)")),
        }
    }

    fn salt(&self) -> u64 {
        match self {
            Controller::Lyapunov => 0x17,
            Controller::PgRl => 0x2A,
            Controller::CdL2rl => 0x3C,
        }
    }
}

impl std::fmt::Display for Controller {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum MetricKind {
    AvgReward,
    Energy,
    QueueCdf,
    HarvestedCumulative,
    ConvergenceIters,
}

impl MetricKind {
    pub fn parse(s: &str) -> Result<Self, String> {
        match s.trim() {
            "avg_reward" => Ok(MetricKind::AvgReward),
            "energy" => Ok(MetricKind::Energy),
            "queue_cdf" => Ok(MetricKind::QueueCdf),
            "harvested_cumulative" => Ok(MetricKind::HarvestedCumulative),
            "convergence_iters" => Ok(MetricKind::ConvergenceIters),
            other => Err(format!("unknown metric `{other}`")),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            MetricKind::AvgReward => "avg_reward",
            MetricKind::Energy => "energy",
            MetricKind::QueueCdf => "queue_cdf",
            MetricKind::HarvestedCumulative => "harvested_cumulative",
            MetricKind::ConvergenceIters => "convergence_iters",
        }
    }
}

/// One domain segment of an experiment: shared dimensions, ordered tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    pub domain: DomainConfig,
    pub tasks: Vec<TaskConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub name: String,
    pub domain_sequence: Vec<DomainSpec>,
    pub controllers: Vec<Controller>,
    pub seeds: Vec<u64>,
    /// Per-task iteration budget (training iterations, or evaluation
    /// episodes for the Lyapunov controller).
    pub iterations: usize,
    pub metrics: BTreeSet<MetricKind>,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.domain_sequence.is_empty() || self.domain_sequence.iter().any(|d| d.tasks.is_empty()) {
            return Err(HarnessError::InvalidSpec("experiment needs at least one domain with one task".into()));
        }
        if self.seeds.is_empty() {
            return Err(HarnessError::InvalidSpec("experiment needs at least one seed".into()));
        }
        if self.controllers.is_empty() {
            return Err(HarnessError::InvalidSpec("experiment needs at least one controller".into()));
        }
        if self.iterations == 0 {
            return Err(HarnessError::InvalidSpec("iterations must be >= 1".into()));
        }
        for dom in &self.domain_sequence {
            for task in &dom.tasks {
                task.validate()?;
                let d = task.domain(dom.domain.domain_id);
                if d.state_dim != dom.domain.state_dim || d.action_dim != dom.domain.action_dim {
                    return Err(HarnessError::InvalidSpec(format!(
                        "task in domain {} has dims ({}, {}) but the domain declares ({}, {})",
                        dom.domain.domain_id, d.state_dim, d.action_dim, dom.domain.state_dim, dom.domain.action_dim
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Controller hyperparameters shared by a whole experiment.
#[derive(Debug, Clone, Default)]
pub struct ControllerConfigs {
    pub lyapunov: LyapunovConfig,
    pub pg: PGConfig,
    pub lifelong: LifelongConfig,
}

/// The EH-dynamicity grid: (channel scale, conversion efficiency).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EhDynamicityLevel {
    High,
    Medium,
    Low,
}

impl EhDynamicityLevel {
    pub fn eh_scale(&self) -> f64 {
        match self {
            EhDynamicityLevel::High => 1.8,
            EhDynamicityLevel::Medium => 1.0,
            EhDynamicityLevel::Low => 0.6,
        }
    }

    pub fn efficiency(&self) -> f64 {
        match self {
            EhDynamicityLevel::High => 0.65,
            EhDynamicityLevel::Medium => 0.45,
            EhDynamicityLevel::Low => 0.35,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            EhDynamicityLevel::High => "high",
            EhDynamicityLevel::Medium => "medium",
            EhDynamicityLevel::Low => "low",
        }
    }

    pub const ALL: [EhDynamicityLevel; 3] =
        [EhDynamicityLevel::High, EhDynamicityLevel::Medium, EhDynamicityLevel::Low];
}

/// One output record: metrics of one iteration of one task.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub controller: Controller,
    pub domain: u32,
    /// 1-based task index within its domain segment.
    pub task: usize,
    pub seed: u64,
    /// 1-based iteration (or evaluation episode) within the task.
    pub iteration: usize,
    pub avg_reward: f64,
    pub avg_energy_mj_per_slot: f64,
    pub avg_queue_bits: f64,
    /// Harvested energy accumulated over the task so far (mJ).
    pub harvested_cumulative_mj: f64,
}

/// Per-task lifelong diagnostics emitted by the CD-L2RL controller.
#[derive(Debug, Clone, Serialize)]
pub struct LifelongTaskTrace {
    pub domain: u32,
    pub task: usize,
    pub warm_started: bool,
    pub loss_before_updates: f64,
    pub loss_after_updates: f64,
}

/// Everything produced by one (controller, seed) run.
#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub rows: Vec<MetricsRow>,
    /// Raw queue samples collected over the converged phase, when the
    /// `queue_cdf` metric is enabled; keyed by (domain, task).
    pub queue_samples: BTreeMap<(u32, usize), Vec<f64>>,
    /// Present for CD-L2RL runs only.
    pub lifelong_trace: Vec<LifelongTaskTrace>,
}

fn push_iteration_rows(
    out: &mut RunOutput,
    controller: Controller,
    domain: u32,
    task: usize,
    seed: u64,
    metrics: &[IterationMetrics],
    collect_queues: bool,
) {
    let converged_from = metrics.len() - metrics.len().div_ceil(4);
    let mut harvested_cum = 0.0;
    for (i, m) in metrics.iter().enumerate() {
        harvested_cum += m.harvested_mj_per_episode;
        out.rows.push(MetricsRow {
            controller,
            domain,
            task,
            seed,
            iteration: i + 1,
            avg_reward: m.avg_reward,
            avg_energy_mj_per_slot: m.avg_energy_mj_per_slot,
            avg_queue_bits: m.avg_queue_bits,
            harvested_cumulative_mj: harvested_cum,
        });
        if collect_queues && i >= converged_from {
            out.queue_samples.entry((domain, task)).or_default().extend(&m.queue_samples);
        }
    }
}

fn run_lyapunov_task(
    task: &TaskConfig,
    lcfg: &LyapunovConfig,
    iterations: usize,
    env_seed: u64,
    collect_queues: bool,
) -> Result<Vec<IterationMetrics>, HarnessError> {
    let mut env = Environment::new(task.clone(), env_seed)?;
    let mut metrics = Vec::with_capacity(iterations);
    let converged_from = iterations - iterations.div_ceil(4);
    for ep in 0..iterations {
        let mut state = env.reset();
        let mut m = IterationMetrics::default();
        let mut reward_sum = 0.0;
        for _ in 0..task.horizon_t {
            let action = solve_slot(&state, task, lcfg);
            let out = env.step(&state, &action)?;
            reward_sum += out.reward;
            m.avg_energy_mj_per_slot += out.consumed_mj.iter().sum::<f64>();
            m.avg_queue_bits += state.queues.iter().sum::<f64>() / state.queues.len() as f64;
            m.harvested_mj_per_episode += out.harvested_mj.iter().sum::<f64>();
            if collect_queues && ep >= converged_from {
                m.queue_samples.extend_from_slice(&state.queues);
            }
            state = out.next_state;
        }
        let slots = task.horizon_t as f64;
        m.avg_reward = reward_sum / slots;
        m.avg_energy_mj_per_slot /= slots;
        m.avg_queue_bits /= slots;
        metrics.push(m);
    }
    Ok(metrics)
}

fn run_pg_task(
    task: &TaskConfig,
    domain_id: u32,
    pg_cfg: &PGConfig,
    iterations: usize,
    env_seed: u64,
    rng_seed: u64,
    collect_queues: bool,
) -> Result<Vec<IterationMetrics>, HarnessError> {
    let dcfg = task.domain(domain_id);
    let mut env = Environment::new(task.clone(), env_seed)?;
    let mut rng = crate::rng::stream(rng_seed);
    let mut policy = LinearGaussianPolicy::new_zero(dcfg, pg_cfg.sigma_init);
    let mut critic = CriticParams::new_zero(dcfg.state_dim);
    let mut metrics = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        metrics.push(train_iteration(&mut policy, &mut critic, &mut env, pg_cfg, &mut rng, collect_queues)?);
    }
    Ok(metrics)
}

/// Executes every task of the experiment in order under one controller and
/// one master seed.
pub fn run_sequential(
    spec: &ExperimentSpec,
    controller: Controller,
    seed: u64,
    cfgs: &ControllerConfigs,
) -> Result<RunOutput, HarnessError> {
    Ok(run_sequential_resumable(spec, controller, seed, cfgs, None)?.0)
}

/// Like [`run_sequential`], optionally resuming a lifelong agent and
/// returning the final one (CD-L2RL runs only).
pub fn run_sequential_resumable(
    spec: &ExperimentSpec,
    controller: Controller,
    seed: u64,
    cfgs: &ControllerConfigs,
    resume: Option<LifelongAgent>,
) -> Result<(RunOutput, Option<LifelongAgent>), HarnessError> {
    spec.validate()?;
    let collect_queues = spec.metrics.contains(&MetricKind::QueueCdf);
    let mut out = RunOutput::default();
    let mut agent = match controller {
        Controller::CdL2rl => Some(resume.unwrap_or_else(|| {
            LifelongAgent::new(cfgs.lifelong.clone(), cfgs.pg.clone(), derive_seed(seed, &[controller.salt()]))
        })),
        _ => None,
    };

    for (dom_idx, dom) in spec.domain_sequence.iter().enumerate() {
        let domain_id = dom.domain.domain_id;
        for (task_idx, task) in dom.tasks.iter().enumerate() {
            let salts = [controller.salt(), dom_idx as u64, task_idx as u64];
            let env_seed = derive_seed(seed, &[salts[0], salts[1], salts[2], 1]);
            let rng_seed = derive_seed(seed, &[salts[0], salts[1], salts[2], 2]);
            let metrics = match controller {
                Controller::Lyapunov => {
                    run_lyapunov_task(task, &cfgs.lyapunov, spec.iterations, env_seed, collect_queues)?
                }
                Controller::PgRl => run_pg_task(
                    task,
                    domain_id,
                    &cfgs.pg,
                    spec.iterations,
                    env_seed,
                    rng_seed,
                    collect_queues,
                )?,
                Controller::CdL2rl => {
                    let agent = agent.as_mut().expect("agent initialized for cdl2rl");
                    let outcome = agent.observe_task(
                        task,
                        domain_id,
                        derive_seed(seed, &[salts[0], salts[1], salts[2]]),
                        collect_queues,
                    )?;
                    out.lifelong_trace.push(LifelongTaskTrace {
                        domain: domain_id,
                        task: task_idx + 1,
                        warm_started: outcome.warm_started,
                        loss_before_updates: outcome.loss_before_updates,
                        loss_after_updates: outcome.loss_after_updates,
                    });
                    outcome.metrics
                }
            };
            push_iteration_rows(&mut out, controller, domain_id, task_idx + 1, seed, &metrics, collect_queues);
        }
    }
    Ok((out, agent))
}

/// Smallest iteration (1-based) whose trailing `window`-mean reaches
/// `fraction` of the best trailing window mean. The series is shifted by its
/// minimum first so the threshold is taken against non-negative values.
pub fn convergence_iterations(series: &[f64], fraction: f64, window: usize) -> Result<usize, HarnessError> {
    if series.is_empty() {
        return Err(HarnessError::EmptySeries);
    }
    let window = window.max(1);
    let shift = series.iter().cloned().fold(f64::INFINITY, f64::min);
    let shifted: Vec<f64> = series.iter().map(|x| x - shift).collect();
    let wmean = |i: usize| -> f64 {
        let lo = (i + 1).saturating_sub(window);
        shifted[lo..=i].iter().sum::<f64>() / (i - lo + 1) as f64
    };
    let best = (0..shifted.len()).map(wmean).fold(f64::NEG_INFINITY, f64::max);
    let target = fraction * best;
    let eps = 1e-12 * best.abs().max(1e-300);
    for i in 0..shifted.len() {
        if wmean(i) >= target - eps {
            return Ok(i + 1);
        }
    }
    Ok(shifted.len())
}

/// Fraction of samples at or below `t`.
pub fn empirical_cdf(samples: &[f64], t: f64) -> f64 {
    samples.iter().filter(|x| **x <= t).count() as f64 / samples.len().max(1) as f64
}

/// Empirical CDF evaluated at 100 evenly spaced thresholds from 0 to the
/// sample maximum.
pub fn queue_cdf(samples: &[f64]) -> Result<Vec<(f64, f64)>, HarnessError> {
    if samples.is_empty() {
        return Err(HarnessError::EmptySeries);
    }
    let max = samples.iter().cloned().fold(0.0_f64, f64::max);
    let points = 100;
    Ok((0..points)
        .map(|k| {
            // Fraction first so the final threshold is exactly the maximum.
            let t = max * (k as f64 / (points - 1) as f64);
            (t, empirical_cdf(samples, t))
        })
        .collect())
}

/// Order statistics of one group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSummary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let idx = p * (n - 1) as f64;
    let lo = idx.floor() as usize;
    let hi = idx.ceil() as usize;
    let frac = idx - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Median of a slice (linear-interpolation quantile).
pub fn median(values: &[f64]) -> Result<f64, HarnessError> {
    if values.is_empty() {
        return Err(HarnessError::EmptySeries);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite metric values"));
    Ok(quantile_sorted(&sorted, 0.5))
}

/// Groups values by key and reports median, mean, and interquartile range
/// per group, in key order.
pub fn aggregate<K: Ord + Clone>(
    items: impl IntoIterator<Item = (K, f64)>,
) -> Result<Vec<(K, GroupSummary)>, HarnessError> {
    let mut groups: BTreeMap<K, Vec<f64>> = BTreeMap::new();
    for (k, v) in items {
        groups.entry(k).or_default().push(v);
    }
    if groups.is_empty() {
        return Err(HarnessError::EmptySeries);
    }
    Ok(groups
        .into_iter()
        .map(|(k, mut vs)| {
            vs.sort_by(|a, b| a.partial_cmp(b).expect("finite metric values"));
            let mean = vs.iter().sum::<f64>() / vs.len() as f64;
            let summary = GroupSummary {
                count: vs.len(),
                mean,
                median: quantile_sorted(&vs, 0.5),
                q1: quantile_sorted(&vs, 0.25),
                q3: quantile_sorted(&vs, 0.75),
            };
            (k, summary)
        })
        .collect())
}

/// Mean over the final 25% of a series (at least one element).
pub fn converged_phase_mean(values: &[f64]) -> Result<f64, HarnessError> {
    if values.is_empty() {
        return Err(HarnessError::EmptySeries);
    }
    let tail = values.len().div_ceil(4);
    let slice = &values[values.len() - tail..];
    Ok(slice.iter().sum::<f64>() / slice.len() as f64)
}

/// Pulls one task's per-iteration series of a metric out of the row list.
pub fn extract_series(
    rows: &[MetricsRow],
    controller: Controller,
    domain: u32,
    task: usize,
    seed: u64,
    metric: impl Fn(&MetricsRow) -> f64,
) -> Vec<f64> {
    let mut indexed: Vec<(usize, f64)> = rows
        .iter()
        .filter(|r| r.controller == controller && r.domain == domain && r.task == task && r.seed == seed)
        .map(|r| (r.iteration, metric(r)))
        .collect();
    indexed.sort_by_key(|(i, _)| *i);
    indexed.into_iter().map(|(_, v)| v).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParameter {
    ConvEff,
    NNodes,
    EhDynamicity,
}

impl SweepParameter {
    pub fn parse(s: &str) -> Result<Self, String> {
        match s.trim() {
            "conv-eff" | "conv_eff" => Ok(SweepParameter::ConvEff),
            "n-nodes" | "n_nodes" => Ok(SweepParameter::NNodes),
            "eh-dynamicity" | "eh_dynamicity" => Ok(SweepParameter::EhDynamicity),
            other => Err(format!("unknown sweep parameter `{other}`")),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            SweepParameter::ConvEff => "conv_eff",
            SweepParameter::NNodes => "n_nodes",
            SweepParameter::EhDynamicity => "eh_dynamicity",
        }
    }
}

/// One sweep point: a task variant plus the domain it belongs to.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub label: String,
    pub domain_id: u32,
    pub task: TaskConfig,
}

/// The task grid a sweep walks over. Node-count points form one domain per
/// N (the learner transfers across domains); the other sweeps stay within a
/// single domain.
pub fn sweep_points(param: SweepParameter, base: &TaskConfig) -> Vec<SweepPoint> {
    match param {
        SweepParameter::ConvEff => [0.2, 0.4, 0.6, 0.8, 1.0]
            .iter()
            .map(|lam| {
                let mut t = base.clone();
                t.conv_eff_lambda = *lam;
                SweepPoint { label: format!("{lam}"), domain_id: 1, task: t }
            })
            .collect(),
        SweepParameter::NNodes => (1..=5)
            .map(|n| {
                let mut t = base.clone();
                t.n_secondary = n;
                SweepPoint { label: format!("{n}"), domain_id: n as u32, task: t }
            })
            .collect(),
        SweepParameter::EhDynamicity => EhDynamicityLevel::ALL
            .iter()
            .map(|level| {
                let mut t = base.clone();
                t.eh_scale_zeta_prime = level.eh_scale();
                t.conv_eff_lambda = level.efficiency();
                SweepPoint { label: level.label().to_string(), domain_id: 1, task: t }
            })
            .collect(),
    }
}

/// Converged-phase summary of one (controller, point, seed) cell.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub parameter: &'static str,
    pub point: String,
    pub controller: Controller,
    pub seed: u64,
    pub converged_avg_energy_mj: f64,
    pub convergence_iterations: usize,
    /// State dimension of the point's domain (dimension bookkeeping for the
    /// node-count sweep).
    pub state_dim: usize,
}

#[derive(Debug, Clone, Default)]
pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
    /// Full per-iteration rows (task = 1-based point index).
    pub metric_rows: Vec<MetricsRow>,
}

/// Builds the sweep's task sequence as an experiment spec.
pub fn sweep_spec(
    param: SweepParameter,
    base: &TaskConfig,
    controllers: &[Controller],
    seeds: &[u64],
    iterations: usize,
) -> ExperimentSpec {
    let points = sweep_points(param, base);
    let mut domain_sequence: Vec<DomainSpec> = Vec::new();
    for p in &points {
        match domain_sequence.iter_mut().find(|d| d.domain.domain_id == p.domain_id) {
            Some(seg) => seg.tasks.push(p.task.clone()),
            None => domain_sequence.push(DomainSpec {
                domain: p.task.domain(p.domain_id),
                tasks: vec![p.task.clone()],
            }),
        }
    }
    ExperimentSpec {
        name: format!("sweep_{}", param.as_str()),
        domain_sequence,
        controllers: controllers.to_vec(),
        seeds: seeds.to_vec(),
        iterations,
        metrics: BTreeSet::from([MetricKind::AvgReward, MetricKind::Energy, MetricKind::HarvestedCumulative]),
    }
}

/// Runs every (controller, sweep point, seed) cell and reports the
/// converged-phase average energy per cell, plus the full per-iteration
/// rows (which carry the cumulative harvested-energy series).
pub fn sweep(
    param: SweepParameter,
    base: &TaskConfig,
    controllers: &[Controller],
    seeds: &[u64],
    iterations: usize,
    cfgs: &ControllerConfigs,
) -> Result<SweepOutput, HarnessError> {
    let points = sweep_points(param, base);
    let spec = sweep_spec(param, base, controllers, seeds, iterations);
    let mut out = SweepOutput::default();
    for controller in controllers {
        for seed in seeds {
            let run = run_sequential(&spec, *controller, *seed, cfgs)?;
            // Map (domain, task) back to the flat point order.
            let mut flat: Vec<(u32, usize)> = Vec::new();
            for dom in &spec.domain_sequence {
                for t in 1..=dom.tasks.len() {
                    flat.push((dom.domain.domain_id, t));
                }
            }
            for (point_idx, (domain, task)) in flat.iter().enumerate() {
                let energy = extract_series(&run.rows, *controller, *domain, *task, *seed, |r| {
                    r.avg_energy_mj_per_slot
                });
                let reward =
                    extract_series(&run.rows, *controller, *domain, *task, *seed, |r| r.avg_reward);
                out.rows.push(SweepRow {
                    parameter: param.as_str(),
                    point: points[point_idx].label.clone(),
                    controller: *controller,
                    seed: *seed,
                    converged_avg_energy_mj: converged_phase_mean(&energy)?,
                    convergence_iterations: convergence_iterations(&reward, 0.95, 5)?,
                    state_dim: points[point_idx].task.domain(*domain).state_dim,
                });
            }
            out.metric_rows.extend(run.rows);
        }
    }
    Ok(out)
}

/// Fixed CSV header for [`MetricsRow`] output.
pub const ROWS_CSV_HEADER: &str =
    "controller,domain,task,seed,iteration,avg_reward,avg_energy_mj_per_slot,avg_queue_bits,harvested_cumulative_mj";

/// Renders rows as CSV, header first, in the given order.
pub fn rows_to_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::with_capacity(rows.len() * 64 + 128);
    out.push_str(ROWS_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.controller,
            r.domain,
            r.task,
            r.seed,
            r.iteration,
            r.avg_reward,
            r.avg_energy_mj_per_slot,
            r.avg_queue_bits,
            r.harvested_cumulative_mj
        ));
    }
    out
}

/// Parses CSV produced by [`rows_to_csv`].
pub fn rows_from_csv(text: &str) -> Result<Vec<MetricsRow>, HarnessError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == ROWS_CSV_HEADER => {}
        _ => return Err(HarnessError::InvalidSpec("missing or wrong CSV header".into())),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 9 {
            return Err(HarnessError::InvalidSpec(format!("line {}: expected 9 columns", i + 2)));
        }
        let parse_f = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| HarnessError::InvalidSpec(format!("line {}: bad float `{s}`: {e}", i + 2)))
        };
        let parse_u = |s: &str| {
            s.parse::<u64>()
                .map_err(|e| HarnessError::InvalidSpec(format!("line {}: bad integer `{s}`: {e}", i + 2)))
        };
        rows.push(MetricsRow {
            controller: Controller::parse(cols[0]).map_err(HarnessError::InvalidSpec)?,
            domain: parse_u(cols[1])? as u32,
            task: parse_u(cols[2])? as usize,
            seed: parse_u(cols[3])?,
            iteration: parse_u(cols[4])? as usize,
            avg_reward: parse_f(cols[5])?,
            avg_energy_mj_per_slot: parse_f(cols[6])?,
            avg_queue_bits: parse_f(cols[7])?,
            harvested_cumulative_mj: parse_f(cols[8])?,
        });
    }
    Ok(rows)
}

/// Renders sweep summary rows as CSV.
pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(
        "parameter,point,controller,seed,converged_avg_energy_mj,convergence_iterations,state_dim\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.parameter, r.point, r.controller, r.seed, r.converged_avg_energy_mj, r.convergence_iterations, r.state_dim
        ));
    }
    out
}

/// The Table II task sequence: two domains (N = 2 then N = 4), four tasks
/// each, with the per-task EH scale, conversion efficiency, channel scale,
/// and arrival-rate settings.
pub fn table2_sequence() -> Vec<DomainSpec> {
    let rows_d1 = [(0.1, 0.2, 0.2, 5.0), (0.2, 0.3, 0.3, 10.0), (0.3, 0.6, 0.1, 15.0), (0.4, 0.8, 0.5, 20.0)];
    let rows_d2 = [(0.2, 0.3, 0.4, 12.0), (0.5, 0.7, 0.9, 25.0), (0.8, 0.9, 0.2, 5.0), (0.9, 0.2, 0.4, 10.0)];
    let build = |domain_id: u32, n: usize, rows: &[(f64, f64, f64, f64)]| {
        let tasks: Vec<TaskConfig> = rows
            .iter()
            .map(|(zeta_prime, lambda_n, zeta, lambda_a)| {
                let mut t = TaskConfig::default();
                t.n_secondary = n;
                t.eh_scale_zeta_prime = *zeta_prime;
                t.conv_eff_lambda = *lambda_n;
                t.comm_scale_zeta = *zeta;
                t.arrival_rate_lambda_a = *lambda_a;
                t
            })
            .collect();
        DomainSpec { domain: tasks[0].domain(domain_id), tasks }
    };
    vec![build(1, 2, &rows_d1), build(2, 4, &rows_d2)]
}

/// Convenience check used by the summary assembly: state dimensions follow
/// `4N + 2` for every task of the spec.
pub fn state_dims_consistent(spec: &ExperimentSpec) -> bool {
    spec.domain_sequence.iter().all(|d| {
        d.domain.state_dim == 4 * d.domain.n_secondary + 2
            && d.tasks.iter().all(|t| {
                let mut env = match Environment::new(t.clone(), 0) {
                    Ok(e) => e,
                    Err(_) => return false,
                };
                let s = env.reset();
                state_vector(t, &s).len() == d.domain.state_dim
            })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec(controllers: Vec<Controller>) -> (ExperimentSpec, ControllerConfigs) {
        let mut task = TaskConfig::default();
        task.horizon_t = 20;
        let spec = ExperimentSpec {
            name: "tiny".into(),
            domain_sequence: vec![DomainSpec { domain: task.domain(1), tasks: vec![task] }],
            controllers,
            seeds: vec![1],
            iterations: 4,
            metrics: BTreeSet::from([MetricKind::AvgReward]),
        };
        let cfgs = ControllerConfigs {
            pg: PGConfig { batch_size: 2, horizon_t: 20, ..Default::default() },
            lifelong: LifelongConfig {
                pg_base_iterations: 2,
                pg_warm_iterations: 1,
                burst_iterations: 1,
                polish_iterations: 2,
                ..Default::default()
            },
            ..Default::default()
        };
        (spec, cfgs)
    }

    #[test]
    fn lyapunov_single_task_emits_one_row_per_episode() {
        let (spec, cfgs) = tiny_spec(vec![Controller::Lyapunov]);
        let out = run_sequential(&spec, Controller::Lyapunov, 1, &cfgs).unwrap();
        assert_eq!(out.rows.len(), spec.iterations);
        for (i, row) in out.rows.iter().enumerate() {
            assert_eq!(row.iteration, i + 1);
            assert_eq!((row.controller, row.domain, row.task), (Controller::Lyapunov, 1, 1));
            assert!(row.avg_reward.is_finite());
        }
    }

    #[test]
    fn identical_spec_and_seed_reproduce_rows() {
        for controller in [Controller::Lyapunov, Controller::PgRl, Controller::CdL2rl] {
            let (spec, cfgs) = tiny_spec(vec![controller]);
            let a = run_sequential(&spec, controller, 7, &cfgs).unwrap();
            let b = run_sequential(&spec, controller, 7, &cfgs).unwrap();
            assert_eq!(a.rows, b.rows, "controller {controller}");
        }
    }

    #[test]
    fn table2_sequence_has_expected_shape() {
        let seq = table2_sequence();
        assert_eq!(seq.len(), 2);
        let n: Vec<usize> = seq.iter().flat_map(|d| d.tasks.iter().map(|t| t.n_secondary)).collect();
        assert_eq!(n, vec![2, 2, 2, 2, 4, 4, 4, 4]);
        assert_eq!(seq[0].tasks[2].arrival_rate_lambda_a, 15.0);
        assert_eq!(seq[1].tasks[1].comm_scale_zeta, 0.9);
        assert_eq!(seq[1].tasks[3].eh_scale_zeta_prime, 0.9);
    }

    #[test]
    fn earlier_tasks_unaffected_by_later_ones() {
        let (mut spec, cfgs) = tiny_spec(vec![Controller::PgRl]);
        let mut task_b = spec.domain_sequence[0].tasks[0].clone();
        task_b.arrival_rate_lambda_a = 20.0;
        let mut spec_long = spec.clone();
        spec_long.domain_sequence[0].tasks.push(task_b.clone());
        let short = run_sequential(&spec, Controller::PgRl, 3, &cfgs).unwrap();
        let long = run_sequential(&spec_long, Controller::PgRl, 3, &cfgs).unwrap();
        let task1_long: Vec<&MetricsRow> = long.rows.iter().filter(|r| r.task == 1).collect();
        assert_eq!(short.rows.len(), task1_long.len());
        for (a, b) in short.rows.iter().zip(task1_long) {
            assert_eq!(a, b);
        }
        // Also holds for the sequential learner, which only carries state forward.
        spec.controllers = vec![Controller::CdL2rl];
        spec_long.controllers = vec![Controller::CdL2rl];
        let short = run_sequential(&spec, Controller::CdL2rl, 3, &cfgs).unwrap();
        let long = run_sequential(&spec_long, Controller::CdL2rl, 3, &cfgs).unwrap();
        let task1_long: Vec<&MetricsRow> = long.rows.iter().filter(|r| r.task == 1).collect();
        for (a, b) in short.rows.iter().zip(task1_long) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn convergence_examples() {
        assert_eq!(convergence_iterations(&[2.0; 10], 0.95, 5).unwrap(), 1);
        let mut plateau: Vec<f64> = (0..30).map(|i| i as f64).collect();
        plateau.extend(std::iter::repeat(30.0).take(70));
        assert!(convergence_iterations(&plateau, 0.95, 5).unwrap() <= 35);
        let mut spike = vec![0.0; 9];
        spike.push(1.0);
        assert_eq!(convergence_iterations(&spike, 0.95, 5).unwrap(), 10);
        assert!(matches!(convergence_iterations(&[], 0.95, 5), Err(HarnessError::EmptySeries)));
    }

    #[test]
    fn convergence_invariant_under_affine_shift() {
        use rand::Rng;
        let mut rng = crate::rng::stream(101);
        for _ in 0..20 {
            let series: Vec<f64> = (0..40).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let base = convergence_iterations(&series, 0.95, 5).unwrap();
            let scaled: Vec<f64> = series.iter().map(|x| 3.5 * x + 40.0).collect();
            assert_eq!(convergence_iterations(&scaled, 0.95, 5).unwrap(), base);
        }
    }

    #[test]
    fn queue_cdf_examples() {
        let cdf = queue_cdf(&[5.0; 9]).unwrap();
        assert_eq!(cdf.len(), 100);
        assert_eq!(cdf[0], (0.0, 0.0));
        assert_eq!(cdf.last().unwrap().1, 1.0);
        assert!((empirical_cdf(&[1.0, 2.0, 3.0, 4.0], 2.5) - 0.5).abs() < 1e-12);
        assert!(matches!(queue_cdf(&[]), Err(HarnessError::EmptySeries)));
    }

    #[test]
    fn queue_cdf_matches_sort_and_count_oracle() {
        use rand::Rng;
        let mut rng = crate::rng::stream(102);
        let samples: Vec<f64> = (0..500).map(|_| rng.gen_range(0.0..100.0)).collect();
        let cdf = queue_cdf(&samples).unwrap();
        let mut sorted = samples.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut prev = 0.0;
        for (t, p) in cdf {
            let count = sorted.partition_point(|x| *x <= t);
            assert!((p - count as f64 / samples.len() as f64).abs() < 1e-12);
            assert!(p >= prev);
            prev = p;
        }
        assert_eq!(prev, 1.0);
    }

    #[test]
    fn aggregate_examples_and_oracle() {
        use rand::Rng;
        let single = aggregate([("a", 4.2)]).unwrap();
        assert_eq!(single[0].1.median, 4.2);
        assert_eq!(single[0].1.mean, 4.2);

        let three = aggregate([("a", 1.0), ("a", 3.0), ("a", 2.0)]).unwrap();
        assert_eq!(three[0].1.median, 2.0);

        let mut rng = crate::rng::stream(103);
        let items: Vec<(u8, f64)> = (0..200).map(|_| (rng.gen_range(0..4u8), rng.gen_range(-5.0..5.0))).collect();
        let got = aggregate(items.clone()).unwrap();
        for (key, summary) in got {
            let mut vals: Vec<f64> = items.iter().filter(|(k, _)| *k == key).map(|(_, v)| *v).collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            assert!((summary.mean - mean).abs() < 1e-12);
            let median = if vals.len() % 2 == 1 {
                vals[vals.len() / 2]
            } else {
                0.5 * (vals[vals.len() / 2 - 1] + vals[vals.len() / 2])
            };
            assert!((summary.median - median).abs() < 1e-12);
        }
        assert!(matches!(aggregate(Vec::<(u8, f64)>::new()), Err(HarnessError::EmptySeries)));
    }

    #[test]
    fn sweep_of_size_one_matches_plain_run() {
        let (spec, cfgs) = tiny_spec(vec![Controller::Lyapunov]);
        let base = &spec.domain_sequence[0].tasks[0];
        // Conv-eff point 0.2 equals the base task here.
        let mut expect_task = base.clone();
        expect_task.conv_eff_lambda = 0.2;
        let plain_spec = ExperimentSpec {
            domain_sequence: vec![DomainSpec { domain: expect_task.domain(1), tasks: vec![expect_task] }],
            ..spec.clone()
        };
        let plain = run_sequential(&plain_spec, Controller::Lyapunov, 1, &cfgs).unwrap();
        let swept = sweep(SweepParameter::ConvEff, base, &[Controller::Lyapunov], &[1], 4, &cfgs).unwrap();
        let first_point: Vec<&MetricsRow> =
            swept.metric_rows.iter().filter(|r| r.task == 1 && r.domain == 1).collect();
        assert_eq!(plain.rows.len(), first_point.len());
        for (a, b) in plain.rows.iter().zip(first_point) {
            assert_eq!(a.avg_reward, b.avg_reward);
            assert_eq!(a.avg_energy_mj_per_slot, b.avg_energy_mj_per_slot);
        }
    }

    #[test]
    fn node_sweep_rebuilds_dimensions() {
        let (_, cfgs) = tiny_spec(vec![Controller::Lyapunov]);
        let mut base = TaskConfig::default();
        base.horizon_t = 10;
        let out = sweep(SweepParameter::NNodes, &base, &[Controller::Lyapunov], &[1], 2, &cfgs).unwrap();
        let dims: Vec<usize> = out.rows.iter().map(|r| r.state_dim).collect();
        assert_eq!(dims, vec![6, 10, 14, 18, 22]);
        for r in &out.rows {
            assert!(r.converged_avg_energy_mj.is_finite() && r.converged_avg_energy_mj >= 0.0);
        }
    }

    #[test]
    fn csv_round_trip() {
        let (spec, cfgs) = tiny_spec(vec![Controller::Lyapunov]);
        let out = run_sequential(&spec, Controller::Lyapunov, 1, &cfgs).unwrap();
        let csv = rows_to_csv(&out.rows);
        let parsed = rows_from_csv(&csv).unwrap();
        assert_eq!(parsed, out.rows);
    }
}
