//! Cross-domain lifelong learner.
//!
//! Task policies are synthesized as `theta = Psi U v`: a global latent base
//! `U` (d x r) shared across every domain, one projection `Psi` (K_d x d)
//! per domain, and one sparse code `v` (r) per task. Observing a task runs
//! policy-gradient training, distills the result into a surrogate pair
//! `(rho, aleph)`, sparse-codes it against the current dictionary, then
//! refreshes the domain statistics, the projection, and the shared base.
//!
//! The agent is a single sequential owner of `(U, Psi, records)`; tasks
//! arrive and are consumed strictly in order.

use crate::env::{DomainConfig, EnvError, Environment, TaskConfig};
use crate::numerics::{pseudoinverse, ridge_solve, weighted_lasso, NumericsError};
use crate::pg::{
    estimate_surrogate, train_iteration, CriticParams, IterationMetrics, LinearGaussianPolicy,
    PGConfig, PgError,
};
use crate::rng::derive_seed;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LifelongError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Pg(#[from] PgError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("knowledge file corrupt at line {line}: {msg}")]
    Corrupt { line: usize, msg: String },
}

/// Global shared knowledge repository.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    /// d x r latent components.
    pub u: DMatrix<f64>,
}

impl KnowledgeBase {
    pub fn latent_dim(&self) -> usize {
        self.u.nrows()
    }

    pub fn num_components(&self) -> usize {
        self.u.ncols()
    }
}

/// Per-domain projection with its running sufficient statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainProjection {
    pub domain: DomainConfig,
    /// K_d x d map from the latent space into the domain's policy space.
    pub psi: DMatrix<f64>,
    /// d x d running second moment of the projected codes.
    pub stat_x: DMatrix<f64>,
    /// K_d x d running cross moment against the surrogate points.
    pub stat_y: DMatrix<f64>,
    pub tasks_seen: usize,
}

impl DomainProjection {
    /// Fresh projection `[I_d; 0]` with zeroed statistics.
    pub fn new(domain: DomainConfig, latent_dim: usize) -> Result<Self, LifelongError> {
        let k_d = domain.policy_dim;
        if k_d < latent_dim {
            return Err(LifelongError::Dimension(format!(
                "policy dim {k_d} smaller than latent dim {latent_dim}"
            )));
        }
        Ok(DomainProjection {
            domain,
            psi: DMatrix::identity(k_d, latent_dim),
            stat_x: DMatrix::zeros(latent_dim, latent_dim),
            stat_y: DMatrix::zeros(k_d, latent_dim),
            tasks_seen: 0,
        })
    }

    /// Fresh projection with seeded dense entries `N-ish(0, 1/sqrt(d))`.
    ///
    /// An identity-padded init spans only the first `d` policy coordinates,
    /// which are the (down-scaled) queue-feature columns; under the
    /// curvature metric that subspace has weight near zero, the first sparse
    /// code comes out empty, and the projection refit collapses the domain
    /// permanently. A dense random span avoids that degeneracy.
    pub fn new_seeded(domain: DomainConfig, latent_dim: usize, seed: u64) -> Result<Self, LifelongError> {
        let mut proj = Self::new(domain, latent_dim)?;
        let mut rng = crate::rng::stream(seed);
        let scale = 1.0 / (latent_dim as f64).sqrt();
        proj.psi =
            DMatrix::from_fn(domain.policy_dim, latent_dim, |_, _| rng.gen_range(-1.0..1.0) * scale);
        Ok(proj)
    }
}

/// Everything retained about one observed task.
#[derive(Debug, Clone)]
pub struct TaskRecord {
    pub task_id: usize,
    pub domain_id: u32,
    pub rho: DVector<f64>,
    pub aleph: DMatrix<f64>,
    pub code_v: DVector<f64>,
    pub task_config: TaskConfig,
}

/// How strongly the newest task pulls the running statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EtaMode {
    /// `eta_a = 1 / m_k`, an unbiased running mean over the domain's tasks.
    RunningMean,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LifelongConfig {
    /// Number of shared latent components.
    pub r: usize,
    /// Latent dimension (rows of U).
    pub d: usize,
    /// L1 weight of the sparse coding step.
    pub mu1: f64,
    /// Ridge on the projection update.
    pub mu2: f64,
    /// Ridge on the shared-base update.
    pub mu3: f64,
    pub eta_a_mode: EtaMode,
    /// Main training iterations on a warm-started task.
    pub pg_warm_iterations: usize,
    /// Main training iterations on a cold-started task.
    pub pg_base_iterations: usize,
    /// Short exploratory phase producing the preliminary surrogate on warm
    /// tasks.
    pub burst_iterations: usize,
    /// Fine-tuning after the final reconstruction.
    pub polish_iterations: usize,
}

impl Default for LifelongConfig {
    fn default() -> Self {
        LifelongConfig {
            r: 5,
            d: 10,
            mu1: 0.1,
            mu2: 1e-4,
            mu3: 1e-4,
            eta_a_mode: EtaMode::RunningMean,
            pg_warm_iterations: 20,
            pg_base_iterations: 30,
            burst_iterations: 10,
            polish_iterations: 20,
        }
    }
}

impl LifelongConfig {
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        let f = |v: &str| v.parse::<f64>().map_err(|e| format!("bad float `{v}`: {e}"));
        let u = |v: &str| v.parse::<usize>().map_err(|e| format!("bad integer `{v}`: {e}"));
        match key {
            "r" => self.r = u(v)?,
            "d" => self.d = u(v)?,
            "mu1" => self.mu1 = f(v)?,
            "mu2" => self.mu2 = f(v)?,
            "mu3" => self.mu3 = f(v)?,
            "eta_a_mode" => {
                self.eta_a_mode = if v == "running_mean" {
                    EtaMode::RunningMean
                } else if let Some(x) = v.strip_prefix("fixed:") {
                    EtaMode::Fixed(f(x)?)
                } else {
                    return Err(format!("unknown eta_a_mode `{v}` (running_mean or fixed:<value>)"));
                }
            }
            "pg_warm_iterations" => self.pg_warm_iterations = u(v)?,
            "pg_base_iterations" => self.pg_base_iterations = u(v)?,
            "burst_iterations" => self.burst_iterations = u(v)?,
            "polish_iterations" => self.polish_iterations = u(v)?,
            other => return Err(format!("unknown lifelong key `{other}`")),
        }
        Ok(())
    }

    pub fn to_kv_lines(&self) -> Vec<(&'static str, String)> {
        let eta = match self.eta_a_mode {
            EtaMode::RunningMean => "running_mean".to_string(),
            EtaMode::Fixed(x) => format!("fixed:{x}"),
        };
        vec![
            ("r", self.r.to_string()),
            ("d", self.d.to_string()),
            ("mu1", self.mu1.to_string()),
            ("mu2", self.mu2.to_string()),
            ("mu3", self.mu3.to_string()),
            ("eta_a_mode", eta),
            ("pg_warm_iterations", self.pg_warm_iterations.to_string()),
            ("pg_base_iterations", self.pg_base_iterations.to_string()),
            ("burst_iterations", self.burst_iterations.to_string()),
            ("polish_iterations", self.polish_iterations.to_string()),
        ]
    }

    /// Rescales the phase budgets so every controller spends the same number
    /// of iterations per task in comparisons.
    pub fn with_total_iterations(mut self, total: usize) -> Self {
        let total = total.max(3);
        self.polish_iterations = (total / 3).min(20).max(1);
        self.burst_iterations = (total / 5).min(10).max(1);
        self.pg_base_iterations = total - self.polish_iterations;
        self.pg_warm_iterations = total - self.polish_iterations - self.burst_iterations;
        self
    }
}

/// Rebuilds a policy mean map from the factorization `theta = Psi U v`.
pub fn reconstruct_policy(
    kb: &KnowledgeBase,
    proj: &DomainProjection,
    v: &DVector<f64>,
) -> Result<DVector<f64>, LifelongError> {
    if proj.psi.ncols() != kb.u.nrows() || v.len() != kb.u.ncols() {
        return Err(LifelongError::Dimension(format!(
            "reconstruct: psi {}x{}, U {}x{}, v {}",
            proj.psi.nrows(),
            proj.psi.ncols(),
            kb.u.nrows(),
            kb.u.ncols(),
            v.len()
        )));
    }
    Ok(&proj.psi * (&kb.u * v))
}

/// Sparse-codes a surrogate point against the domain dictionary `Psi U`
/// under the curvature metric.
pub fn sparse_code(
    rho: &DVector<f64>,
    aleph: &DMatrix<f64>,
    kb: &KnowledgeBase,
    proj: &DomainProjection,
    mu1: f64,
) -> Result<DVector<f64>, LifelongError> {
    let dictionary = &proj.psi * &kb.u;
    Ok(weighted_lasso(rho, &dictionary, aleph, mu1, 1e-8)?)
}

/// Folds one task's statistics `X = (Uv)(Uv)^T`, `Y = rho (Uv)^T` into the
/// domain's running statistics with weight `eta_a`, and counts the task.
pub fn update_stats(
    proj: &mut DomainProjection,
    kb: &KnowledgeBase,
    rho: &DVector<f64>,
    v: &DVector<f64>,
    eta_a: f64,
) -> Result<(), LifelongError> {
    if !(eta_a > 0.0 && eta_a <= 1.0) {
        return Err(LifelongError::Dimension(format!("eta_a {eta_a} outside (0, 1]")));
    }
    if rho.len() != proj.psi.nrows() {
        return Err(LifelongError::Dimension(format!(
            "update_stats: rho length {} != K_d {}",
            rho.len(),
            proj.psi.nrows()
        )));
    }
    let uv = &kb.u * v;
    let x_j = &uv * uv.transpose();
    let y_j = rho * uv.transpose();
    proj.stat_x = &proj.stat_x * (1.0 - eta_a) + x_j * eta_a;
    proj.stat_y = &proj.stat_y * (1.0 - eta_a) + y_j * eta_a;
    proj.tasks_seen += 1;
    Ok(())
}

/// Refits the projection to the running statistics:
/// `Psi = argmin ||stat_Y - Psi stat_X||_F^2 + mu2 ||Psi||_F^2`.
pub fn update_projection(proj: &mut DomainProjection, mu2: f64) -> Result<(), LifelongError> {
    proj.psi = ridge_solve(&proj.stat_x, &proj.stat_y, mu2)?;
    Ok(())
}

/// Refits the shared base to all retained records:
/// `U = argmin sum_j ||rho_j - Psi_{k(j)} U v_j||^2 + mu3 ||U||_F^2`,
/// solved in closed form over the d*r unknowns.
pub fn update_shared_base(
    kb: &mut KnowledgeBase,
    records: &[TaskRecord],
    projections: &BTreeMap<u32, DomainProjection>,
    mu3: f64,
) -> Result<(), LifelongError> {
    if records.is_empty() {
        return Err(LifelongError::Dimension("update_shared_base: no task records".into()));
    }
    let d = kb.u.nrows();
    let r = kb.u.ncols();
    let mut system = DMatrix::<f64>::zeros(d * r, d * r);
    let mut rhs = DVector::<f64>::zeros(d * r);
    for rec in records {
        let proj = projections.get(&rec.domain_id).ok_or_else(|| {
            LifelongError::Dimension(format!("record {} references unknown domain {}", rec.task_id, rec.domain_id))
        })?;
        let psi_t_psi = proj.psi.transpose() * &proj.psi;
        let vvt = &rec.code_v * rec.code_v.transpose();
        system += vvt.kronecker(&psi_t_psi);
        let target = proj.psi.transpose() * &rec.rho * rec.code_v.transpose(); // d x r
        for c in 0..r {
            for rw in 0..d {
                rhs[rw + c * d] += target[(rw, c)];
            }
        }
    }
    let x = if mu3 > 0.0 {
        system += DMatrix::identity(d * r, d * r) * mu3;
        match nalgebra::Cholesky::new(system.clone()) {
            Some(chol) => chol.solve(&rhs),
            // The ridge keeps the system SPD; a Cholesky failure is pure
            // conditioning, which the SVD route absorbs.
            None => pseudoinverse(&system) * rhs,
        }
    } else {
        // Normal equations are always consistent; take the min-norm solution.
        pseudoinverse(&system) * rhs
    };
    let mut u = DMatrix::zeros(d, r);
    for c in 0..r {
        for rw in 0..d {
            u[(rw, c)] = x[rw + c * d];
        }
    }
    kb.u = u;
    Ok(())
}

/// Lifelong objective over the retained records:
/// `sum_k (1/|C_k|) sum_j [ 1/2 ||rho - Psi U v||^2_aleph + mu1 ||v||_1 ]
///  + mu2 sum_k ||Psi_k||_F^2 + mu3 ||U||_F^2`.
pub fn lifelong_loss(
    kb: &KnowledgeBase,
    projections: &BTreeMap<u32, DomainProjection>,
    records: &[TaskRecord],
    mu1: f64,
    mu2: f64,
    mu3: f64,
) -> f64 {
    let mut per_domain: BTreeMap<u32, (usize, f64)> = BTreeMap::new();
    for rec in records {
        let proj = &projections[&rec.domain_id];
        let resid = &rec.rho - &proj.psi * (&kb.u * &rec.code_v);
        let quad = (resid.transpose() * &rec.aleph * &resid)[(0, 0)];
        let term = 0.5 * quad + mu1 * rec.code_v.iter().map(|x| x.abs()).sum::<f64>();
        let entry = per_domain.entry(rec.domain_id).or_insert((0, 0.0));
        entry.0 += 1;
        entry.1 += term;
    }
    let mut loss = 0.0;
    for (_, (count, sum)) in &per_domain {
        loss += sum / *count as f64;
    }
    for proj in projections.values() {
        loss += mu2 * proj.psi.norm_squared();
    }
    loss + mu3 * kb.u.norm_squared()
}

/// Result of observing one task.
#[derive(Debug)]
pub struct ObserveOutcome {
    pub task_id: usize,
    pub warm_started: bool,
    /// Per-iteration training metrics across all phases, in order.
    pub metrics: Vec<IterationMetrics>,
    /// Lifelong loss over stored records before the projection update.
    pub loss_before_updates: f64,
    /// Lifelong loss after the shared-base update.
    pub loss_after_updates: f64,
    pub policy: LinearGaussianPolicy,
}

/// Sequential owner of the shared knowledge and all task records.
#[derive(Debug, Clone)]
pub struct LifelongAgent {
    pub cfg: LifelongConfig,
    pub pg_cfg: PGConfig,
    pub kb: KnowledgeBase,
    pub domains: BTreeMap<u32, DomainProjection>,
    pub records: Vec<TaskRecord>,
    next_task_id: usize,
}

impl LifelongAgent {
    /// Fresh agent with a seeded random base `U ~ uniform(-0.5, 0.5)/sqrt(d)`.
    pub fn new(cfg: LifelongConfig, pg_cfg: PGConfig, seed: u64) -> Self {
        let mut rng = crate::rng::stream(derive_seed(seed, &[0x4B]));
        let scale = 1.0 / (cfg.d as f64).sqrt();
        let u = DMatrix::from_fn(cfg.d, cfg.r, |_, _| rng.gen_range(-0.5..0.5) * scale);
        LifelongAgent {
            cfg,
            pg_cfg,
            kb: KnowledgeBase { u },
            domains: BTreeMap::new(),
            records: Vec::new(),
            next_task_id: 1,
        }
    }

    fn eta_a(&self, domain_id: u32) -> f64 {
        match self.cfg.eta_a_mode {
            EtaMode::Fixed(x) => x,
            EtaMode::RunningMean => {
                let seen = self.domains.get(&domain_id).map_or(0, |p| p.tasks_seen);
                1.0 / (seen + 1) as f64
            }
        }
    }

    /// Runs the full per-task pipeline: (warm-start), train, estimate the
    /// surrogate, sparse-code, update statistics, projection, and shared
    /// base, then reconstruct and polish the final policy.
    pub fn observe_task(
        &mut self,
        task_cfg: &TaskConfig,
        domain_id: u32,
        seed: u64,
        collect_queues: bool,
    ) -> Result<ObserveOutcome, LifelongError> {
        task_cfg.validate()?;
        let dcfg = task_cfg.domain(domain_id);
        if let Some(existing) = self.domains.get(&domain_id) {
            if existing.domain.state_dim != dcfg.state_dim || existing.domain.action_dim != dcfg.action_dim {
                return Err(LifelongError::Dimension(format!(
                    "domain {domain_id} registered with dims ({}, {}) but task has ({}, {})",
                    existing.domain.state_dim,
                    existing.domain.action_dim,
                    dcfg.state_dim,
                    dcfg.action_dim
                )));
            }
        } else {
            let psi_seed = derive_seed(seed, &[0x50, domain_id as u64]);
            self.domains.insert(domain_id, DomainProjection::new_seeded(dcfg, self.cfg.d, psi_seed)?);
        }

        let task_id = self.next_task_id;
        self.next_task_id += 1;
        let warm = self.domains[&domain_id].tasks_seen > 0;

        let mut env = Environment::new(task_cfg.clone(), derive_seed(seed, &[domain_id as u64, task_id as u64, 1]))?;
        let mut rng = crate::rng::stream(derive_seed(seed, &[domain_id as u64, task_id as u64, 2]));
        let mut policy = LinearGaussianPolicy::new_zero(dcfg, self.pg_cfg.sigma_init);
        let mut critic = CriticParams::new_zero(dcfg.state_dim);
        let mut metrics = Vec::new();

        if warm {
            // Probe the new task cold, then pull the policy onto the
            // knowledge base. The burst's surrogate estimate is too noisy to
            // sparse-code into a useful fresh combination at this batch
            // scale, so it serves as a retrieval key instead: warm-start
            // from the stored code whose reconstruction aligns best with
            // the preliminary direction.
            for _ in 0..self.cfg.burst_iterations {
                metrics.push(train_iteration(&mut policy, &mut critic, &mut env, &self.pg_cfg, &mut rng, collect_queues)?);
            }
            let pre = estimate_surrogate(&policy, &mut env, &self.pg_cfg, &mut rng)?;
            let proj = &self.domains[&domain_id];
            let mut best: Option<(f64, DVector<f64>)> = None;
            for rec in self.records.iter().filter(|r| r.domain_id == domain_id) {
                let recon = reconstruct_policy(&self.kb, proj, &rec.code_v)?;
                let denom = recon.norm() * pre.rho.norm();
                let cos = if denom > 0.0 { recon.dot(&pre.rho) / denom } else { 0.0 };
                if best.as_ref().map_or(true, |(b, _)| cos > *b) {
                    best = Some((cos, recon));
                }
            }
            if let Some((_, theta0)) = best {
                policy.theta = theta0;
            }
        }

        let main_iters = if warm { self.cfg.pg_warm_iterations } else { self.cfg.pg_base_iterations };
        for _ in 0..main_iters {
            metrics.push(train_iteration(&mut policy, &mut critic, &mut env, &self.pg_cfg, &mut rng, collect_queues)?);
        }

        let sur = estimate_surrogate(&policy, &mut env, &self.pg_cfg, &mut rng)?;
        let v = {
            let proj = &self.domains[&domain_id];
            sparse_code(&sur.rho, &sur.aleph, &self.kb, proj, self.cfg.mu1)?
        };
        self.records.push(TaskRecord {
            task_id,
            domain_id,
            rho: sur.rho.clone(),
            aleph: sur.aleph,
            code_v: v.clone(),
            task_config: task_cfg.clone(),
        });

        let loss = |kb: &KnowledgeBase, domains: &BTreeMap<u32, DomainProjection>| {
            lifelong_loss(kb, domains, &self.records, self.cfg.mu1, self.cfg.mu2, self.cfg.mu3)
        };
        let loss_before = loss(&self.kb, &self.domains);
        let eta = self.eta_a(domain_id);
        update_stats(self.domains.get_mut(&domain_id).unwrap(), &self.kb, &sur.rho, &v, eta)?;
        // The statistics-based updates minimize their own moment-matched
        // objectives, not the aleph-weighted loss, so each step is guarded:
        // a candidate that would increase the stored-record loss is dropped
        // (the running statistics are kept either way).
        {
            let mut candidate = self.domains[&domain_id].clone();
            update_projection(&mut candidate, self.cfg.mu2)?;
            let mut trial = self.domains.clone();
            trial.insert(domain_id, candidate);
            if loss(&self.kb, &trial) <= loss(&self.kb, &self.domains) {
                self.domains = trial;
            }
        }
        {
            let mut candidate = self.kb.clone();
            update_shared_base(&mut candidate, &self.records, &self.domains, self.cfg.mu3)?;
            if loss(&candidate, &self.domains) <= loss(&self.kb, &self.domains) {
                self.kb = candidate;
            }
        }
        let loss_after = loss(&self.kb, &self.domains);

        policy.theta = reconstruct_policy(&self.kb, &self.domains[&domain_id], &v)?;
        for _ in 0..self.cfg.polish_iterations {
            metrics.push(train_iteration(&mut policy, &mut critic, &mut env, &self.pg_cfg, &mut rng, collect_queues)?);
        }

        Ok(ObserveOutcome {
            task_id,
            warm_started: warm,
            metrics,
            loss_before_updates: loss_before,
            loss_after_updates: loss_after,
            policy,
        })
    }
}

fn write_matrix(out: &mut String, m: &DMatrix<f64>) {
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| m[(i, j)].to_string()).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
}

fn write_vector(out: &mut String, v: &DVector<f64>) {
    let row: Vec<String> = v.iter().map(|x| x.to_string()).collect();
    out.push_str(&row.join(" "));
    out.push('\n');
}

struct LineReader<'a> {
    lines: std::str::Lines<'a>,
    line_no: usize,
}

impl<'a> LineReader<'a> {
    fn new(text: &'a str) -> Self {
        LineReader { lines: text.lines(), line_no: 0 }
    }

    fn next(&mut self) -> Result<&'a str, LifelongError> {
        self.line_no += 1;
        self.lines.next().ok_or(LifelongError::Corrupt {
            line: self.line_no,
            msg: "unexpected end of file".into(),
        })
    }

    fn fail<T>(&self, msg: impl Into<String>) -> Result<T, LifelongError> {
        Err(LifelongError::Corrupt { line: self.line_no, msg: msg.into() })
    }

    fn expect(&mut self, tag: &str) -> Result<(), LifelongError> {
        let line = self.next()?;
        if line.trim() == tag {
            Ok(())
        } else {
            self.fail(format!("expected `{tag}`, found `{line}`"))
        }
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>, LifelongError> {
        let mut m = DMatrix::zeros(rows, cols);
        for i in 0..rows {
            let line = self.next()?;
            let mut parts = line.split_whitespace();
            for j in 0..cols {
                let tok = match parts.next() {
                    Some(t) => t,
                    None => return self.fail(format!("row {i} has fewer than {cols} values")),
                };
                m[(i, j)] = match tok.parse() {
                    Ok(x) => x,
                    Err(e) => return self.fail(format!("bad float `{tok}`: {e}")),
                };
            }
        }
        Ok(m)
    }

    fn vector(&mut self, len: usize) -> Result<DVector<f64>, LifelongError> {
        Ok(DVector::from_column_slice(self.matrix(1, len)?.row(0).transpose().as_slice()))
    }
}

impl LifelongAgent {
    /// Serializes the whole knowledge state to the versioned text layout:
    /// dims header, `U`, per-domain `Psi`/`X`/`Y`, task records, and the
    /// per-domain warm-start policies.
    pub fn serialize_knowledge(&self) -> String {
        let mut out = String::new();
        out.push_str("swipt-kb 1\n");
        out.push_str(&format!("dims d {} r {}\n", self.cfg.d, self.cfg.r));
        out.push_str("U\n");
        write_matrix(&mut out, &self.kb.u);
        out.push_str(&format!("domains {}\n", self.domains.len()));
        for (id, proj) in &self.domains {
            let mode = match proj.domain.n_secondary * 3 + 2 == proj.domain.action_dim {
                true => "learned",
                false => "greedy",
            };
            out.push_str(&format!(
                "domain {id} n_secondary {} mode {mode} tasks_seen {}\n",
                proj.domain.n_secondary, proj.tasks_seen
            ));
            out.push_str("psi\n");
            write_matrix(&mut out, &proj.psi);
            out.push_str("stat_x\n");
            write_matrix(&mut out, &proj.stat_x);
            out.push_str("stat_y\n");
            write_matrix(&mut out, &proj.stat_y);
        }
        out.push_str(&format!("records {}\n", self.records.len()));
        for rec in &self.records {
            out.push_str(&format!("record {} domain {}\n", rec.task_id, rec.domain_id));
            out.push_str("task_config\n");
            for (k, v) in rec.task_config.to_kv_lines() {
                out.push_str(&format!("{k} = {v}\n"));
            }
            out.push_str("end\n");
            out.push_str("rho\n");
            write_vector(&mut out, &rec.rho);
            out.push_str("aleph\n");
            write_matrix(&mut out, &rec.aleph);
            out.push_str("v\n");
            write_vector(&mut out, &rec.code_v);
        }
        out.push_str(&format!("next_task_id {}\n", self.next_task_id));
        out
    }

    /// Rebuilds an agent from [`Self::serialize_knowledge`] output. The
    /// provided configs must agree with the persisted dimensions.
    pub fn restore_knowledge(
        text: &str,
        cfg: LifelongConfig,
        pg_cfg: PGConfig,
    ) -> Result<Self, LifelongError> {
        use crate::env::SecondaryPowerMode;
        let mut rd = LineReader::new(text);
        rd.expect("swipt-kb 1")?;
        let dims = rd.next()?.trim().to_string();
        let parts: Vec<&str> = dims.split_whitespace().collect();
        let (d, r) = match parts.as_slice() {
            ["dims", "d", d, "r", r] => (
                d.parse::<usize>().map_err(|e| LifelongError::Corrupt { line: 2, msg: e.to_string() })?,
                r.parse::<usize>().map_err(|e| LifelongError::Corrupt { line: 2, msg: e.to_string() })?,
            ),
            _ => return rd.fail("malformed dims header"),
        };
        if d != cfg.d || r != cfg.r {
            return rd.fail(format!("file dims ({d}, {r}) do not match config ({}, {})", cfg.d, cfg.r));
        }
        rd.expect("U")?;
        let u = rd.matrix(d, r)?;

        let header = rd.next()?.trim().to_string();
        let n_domains: usize = match header.strip_prefix("domains ") {
            Some(n) => n.parse().map_err(|e| LifelongError::Corrupt { line: rd.line_no, msg: format!("{e}") })?,
            None => return rd.fail("expected `domains <count>`"),
        };
        let mut domains = BTreeMap::new();
        for _ in 0..n_domains {
            let line = rd.next()?.trim().to_string();
            let p: Vec<&str> = line.split_whitespace().collect();
            let (id, n_sec, mode, seen) = match p.as_slice() {
                ["domain", id, "n_secondary", n, "mode", m, "tasks_seen", s] => {
                    let mode = match *m {
                        "greedy" => SecondaryPowerMode::Greedy,
                        "learned" => SecondaryPowerMode::Learned,
                        other => return rd.fail(format!("unknown mode `{other}`")),
                    };
                    (
                        id.parse::<u32>().map_err(|e| LifelongError::Corrupt { line: rd.line_no, msg: e.to_string() })?,
                        n.parse::<usize>().map_err(|e| LifelongError::Corrupt { line: rd.line_no, msg: e.to_string() })?,
                        mode,
                        s.parse::<usize>().map_err(|e| LifelongError::Corrupt { line: rd.line_no, msg: e.to_string() })?,
                    )
                }
                _ => return rd.fail(format!("malformed domain header `{line}`")),
            };
            let dcfg = DomainConfig::new(id, n_sec, mode);
            let k_d = dcfg.policy_dim;
            rd.expect("psi")?;
            let psi = rd.matrix(k_d, d)?;
            rd.expect("stat_x")?;
            let stat_x = rd.matrix(d, d)?;
            rd.expect("stat_y")?;
            let stat_y = rd.matrix(k_d, d)?;
            domains.insert(id, DomainProjection { domain: dcfg, psi, stat_x, stat_y, tasks_seen: seen });
        }

        let header = rd.next()?.trim().to_string();
        let n_records: usize = match header.strip_prefix("records ") {
            Some(n) => n.parse().map_err(|e| LifelongError::Corrupt { line: rd.line_no, msg: format!("{e}") })?,
            None => return rd.fail("expected `records <count>`"),
        };
        let mut records = Vec::with_capacity(n_records);
        for _ in 0..n_records {
            let line = rd.next()?.trim().to_string();
            let p: Vec<&str> = line.split_whitespace().collect();
            let (task_id, domain_id) = match p.as_slice() {
                ["record", t, "domain", k] => (
                    t.parse::<usize>().map_err(|e| LifelongError::Corrupt { line: rd.line_no, msg: e.to_string() })?,
                    k.parse::<u32>().map_err(|e| LifelongError::Corrupt { line: rd.line_no, msg: e.to_string() })?,
                ),
                _ => return rd.fail(format!("malformed record header `{line}`")),
            };
            rd.expect("task_config")?;
            let mut task_config = TaskConfig::default();
            loop {
                let line = rd.next()?.trim().to_string();
                if line == "end" {
                    break;
                }
                let (k, v) = line
                    .split_once('=')
                    .ok_or(LifelongError::Corrupt { line: rd.line_no, msg: format!("expected key = value, got `{line}`") })?;
                task_config
                    .apply_kv(k.trim(), v.trim())
                    .map_err(|msg| LifelongError::Corrupt { line: rd.line_no, msg })?;
            }
            let k_d = domains
                .get(&domain_id)
                .ok_or(LifelongError::Corrupt { line: rd.line_no, msg: format!("record references unknown domain {domain_id}") })?
                .domain
                .policy_dim;
            rd.expect("rho")?;
            let rho = rd.vector(k_d)?;
            rd.expect("aleph")?;
            let aleph = rd.matrix(k_d, k_d)?;
            rd.expect("v")?;
            let code_v = rd.vector(r)?;
            records.push(TaskRecord { task_id, domain_id, rho, aleph, code_v, task_config });
        }

        let line = rd.next()?.trim().to_string();
        let next_task_id: usize = match line.strip_prefix("next_task_id ") {
            Some(n) => n.parse().map_err(|e| LifelongError::Corrupt { line: rd.line_no, msg: format!("{e}") })?,
            None => return rd.fail("expected `next_task_id <n>`"),
        };

        Ok(LifelongAgent { cfg, pg_cfg, kb: KnowledgeBase { u }, domains, records, next_task_id })
    }
}
