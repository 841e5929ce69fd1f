//! Policy-gradient actor-critic over a linear-Gaussian policy.
//!
//! The actor is a linear mean map `u = Theta s + noise` with a learned
//! diagonal log-std, so the whole mean map lives in one parameter vector of
//! length `K_d = S_d * A_d` (column-major) that the lifelong learner can
//! factor. The critic is linear-with-bias. Besides training, this module
//! estimates the surrogate pair `(rho, aleph)` consumed by the lifelong
//! learner: a natural-gradient step from the trained parameters and a
//! PSD-projected curvature estimate.

use crate::env::{project_feasible, state_vector, DomainConfig, EnvError, Environment};
use crate::numerics::{psd_project, NumericsError};
use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

/// Smallest admissible policy standard deviation.
pub const SIGMA_MIN: f64 = 1e-3;
/// Eigenvalue floor applied to the curvature estimate.
pub const ALEPH_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum PgError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("Fisher matrix solve failed even with ridge")]
    SingularFisher,
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PGConfig {
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub gamma: f64,
    /// Trajectories sampled per training iteration.
    pub batch_size: usize,
    /// Slots per trajectory.
    pub horizon_t: usize,
    /// Training iterations per task.
    pub iterations: usize,
    /// Natural-gradient step length used for the surrogate point.
    pub nat_grad_eta: f64,
    pub fisher_ridge: f64,
    pub sigma_init: f64,
    /// Global-norm clip applied to each actor update.
    pub grad_clip: f64,
    /// Trust region on the natural-gradient step that forms the surrogate
    /// point (the Taylor expansion around rho is only local).
    pub surrogate_step_clip: f64,
}

impl Default for PGConfig {
    fn default() -> Self {
        PGConfig {
            actor_lr: 3e-3,
            critic_lr: 1e-2,
            gamma: 0.99,
            batch_size: 10,
            horizon_t: 200,
            iterations: 50,
            nat_grad_eta: 0.1,
            fisher_ridge: 1e-4,
            sigma_init: 0.5,
            grad_clip: 10.0,
            surrogate_step_clip: 0.1,
        }
    }
}

impl PGConfig {
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        let f = |v: &str| v.parse::<f64>().map_err(|e| format!("bad float `{v}`: {e}"));
        let u = |v: &str| v.parse::<usize>().map_err(|e| format!("bad integer `{v}`: {e}"));
        match key {
            "actor_lr" => self.actor_lr = f(v)?,
            "critic_lr" => self.critic_lr = f(v)?,
            "gamma" => self.gamma = f(v)?,
            "batch_size" => self.batch_size = u(v)?,
            "horizon" => self.horizon_t = u(v)?,
            "iterations" => self.iterations = u(v)?,
            "nat_grad_eta" => self.nat_grad_eta = f(v)?,
            "fisher_ridge" => self.fisher_ridge = f(v)?,
            "sigma_init" => self.sigma_init = f(v)?,
            "grad_clip" => self.grad_clip = f(v)?,
            "surrogate_step_clip" => self.surrogate_step_clip = f(v)?,
            other => return Err(format!("unknown pg key `{other}`")),
        }
        Ok(())
    }

    pub fn to_kv_lines(&self) -> Vec<(&'static str, String)> {
        vec![
            ("actor_lr", self.actor_lr.to_string()),
            ("critic_lr", self.critic_lr.to_string()),
            ("gamma", self.gamma.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("horizon", self.horizon_t.to_string()),
            ("iterations", self.iterations.to_string()),
            ("nat_grad_eta", self.nat_grad_eta.to_string()),
            ("fisher_ridge", self.fisher_ridge.to_string()),
            ("sigma_init", self.sigma_init.to_string()),
            ("grad_clip", self.grad_clip.to_string()),
            ("surrogate_step_clip", self.surrogate_step_clip.to_string()),
        ]
    }
}

/// Gaussian policy with linear mean map and diagonal covariance.
///
/// `theta` vectorizes the `A_d x S_d` mean matrix column-major; the log-std
/// vector is learned separately and never enters the lifelong factorization.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianPolicy {
    pub theta: DVector<f64>,
    pub log_std: DVector<f64>,
    pub domain: DomainConfig,
}

impl LinearGaussianPolicy {
    pub fn new_zero(domain: DomainConfig, sigma_init: f64) -> Self {
        let sigma = sigma_init.max(SIGMA_MIN);
        LinearGaussianPolicy {
            theta: DVector::zeros(domain.policy_dim),
            log_std: DVector::from_element(domain.action_dim, sigma.ln()),
            domain,
        }
    }

    /// Replaces the mean map, keeping the log-std.
    pub fn with_theta(&self, theta: DVector<f64>) -> Self {
        let mut p = self.clone();
        p.theta = theta;
        p
    }

    pub fn sigma(&self) -> DVector<f64> {
        self.log_std.map(|l| l.exp().max(SIGMA_MIN))
    }

    /// Mean action `Theta s`.
    pub fn mean(&self, s: &DVector<f64>) -> Result<DVector<f64>, PgError> {
        let (a_d, s_d) = (self.domain.action_dim, self.domain.state_dim);
        if s.len() != s_d {
            return Err(PgError::DimensionMismatch(format!("state length {} != {s_d}", s.len())));
        }
        let mut mu = DVector::zeros(a_d);
        for j in 0..s_d {
            let sj = s[j];
            if sj == 0.0 {
                continue;
            }
            for i in 0..a_d {
                mu[i] += self.theta[i + j * a_d] * sj;
            }
        }
        Ok(mu)
    }

    /// Draws `u ~ N(Theta s, diag(sigma^2))` and returns its log-density.
    pub fn sample_action(
        &self,
        s: &DVector<f64>,
        rng: &mut ChaCha8Rng,
    ) -> Result<(DVector<f64>, f64), PgError> {
        let mu = self.mean(s)?;
        let sigma = self.sigma();
        let mut u = DVector::zeros(mu.len());
        for i in 0..u.len() {
            let z: f64 = StandardNormal.sample(rng);
            u[i] = mu[i] + sigma[i] * z;
        }
        let lp = self.log_prob(s, &u)?;
        Ok((u, lp))
    }

    /// Exact Gaussian log-density of `u` at state `s`.
    pub fn log_prob(&self, s: &DVector<f64>, u: &DVector<f64>) -> Result<f64, PgError> {
        let mu = self.mean(s)?;
        if u.len() != mu.len() {
            return Err(PgError::DimensionMismatch(format!("action length {} != {}", u.len(), mu.len())));
        }
        let sigma = self.sigma();
        let mut lp = 0.0;
        for i in 0..u.len() {
            let z = (u[i] - mu[i]) / sigma[i];
            lp += -0.5 * z * z - sigma[i].ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
        }
        Ok(lp)
    }

    /// Analytic gradient of the log-density with respect to the mean map
    /// (layout matching `theta`) and the log-std vector.
    pub fn log_prob_grad(&self, s: &DVector<f64>, u: &DVector<f64>) -> Result<PolicyGrad, PgError> {
        let mu = self.mean(s)?;
        if u.len() != mu.len() {
            return Err(PgError::DimensionMismatch(format!("action length {} != {}", u.len(), mu.len())));
        }
        let (a_d, s_d) = (self.domain.action_dim, self.domain.state_dim);
        let sigma = self.sigma();
        let mut mean_grad = DVector::zeros(self.domain.policy_dim);
        let mut scaled = DVector::zeros(a_d);
        for i in 0..a_d {
            scaled[i] = (u[i] - mu[i]) / (sigma[i] * sigma[i]);
        }
        for j in 0..s_d {
            let sj = s[j];
            if sj == 0.0 {
                continue;
            }
            for i in 0..a_d {
                mean_grad[i + j * a_d] = scaled[i] * sj;
            }
        }
        let mut log_std_grad = DVector::zeros(a_d);
        for i in 0..a_d {
            let z = (u[i] - mu[i]) / sigma[i];
            log_std_grad[i] = z * z - 1.0;
        }
        Ok(PolicyGrad { mean: mean_grad, log_std: log_std_grad })
    }
}

/// Gradient of a log-density split into the two parameter blocks.
#[derive(Debug, Clone)]
pub struct PolicyGrad {
    pub mean: DVector<f64>,
    pub log_std: DVector<f64>,
}

/// Linear state-value function with bias.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticParams {
    pub w: DVector<f64>,
}

impl CriticParams {
    pub fn new_zero(state_dim: usize) -> Self {
        CriticParams { w: DVector::zeros(state_dim + 1) }
    }

    pub fn value(&self, s: &DVector<f64>) -> f64 {
        let mut v = self.w[self.w.len() - 1];
        for i in 0..s.len() {
            v += self.w[i] * s[i];
        }
        v
    }
}

/// One gradient-descent step on the mean squared error between predicted
/// values and targets, over the given samples.
pub fn critic_update(critic: &mut CriticParams, samples: &[(DVector<f64>, f64)], lr: f64) {
    if samples.is_empty() || lr == 0.0 {
        return;
    }
    let dim = critic.w.len();
    let mut grad = DVector::zeros(dim);
    for (s, target) in samples {
        let err = critic.value(s) - target;
        for i in 0..s.len() {
            grad[i] += 2.0 * err * s[i];
        }
        grad[dim - 1] += 2.0 * err;
    }
    grad /= samples.len() as f64;
    critic.w -= grad * lr;
}

/// Discounted returns `G_t = sum_{t' >= t} gamma^{t'-t} r_{t'}`.
pub fn returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut g = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        g[t] = acc;
    }
    g
}

/// One-step temporal-difference advantage `r + gamma V(s') - V(s)`.
pub fn td_advantage(critic: &CriticParams, s: &DVector<f64>, s_next: &DVector<f64>, r: f64, gamma: f64) -> f64 {
    r + gamma * critic.value(s_next) - critic.value(s)
}

/// States, pre-squash actions, and rewards of one episode.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// `horizon + 1` state vectors.
    pub states: Vec<DVector<f64>>,
    /// `horizon` raw (pre-squash) actions.
    pub raw_actions: Vec<DVector<f64>>,
    /// `horizon` rewards.
    pub rewards: Vec<f64>,
}

impl Trajectory {
    /// Undiscounted mean reward of the trajectory.
    pub fn mean_reward(&self) -> f64 {
        self.rewards.iter().sum::<f64>() / self.rewards.len().max(1) as f64
    }
}

/// Side metrics of one rollout.
#[derive(Debug, Clone, Default)]
pub struct RolloutStats {
    pub energy_mj: f64,
    pub harvested_mj: f64,
    /// Sum over slots of the node-mean queue length.
    pub queue_bits_sum: f64,
    pub slots: usize,
    /// Raw per-(slot, node) queue samples, filled only on request.
    pub queue_samples: Vec<f64>,
}

/// Samples one trajectory under the current policy.
pub fn rollout(
    env: &mut Environment,
    policy: &LinearGaussianPolicy,
    horizon: usize,
    rng: &mut ChaCha8Rng,
    collect_queues: bool,
) -> Result<(Trajectory, RolloutStats), PgError> {
    let cfg = env.cfg().clone();
    let mut state = env.reset();
    let mut states = Vec::with_capacity(horizon + 1);
    let mut raw_actions = Vec::with_capacity(horizon);
    let mut rewards = Vec::with_capacity(horizon);
    let mut stats = RolloutStats::default();
    states.push(DVector::from_vec(state_vector(&cfg, &state)));
    for _ in 0..horizon {
        let s_vec = states.last().unwrap().clone();
        let (u, _) = policy.sample_action(&s_vec, rng)?;
        let action = project_feasible(&cfg, &state, u.as_slice())?;
        let out = env.step(&state, &action)?;
        stats.energy_mj += out.consumed_mj.iter().sum::<f64>();
        stats.harvested_mj += out.harvested_mj.iter().sum::<f64>();
        stats.queue_bits_sum += state.queues.iter().sum::<f64>() / state.queues.len() as f64;
        if collect_queues {
            stats.queue_samples.extend_from_slice(&state.queues);
        }
        stats.slots += 1;
        rewards.push(out.reward);
        raw_actions.push(u);
        state = out.next_state;
        states.push(DVector::from_vec(state_vector(&cfg, &state)));
    }
    Ok((Trajectory { states, raw_actions, rewards }, stats))
}

/// Aggregated metrics of one training iteration.
#[derive(Debug, Clone, Default)]
pub struct IterationMetrics {
    pub avg_reward: f64,
    pub avg_energy_mj_per_slot: f64,
    pub avg_queue_bits: f64,
    /// Mean harvested energy per episode in this iteration (mJ).
    pub harvested_mj_per_episode: f64,
    pub queue_samples: Vec<f64>,
}

fn clip_global_norm(mean: &mut DVector<f64>, log_std: &mut DVector<f64>, clip: f64) {
    if clip <= 0.0 {
        return;
    }
    let norm = (mean.norm_squared() + log_std.norm_squared()).sqrt();
    if norm > clip {
        let scale = clip / norm;
        *mean *= scale;
        *log_std *= scale;
    }
}

/// One batch actor-critic iteration: sample, compute returns and TD
/// advantages, apply the clipped actor step and the critic regression step.
pub fn train_iteration(
    policy: &mut LinearGaussianPolicy,
    critic: &mut CriticParams,
    env: &mut Environment,
    cfg: &PGConfig,
    rng: &mut ChaCha8Rng,
    collect_queues: bool,
) -> Result<IterationMetrics, PgError> {
    let mut actor_mean = DVector::zeros(policy.domain.policy_dim);
    let mut actor_log_std = DVector::zeros(policy.domain.action_dim);
    let mut critic_samples: Vec<(DVector<f64>, f64)> = Vec::new();
    let mut metrics = IterationMetrics::default();
    let mut reward_sum = 0.0;
    let mut slot_count = 0usize;

    for _ in 0..cfg.batch_size {
        let (traj, stats) = rollout(env, policy, cfg.horizon_t, rng, collect_queues)?;
        let g = returns(&traj.rewards, cfg.gamma);
        for t in 0..traj.rewards.len() {
            let adv = td_advantage(critic, &traj.states[t], &traj.states[t + 1], traj.rewards[t], cfg.gamma);
            let grad = policy.log_prob_grad(&traj.states[t], &traj.raw_actions[t])?;
            actor_mean += grad.mean * adv;
            actor_log_std += grad.log_std * adv;
            critic_samples.push((traj.states[t].clone(), g[t]));
        }
        reward_sum += traj.rewards.iter().sum::<f64>();
        slot_count += stats.slots;
        metrics.avg_energy_mj_per_slot += stats.energy_mj;
        metrics.avg_queue_bits += stats.queue_bits_sum;
        metrics.harvested_mj_per_episode += stats.harvested_mj;
        metrics.queue_samples.extend(stats.queue_samples);
    }

    let b = cfg.batch_size as f64;
    actor_mean /= b;
    actor_log_std /= b;
    clip_global_norm(&mut actor_mean, &mut actor_log_std, cfg.grad_clip);
    if cfg.actor_lr != 0.0 {
        policy.theta += actor_mean * cfg.actor_lr;
        policy.log_std += actor_log_std * cfg.actor_lr;
        let min_log = SIGMA_MIN.ln();
        policy.log_std.iter_mut().for_each(|l| *l = l.max(min_log));
    }
    critic_update(critic, &critic_samples, cfg.critic_lr);

    metrics.avg_reward = reward_sum / slot_count.max(1) as f64;
    metrics.avg_energy_mj_per_slot /= slot_count.max(1) as f64;
    metrics.avg_queue_bits /= slot_count.max(1) as f64;
    metrics.harvested_mj_per_episode /= b;
    Ok(metrics)
}

/// Surrogate description of a trained task policy.
#[derive(Debug, Clone)]
pub struct Surrogate {
    /// Natural-gradient-shifted mean parameters (length K_d).
    pub rho: DVector<f64>,
    /// PSD curvature estimate (K_d x K_d).
    pub aleph: DMatrix<f64>,
}

pub(crate) struct SurrogateBatch {
    /// Undiscounted mean reward per trajectory.
    pub traj_rewards: Vec<f64>,
    /// Per-trajectory sum over slots of the mean-block score.
    pub score_sums: Vec<DVector<f64>>,
    /// Per-trajectory sum over slots of `s s^T`.
    pub state_outer: Vec<DMatrix<f64>>,
    /// Sum of per-sample score outer products (empirical Fisher, unscaled).
    pub fisher_sum: DMatrix<f64>,
    pub sample_count: usize,
}

pub(crate) fn surrogate_from_batch(
    policy: &LinearGaussianPolicy,
    cfg: &PGConfig,
    batch: &SurrogateBatch,
) -> Result<Surrogate, PgError> {
    let k_d = policy.domain.policy_dim;
    let b = batch.traj_rewards.len() as f64;

    let mut g_hat = DVector::zeros(k_d);
    for (r, score) in batch.traj_rewards.iter().zip(&batch.score_sums) {
        g_hat += score * *r;
    }
    g_hat /= b;

    let mut fisher = batch.fisher_sum.clone() / batch.sample_count.max(1) as f64;
    for i in 0..k_d {
        fisher[(i, i)] += cfg.fisher_ridge;
    }
    let nat = nalgebra::Cholesky::new(fisher).ok_or(PgError::SingularFisher)?.solve(&g_hat);
    // Nearly unobserved state directions have Fisher eigenvalues at the
    // ridge floor, which turns the solve into g/ridge there; keep the step
    // inside a trust region so rho stays a local surrogate.
    let mut step = nat * cfg.nat_grad_eta;
    if cfg.surrogate_step_clip > 0.0 {
        let norm = step.norm();
        if norm > cfg.surrogate_step_clip {
            step *= cfg.surrogate_step_clip / norm;
        }
    }
    let rho = &policy.theta + step;

    // Curvature: reward-weighted negative log-density Hessian. For the
    // Gaussian mean block this is kron(sum_t s s^T, Sigma^{-1}) per
    // trajectory, weighted by the min-shifted trajectory reward.
    let shift = batch.traj_rewards.iter().cloned().fold(f64::INFINITY, f64::min);
    let s_d = policy.domain.state_dim;
    let mut weighted = DMatrix::zeros(s_d, s_d);
    for (r, outer) in batch.traj_rewards.iter().zip(&batch.state_outer) {
        weighted += outer * (r - shift);
    }
    weighted /= b;
    let sigma = policy.sigma();
    let sigma_inv2 = DMatrix::from_diagonal(&sigma.map(|s| 1.0 / (s * s)));
    let estimate = weighted.kronecker(&sigma_inv2);
    let aleph = psd_project(&estimate, ALEPH_FLOOR)?;
    Ok(Surrogate { rho, aleph })
}

/// Estimates the surrogate point `rho = theta + eta * Fisher^{-1} g` and the
/// PSD curvature `aleph` from a fresh batch of trajectories.
pub fn estimate_surrogate(
    policy: &LinearGaussianPolicy,
    env: &mut Environment,
    cfg: &PGConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Surrogate, PgError> {
    let k_d = policy.domain.policy_dim;
    let s_d = policy.domain.state_dim;
    let mut batch = SurrogateBatch {
        traj_rewards: Vec::with_capacity(cfg.batch_size),
        score_sums: Vec::with_capacity(cfg.batch_size),
        state_outer: Vec::with_capacity(cfg.batch_size),
        fisher_sum: DMatrix::zeros(k_d, k_d),
        sample_count: 0,
    };
    for _ in 0..cfg.batch_size {
        let (traj, _) = rollout(env, policy, cfg.horizon_t, rng, false)?;
        let mut score_sum = DVector::zeros(k_d);
        let mut outer = DMatrix::zeros(s_d, s_d);
        for t in 0..traj.rewards.len() {
            let grad = policy.log_prob_grad(&traj.states[t], &traj.raw_actions[t])?;
            batch.fisher_sum.syger(1.0, &grad.mean, &grad.mean, 1.0);
            score_sum += grad.mean;
            outer.syger(1.0, &traj.states[t], &traj.states[t], 1.0);
            batch.sample_count += 1;
        }
        batch.traj_rewards.push(traj.mean_reward());
        batch.score_sums.push(score_sum);
        batch.state_outer.push(outer);
    }
    // syger fills the lower triangle; mirror it.
    for m in std::iter::once(&mut batch.fisher_sum).chain(batch.state_outer.iter_mut()) {
        let n = m.nrows();
        for i in 0..n {
            for j in i + 1..n {
                m[(i, j)] = m[(j, i)];
            }
        }
    }
    surrogate_from_batch(policy, cfg, &batch)
}
