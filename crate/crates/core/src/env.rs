//! Discrete-time simulator of the primary/secondary SWIPT sensor network.
//!
//! One primary transmitter (grid powered, also the power beacon) and `N`
//! secondary transmitters share each unit slot between data transmission and
//! energy harvesting. Channels are block Rayleigh fading, arrivals are
//! Poisson, queues and batteries are capped. All randomness flows through a
//! seeded stream owned by the [`Environment`], so identical (config, seed,
//! action sequence) triples reproduce bit-identical outcomes.
//!
//! Units: powers in mW, energies in mJ (power x fraction at unit slot),
//! data in bits, bandwidth in Hz, noise configured in dBm and converted to
//! linear mW internally.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use thiserror::Error;

/// Feasibility slack for floating-point dust in fraction sums and energy
/// comparisons.
const FEAS_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("invalid config field `{field}`: {msg}")]
    Config { field: &'static str, msg: String },
    #[error("action contains NaN or infinity")]
    NonFiniteAction,
    #[error("infeasible action: {0}")]
    InfeasibleAction(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// How secondary transmit power `p_n` is chosen.
///
/// The greedy rule spends whatever the battery allows up to the hardware
/// cap; the learned mode adds one raw action entry per secondary node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SecondaryPowerMode {
    Greedy,
    Learned,
}

/// Environment parameterization for one task (one stationary period).
#[derive(Debug, Clone, PartialEq)]
pub struct TaskConfig {
    /// Number of secondary sensor systems, N >= 1.
    pub n_secondary: usize,
    /// Transmission bandwidth W in Hz.
    pub bandwidth_w: f64,
    /// AWGN noise level N_0 in dBm.
    pub noise_n0_dbm: f64,
    /// Multiply the linear noise by the bandwidth (conventional N_0*W floor)
    /// instead of using the linear N_0 directly.
    pub noise_times_bandwidth: bool,
    /// Maximum primary transmit power P_0 in mW.
    pub p0_max: f64,
    /// Maximum secondary transmit power P_{1,max} in mW (shared by all).
    pub pn_max: f64,
    /// Battery capacity B in mJ.
    pub battery_cap_b: f64,
    /// Data buffer capacity in bits.
    pub buffer_cap_rho: f64,
    /// Maximum arrival data A per slot in bits.
    pub arrival_max_a: f64,
    /// Mean arrival rate per node, in kilobits per slot.
    pub arrival_rate_lambda_a: f64,
    /// Rayleigh scale of the communication channels.
    pub comm_scale_zeta: f64,
    /// Rayleigh scale of the energy-harvesting channels.
    pub eh_scale_zeta_prime: f64,
    /// Power conversion efficiency in (0, 1].
    pub conv_eff_lambda: f64,
    /// Penalty coefficient applied to queue backlog and battery overflow.
    pub penalty_nu: f64,
    /// Slot duration, normalized to 1.
    pub slot_duration: f64,
    /// Slots per episode.
    pub horizon_t: usize,
    pub secondary_power_mode: SecondaryPowerMode,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            n_secondary: 2,
            bandwidth_w: 5e6,
            noise_n0_dbm: -120.0,
            noise_times_bandwidth: false,
            p0_max: 300.0,
            pn_max: 300.0,
            battery_cap_b: 100.0,
            buffer_cap_rho: 1e9,
            arrival_max_a: 1e5,
            arrival_rate_lambda_a: 5.0,
            comm_scale_zeta: 0.2,
            eh_scale_zeta_prime: 0.1,
            conv_eff_lambda: 0.2,
            penalty_nu: 0.01,
            slot_duration: 1.0,
            horizon_t: 200,
            secondary_power_mode: SecondaryPowerMode::Greedy,
        }
    }
}

impl TaskConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        fn positive(field: &'static str, v: f64) -> Result<(), EnvError> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(EnvError::Config { field, msg: format!("must be > 0 and finite, got {v}") })
            }
        }
        if self.n_secondary < 1 {
            return Err(EnvError::Config { field: "n_secondary", msg: "must be >= 1".into() });
        }
        positive("bandwidth_W", self.bandwidth_w)?;
        if !self.noise_n0_dbm.is_finite() {
            return Err(EnvError::Config { field: "noise_N0", msg: "must be finite".into() });
        }
        positive("p0_max", self.p0_max)?;
        positive("pn_max", self.pn_max)?;
        positive("battery_cap_B", self.battery_cap_b)?;
        positive("buffer_cap_rho", self.buffer_cap_rho)?;
        positive("arrival_max_A", self.arrival_max_a)?;
        if !(self.arrival_rate_lambda_a >= 0.0 && self.arrival_rate_lambda_a.is_finite()) {
            return Err(EnvError::Config {
                field: "arrival_rate_lambda_a",
                msg: format!("must be >= 0, got {}", self.arrival_rate_lambda_a),
            });
        }
        positive("comm_scale_zeta", self.comm_scale_zeta)?;
        positive("eh_scale_zeta_prime", self.eh_scale_zeta_prime)?;
        if !(self.conv_eff_lambda > 0.0 && self.conv_eff_lambda <= 1.0) {
            return Err(EnvError::Config {
                field: "conv_eff_lambda",
                msg: format!("must be in (0, 1], got {}", self.conv_eff_lambda),
            });
        }
        if !(self.penalty_nu >= 0.0 && self.penalty_nu.is_finite()) {
            return Err(EnvError::Config { field: "penalty_nu", msg: "must be >= 0".into() });
        }
        positive("slot_duration", self.slot_duration)?;
        if self.horizon_t == 0 {
            return Err(EnvError::Config { field: "horizon_T", msg: "must be >= 1".into() });
        }
        Ok(())
    }

    /// Linear noise power in mW (optionally scaled by the bandwidth).
    pub fn noise_linear_mw(&self) -> f64 {
        let n0 = 10f64.powf(self.noise_n0_dbm / 10.0);
        if self.noise_times_bandwidth {
            n0 * self.bandwidth_w
        } else {
            n0
        }
    }

    /// Dimensions of the learning problem this task belongs to.
    pub fn domain(&self, domain_id: u32) -> DomainConfig {
        DomainConfig::new(domain_id, self.n_secondary, self.secondary_power_mode)
    }

    /// Key/value lines of the plain-text config section, in canonical order.
    pub fn to_kv_lines(&self) -> Vec<(&'static str, String)> {
        let mode = match self.secondary_power_mode {
            SecondaryPowerMode::Greedy => "greedy",
            SecondaryPowerMode::Learned => "learned",
        };
        vec![
            ("n_secondary", self.n_secondary.to_string()),
            ("bandwidth_W", self.bandwidth_w.to_string()),
            ("noise_N0", self.noise_n0_dbm.to_string()),
            ("noise_times_bandwidth", self.noise_times_bandwidth.to_string()),
            ("p0_max", self.p0_max.to_string()),
            ("pn_max", self.pn_max.to_string()),
            ("battery_cap_B", self.battery_cap_b.to_string()),
            ("buffer_cap_rho", self.buffer_cap_rho.to_string()),
            ("arrival_max_A", self.arrival_max_a.to_string()),
            ("arrival_rate_lambda_a", self.arrival_rate_lambda_a.to_string()),
            ("comm_scale_zeta", self.comm_scale_zeta.to_string()),
            ("eh_scale_zeta_prime", self.eh_scale_zeta_prime.to_string()),
            ("conv_eff_lambda", self.conv_eff_lambda.to_string()),
            ("penalty_nu", self.penalty_nu.to_string()),
            ("slot_duration", self.slot_duration.to_string()),
            ("horizon_T", self.horizon_t.to_string()),
            ("secondary_power_mode", mode.to_string()),
        ]
    }

    /// Applies one key/value pair from a config section. Unknown keys are
    /// rejected so typos fail loudly.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn f(value: &str) -> Result<f64, String> {
            value.trim().parse::<f64>().map_err(|e| format!("bad float `{value}`: {e}"))
        }
        fn u(value: &str) -> Result<usize, String> {
            value.trim().parse::<usize>().map_err(|e| format!("bad integer `{value}`: {e}"))
        }
        match key {
            "n_secondary" => self.n_secondary = u(value)?,
            "bandwidth_W" => self.bandwidth_w = f(value)?,
            "noise_N0" => self.noise_n0_dbm = f(value)?,
            "noise_times_bandwidth" => {
                self.noise_times_bandwidth =
                    value.trim().parse::<bool>().map_err(|e| format!("bad bool `{value}`: {e}"))?
            }
            "p0_max" => self.p0_max = f(value)?,
            "pn_max" => self.pn_max = f(value)?,
            "battery_cap_B" => self.battery_cap_b = f(value)?,
            "buffer_cap_rho" => self.buffer_cap_rho = f(value)?,
            "arrival_max_A" => self.arrival_max_a = f(value)?,
            "arrival_rate_lambda_a" => self.arrival_rate_lambda_a = f(value)?,
            "comm_scale_zeta" => self.comm_scale_zeta = f(value)?,
            "eh_scale_zeta_prime" => self.eh_scale_zeta_prime = f(value)?,
            "conv_eff_lambda" => self.conv_eff_lambda = f(value)?,
            "penalty_nu" => self.penalty_nu = f(value)?,
            "slot_duration" => self.slot_duration = f(value)?,
            "horizon_T" => self.horizon_t = u(value)?,
            "secondary_power_mode" => {
                self.secondary_power_mode = match value.trim() {
                    "greedy" => SecondaryPowerMode::Greedy,
                    "learned" => SecondaryPowerMode::Learned,
                    other => return Err(format!("unknown secondary_power_mode `{other}`")),
                }
            }
            other => return Err(format!("unknown task key `{other}`")),
        }
        Ok(())
    }
}

/// Structural dimensions shared by every task in a domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct DomainConfig {
    pub domain_id: u32,
    pub n_secondary: usize,
    /// State dimension S_d = 4N + 2.
    pub state_dim: usize,
    /// Action dimension A_d = 2N + 2 (greedy) or 3N + 2 (learned).
    pub action_dim: usize,
    /// Policy dimension K_d = S_d * A_d.
    pub policy_dim: usize,
}

impl DomainConfig {
    pub fn new(domain_id: u32, n_secondary: usize, mode: SecondaryPowerMode) -> Self {
        let n = n_secondary;
        let state_dim = 4 * n + 2;
        let action_dim = match mode {
            SecondaryPowerMode::Greedy => 2 * n + 2,
            SecondaryPowerMode::Learned => 3 * n + 2,
        };
        DomainConfig { domain_id, n_secondary, state_dim, action_dim, policy_dim: state_dim * action_dim }
    }
}

/// Network state at the start of a slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotState {
    /// Queue backlogs in bits; index 0 is the primary node, then N secondaries.
    pub queues: Vec<f64>,
    /// Secondary battery levels in mJ (length N).
    pub batteries: Vec<f64>,
    /// Communication channel gains (length N+1).
    pub comm_gain: Vec<f64>,
    /// Energy-harvesting channel gains (length N).
    pub eh_gain: Vec<f64>,
    pub slot_index: u64,
}

/// A control decision satisfying the scheduling and energy constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionFeasible {
    /// Primary transmit power in [0, P_0] (mW).
    pub p0: f64,
    /// Data-transmission time fractions, index 0 primary (length N+1).
    pub alpha_tx: Vec<f64>,
    /// Energy-harvesting time fractions (length N).
    pub alpha_eh: Vec<f64>,
    /// Secondary transmit powers (length N).
    pub p_secondary: Vec<f64>,
}

impl ActionFeasible {
    /// All-idle action: nothing transmitted, nothing harvested.
    pub fn idle(n_secondary: usize) -> Self {
        ActionFeasible {
            p0: 0.0,
            alpha_tx: vec![0.0; n_secondary + 1],
            alpha_eh: vec![0.0; n_secondary],
            p_secondary: vec![0.0; n_secondary],
        }
    }

    /// Total consumed energy per slot across all transmitters (mJ).
    pub fn total_energy_mj(&self) -> f64 {
        let mut e = self.p0 * self.alpha_tx[0];
        for n in 0..self.p_secondary.len() {
            e += self.p_secondary[n] * self.alpha_tx[n + 1];
        }
        e
    }

    /// Checks every feasibility constraint against the current state.
    pub fn validate(&self, state: &SlotState, cfg: &TaskConfig) -> Result<(), EnvError> {
        let n = cfg.n_secondary;
        if self.alpha_tx.len() != n + 1 || self.alpha_eh.len() != n || self.p_secondary.len() != n {
            return Err(EnvError::Dimension("action length does not match n_secondary".into()));
        }
        let all = self.alpha_tx.iter().chain(self.alpha_eh.iter());
        for (i, a) in all.enumerate() {
            if !(*a >= 0.0 && *a <= 1.0 + FEAS_EPS) {
                return Err(EnvError::InfeasibleAction(format!("fraction {i} = {a} outside [0,1]")));
            }
        }
        let total: f64 = self.alpha_tx.iter().sum::<f64>() + self.alpha_eh.iter().sum::<f64>();
        if total > 1.0 + FEAS_EPS {
            return Err(EnvError::InfeasibleAction(format!("fraction sum {total} > 1")));
        }
        if !(self.p0 >= 0.0 && self.p0 <= cfg.p0_max + FEAS_EPS) {
            return Err(EnvError::InfeasibleAction(format!("p0 = {} outside [0, {}]", self.p0, cfg.p0_max)));
        }
        for i in 0..n {
            let p = self.p_secondary[i];
            if !(p >= 0.0 && p.is_finite()) {
                return Err(EnvError::InfeasibleAction(format!("p_{} = {p}", i + 1)));
            }
            let consumed = p * self.alpha_tx[i + 1];
            if consumed > state.batteries[i] + FEAS_EPS {
                return Err(EnvError::InfeasibleAction(format!(
                    "node {} consumes {consumed} mJ but battery holds {}",
                    i + 1,
                    state.batteries[i]
                )));
            }
        }
        Ok(())
    }
}

/// Everything produced by one simulator step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: SlotState,
    pub reward: f64,
    /// Bits transmitted per node (length N+1, index 0 primary).
    pub served_bits: Vec<f64>,
    /// Energy banked per secondary battery before clamping (length N).
    pub harvested_mj: Vec<f64>,
    /// Energy drawn per transmitter (length N+1, index 0 primary; the
    /// battery constraint applies to indices >= 1).
    pub consumed_mj: Vec<f64>,
    /// Pre-clamp battery excess above capacity (length N).
    pub battery_overflow_mj: Vec<f64>,
    /// Arrived bits per node (length N+1).
    pub arrivals: Vec<f64>,
}

fn rayleigh(scale: f64, rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.gen::<f64>();
    scale * (-2.0 * (1.0 - u).ln()).sqrt()
}

/// Draws one slot's communication and EH channel gains.
pub fn sample_channels(cfg: &TaskConfig, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let comm = (0..cfg.n_secondary + 1).map(|_| rayleigh(cfg.comm_scale_zeta, rng)).collect();
    let eh = (0..cfg.n_secondary).map(|_| rayleigh(cfg.eh_scale_zeta_prime, rng)).collect();
    (comm, eh)
}

/// Draws one slot's arrivals, Poisson with mean `lambda_a * 1000 * slot`
/// bits per node, clamped at the maximum arrival A.
pub fn sample_arrivals(cfg: &TaskConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mean = cfg.arrival_rate_lambda_a * 1000.0 * cfg.slot_duration;
    (0..cfg.n_secondary + 1)
        .map(|_| {
            if mean <= 0.0 {
                0.0
            } else {
                let draw: f64 = Poisson::new(mean).expect("validated mean").sample(rng);
                draw.min(cfg.arrival_max_a)
            }
        })
        .collect()
}

/// Shannon-rate bits moved in one slot: `W log2(1 + p h / N0) * alpha * slot`.
pub fn transmit_amount(cfg: &TaskConfig, p: f64, h: f64, alpha: f64) -> f64 {
    if alpha <= 0.0 || p <= 0.0 || h <= 0.0 {
        return 0.0;
    }
    cfg.bandwidth_w * (1.0 + p * h / cfg.noise_linear_mw()).log2() * alpha * cfg.slot_duration
}

/// Instantaneous power harvested at secondary `node` (0-based) when the
/// primary transmits at `p0`: the residual `P_0 - p0` is split equally.
pub fn harvest_power(cfg: &TaskConfig, p0: f64, h_prime: f64) -> f64 {
    cfg.conv_eff_lambda * ((cfg.p0_max - p0) / cfg.n_secondary as f64) * h_prime
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Maps an unconstrained policy output onto the feasible action set.
///
/// `raw[0]` drives the primary power through a logistic; the next `2N+1`
/// entries are softmax logits for the time fractions, competing against one
/// implicit idle slot with logit 0 so the fractions always sum below 1. In
/// learned mode the trailing `N` entries set the secondary powers, capped by
/// the battery; in greedy mode the battery rule `min(P_max, b/alpha)` is
/// applied directly.
pub fn project_feasible(cfg: &TaskConfig, state: &SlotState, raw: &[f64]) -> Result<ActionFeasible, EnvError> {
    let n = cfg.n_secondary;
    let expect = match cfg.secondary_power_mode {
        SecondaryPowerMode::Greedy => 2 * n + 2,
        SecondaryPowerMode::Learned => 3 * n + 2,
    };
    if raw.len() != expect {
        return Err(EnvError::Dimension(format!("raw action length {} != {expect}", raw.len())));
    }
    if raw.iter().any(|x| !x.is_finite()) {
        return Err(EnvError::NonFiniteAction);
    }
    let p0 = cfg.p0_max * logistic(raw[0]);
    let logits = &raw[1..2 * n + 2];
    let m = logits.iter().cloned().fold(0.0_f64, f64::max); // idle logit is 0
    let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let denom = exps.iter().sum::<f64>() + (-m).exp();
    let fracs: Vec<f64> = exps.iter().map(|e| e / denom).collect();
    let alpha_tx = fracs[..n + 1].to_vec();
    let alpha_eh = fracs[n + 1..].to_vec();
    let p_secondary: Vec<f64> = (0..n)
        .map(|i| {
            let a = alpha_tx[i + 1];
            if a <= 0.0 {
                return 0.0;
            }
            let cap = state.batteries[i] / a;
            match cfg.secondary_power_mode {
                SecondaryPowerMode::Greedy => cfg.pn_max.min(cap),
                SecondaryPowerMode::Learned => (cfg.pn_max * logistic(raw[2 * n + 2 + i])).min(cap),
            }
        })
        .collect();
    Ok(ActionFeasible { p0, alpha_tx, alpha_eh, p_secondary })
}

/// Flattens a state into the policy feature vector
/// `[q_0..q_N, b_1..b_N, h_0..h_N, h'_1..h'_N]` with queues scaled by the
/// buffer capacity and batteries by the battery capacity.
pub fn state_vector(cfg: &TaskConfig, state: &SlotState) -> Vec<f64> {
    let mut v = Vec::with_capacity(4 * cfg.n_secondary + 2);
    v.extend(state.queues.iter().map(|q| q / cfg.buffer_cap_rho));
    v.extend(state.batteries.iter().map(|b| b / cfg.battery_cap_b));
    v.extend(state.comm_gain.iter().cloned());
    v.extend(state.eh_gain.iter().cloned());
    v
}

/// The simulator: owns the task configuration and its random stream.
#[derive(Debug, Clone)]
pub struct Environment {
    cfg: TaskConfig,
    rng: ChaCha8Rng,
}

impl Environment {
    pub fn new(cfg: TaskConfig, seed: u64) -> Result<Self, EnvError> {
        cfg.validate()?;
        Ok(Environment { cfg, rng: crate::rng::stream(seed) })
    }

    pub fn cfg(&self) -> &TaskConfig {
        &self.cfg
    }

    /// Initial state: empty queues, fully charged batteries, fresh channels.
    pub fn reset(&mut self) -> SlotState {
        let n = self.cfg.n_secondary;
        let (comm_gain, eh_gain) = sample_channels(&self.cfg, &mut self.rng);
        SlotState {
            queues: vec![0.0; n + 1],
            batteries: vec![self.cfg.battery_cap_b; n],
            comm_gain,
            eh_gain,
            slot_index: 0,
        }
    }

    /// Advances one slot under `action`.
    pub fn step(&mut self, state: &SlotState, action: &ActionFeasible) -> Result<StepOutcome, EnvError> {
        action.validate(state, &self.cfg)?;
        let cfg = &self.cfg;
        let n = cfg.n_secondary;

        let mut served = Vec::with_capacity(n + 1);
        served.push(transmit_amount(cfg, action.p0, state.comm_gain[0], action.alpha_tx[0]));
        for i in 0..n {
            served.push(transmit_amount(cfg, action.p_secondary[i], state.comm_gain[i + 1], action.alpha_tx[i + 1]));
        }

        let mut consumed = Vec::with_capacity(n + 1);
        consumed.push(action.p0 * action.alpha_tx[0]);
        for i in 0..n {
            consumed.push(action.p_secondary[i] * action.alpha_tx[i + 1]);
        }

        let arrivals = sample_arrivals(cfg, &mut self.rng);
        let mut queues = Vec::with_capacity(n + 1);
        for i in 0..=n {
            let q = (state.queues[i] - served[i]).max(0.0) + arrivals[i];
            queues.push(q.min(cfg.buffer_cap_rho));
        }

        let mut harvested = Vec::with_capacity(n);
        let mut overflow = Vec::with_capacity(n);
        let mut batteries = Vec::with_capacity(n);
        for i in 0..n {
            let gain = harvest_power(cfg, action.p0, state.eh_gain[i]) * action.alpha_eh[i];
            harvested.push(gain);
            // Consumption was validated against the battery; clamp the dust.
            let drawn = consumed[i + 1].min(state.batteries[i]);
            let pre_clamp = state.batteries[i] - drawn + gain;
            overflow.push((pre_clamp - cfg.battery_cap_b).max(0.0));
            batteries.push(pre_clamp.clamp(0.0, cfg.battery_cap_b));
        }

        let energy: f64 = consumed.iter().sum();
        let backlog: f64 = (0..=n).map(|i| (state.queues[i] - served[i]).max(0.0)).sum();
        let overflow_total: f64 = overflow.iter().sum();
        let reward = -energy - cfg.penalty_nu * (overflow_total + backlog);

        let (comm_gain, eh_gain) = sample_channels(cfg, &mut self.rng);
        let next_state =
            SlotState { queues, batteries, comm_gain, eh_gain, slot_index: state.slot_index + 1 };

        Ok(StepOutcome {
            next_state,
            reward,
            served_bits: served,
            harvested_mj: harvested,
            consumed_mj: consumed,
            battery_overflow_mj: overflow,
            arrivals,
        })
    }
}
