//! Per-slot drift-plus-penalty controller.
//!
//! Each slot instantiates a small non-convex program over the primary power
//! and the time fractions, then solves it by alternating block minimization:
//! secondary transmission fractions first, then the primary fraction, then
//! the primary power and harvesting fractions. Every scalar block runs a
//! coarse grid search followed by golden-section refinement inside the best
//! cell, accepting only strict improvements, so the objective is
//! non-increasing across block updates and ties keep the incumbent (the
//! all-idle initialization in particular).

use crate::env::{transmit_amount, ActionFeasible, EnvError, SlotState, TaskConfig};
use serde::{Deserialize, Serialize};

/// Which per-slot objective the controller minimizes.
///
/// `Standard` keeps the decision-dependent expansion terms of the one-slot
/// queue-drift bound, `d^2 - 2 q d`, plus the energy penalty `+beta p alpha`
/// with the conventional minimization sign. `Paper` uses the literal
/// `(1 - 2 rho_hat) d^2 - beta p alpha` form with a configurable
/// coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObjectiveMode {
    Standard,
    Paper,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovConfig {
    /// Penalty weight trading energy against queue drift.
    pub beta: f64,
    /// Buffer coefficient used by the `Paper` objective and the bound.
    pub rho_hat: f64,
    /// Convergence threshold on the per-pass objective improvement.
    pub eps_a: f64,
    pub max_alt_passes: usize,
    pub objective_mode: ObjectiveMode,
    /// Grid points per scalar in the block sub-solver.
    pub sub_grid: usize,
}

impl Default for LyapunovConfig {
    fn default() -> Self {
        LyapunovConfig {
            beta: 1.0,
            rho_hat: 0.5,
            eps_a: 1e-6,
            max_alt_passes: 50,
            objective_mode: ObjectiveMode::Standard,
            sub_grid: 33,
        }
    }
}

impl LyapunovConfig {
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        match key {
            "beta" => self.beta = v.parse().map_err(|e| format!("bad float `{v}`: {e}"))?,
            "rho_hat" => self.rho_hat = v.parse().map_err(|e| format!("bad float `{v}`: {e}"))?,
            "eps_a" => self.eps_a = v.parse().map_err(|e| format!("bad float `{v}`: {e}"))?,
            "max_alt_passes" => {
                self.max_alt_passes = v.parse().map_err(|e| format!("bad integer `{v}`: {e}"))?
            }
            "objective_mode" => {
                self.objective_mode = match v {
                    "standard" => ObjectiveMode::Standard,
                    "paper" => ObjectiveMode::Paper,
                    other => return Err(format!("unknown objective_mode `{other}`")),
                }
            }
            "sub_grid" => self.sub_grid = v.parse().map_err(|e| format!("bad integer `{v}`: {e}"))?,
            other => return Err(format!("unknown lyapunov key `{other}`")),
        }
        Ok(())
    }

    pub fn to_kv_lines(&self) -> Vec<(&'static str, String)> {
        let mode = match self.objective_mode {
            ObjectiveMode::Standard => "standard",
            ObjectiveMode::Paper => "paper",
        };
        vec![
            ("beta", self.beta.to_string()),
            ("rho_hat", self.rho_hat.to_string()),
            ("eps_a", self.eps_a.to_string()),
            ("max_alt_passes", self.max_alt_passes.to_string()),
            ("objective_mode", mode.to_string()),
            ("sub_grid", self.sub_grid.to_string()),
        ]
    }
}

/// Concatenated queue vector the Lyapunov function is measured over.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualQueueVector {
    pub theta: Vec<f64>,
}

impl VirtualQueueVector {
    pub fn from_state(state: &SlotState) -> Self {
        VirtualQueueVector { theta: state.queues.clone() }
    }
}

/// Scalar congestion measure `(1/N) * sum q_n^2` over all N+1 queues.
pub fn lyapunov_value(theta: &VirtualQueueVector, n_secondary: usize) -> f64 {
    theta.theta.iter().map(|q| q * q).sum::<f64>() / n_secondary as f64
}

/// Per-slot objective of the instantiated drift-plus-penalty problem.
pub fn per_slot_objective(
    state: &SlotState,
    action: &ActionFeasible,
    cfg: &TaskConfig,
    lcfg: &LyapunovConfig,
) -> Result<f64, EnvError> {
    action.validate(state, cfg)?;
    let n = cfg.n_secondary;
    let mut value = 0.0;
    for i in 0..=n {
        let (p, h, alpha) = if i == 0 {
            (action.p0, state.comm_gain[0], action.alpha_tx[0])
        } else {
            (action.p_secondary[i - 1], state.comm_gain[i], action.alpha_tx[i])
        };
        let d = transmit_amount(cfg, p, h, alpha);
        let energy = p * alpha;
        value += match lcfg.objective_mode {
            ObjectiveMode::Standard => d * d - 2.0 * state.queues[i] * d + lcfg.beta * energy,
            ObjectiveMode::Paper => (1.0 - 2.0 * lcfg.rho_hat) * d * d - lcfg.beta * energy,
        };
    }
    Ok(value)
}

/// Diagnostic value of the one-slot drift-plus-penalty upper bound:
/// `sum_n (1 - 2 rho_hat) d_n^2 + A^2 + 2 rho_hat A - beta p_n alpha_n`.
pub fn drift_penalty_bound(
    state: &SlotState,
    action: &ActionFeasible,
    cfg: &TaskConfig,
    lcfg: &LyapunovConfig,
) -> f64 {
    let n = cfg.n_secondary;
    let a_max = cfg.arrival_max_a;
    let constant = a_max * a_max + 2.0 * lcfg.rho_hat * a_max;
    let mut value = 0.0;
    for i in 0..=n {
        let (p, h, alpha) = if i == 0 {
            (action.p0, state.comm_gain[0], action.alpha_tx[0])
        } else {
            (action.p_secondary[i - 1], state.comm_gain[i], action.alpha_tx[i])
        };
        let d = transmit_amount(cfg, p, h, alpha);
        value += (1.0 - 2.0 * lcfg.rho_hat) * d * d + constant - lcfg.beta * p * alpha;
    }
    value
}

/// Result of [`solve_slot_traced`].
#[derive(Debug, Clone)]
pub struct SolveTrace {
    pub action: ActionFeasible,
    /// Objective value after every scalar block update, starting with the
    /// initial (all-idle) value.
    pub objective_trace: Vec<f64>,
    /// Alternating passes executed before the convergence criterion fired.
    pub passes: usize,
}

#[derive(Clone, Copy)]
enum Var {
    P0,
    Tx(usize),
    Eh(usize),
}

struct SlotProblem<'a> {
    cfg: &'a TaskConfig,
    lcfg: &'a LyapunovConfig,
    state: &'a SlotState,
}

/// Candidate decision variables during alternating minimization.
#[derive(Clone)]
struct Vars {
    p0: f64,
    alpha_tx: Vec<f64>,
    alpha_eh: Vec<f64>,
}

impl SlotProblem<'_> {
    /// Full objective with one variable optionally replaced by `x`.
    /// Secondary powers follow the greedy battery rule.
    fn objective(&self, vars: &Vars, replace: Option<(Var, f64)>) -> f64 {
        let n = self.cfg.n_secondary;
        let value_of = |var: Var| -> f64 {
            if let Some((r, x)) = replace {
                match (var, r) {
                    (Var::P0, Var::P0) => return x,
                    (Var::Tx(i), Var::Tx(j)) if i == j => return x,
                    (Var::Eh(i), Var::Eh(j)) if i == j => return x,
                    _ => {}
                }
            }
            match var {
                Var::P0 => vars.p0,
                Var::Tx(i) => vars.alpha_tx[i],
                Var::Eh(i) => vars.alpha_eh[i],
            }
        };
        let mut total = 0.0;
        for i in 0..=n {
            let alpha = value_of(Var::Tx(i));
            let (p, h) = if i == 0 {
                (value_of(Var::P0), self.state.comm_gain[0])
            } else {
                let b = self.state.batteries[i - 1];
                let p = if alpha > 0.0 { self.cfg.pn_max.min(b / alpha) } else { 0.0 };
                (p, self.state.comm_gain[i])
            };
            let d = transmit_amount(self.cfg, p, h, alpha);
            let energy = p * alpha;
            total += match self.lcfg.objective_mode {
                ObjectiveMode::Standard => {
                    d * d - 2.0 * self.state.queues[i] * d + self.lcfg.beta * energy
                }
                ObjectiveMode::Paper => {
                    (1.0 - 2.0 * self.lcfg.rho_hat) * d * d - self.lcfg.beta * energy
                }
            };
        }
        total
    }

    fn fraction_budget(&self, vars: &Vars, var: Var) -> f64 {
        let mut others = 0.0;
        for (i, a) in vars.alpha_tx.iter().enumerate() {
            if !matches!(var, Var::Tx(j) if j == i) {
                others += a;
            }
        }
        for (i, a) in vars.alpha_eh.iter().enumerate() {
            if !matches!(var, Var::Eh(j) if j == i) {
                others += a;
            }
        }
        (1.0 - others).max(0.0)
    }

    /// Scalar minimization: grid scan, then golden-section inside the best
    /// cell. Only strict improvements move the incumbent.
    fn line_search(
        &self,
        vars: &Vars,
        var: Var,
        lo: f64,
        hi: f64,
        cur_x: f64,
        cur_val: f64,
    ) -> (f64, f64) {
        let mut best = (cur_x, cur_val);
        if hi <= lo {
            return best;
        }
        let g = self.lcfg.sub_grid.max(2);
        let step = (hi - lo) / (g - 1) as f64;
        let mut best_cell = None;
        for k in 0..g {
            let x = lo + step * k as f64;
            let y = self.objective(vars, Some((var, x)));
            if y < best.1 {
                best = (x, y);
                best_cell = Some(k);
            }
        }
        if let Some(k) = best_cell {
            let a = lo + step * k.saturating_sub(1) as f64;
            let b = (lo + step * (k + 1) as f64).min(hi);
            let tol = (hi - lo) * 1e-6;
            let (x, y) = golden_min(|x| self.objective(vars, Some((var, x))), a, b, tol);
            if y < best.1 {
                best = (x, y);
            }
        }
        best
    }
}

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    const INVPHI: f64 = 0.618_033_988_749_894_9;
    const INVPHI2: f64 = 0.381_966_011_250_105_1;
    let mut h = b - a;
    if h <= tol {
        let x = 0.5 * (a + b);
        return (x, f(x));
    }
    let mut c = a + INVPHI2 * h;
    let mut d = a + INVPHI * h;
    let mut yc = f(c);
    let mut yd = f(d);
    while h > tol {
        if yc < yd {
            b = d;
            d = c;
            yd = yc;
            h = b - a;
            c = a + INVPHI2 * h;
            yc = f(c);
        } else {
            a = c;
            c = d;
            yc = yd;
            h = b - a;
            d = a + INVPHI * h;
            yd = f(d);
        }
    }
    if yc < yd {
        (c, yc)
    } else {
        (d, yd)
    }
}

/// Solves the instantiated per-slot problem, returning a feasible action.
pub fn solve_slot(state: &SlotState, cfg: &TaskConfig, lcfg: &LyapunovConfig) -> ActionFeasible {
    solve_slot_traced(state, cfg, lcfg).action
}

/// Like [`solve_slot`] but also reports the objective after every scalar
/// block update and the number of alternating passes.
///
/// The alternating loop runs from two feasible starts and keeps the better
/// result: the all-idle point, and a mid-range point (half power, equal
/// fractions). The bilinear (p0, alpha_0) coupling makes the idle corner a
/// coordinate-wise stationary point whenever queues are non-zero, so a
/// single idle start would never transmit; the mid start escapes it. Ties
/// go to the idle start.
pub fn solve_slot_traced(state: &SlotState, cfg: &TaskConfig, lcfg: &LyapunovConfig) -> SolveTrace {
    let n = cfg.n_secondary;
    let idle = Vars { p0: 0.0, alpha_tx: vec![0.0; n + 1], alpha_eh: vec![0.0; n] };
    let share = 1.0 / (2 * n + 2) as f64;
    let mid = Vars { p0: cfg.p0_max / 2.0, alpha_tx: vec![share; n + 1], alpha_eh: vec![share; n] };
    let from_idle = alternate(state, cfg, lcfg, idle);
    let from_mid = alternate(state, cfg, lcfg, mid);
    let idle_value = *from_idle.objective_trace.last().unwrap();
    let mid_value = *from_mid.objective_trace.last().unwrap();
    if mid_value < idle_value {
        from_mid
    } else {
        from_idle
    }
}

fn alternate(state: &SlotState, cfg: &TaskConfig, lcfg: &LyapunovConfig, mut vars: Vars) -> SolveTrace {
    let n = cfg.n_secondary;
    let problem = SlotProblem { cfg, lcfg, state };
    let mut value = problem.objective(&vars, None);
    let mut trace = vec![value];
    let mut passes = 0;

    for _ in 0..lcfg.max_alt_passes {
        passes += 1;
        let pass_start = value;
        // (b) secondary transmission fractions
        for i in 1..=n {
            let hi = problem.fraction_budget(&vars, Var::Tx(i));
            let (x, y) = problem.line_search(&vars, Var::Tx(i), 0.0, hi, vars.alpha_tx[i], value);
            vars.alpha_tx[i] = x;
            value = y;
            trace.push(value);
        }
        // (c) primary transmission fraction
        {
            let hi = problem.fraction_budget(&vars, Var::Tx(0));
            let (x, y) = problem.line_search(&vars, Var::Tx(0), 0.0, hi, vars.alpha_tx[0], value);
            vars.alpha_tx[0] = x;
            value = y;
            trace.push(value);
        }
        // (d) primary power and harvesting fractions
        {
            let (x, y) = problem.line_search(&vars, Var::P0, 0.0, cfg.p0_max, vars.p0, value);
            vars.p0 = x;
            value = y;
            trace.push(value);
        }
        for i in 0..n {
            let hi = problem.fraction_budget(&vars, Var::Eh(i));
            let (x, y) = problem.line_search(&vars, Var::Eh(i), 0.0, hi, vars.alpha_eh[i], value);
            vars.alpha_eh[i] = x;
            value = y;
            trace.push(value);
        }
        if pass_start - value < lcfg.eps_a {
            break;
        }
    }

    let p_secondary: Vec<f64> = (0..n)
        .map(|i| {
            let a = vars.alpha_tx[i + 1];
            if a > 0.0 {
                cfg.pn_max.min(state.batteries[i] / a)
            } else {
                0.0
            }
        })
        .collect();
    let action =
        ActionFeasible { p0: vars.p0, alpha_tx: vars.alpha_tx, alpha_eh: vars.alpha_eh, p_secondary };
    SolveTrace { action, objective_trace: trace, passes }
}
