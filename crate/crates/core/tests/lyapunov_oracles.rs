//! Brute-force checks of the per-slot solver on single-secondary instances,
//! plus a short closed-loop sanity run.

use rand::Rng;
use swipt_core::env::{ActionFeasible, Environment, SlotState, TaskConfig};
use swipt_core::lyapunov::{per_slot_objective, solve_slot, solve_slot_traced, LyapunovConfig};
use swipt_core::rng::stream;

fn one_node_cfg() -> TaskConfig {
    let mut cfg = TaskConfig::default();
    cfg.n_secondary = 1;
    cfg
}

fn random_state(cfg: &TaskConfig, rng: &mut rand_chacha::ChaCha8Rng) -> SlotState {
    let n = cfg.n_secondary;
    SlotState {
        queues: (0..n + 1).map(|_| rng.gen_range(100.0..3.0 * cfg.arrival_max_a)).collect(),
        batteries: (0..n).map(|_| rng.gen_range(1.0..cfg.battery_cap_b)).collect(),
        comm_gain: (0..n + 1).map(|_| rng.gen_range(0.01..0.6)).collect(),
        eh_gain: (0..n).map(|_| rng.gen_range(0.01..0.3)).collect(),
        slot_index: 0,
    }
}

/// Exhaustive grid over (p0, alpha_0, alpha_1, alpha'_1) with the greedy
/// secondary-power rule, feasibility-filtered.
fn grid_oracle(state: &SlotState, cfg: &TaskConfig, lcfg: &LyapunovConfig, points: usize) -> f64 {
    let mut best = f64::INFINITY;
    for ip in 0..points {
        let p0 = cfg.p0_max * ip as f64 / (points - 1) as f64;
        for i0 in 0..points {
            let a0 = i0 as f64 / (points - 1) as f64;
            for i1 in 0..points {
                let a1 = i1 as f64 / (points - 1) as f64;
                if a0 + a1 > 1.0 {
                    break;
                }
                for ie in 0..points {
                    let ae = ie as f64 / (points - 1) as f64;
                    if a0 + a1 + ae > 1.0 {
                        break;
                    }
                    let p1 = if a1 > 0.0 { cfg.pn_max.min(state.batteries[0] / a1) } else { 0.0 };
                    let action = ActionFeasible {
                        p0,
                        alpha_tx: vec![a0, a1],
                        alpha_eh: vec![ae],
                        p_secondary: vec![p1],
                    };
                    let obj = per_slot_objective(state, &action, cfg, lcfg).unwrap();
                    if obj < best {
                        best = obj;
                    }
                }
            }
        }
    }
    best
}

#[test]
fn solver_matches_dense_grid_oracle_on_one_node_states() {
    let cfg = one_node_cfg();
    let lcfg = LyapunovConfig::default();
    let mut rng = stream(0x6E1D);
    for trial in 0..100 {
        let state = random_state(&cfg, &mut rng);
        let trace = solve_slot_traced(&state, &cfg, &lcfg);
        let solved = *trace.objective_trace.last().unwrap();
        let oracle = grid_oracle(&state, &cfg, &lcfg, 20);
        let tol = 0.02 * oracle.abs() + 1e-9;
        assert!(
            solved <= oracle + tol,
            "trial {trial}: solver {solved} worse than oracle {oracle}"
        );
    }
}

#[test]
fn block_updates_never_increase_objective_on_random_states() {
    let lcfg = LyapunovConfig::default();
    let mut rng = stream(0x6E2D);
    for n in [1usize, 2, 3] {
        let mut cfg = TaskConfig::default();
        cfg.n_secondary = n;
        for _ in 0..50 {
            let state = random_state(&cfg, &mut rng);
            let trace = solve_slot_traced(&state, &cfg, &lcfg);
            for w in trace.objective_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0));
            }
        }
    }
}

#[test]
fn short_closed_loop_keeps_queues_near_arrival_scale() {
    let cfg = TaskConfig::default(); // Domain 1 Task 1 settings
    let lcfg = LyapunovConfig::default();
    let mut env = Environment::new(cfg.clone(), 424).unwrap();
    let mut state = env.reset();
    let mut tail_queue = 0.0;
    let slots = 600;
    for t in 0..slots {
        let action = solve_slot(&state, &cfg, &lcfg);
        let out = env.step(&state, &action).unwrap();
        state = out.next_state;
        if t >= slots - 100 {
            tail_queue += state.queues.iter().sum::<f64>() / state.queues.len() as f64;
        }
    }
    let tail_mean = tail_queue / 100.0;
    let arrival_mean = cfg.arrival_rate_lambda_a * 1000.0;
    assert!(
        tail_mean < 10.0 * arrival_mean,
        "tail mean queue {tail_mean} vs arrival scale {arrival_mean}"
    );
}
