//! Environment law checks over large randomized step batches, plus the
//! feasibility-closure and determinism properties.

use proptest::prelude::*;
use rand::Rng;
use swipt_core::env::{
    project_feasible, ActionFeasible, Environment, SecondaryPowerMode, SlotState, TaskConfig,
};
use swipt_core::rng::stream;

fn random_state(cfg: &TaskConfig, rng: &mut rand_chacha::ChaCha8Rng) -> SlotState {
    let n = cfg.n_secondary;
    SlotState {
        queues: (0..n + 1).map(|_| rng.gen_range(0.0..5.0 * cfg.arrival_max_a)).collect(),
        batteries: (0..n).map(|_| rng.gen_range(0.0..cfg.battery_cap_b)).collect(),
        comm_gain: (0..n + 1).map(|_| rng.gen_range(0.0..3.0 * cfg.comm_scale_zeta)).collect(),
        eh_gain: (0..n).map(|_| rng.gen_range(0.0..3.0 * cfg.eh_scale_zeta_prime)).collect(),
        slot_index: 0,
    }
}

fn random_raw(cfg: &TaskConfig, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<f64> {
    let len = match cfg.secondary_power_mode {
        SecondaryPowerMode::Greedy => 2 * cfg.n_secondary + 2,
        SecondaryPowerMode::Learned => 3 * cfg.n_secondary + 2,
    };
    (0..len).map(|_| rng.gen_range(-8.0..8.0)).collect()
}

#[test]
fn queue_and_battery_laws_hold_over_random_steps() {
    let mut rng = stream(0xBEEF);
    for n in [1usize, 2, 4] {
        let mut cfg = TaskConfig::default();
        cfg.n_secondary = n;
        let mut env = Environment::new(cfg.clone(), 1000 + n as u64).unwrap();
        for _ in 0..4000 {
            let state = random_state(&cfg, &mut rng);
            let raw = random_raw(&cfg, &mut rng);
            let action = project_feasible(&cfg, &state, &raw).unwrap();
            let out = env.step(&state, &action).unwrap();

            // Queue law, mirrored bit-for-bit (then the buffer clamp).
            for i in 0..=n {
                let expected = ((state.queues[i] - out.served_bits[i]).max(0.0) + out.arrivals[i])
                    .min(cfg.buffer_cap_rho);
                assert_eq!(out.next_state.queues[i], expected);
            }

            // Battery bookkeeping: pre-clamp delta equals harvest - draw.
            for i in 0..n {
                let pre_clamp = out.next_state.batteries[i] + out.battery_overflow_mj[i];
                let delta = pre_clamp - state.batteries[i];
                assert!(
                    (delta - (out.harvested_mj[i] - out.consumed_mj[i + 1])).abs() <= 1e-9,
                    "battery delta {delta}"
                );
                assert!(out.next_state.batteries[i] >= 0.0);
                assert!(out.next_state.batteries[i] <= cfg.battery_cap_b);
                // Energy causality against the prior state.
                assert!(out.consumed_mj[i + 1] <= state.batteries[i] + 1e-9);
            }
            assert!(out.harvested_mj.iter().all(|x| *x >= 0.0));
            assert!(out.consumed_mj.iter().all(|x| *x >= 0.0));
            assert!(out.battery_overflow_mj.iter().all(|x| *x >= 0.0));
        }
    }
}

#[test]
fn projection_feasibility_closure_over_random_inputs() {
    let mut rng = stream(0xF00D);
    for mode in [SecondaryPowerMode::Greedy, SecondaryPowerMode::Learned] {
        let mut cfg = TaskConfig::default();
        cfg.secondary_power_mode = mode;
        for _ in 0..5000 {
            let state = random_state(&cfg, &mut rng);
            let raw = random_raw(&cfg, &mut rng);
            let action = project_feasible(&cfg, &state, &raw).unwrap();
            action.validate(&state, &cfg).unwrap();
            let total: f64 =
                action.alpha_tx.iter().sum::<f64>() + action.alpha_eh.iter().sum::<f64>();
            assert!(total <= 1.0);
            for i in 0..cfg.n_secondary {
                assert!(action.p_secondary[i] * action.alpha_tx[i + 1] <= state.batteries[i] + 1e-12);
            }
        }
    }
}

#[test]
fn identical_seed_and_actions_reproduce_outcomes_bit_exactly() {
    let cfg = TaskConfig::default();
    let mut env_a = Environment::new(cfg.clone(), 77).unwrap();
    let mut env_b = Environment::new(cfg.clone(), 77).unwrap();
    let mut rng = stream(0xD00D);
    let mut state_a = env_a.reset();
    let mut state_b = env_b.reset();
    assert_eq!(state_a, state_b);
    for _ in 0..500 {
        let raw = random_raw(&cfg, &mut rng);
        let action_a = project_feasible(&cfg, &state_a, &raw).unwrap();
        let action_b = project_feasible(&cfg, &state_b, &raw).unwrap();
        let out_a = env_a.step(&state_a, &action_a).unwrap();
        let out_b = env_b.step(&state_b, &action_b).unwrap();
        assert_eq!(out_a, out_b);
        state_a = out_a.next_state;
        state_b = out_b.next_state;
    }
}

proptest! {
    #[test]
    fn step_never_breaks_caps(seed in any::<u64>(), n in 1usize..5) {
        let mut cfg = TaskConfig::default();
        cfg.n_secondary = n;
        let mut rng = stream(seed);
        let mut env = Environment::new(cfg.clone(), seed).unwrap();
        let mut state = env.reset();
        for _ in 0..20 {
            let raw = random_raw(&cfg, &mut rng);
            let action = project_feasible(&cfg, &state, &raw).unwrap();
            let out = env.step(&state, &action).unwrap();
            for q in &out.next_state.queues {
                prop_assert!(*q >= 0.0 && *q <= cfg.buffer_cap_rho);
            }
            for b in &out.next_state.batteries {
                prop_assert!(*b >= 0.0 && *b <= cfg.battery_cap_b);
            }
            prop_assert!(out.reward.is_finite());
            state = out.next_state;
        }
    }

    #[test]
    fn idle_consumes_nothing(seed in any::<u64>()) {
        let cfg = TaskConfig::default();
        let mut env = Environment::new(cfg.clone(), seed).unwrap();
        let state = env.reset();
        let out = env.step(&state, &ActionFeasible::idle(cfg.n_secondary)).unwrap();
        prop_assert_eq!(out.consumed_mj.iter().sum::<f64>(), 0.0);
        prop_assert_eq!(out.harvested_mj.iter().sum::<f64>(), 0.0);
    }
}
