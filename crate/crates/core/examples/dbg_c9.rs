use swipt_core::env::TaskConfig;
use swipt_core::harness::*;
use std::time::Instant;

fn main() {
    let t0 = Instant::now();
    let base = TaskConfig::default();
    let cfgs = ControllerConfigs::default();
    let controllers = [Controller::Lyapunov, Controller::PgRl, Controller::CdL2rl];
    let seeds: Vec<u64> = (1..=5).collect();
    let out = sweep(SweepParameter::ConvEff, &base, &controllers, &seeds, 50, &cfgs).unwrap();
    for point in ["0.2", "0.4", "0.6", "0.8", "1"] {
        let med = |c: Controller| {
            let vals: Vec<f64> = out
                .rows
                .iter()
                .filter(|r| r.controller == c && r.point == point)
                .map(|r| r.converged_avg_energy_mj)
                .collect();
            median(&vals).unwrap()
        };
        let (ly, pg, cd) = (med(Controller::Lyapunov), med(Controller::PgRl), med(Controller::CdL2rl));
        println!(
            "lambda {point}: lyapunov {ly:.4} pgrl {pg:.4} cdl2rl {cd:.4} | cd/pg {:.3} {}",
            cd / pg,
            if cd <= 1.05 * pg { "OK" } else { "VIOLATION" }
        );
    }
    println!("elapsed {:?}", t0.elapsed());
}
