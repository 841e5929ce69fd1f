use swipt_core::env::Environment;
use swipt_core::harness::*;
use swipt_core::pg::{train_iteration, CriticParams, LinearGaussianPolicy, PGConfig};
use swipt_core::rng::{derive_seed, stream};
use std::collections::BTreeSet;
use std::time::Instant;

fn main() {
    let t0 = Instant::now();
    let seq = table2_sequence();
    let d1 = &seq[0];
    let cfgs = ControllerConfigs::default();

    // Criterion 6 shape: PG on D1T1, 50 iterations, 5 seeds
    let mut first = vec![];
    let mut last = vec![];
    for seed in 1..=5u64 {
        let task = &d1.tasks[0];
        let dcfg = task.domain(1);
        let mut env = Environment::new(task.clone(), derive_seed(seed, &[1])).unwrap();
        let mut rng = stream(derive_seed(seed, &[2]));
        let mut policy = LinearGaussianPolicy::new_zero(dcfg, cfgs.pg.sigma_init);
        let mut critic = CriticParams::new_zero(dcfg.state_dim);
        let mut series = vec![];
        for _ in 0..50 {
            let m = train_iteration(&mut policy, &mut critic, &mut env, &cfgs.pg, &mut rng, false).unwrap();
            series.push(m.avg_reward);
        }
        println!("seed {seed}: iter1 {:.3} iter10 {:.3} iter25 {:.3} final {:.3} conv {}", series[0], series[9], series[24], series[49], convergence_iterations(&series, 0.95, 5).unwrap());
        first.push(series[0]);
        last.push(series[49]);
    }
    println!("C6: median first {:.3} median final {:.3}  [{:?}]", median(&first).unwrap(), median(&last).unwrap(), t0.elapsed());

    // Criterion 7 shape: cdl2rl D1 T1..T4 vs cold PG on T4
    let spec = ExperimentSpec {
        name: "c7".into(),
        domain_sequence: vec![d1.clone()],
        controllers: vec![Controller::PgRl, Controller::CdL2rl],
        seeds: (1..=5).collect(),
        iterations: 50,
        metrics: BTreeSet::from([MetricKind::AvgReward]),
    };
    let mut ratios = vec![];
    let mut cd_all = vec![];
    let mut pg_all = vec![];
    for seed in 1..=5u64 {
        let cd = run_sequential(&spec, Controller::CdL2rl, seed, &cfgs).unwrap();
        let pg = run_sequential(&spec, Controller::PgRl, seed, &cfgs).unwrap();
        let cd_series = extract_series(&cd.rows, Controller::CdL2rl, 1, 4, seed, |r| r.avg_reward);
        let pg_series = extract_series(&pg.rows, Controller::PgRl, 1, 4, seed, |r| r.avg_reward);
        let cd_conv = convergence_iterations(&cd_series, 0.95, 5).unwrap();
        let pg_conv = convergence_iterations(&pg_series, 0.95, 5).unwrap();
        println!("seed {seed}: cd_conv {cd_conv} pg_conv {pg_conv} | cd t4 first {:.2} last {:.2} | pg t4 first {:.2} last {:.2}",
            cd_series[0], cd_series.last().unwrap(), pg_series[0], pg_series.last().unwrap());
        ratios.push((cd_conv, pg_conv));
        cd_all.push(cd_conv as f64);
        pg_all.push(pg_conv as f64);
    }
    let better = ratios.iter().filter(|(c, p)| c < p).count();
    println!("C7: median cd {} median pg {} ratio {:.3} better {}/5  [{:?}]",
        median(&cd_all).unwrap(), median(&pg_all).unwrap(),
        median(&cd_all).unwrap() / median(&pg_all).unwrap(), better, t0.elapsed());
}
