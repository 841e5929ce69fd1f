//! End-to-end behavior of the lifelong learner over the two-domain task
//! sequence: finiteness, domain isolation, and the per-task loss check
//! around the (code -> projection -> base) updates.

use swipt_core::harness::table2_sequence;
use swipt_core::lifelong::{LifelongAgent, LifelongConfig};
use swipt_core::pg::PGConfig;

fn quick_agent() -> LifelongAgent {
    let pg = PGConfig { batch_size: 4, horizon_t: 50, ..Default::default() };
    let cfg = LifelongConfig {
        pg_warm_iterations: 4,
        pg_base_iterations: 6,
        burst_iterations: 2,
        polish_iterations: 2,
        ..Default::default()
    };
    LifelongAgent::new(cfg, pg, 0x515)
}

#[test]
fn full_table2_sequence_stays_finite_and_loss_does_not_increase() {
    let mut agent = quick_agent();
    let mut warm_flags = Vec::new();
    for dom in table2_sequence() {
        for task in &dom.tasks {
            let out = agent.observe_task(task, dom.domain.domain_id, 99, false).unwrap();
            warm_flags.push(out.warm_started);
            assert!(
                out.loss_after_updates <= out.loss_before_updates * (1.0 + 1e-9) + 1e-9,
                "task {}: loss went {} -> {}",
                out.task_id,
                out.loss_before_updates,
                out.loss_after_updates
            );
            assert!(agent.kb.u.iter().all(|x| x.is_finite()));
            for proj in agent.domains.values() {
                assert!(proj.psi.iter().all(|x| x.is_finite()));
                assert!(proj.stat_x.iter().all(|x| x.is_finite()));
                assert!(proj.stat_y.iter().all(|x| x.is_finite()));
            }
            for rec in &agent.records {
                assert!(rec.rho.iter().all(|x| x.is_finite()));
                assert!(rec.code_v.iter().all(|x| x.is_finite()));
            }
        }
    }
    assert_eq!(agent.records.len(), 8);
    assert_eq!(warm_flags, vec![false, true, true, true, false, true, true, true]);
}

#[test]
fn cross_domain_updates_keep_other_domain_untouched() {
    let mut agent = quick_agent();
    let seq = table2_sequence();
    // One task in each domain, then another in domain 2.
    agent.observe_task(&seq[0].tasks[0], 1, 5, false).unwrap();
    agent.observe_task(&seq[1].tasks[0], 2, 6, false).unwrap();
    let psi1 = agent.domains[&1].psi.clone();
    let stats1 = (agent.domains[&1].stat_x.clone(), agent.domains[&1].stat_y.clone());
    agent.observe_task(&seq[1].tasks[1], 2, 7, false).unwrap();
    assert_eq!(agent.domains[&1].psi, psi1);
    assert_eq!(agent.domains[&1].stat_x, stats1.0);
    assert_eq!(agent.domains[&1].stat_y, stats1.1);
}
