use swipt_core::env::TaskConfig;
use swipt_core::harness::{sweep_points, SweepParameter};
use swipt_core::lifelong::{LifelongAgent, LifelongConfig};
use swipt_core::pg::PGConfig;

fn main() {
    let mut base = TaskConfig::default();
    base.n_secondary = 1;
    base.horizon_t = 20;
    let pg = PGConfig { batch_size: 2, horizon_t: 20, ..Default::default() };
    let cfg = LifelongConfig::default().with_total_iterations(6);
    println!("phases: base {} warm {} burst {} polish {}", cfg.pg_base_iterations, cfg.pg_warm_iterations, cfg.burst_iterations, cfg.polish_iterations);
    let mut agent = LifelongAgent::new(cfg, pg, 0x3C ^ 1);
    for (i, p) in sweep_points(SweepParameter::EhDynamicity, &base).into_iter().enumerate() {
        println!("== task {} ({})", i + 1, p.label);
        match agent.observe_task(&p.task, p.domain_id, 1, false) {
            Ok(out) => {
                let rec = agent.records.last().unwrap();
                println!(
                    "  |rho|={:.3e} |v|={:.3e} |aleph|max={:.3e} |psi|={:.3e} |stat_x|={:.3e} |stat_y|={:.3e} |U|={:.3e} warm={} loss {:.3e} -> {:.3e}",
                    rec.rho.amax(), rec.code_v.amax(), rec.aleph.amax(),
                    agent.domains[&p.domain_id].psi.amax(),
                    agent.domains[&p.domain_id].stat_x.amax(),
                    agent.domains[&p.domain_id].stat_y.amax(),
                    agent.kb.u.amax(), out.warm_started, out.loss_before_updates, out.loss_after_updates
                );
            }
            Err(e) => {
                println!("  FAILED: {e}");
                if let Some(rec) = agent.records.last() {
                    println!("  last record |rho|={:.3e} |v|={:.3e}", rec.rho.amax(), rec.code_v.amax());
                }
                println!("  psi max {:.3e} stat_x max {:.3e}", agent.domains[&p.domain_id].psi.amax(), agent.domains[&p.domain_id].stat_x.amax());
                break;
            }
        }
    }
}
