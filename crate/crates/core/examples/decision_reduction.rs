//! Decision-space reduction at the first feasible layer, then the per-layer
//! stop rule walking the surviving candidates.

use dt_collab::cost::CostModel;
use dt_collab::decision::{reduce_with_cost, run_decision_loop, DecisionContext};
use dt_collab::profile::DnnProfile;
use dt_collab::SimConfig;

fn main() -> dt_collab::Result<()> {
    let cfg = SimConfig {
        weight_energy: 0.002,
        ..SimConfig::default()
    };
    let cost = CostModel::new(cfg.clone(), DnnProfile::default_for(&cfg));

    for queue in [0u32, 1, 3, 6] {
        for backlog_s in [0.1, 0.6, 1.5] {
            let backlog = backlog_s * cfg.edge_freq_hz;
            let r = reduce_with_cost(&cost, 0, queue, backlog)?;
            println!(
                "Q^D = {queue}, backlog {backlog_s} s: candidates {:?}{}",
                r.candidates,
                if r.device_only_eliminated { ", device-only eliminated" } else { "" }
            );
        }
    }

    // a hand-written continuation value: worth waiting while the edge is busy
    let rule = |_next: usize, _d: f64, t_eq: f64| if t_eq > 0.5 { 0.5 } else { f64::NEG_INFINITY };
    let r = reduce_with_cost(&cost, 0, 1, 0.8 * cfg.edge_freq_hz)?;
    let mut ctx = DecisionContext::reduced(1, 1, cost.device_only(), r);
    // the backlog drains as the device computes
    let observe = |l: usize| {
        let elapsed = cost.on_device_inference_delay(l).unwrap();
        let backlog = ((0.8 - elapsed).max(0.0)) * cfg.edge_freq_hz;
        (elapsed, cost.edge_queuing_delay(l, backlog).unwrap())
    };
    let decision = run_decision_loop(&mut ctx, observe, &cost, &rule)?;
    println!("\ndecision x = {} after {} evaluations", decision.x, ctx.evaluations);
    for o in &ctx.observations {
        println!(
            "  layer {}: U^lt {:.4}, continuation {:?}",
            o.layer, o.lt_utility, o.cont_value
        );
    }
    Ok(())
}
