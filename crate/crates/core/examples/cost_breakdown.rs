//! Utility of every decision as the edge backlog grows, with and without
//! the queuing delay a decision inflicts on queued tasks.

use dt_collab::cost::CostModel;
use dt_collab::profile::DnnProfile;
use dt_collab::SimConfig;

fn main() -> dt_collab::Result<()> {
    let cfg = SimConfig {
        weight_energy: 0.002,
        ..SimConfig::default()
    };
    let cost = CostModel::new(cfg.clone(), DnnProfile::default_for(&cfg));
    let queued = 2u32;

    for backlog_s in [0.0, 0.2, 0.5, 1.0] {
        let backlog = backlog_s * cfg.edge_freq_hz;
        println!("edge backlog {backlog_s} s, {queued} tasks queued on the device");
        println!("  x   delay  accuracy  energy    U       D^lq    U^lt");
        let mut best = (0, f64::NEG_INFINITY);
        for x in 0..=cost.device_only() {
            let d_lq = queued as f64 * cost.on_device_inference_delay(x)?;
            let b = cost.breakdown(x, 0.0, d_lq, backlog)?;
            println!(
                "{x:>3} {:>7.3} {:>8.2} {:>8.3} {:>7.3} {:>7.3} {:>7.3}",
                b.total_delay_s, b.accuracy, b.energy_j, b.utility, b.d_lq_s, b.lt_utility
            );
            if b.lt_utility > best.1 {
                best = (x, b.lt_utility);
            }
        }
        println!("  best long-term decision: x = {}\n", best.0);
    }
    Ok(())
}
