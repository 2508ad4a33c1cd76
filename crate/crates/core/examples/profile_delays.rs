//! The layer profile: FLOPs, feature sizes, slot-rounded device delays and
//! the per-decision costs that do not depend on the queues.
//!
//! ```text
//! cargo run --example profile_delays [-- path/to/profile.toml]
//! ```

use dt_collab::cost::CostModel;
use dt_collab::profile::{DnnProfile, ProfileSpec};
use dt_collab::SimConfig;

fn main() -> dt_collab::Result<()> {
    let cfg = SimConfig {
        weight_energy: 0.002,
        ..SimConfig::default()
    };
    let profile = match std::env::args().nth(1) {
        Some(path) => DnnProfile::from_spec(&ProfileSpec::load(path)?, &cfg)?,
        None => DnnProfile::default_for(&cfg),
    };

    println!("{:<16} {:>12} {:>12} {:>6} {:>10}", "layer", "flops", "out bits", "slots", "edge s");
    for (i, layer) in profile.layers().iter().enumerate() {
        let slots = if i < profile.exit_index() {
            profile.device_slots(i + 1).to_string()
        } else {
            "-".into()
        };
        println!(
            "{:<16} {:>12.3e} {:>12.3e} {:>6} {:>10.5}",
            layer.name,
            layer.flops,
            layer.output_bits,
            slots,
            profile.edge_delay_s(i + 1)
        );
    }
    let exit = profile.exit_branch();
    println!(
        "{:<16} {:>12.3e} {:>12.3e} {:>6}",
        exit.name,
        exit.flops,
        exit.output_bits,
        profile.device_slots(profile.device_only())
    );

    let cost = CostModel::new(cfg, profile);
    println!();
    println!("  x  local s  upload s  edge s   energy J   U^pt");
    for x in 0..=cost.device_only() {
        println!(
            "{x:>3} {:>8.3} {:>9.5} {:>7.4} {:>10.4} {:>8.5}",
            cost.on_device_inference_delay(x)?,
            cost.upload_delay(x)?,
            cost.edge_inference_delay(x)?,
            cost.energy_of(x)?,
            cost.u_pt(x)?
        );
    }
    Ok(())
}
