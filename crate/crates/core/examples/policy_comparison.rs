//! Every policy on the same arrival traces; prints per-policy means and the
//! CSV rows.
//!
//! ```text
//! cargo run --release --example policy_comparison -- [tasks/s] [seeds]
//! ```

use dt_collab::experiment::{run_experiment, write_csv, ExperimentSpec, SweepPoint};
use dt_collab::simulation::Policy;
use dt_collab::SimConfig;

fn main() -> dt_collab::Result<()> {
    let mut args = std::env::args().skip(1);
    let rate: f64 = args.next().map_or(1.0, |s| s.parse().expect("rate"));
    let seeds: u64 = args.next().map_or(3, |s| s.parse().expect("seed count"));
    let sim = SimConfig {
        weight_energy: 0.002,
        train_task_count: 1000,
        eval_task_count: 3000,
        ..SimConfig::default()
    };
    let mut spec = ExperimentSpec::new(sim, Policy::ALL.to_vec(), (1..=seeds).collect());
    spec.sweep = vec![SweepPoint {
        device_task_rate: rate,
        edge_load: 0.9,
    }];
    let metrics = run_experiment(&spec)?;

    println!("{:<22} {:>8} {:>8} {:>8} {:>8} {:>6}", "policy", "U", "delay", "acc", "energy", "evals");
    for p in Policy::ALL {
        let rows: Vec<_> = metrics.iter().filter(|m| m.policy == p).collect();
        let mean = |f: &dyn Fn(&&dt_collab::experiment::RunMetrics) -> f64| {
            rows.iter().map(f).sum::<f64>() / rows.len() as f64
        };
        println!(
            "{:<22} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>6.3}",
            p.name(),
            mean(&|m| m.mean_utility),
            mean(&|m| m.mean_delay_s),
            mean(&|m| m.mean_accuracy),
            mean(&|m| m.mean_energy_j),
            mean(&|m| m.decision_evaluations)
        );
    }
    println!();
    write_csv(&metrics, std::io::stdout().lock())
}
