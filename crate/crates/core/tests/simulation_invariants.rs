//! Properties of whole simulation runs on short random configurations.

use dt_collab::profile::DnnProfile;
use dt_collab::sim::edge_load_to_lambda;
use dt_collab::simulation::{simulate, Policy, RunOptions};
use dt_collab::SimConfig;
use proptest::prelude::*;

fn config(seed: u64, rate: f64, load: f64, tasks: usize) -> SimConfig {
    let mut cfg = SimConfig {
        rng_seed: seed,
        device_task_prob: rate * 0.01,
        train_task_count: tasks / 2,
        eval_task_count: tasks - tasks / 2,
        weight_energy: 0.002,
        ..SimConfig::default()
    };
    cfg.edge_arrival_rate = edge_load_to_lambda(load, &cfg);
    cfg
}

fn policy() -> impl Strategy<Value = Policy> {
    prop::sample::select(Policy::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn every_run_keeps_its_invariants(
        seed in 0u64..1000,
        rate in 0.5f64..3.0,
        load in 0.0f64..1.2,
        policy in policy(),
    ) {
        let cfg = config(seed, rate, load, 60);
        let profile = DnnProfile::default_for(&cfg);
        let run = simulate(&cfg, &profile, policy, RunOptions::default()).unwrap();
        prop_assert!(run.completed);
        prop_assert_eq!(run.tasks.len(), 60);
        let (u, lt) = run.utility_sums();
        prop_assert!((u - lt).abs() <= 1e-6 * u.abs().max(lt.abs()).max(1.0));
        prop_assert_eq!(run.full_twin_checks + run.prefix_twin_checks, 60);
        let device_only = profile.device_only();
        let local = run.tasks.iter().filter(|t| t.decision == device_only).count();
        prop_assert_eq!(run.full_twin_checks, local);
        for t in &run.tasks {
            prop_assert!(t.decision >= t.min_feasible && t.decision <= device_only);
            prop_assert_eq!(t.lc_slots, profile.cumulative_device_slots(t.decision));
            prop_assert_eq!(t.start_slot, t.gen_slot + t.t_lq_slots);
            prop_assert!(t.cost.total_delay_s.is_finite() && t.cost.total_delay_s >= 0.0);
            prop_assert!(t.cost.t_eq_s >= 0.0);
            if t.decision == device_only {
                prop_assert_eq!(t.cost.accuracy, cfg.acc_shallow);
                prop_assert_eq!(t.cost.t_eq_s, 0.0);
            } else {
                prop_assert_eq!(t.cost.accuracy, cfg.acc_full);
            }
            if !policy.is_learned() {
                prop_assert_eq!(t.evaluations, 0);
            }
        }
    }

    #[test]
    fn sample_counts_follow_the_augmentation_rule(seed in 0u64..1000, rate in 0.5f64..3.0) {
        let cfg = config(seed, rate, 0.9, 40);
        let profile = DnnProfile::default_for(&cfg);
        let per_task = profile.exit_index() + 1;
        let aug = simulate(&cfg, &profile, Policy::Proposed, RunOptions::default()).unwrap();
        for (k, &n) in aug.training_samples.iter().enumerate() {
            prop_assert_eq!(n, per_task * (k + 1));
        }
        let plain = simulate(&cfg, &profile, Policy::ProposedNoAugment, RunOptions::default()).unwrap();
        let mut expected = 0;
        for (k, t) in plain.tasks.iter().take(cfg.train_task_count).enumerate() {
            expected += if t.decision == profile.device_only() { per_task } else { t.decision };
            prop_assert_eq!(plain.training_samples[k], expected);
        }
    }

    #[test]
    fn policies_share_the_arrival_trace(seed in 0u64..1000, a in policy(), b in policy()) {
        let cfg = config(seed, 2.0, 0.9, 30);
        let profile = DnnProfile::default_for(&cfg);
        let ra = simulate(&cfg, &profile, a, RunOptions::default()).unwrap();
        let rb = simulate(&cfg, &profile, b, RunOptions::default()).unwrap();
        let ga: Vec<u64> = ra.tasks.iter().map(|t| t.gen_slot).collect();
        let gb: Vec<u64> = rb.tasks.iter().map(|t| t.gen_slot).collect();
        prop_assert_eq!(ga, gb);
    }
}

#[test]
fn ideal_is_never_worse_than_the_long_term_rule_on_average() {
    let cfg = config(42, 1.5, 0.9, 400);
    let profile = DnnProfile::default_for(&cfg);
    let mean = |p| {
        let r = simulate(&cfg, &profile, p, RunOptions::default()).unwrap();
        let (u, _) = r.utility_sums();
        u / r.tasks.len() as f64
    };
    assert!(mean(Policy::OneTimeIdeal) >= mean(Policy::OneTimeLongTerm));
}

#[test]
fn horizon_cuts_the_run_short() {
    let mut cfg = config(1, 1.0, 0.9, 200);
    cfg.horizon_slots = Some(500);
    let profile = DnnProfile::default_for(&cfg);
    let run = simulate(&cfg, &profile, Policy::OneTimeGreedy, RunOptions::default()).unwrap();
    assert!(!run.completed);
    assert!(run.tasks.len() < 200);
}
