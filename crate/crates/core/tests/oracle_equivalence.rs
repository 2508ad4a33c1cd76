//! Backward induction against brute-force enumeration on random toy instances.

use dt_collab::oracle::{
    backward_induction, check_instance, enumerate_stopping_rules, fixed_decision_values, induced_policy_value,
    restricted_optimal_value, toy_reduction, ToyInstance,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn instance(seed: u64) -> ToyInstance {
    ToyInstance::random(&mut ChaCha8Rng::seed_from_u64(seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn induced_rule_reaches_the_enumerated_optimum(seed in any::<u64>()) {
        let inst = instance(seed);
        let check = check_instance(&inst).unwrap();
        prop_assert!(check.agreement_gap() < 1e-12, "gap {}", check.agreement_gap());
        prop_assert!((check.induction_value - check.enumeration.best_value).abs() < 1e-12);
    }

    #[test]
    fn optimum_dominates_simple_rules(seed in any::<u64>()) {
        let inst = instance(seed);
        let e = enumerate_stopping_rules(&inst).unwrap();
        prop_assert!(e.best_value >= e.always_stop - 1e-15);
        prop_assert!(e.best_value >= e.never_stop - 1e-15);
        for v in fixed_decision_values(&inst).unwrap() {
            prop_assert!(e.best_value >= v - 1e-12);
        }
    }

    #[test]
    fn fixed_decision_optimum_survives_reduction(seed in any::<u64>()) {
        let report = check_instance(&instance(seed)).unwrap().soundness;
        prop_assert!(report.sound, "{:?}", report);
    }

    #[test]
    fn restricting_to_all_layers_changes_nothing(seed in any::<u64>()) {
        let inst = instance(seed);
        let all: Vec<usize> = (inst.min_feasible..=inst.device_only()).collect();
        let v = restricted_optimal_value(&inst, &all).unwrap();
        prop_assert!((v - backward_induction(&inst).unwrap().value).abs() < 1e-12);
        let reduced = toy_reduction(&inst).unwrap();
        prop_assert!(restricted_optimal_value(&inst, &reduced.candidates).unwrap() <= v + 1e-12);
    }
}

#[test]
fn forced_device_only_has_a_single_rule() {
    let mut inst = instance(3);
    inst.min_feasible = inst.exit_index;
    let e = enumerate_stopping_rules(&inst).unwrap();
    let table = backward_induction(&inst).unwrap();
    assert!((induced_policy_value(&inst, &table) - e.best_value).abs() < 1e-12);
}

#[test]
fn shipped_instance_passes() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/toy_instance.toml");
    let inst = ToyInstance::load(path).unwrap();
    assert!(check_instance(&inst).unwrap().passed());
}

#[test]
fn malformed_instances_are_rejected() {
    let mut inst = instance(5);
    inst.u_pt.pop();
    assert!(backward_induction(&inst).is_err());
    let mut inst = instance(5);
    inst.edge_inflow[0].prob += 0.5;
    assert!(enumerate_stopping_rules(&inst).is_err());
}
