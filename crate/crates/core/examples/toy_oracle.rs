//! Exact optimal stopping on small random instances: backward induction,
//! the rule it induces, and brute force over every stopping rule.

use dt_collab::oracle::{backward_induction, check_instance, fixed_decision_values, ToyInstance};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> dt_collab::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for i in 0..8 {
        let inst = ToyInstance::random(&mut rng);
        let check = check_instance(&inst)?;
        let fixed = fixed_decision_values(&inst)?;
        println!(
            "#{i}: l_e={} x̂={} rules={:>6} optimum {:.6} gap {:.1e} | fixed {:?} | kept {:?} {}",
            inst.exit_index,
            inst.min_feasible,
            check.enumeration.rule_count,
            check.enumeration.best_value,
            check.agreement_gap(),
            fixed.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>(),
            check.soundness.candidates,
            if check.passed() { "ok" } else { "MISMATCH" }
        );
    }

    let inst = ToyInstance::random(&mut ChaCha8Rng::seed_from_u64(5));
    let table = backward_induction(&inst)?;
    println!("\ncontinuation values of one instance:");
    for (k, level) in table.tables.iter().enumerate() {
        for (state, c) in level.iter().take(4) {
            println!("  layer {} state {state:?}: C = {c:.5}", table.min_feasible + k);
        }
    }
    Ok(())
}
