//! On-device queue: waiting times from the queuing recursion and the delay
//! each task inflicts on the ones behind it.
//!
//! ```text
//! cargo run --example queue_dynamics
//! ```

use dt_collab::cost::{long_term_queuing_slots, QueueTrace};
use dt_collab::profile::DnnProfile;
use dt_collab::sim::{step_device_queue, DeviceQueueState};
use dt_collab::SimConfig;

fn main() -> dt_collab::Result<()> {
    let cfg = SimConfig::default();
    let profile = DnnProfile::default_for(&cfg);

    // five tasks, decisions chosen by hand
    let gen = vec![0, 10, 15, 40, 41];
    let decisions = [3, 1, 0, 2, 3];
    let lc: Vec<u64> = decisions.iter().map(|&x| profile.cumulative_device_slots(x)).collect();
    let trace = QueueTrace::new(gen.clone(), lc.clone())?;
    let t_lq = trace.t_lq_slots();

    println!("task  gen  x  lc  wait  inflicted-on-later");
    for n in 0..trace.len() {
        let caused: u64 = (n + 1..trace.len()).map(|m| trace.pairwise_slots(n, m, &t_lq)).sum();
        println!(
            "{n:>4} {:>4} {:>2} {:>3} {:>5} {:>6}",
            gen[n], decisions[n], lc[n], t_lq[n], caused
        );
    }
    let waits: u64 = t_lq.iter().sum();
    let caused: u64 = (0..trace.len())
        .flat_map(|m| (0..trace.len()).map(move |n| (m, n)))
        .map(|(m, n)| trace.pairwise_slots(m, n, &t_lq))
        .sum();
    println!("total waiting {waits} slots = total inflicted {caused} slots");

    // the same queue slot by slot
    let mut state = DeviceQueueState::empty(0);
    let mut qd = Vec::new();
    let end = gen.last().unwrap() + t_lq.last().unwrap() + lc.last().unwrap();
    for t in 1..=end {
        let arrived = gen.iter().filter(|&&g| g == t).count() as u32;
        let departed = (0..trace.len()).filter(|&n| gen[n] + t_lq[n] == t).count() as u32;
        state = step_device_queue(&state, arrived, departed)?;
        qd.push(state.queue_len);
    }
    let n = 1;
    let from = (gen[n] + t_lq[n]) as usize - 1;
    let window = long_term_queuing_slots(&qd[from..from + lc[n] as usize]);
    println!("task {n}: queue summed over its execution window = {window} slots");
    Ok(())
}
