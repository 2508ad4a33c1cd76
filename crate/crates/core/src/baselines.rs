//! One-time benchmark policies that fix the decision once, when the task
//! reaches the compute unit.

use crate::cost::{CostModel, OffloadDecision};
use crate::error::Result;
use crate::twin::TwinSnapshot;

/// Observable state when the task leaves the device queue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineState {
    pub min_feasible: usize,
    pub t_lq_s: f64,
    pub device_queue: u32,
    pub edge_backlog: f64,
}

/// First maximiser of `score` over `[x̂, l_e+1]`, so ties go to the smaller decision.
fn argmax(cost: &CostModel, min_feasible: usize, score: impl Fn(usize) -> Result<f64>) -> Result<OffloadDecision> {
    let mut best = (min_feasible, score(min_feasible)?);
    for x in min_feasible + 1..=cost.device_only() {
        let v = score(x)?;
        if v > best.1 {
            best = (x, v);
        }
    }
    OffloadDecision::new(best.0, min_feasible, &cost.profile)
}

/// Maximises the task's own utility with the current backlogs held fixed.
pub fn one_time_greedy(state: &BaselineState, cost: &CostModel) -> Result<OffloadDecision> {
    argmax(cost, state.min_feasible, |x| {
        Ok(cost.breakdown(x, state.t_lq_s, 0.0, state.edge_backlog)?.utility)
    })
}

/// Maximises the long-term utility, projecting the inflicted queuing delay
/// as the current queue length times the on-device time.
pub fn one_time_long_term(state: &BaselineState, cost: &CostModel) -> Result<OffloadDecision> {
    argmax(cost, state.min_feasible, |x| {
        let d_lq = state.device_queue as f64 * cost.on_device_inference_delay(x)?;
        Ok(cost.breakdown(x, state.t_lq_s, d_lq, state.edge_backlog)?.lt_utility)
    })
}

/// Realised long-term utility of every decision from a rollout over the
/// actual future inflows; indexed by `x`, entries below `x̂` are `-inf`.
pub fn realized_lt_utilities(rollout: &TwinSnapshot, min_feasible: usize, cost: &CostModel) -> Result<Vec<f64>> {
    let dt = cost.cfg.slot_duration_s;
    let mut out = vec![f64::NEG_INFINITY; cost.device_only() + 1];
    for (x, slot) in out.iter_mut().enumerate().skip(min_feasible) {
        let d_lq = rollout.d_lq_slots(x)? as f64 * dt;
        let t_eq = if x == cost.device_only() {
            0.0
        } else {
            cost.edge_queuing_delay(x, rollout.backlog_at_layer(x)?)?
        };
        *slot = cost.lt_utility(x, d_lq, t_eq)?;
    }
    Ok(out)
}

/// Picks the decision with the best realised long-term utility.
pub fn one_time_ideal(min_feasible: usize, realized: &[f64], cost: &CostModel) -> Result<OffloadDecision> {
    argmax(cost, min_feasible, |x| Ok(realized[x]))
}
