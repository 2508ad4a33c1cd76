//! Per-layer stop/continue rule and decision-space reduction.

use crate::contvalue::ContValueModel;
use crate::cost::{CostModel, OffloadDecision};
use crate::error::{Error, Result};

/// Slack used when comparing utilities so rounding never eliminates a tie.
const TOL: f64 = 1e-12;

/// Stop (offload now) iff the long-term utility of offloading is at least the
/// continuation value.
pub fn should_stop(lt_utility: f64, cont_value: f64) -> bool {
    lt_utility >= cont_value
}

/// Source of continuation values `C(l+1, D^lq_l, T^eq_l)`.
pub trait StopRule {
    fn cont_value(&self, next_layer: usize, d_lq_s: f64, t_eq_s: f64) -> Result<f64>;
}

impl StopRule for ContValueModel {
    fn cont_value(&self, next_layer: usize, d_lq_s: f64, t_eq_s: f64) -> Result<f64> {
        ContValueModel::cont_value(self, next_layer, d_lq_s, t_eq_s)
    }
}

impl<F> StopRule for F
where
    F: Fn(usize, f64, f64) -> f64,
{
    fn cont_value(&self, next_layer: usize, d_lq_s: f64, t_eq_s: f64) -> Result<f64> {
        Ok(self(next_layer, d_lq_s, t_eq_s))
    }
}

/// Inputs of the reduction for one task; vectors are indexed by decision `x`
/// over `0..=l_e+1` and only entries from `min_feasible` on are read.
#[derive(Debug, Clone)]
pub struct ReductionInput<'a> {
    pub min_feasible: usize,
    /// `Q^D` when the task first may offload.
    pub device_queue: u32,
    pub u_pt: &'a [f64],
    pub t_lc_s: &'a [f64],
    /// Utility of device-only and of offloading at `min_feasible` with the
    /// current edge backlog. The task's own queuing delay may be left out
    /// of both since it cancels.
    pub utility_device_only: f64,
    pub utility_min_feasible: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reduction {
    /// Surviving decisions in increasing order.
    pub candidates: Vec<usize>,
    /// Device-only was removed by the device-only necessary condition.
    pub device_only_eliminated: bool,
}

/// Keeps `l` in `[x̂, l_e]` only if `U^pt(l) >= U^pt(x) + Q^D (T^lc(l) - T^lc(x))`
/// for every `x` in `[x̂, l]`; if just `{x̂, l_e+1}` remain, device-only must
/// also satisfy its own necessary condition.
pub fn reduce_decision_space(input: &ReductionInput) -> Result<Reduction> {
    let device_only = input.u_pt.len() - 1;
    let xh = input.min_feasible;
    if xh > device_only || input.t_lc_s.len() != input.u_pt.len() {
        return Err(Error::DecisionOutOfRange {
            x: xh,
            min: 0,
            max: device_only,
        });
    }
    let q = input.device_queue as f64;
    let mut candidates = Vec::new();
    for l in xh..device_only {
        let keep = (xh..=l).all(|x| {
            input.u_pt[l] + TOL >= input.u_pt[x] + q * (input.t_lc_s[l] - input.t_lc_s[x])
        });
        if keep {
            candidates.push(l);
        }
    }
    candidates.push(device_only);
    let mut device_only_eliminated = false;
    if xh < device_only && candidates == [xh, device_only] {
        let need = input.utility_min_feasible + q * (input.t_lc_s[device_only] - input.t_lc_s[xh]);
        if input.utility_device_only + TOL < need {
            candidates.pop();
            device_only_eliminated = true;
            log::debug!(
                "device-only eliminated: U={} < {need} (Q^D={}, x̂={xh})",
                input.utility_device_only,
                input.device_queue
            );
        }
    }
    if candidates.is_empty() || candidates[0] != xh {
        return Err(Error::Invariant {
            seed: 0,
            slot: 0,
            message: format!("reduction dropped the minimum feasible decision {xh}"),
        });
    }
    Ok(Reduction {
        candidates,
        device_only_eliminated,
    })
}

/// Builds the reduction input from the cost model and the state at `t_{n,x̂}`.
pub fn reduce_with_cost(
    cost: &CostModel,
    min_feasible: usize,
    device_queue: u32,
    edge_backlog: f64,
) -> Result<Reduction> {
    let n = cost.device_only() + 1;
    let mut u_pt = Vec::with_capacity(n);
    let mut t_lc = Vec::with_capacity(n);
    for x in 0..n {
        u_pt.push(cost.u_pt(x)?);
        t_lc.push(cost.on_device_inference_delay(x)?);
    }
    let utility_of = |x: usize| -> Result<f64> {
        let b = cost.breakdown(x, 0.0, 0.0, edge_backlog)?;
        Ok(b.utility)
    };
    reduce_decision_space(&ReductionInput {
        min_feasible,
        device_queue,
        u_pt: &u_pt,
        t_lc_s: &t_lc,
        utility_device_only: utility_of(cost.device_only())?,
        utility_min_feasible: utility_of(min_feasible)?,
    })
}

/// What the controller saw at one decision slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepObservation {
    pub layer: usize,
    pub d_lq_s: f64,
    pub t_eq_s: f64,
    pub lt_utility: f64,
    pub cont_value: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Stop,
    Continue,
    /// The layer was eliminated; the device keeps computing without a check.
    Skipped,
}

/// Decision state of the task currently on the compute unit.
#[derive(Debug, Clone)]
pub struct DecisionContext {
    pub task_index: usize,
    pub min_feasible: usize,
    pub device_queue_at_start: u32,
    pub candidates: Vec<usize>,
    pub device_only_eliminated: bool,
    pub observations: Vec<StepObservation>,
    pub evaluations: u32,
    device_only: usize,
}

impl DecisionContext {
    /// Context with every decision in `[x̂, l_e+1]` available.
    pub fn unreduced(task_index: usize, min_feasible: usize, device_queue: u32, device_only: usize) -> Self {
        Self {
            task_index,
            min_feasible,
            device_queue_at_start: device_queue,
            candidates: (min_feasible..=device_only).collect(),
            device_only_eliminated: false,
            observations: Vec::new(),
            evaluations: 0,
            device_only,
        }
    }

    pub fn reduced(task_index: usize, device_queue: u32, device_only: usize, r: Reduction) -> Self {
        Self {
            task_index,
            min_feasible: r.candidates[0],
            device_queue_at_start: device_queue,
            candidates: r.candidates,
            device_only_eliminated: r.device_only_eliminated,
            observations: Vec::new(),
            evaluations: 0,
            device_only,
        }
    }

    /// Handles decision slot `t_{n,l}` for `x̂ <= l <= l_e`.
    pub fn step<R: StopRule + ?Sized>(
        &mut self,
        layer: usize,
        d_lq_s: f64,
        t_eq_s: f64,
        cost: &CostModel,
        rule: &R,
    ) -> Result<StepOutcome> {
        if layer < self.min_feasible || layer >= self.device_only {
            return Err(Error::DecisionOutOfRange {
                x: layer,
                min: self.min_feasible,
                max: self.device_only - 1,
            });
        }
        if !self.candidates.contains(&layer) {
            return Ok(StepOutcome::Skipped);
        }
        let lt_utility = cost.lt_utility(layer, d_lq_s, t_eq_s)?;
        let last = self.candidates.iter().all(|&c| c <= layer);
        if last {
            // nothing left to continue towards
            self.observations.push(StepObservation {
                layer,
                d_lq_s,
                t_eq_s,
                lt_utility,
                cont_value: None,
            });
            return Ok(StepOutcome::Stop);
        }
        let c = rule.cont_value(layer + 1, d_lq_s, t_eq_s)?;
        self.evaluations += 1;
        self.observations.push(StepObservation {
            layer,
            d_lq_s,
            t_eq_s,
            lt_utility,
            cont_value: Some(c),
        });
        Ok(if should_stop(lt_utility, c) {
            StepOutcome::Stop
        } else {
            StepOutcome::Continue
        })
    }
}

/// Runs the loop over precomputed per-layer observations `(D^lq_l, T^eq_l)`
/// indexed by layer; returns the decision.
pub fn run_decision_loop<R: StopRule + ?Sized>(
    ctx: &mut DecisionContext,
    observe: impl Fn(usize) -> (f64, f64),
    cost: &CostModel,
    rule: &R,
) -> Result<OffloadDecision> {
    let device_only = cost.device_only();
    for l in ctx.min_feasible..device_only {
        let (d, t) = observe(l);
        if ctx.step(l, d, t, cost, rule)? == StepOutcome::Stop {
            return OffloadDecision::new(l, ctx.min_feasible, &cost.profile);
        }
    }
    OffloadDecision::new(device_only, ctx.min_feasible, &cost.profile)
}
