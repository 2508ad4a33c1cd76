//! Exact oracles on tiny single-task instances: backward induction over the
//! Markov state and brute-force enumeration of every stopping rule over the
//! outcome tree.
//!
//! Every layer takes one slot, the edge backlog is counted in whole slots of
//! edge capacity, and the decision starts at layer `x̂` in a known state.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::decision::{reduce_decision_space, should_stop, Reduction, ReductionInput};
use crate::error::{Error, Result};

/// Cap on enumerated leaves and stopping rules per instance.
pub const MAX_OUTCOMES: usize = 1_000_000;
pub const MAX_RULES: usize = 2_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InflowPoint {
    /// Background edge work arriving in one slot, in slots of edge capacity.
    pub buckets: u32,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyInstance {
    pub exit_index: usize,
    pub min_feasible: usize,
    pub slot_s: f64,
    pub device_prob: f64,
    pub edge_inflow: Vec<InflowPoint>,
    /// `Q^D` at `t_{x̂}`.
    pub device_queue: u32,
    /// `Q^E(t_{x̂})` in slots of edge capacity.
    pub edge_buckets: u32,
    /// Queue-slots accumulated over the layers before `x̂`.
    pub d_lq_slots: u32,
    /// `U^pt(x)` for `x = 0..=l_e+1`.
    pub u_pt: Vec<f64>,
    pub acc_full: f64,
    pub acc_shallow: f64,
    pub weight_acc: f64,
}

/// `(Q^D, Q^E buckets, accumulated queue-slots)` at a decision slot.
pub type ToyState = (u32, u32, u32);

#[derive(Debug, Clone, Copy, PartialEq)]
struct Outcome {
    arrived: u32,
    buckets: u32,
    prob: f64,
}

impl ToyInstance {
    pub fn device_only(&self) -> usize {
        self.exit_index + 1
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let inst: Self = toml::from_str(&text).map_err(|e| Error::parse(path, e))?;
        inst.validate()?;
        Ok(inst)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("instance serialises")
    }

    fn outcomes(&self) -> Vec<Outcome> {
        let mut out = Vec::new();
        for (arrived, pa) in [(0, 1.0 - self.device_prob), (1, self.device_prob)] {
            for w in &self.edge_inflow {
                let prob = pa * w.prob;
                if prob > 0.0 {
                    out.push(Outcome {
                        arrived,
                        buckets: w.buckets,
                        prob,
                    });
                }
            }
        }
        out
    }

    fn depth(&self) -> usize {
        self.device_only() - self.min_feasible
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Oracle(m));
        if !(1..=2).contains(&self.exit_index) {
            return bad(format!("exit_index {} outside 1..=2", self.exit_index));
        }
        if self.min_feasible > self.exit_index {
            return bad("min_feasible must not exceed exit_index".into());
        }
        if self.u_pt.len() != self.device_only() + 1 {
            return bad(format!("u_pt needs {} entries", self.device_only() + 1));
        }
        if !(0.0..=1.0).contains(&self.device_prob) {
            return bad("device_prob outside [0, 1]".into());
        }
        if self.edge_inflow.is_empty() || self.edge_inflow.iter().any(|w| !(w.prob >= 0.0)) {
            return bad("edge inflow support must be a non-empty distribution".into());
        }
        let total: f64 = self.edge_inflow.iter().map(|w| w.prob).sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("edge inflow probabilities sum to {total}"));
        }
        if !(self.slot_s > 0.0) {
            return bad("slot_s must be positive".into());
        }
        let leaves = (self.outcomes().len() as f64).powi(self.depth() as i32);
        if leaves > MAX_OUTCOMES as f64 {
            return bad(format!("outcome tree has {leaves} leaves"));
        }
        Ok(())
    }

    pub fn start(&self) -> ToyState {
        (self.device_queue, self.edge_buckets, self.d_lq_slots)
    }

    fn next(&self, s: ToyState, o: &Outcome) -> ToyState {
        (s.0 + o.arrived, s.1.saturating_sub(1) + o.buckets, s.2 + s.0)
    }

    /// `U^lt` of stopping at layer `l` in state `s`.
    pub fn payoff(&self, l: usize, s: ToyState) -> f64 {
        let dt = self.slot_s;
        let (acc, t_eq) = if l == self.device_only() {
            (self.acc_shallow, 0.0)
        } else {
            (self.acc_full, s.1 as f64 * dt)
        };
        self.u_pt[l] - l as f64 * dt - s.2 as f64 * dt - t_eq + self.weight_acc * acc
    }

    /// Random instance small enough to enumerate.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let exit_index = rng.random_range(1..=2);
        let min_feasible = if rng.random_bool(0.5) {
            0
        } else {
            rng.random_range(0..=exit_index)
        };
        let points = if exit_index == 2 { 2 } else { rng.random_range(2..=4) };
        let mut buckets: Vec<u32> = (0..=5).collect();
        let mut edge_inflow = Vec::new();
        let mut weights: Vec<f64> = (0..points).map(|_| rng.random_range(0.05..1.0)).collect();
        let sum: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= sum;
        }
        for w in weights {
            let i = rng.random_range(0..buckets.len());
            edge_inflow.push(InflowPoint {
                buckets: buckets.swap_remove(i),
                prob: w,
            });
        }
        let mut u_pt: Vec<f64> = (0..=exit_index).map(|_| rng.random_range(-0.05..0.0)).collect();
        u_pt.push(rng.random_range(-0.01..0.0));
        Self {
            exit_index,
            min_feasible,
            slot_s: 0.01,
            device_prob: rng.random_range(0.05..0.95),
            edge_inflow,
            device_queue: rng.random_range(0..=3),
            edge_buckets: rng.random_range(0..=8),
            d_lq_slots: rng.random_range(0..=3),
            u_pt,
            acc_full: 0.9,
            acc_shallow: 0.6,
            weight_acc: rng.random_range(0.02..0.3),
        }
    }
}

/// Exact continuation values `C_l(s)` for `l` in `x̂..=l_e` over reachable states.
#[derive(Debug, Clone)]
pub struct ContinuationTable {
    pub min_feasible: usize,
    /// `tables[l - x̂]` maps each reachable state at layer `l` to `C_l`.
    pub tables: Vec<BTreeMap<ToyState, f64>>,
    /// Optimal value at the start state.
    pub value: f64,
}

impl ContinuationTable {
    pub fn get(&self, l: usize, s: ToyState) -> Option<f64> {
        self.tables.get(l.checked_sub(self.min_feasible)?)?.get(&s).copied()
    }
}

/// Terminal payoff at `l_e+1`, then `V_l = max(U^lt_l, C_l)` with
/// `C_l = E[V_{l+1}]` going backwards.
pub fn backward_induction(inst: &ToyInstance) -> Result<ContinuationTable> {
    inst.validate()?;
    let outcomes = inst.outcomes();
    let le1 = inst.device_only();
    let mut levels: Vec<Vec<ToyState>> = vec![vec![inst.start()]];
    for _ in inst.min_feasible..le1 {
        let mut next: Vec<ToyState> = levels
            .last()
            .unwrap()
            .iter()
            .flat_map(|&s| outcomes.iter().map(move |o| inst.next(s, o)))
            .collect();
        next.sort_unstable();
        next.dedup();
        levels.push(next);
    }
    let mut v_next: BTreeMap<ToyState, f64> = levels[le1 - inst.min_feasible]
        .iter()
        .map(|&s| (s, inst.payoff(le1, s)))
        .collect();
    let mut tables = vec![BTreeMap::new(); le1 - inst.min_feasible];
    for l in (inst.min_feasible..le1).rev() {
        let mut v = BTreeMap::new();
        let mut c_tab = BTreeMap::new();
        for &s in &levels[l - inst.min_feasible] {
            let c: f64 = outcomes.iter().map(|o| o.prob * v_next[&inst.next(s, o)]).sum();
            c_tab.insert(s, c);
            v.insert(s, inst.payoff(l, s).max(c));
        }
        tables[l - inst.min_feasible] = c_tab;
        v_next = v;
    }
    let value = if inst.min_feasible == le1 {
        inst.payoff(le1, inst.start())
    } else {
        v_next[&inst.start()]
    };
    Ok(ContinuationTable {
        min_feasible: inst.min_feasible,
        tables,
        value,
    })
}

/// Expected `U^lt` of the rule that stops at the first layer where `stop(l, s)` holds.
pub fn policy_value(inst: &ToyInstance, stop: &dyn Fn(usize, ToyState) -> bool) -> f64 {
    fn go(inst: &ToyInstance, outcomes: &[Outcome], l: usize, s: ToyState, stop: &dyn Fn(usize, ToyState) -> bool) -> f64 {
        if l == inst.device_only() || stop(l, s) {
            return inst.payoff(l, s);
        }
        outcomes
            .iter()
            .map(|o| o.prob * go(inst, outcomes, l + 1, inst.next(s, o), stop))
            .sum()
    }
    go(inst, &inst.outcomes(), inst.min_feasible, inst.start(), stop)
}

/// Optimal expected `U^lt` when stopping is only allowed at `candidates`
/// (device-only always ends the task).
pub fn restricted_optimal_value(inst: &ToyInstance, candidates: &[usize]) -> Result<f64> {
    fn go(inst: &ToyInstance, outcomes: &[Outcome], l: usize, s: ToyState, candidates: &[usize]) -> f64 {
        if l == inst.device_only() {
            return inst.payoff(l, s);
        }
        let cont: f64 = outcomes
            .iter()
            .map(|o| o.prob * go(inst, outcomes, l + 1, inst.next(s, o), candidates))
            .sum();
        if candidates.contains(&l) {
            inst.payoff(l, s).max(cont)
        } else {
            cont
        }
    }
    inst.validate()?;
    Ok(go(inst, &inst.outcomes(), inst.min_feasible, inst.start(), candidates))
}

/// Value of the rule that stops iff `U^lt >= C` with the exact table.
pub fn induced_policy_value(inst: &ToyInstance, table: &ContinuationTable) -> f64 {
    policy_value(inst, &|l, s| {
        let c = table.get(l, s).expect("reachable state has a continuation value");
        should_stop(inst.payoff(l, s), c)
    })
}

/// Values of every distinct deterministic stopping rule from a history node.
fn rule_values(inst: &ToyInstance, outcomes: &[Outcome], l: usize, s: ToyState) -> Result<Vec<f64>> {
    if l == inst.device_only() {
        return Ok(vec![inst.payoff(l, s)]);
    }
    let mut combos = vec![0.0];
    for o in outcomes {
        let child = rule_values(inst, outcomes, l + 1, inst.next(s, o))?;
        if combos.len() * child.len() > MAX_RULES {
            return Err(Error::Oracle(format!(
                "more than {MAX_RULES} stopping rules at layer {l}"
            )));
        }
        let mut next = Vec::with_capacity(combos.len() * child.len());
        for &a in &combos {
            for &v in &child {
                next.push(a + o.prob * v);
            }
        }
        combos = next;
    }
    combos.push(inst.payoff(l, s));
    Ok(combos)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Enumeration {
    pub rule_count: usize,
    pub best_value: f64,
    pub always_stop: f64,
    pub never_stop: f64,
}

/// Evaluates every history-dependent stopping rule and keeps the best.
pub fn enumerate_stopping_rules(inst: &ToyInstance) -> Result<Enumeration> {
    inst.validate()?;
    let outcomes = inst.outcomes();
    let values = rule_values(inst, &outcomes, inst.min_feasible, inst.start())?;
    let best_value = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(Enumeration {
        rule_count: values.len(),
        best_value,
        always_stop: policy_value(inst, &|_, _| true),
        never_stop: policy_value(inst, &|_, _| false),
    })
}

/// `E[U^lt(x)]` for each fixed decision `x` in `x̂..=l_e+1`, by propagating
/// the state distribution forward.
pub fn fixed_decision_values(inst: &ToyInstance) -> Result<Vec<f64>> {
    inst.validate()?;
    let outcomes = inst.outcomes();
    let mut dist: BTreeMap<ToyState, f64> = BTreeMap::from([(inst.start(), 1.0)]);
    let mut out = Vec::new();
    for l in inst.min_feasible..=inst.device_only() {
        out.push(dist.iter().map(|(&s, &p)| p * inst.payoff(l, s)).sum());
        let mut next = BTreeMap::new();
        for (&s, &p) in &dist {
            for o in &outcomes {
                *next.entry(inst.next(s, o)).or_insert(0.0) += p * o.prob;
            }
        }
        dist = next;
    }
    Ok(out)
}

/// Decision-space reduction at the instance's start state.
pub fn toy_reduction(inst: &ToyInstance) -> Result<Reduction> {
    inst.validate()?;
    let dt = inst.slot_s;
    let t_lc: Vec<f64> = (0..=inst.device_only()).map(|l| l as f64 * dt).collect();
    let xh = inst.min_feasible;
    reduce_decision_space(&ReductionInput {
        min_feasible: xh,
        device_queue: inst.device_queue,
        u_pt: &inst.u_pt,
        t_lc_s: &t_lc,
        utility_device_only: inst.u_pt[inst.device_only()] - t_lc[inst.device_only()]
            + inst.weight_acc * inst.acc_shallow,
        utility_min_feasible: inst.u_pt[xh] - t_lc[xh] - inst.edge_buckets as f64 * dt
            + inst.weight_acc * inst.acc_full,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoundnessReport {
    /// Every decision whose expected long-term utility is maximal.
    pub optimal: Vec<usize>,
    pub candidates: Vec<usize>,
    pub sound: bool,
}

/// Checks that no expectation-optimal fixed decision is eliminated.
pub fn check_reduction_soundness(inst: &ToyInstance) -> Result<SoundnessReport> {
    let values = fixed_decision_values(inst)?;
    let best = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let optimal: Vec<usize> = values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v >= best - 1e-12)
        .map(|(i, _)| inst.min_feasible + i)
        .collect();
    let reduction = toy_reduction(inst)?;
    let sound = optimal.iter().all(|x| reduction.candidates.contains(x));
    Ok(SoundnessReport {
        optimal,
        candidates: reduction.candidates,
        sound,
    })
}

/// Result of every oracle check on one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleCheck {
    pub induction_value: f64,
    pub induced_policy_value: f64,
    pub enumeration: Enumeration,
    pub soundness: SoundnessReport,
}

impl OracleCheck {
    pub fn agreement_gap(&self) -> f64 {
        (self.induced_policy_value - self.enumeration.best_value).abs()
    }

    pub fn passed(&self) -> bool {
        self.agreement_gap() < 1e-12 && self.soundness.sound
    }
}

pub fn check_instance(inst: &ToyInstance) -> Result<OracleCheck> {
    let table = backward_induction(inst)?;
    Ok(OracleCheck {
        induction_value: table.value,
        induced_policy_value: induced_policy_value(inst, &table),
        enumeration: enumerate_stopping_rules(inst)?,
        soundness: check_reduction_soundness(inst)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(exit_index: usize) -> ToyInstance {
        ToyInstance {
            exit_index,
            min_feasible: 0,
            slot_s: 0.01,
            device_prob: 0.3,
            edge_inflow: vec![
                InflowPoint { buckets: 0, prob: 0.6 },
                InflowPoint { buckets: 3, prob: 0.4 },
            ],
            device_queue: 1,
            edge_buckets: 4,
            d_lq_slots: 0,
            u_pt: vec![-0.02; exit_index + 2],
            acc_full: 0.9,
            acc_shallow: 0.6,
            weight_acc: 0.1,
        }
    }

    #[test]
    fn one_layer_instance_has_two_rules() {
        let mut inst = tiny(1);
        inst.min_feasible = 1;
        let e = enumerate_stopping_rules(&inst).unwrap();
        assert_eq!(e.rule_count, 2);
        assert_eq!(e.best_value, e.always_stop.max(e.never_stop));
    }

    #[test]
    fn always_and_never_stop_values() {
        let inst = tiny(2);
        let e = enumerate_stopping_rules(&inst).unwrap();
        let fixed = fixed_decision_values(&inst).unwrap();
        assert_eq!(e.always_stop, inst.payoff(0, inst.start()));
        assert!((e.always_stop - fixed[0]).abs() < 1e-15);
        assert!((e.never_stop - fixed[3]).abs() < 1e-12);
    }

    #[test]
    fn terminal_layer_value() {
        let mut inst = tiny(2);
        inst.min_feasible = 2;
        let t = backward_induction(&inst).unwrap();
        // one decision layer left: C_2 is the expected device-only payoff
        let expected: f64 = inst
            .outcomes()
            .iter()
            .map(|o| o.prob * inst.payoff(3, inst.next(inst.start(), o)))
            .sum();
        assert!((t.get(2, inst.start()).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn deterministic_transitions() {
        let mut inst = tiny(2);
        inst.device_prob = 0.0;
        inst.edge_inflow = vec![InflowPoint { buckets: 2, prob: 1.0 }];
        let t = backward_induction(&inst).unwrap();
        let s1 = (1, 5, 1);
        let s2 = (1, 6, 2);
        let v2 = inst.payoff(2, s2).max(inst.payoff(3, (1, 7, 3)));
        assert_eq!(t.get(1, s1).unwrap(), v2);
        assert_eq!(t.get(0, inst.start()).unwrap(), inst.payoff(1, s1).max(v2));
    }

    #[test]
    fn induction_matches_enumeration_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..10 {
            let inst = ToyInstance::random(&mut rng);
            let check = check_instance(&inst).unwrap();
            assert!(check.agreement_gap() < 1e-12, "{inst:?}");
            assert!((check.induction_value - check.induced_policy_value).abs() < 1e-12);
            assert!(check.soundness.sound);
        }
    }

    #[test]
    fn oversized_instance_is_rejected() {
        let mut inst = tiny(2);
        inst.edge_inflow = (0..200)
            .map(|b| InflowPoint {
                buckets: b,
                prob: 1.0 / 200.0,
            })
            .collect();
        assert!(matches!(backward_induction(&inst), Err(Error::Oracle(_))));
        inst.edge_inflow = (0..4).map(|b| InflowPoint { buckets: b, prob: 0.25 }).collect();
        assert!(matches!(enumerate_stopping_rules(&inst), Err(Error::Oracle(_))));
    }

    #[test]
    fn instance_round_trips_through_toml() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inst = ToyInstance::random(&mut rng);
        let back: ToyInstance = toml::from_str(&inst.to_toml()).unwrap();
        assert_eq!(back, inst);
    }
}
