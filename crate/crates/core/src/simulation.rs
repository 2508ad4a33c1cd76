//! Slot-by-slot simulation of one device, its compute unit, transmitter and
//! the edge server, driven by one offloading policy.
//!
//! Per slot: arrivals, then training for tasks whose window just closed,
//! then the compute unit (start, decide, offload or finish), then the queue
//! records and the edge update.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{one_time_greedy, one_time_ideal, one_time_long_term, realized_lt_utilities, BaselineState};
use crate::config::SimConfig;
use crate::contvalue::{augment_from_twin, ContValueModel, LayerState, Trainer};
use crate::cost::{CostBreakdown, CostModel};
use crate::decision::{reduce_with_cost, DecisionContext, StepOutcome};
use crate::error::{Error, Result};
use crate::profile::DnnProfile;
use crate::sim::{drain_edge, ArrivalTrace};
use crate::twin::{emulate_workloads, estimate_execution_slots, execution_slots, prune_snapshot, RawSlot, SlotRecord, TwinSnapshot, TwinStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Proposed,
    ProposedNoAugment,
    ProposedNoReduction,
    OneTimeGreedy,
    OneTimeLongTerm,
    OneTimeIdeal,
}

impl Policy {
    pub const ALL: [Policy; 6] = [
        Policy::Proposed,
        Policy::ProposedNoAugment,
        Policy::ProposedNoReduction,
        Policy::OneTimeGreedy,
        Policy::OneTimeLongTerm,
        Policy::OneTimeIdeal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Proposed => "proposed",
            Policy::ProposedNoAugment => "proposed_no_augment",
            Policy::ProposedNoReduction => "proposed_no_reduction",
            Policy::OneTimeGreedy => "one_time_greedy",
            Policy::OneTimeLongTerm => "one_time_long_term",
            Policy::OneTimeIdeal => "one_time_ideal",
        }
    }

    /// Uses the learned stopping rule.
    pub fn is_learned(self) -> bool {
        matches!(
            self,
            Policy::Proposed | Policy::ProposedNoAugment | Policy::ProposedNoReduction
        )
    }

    pub fn augments(self) -> bool {
        matches!(self, Policy::Proposed | Policy::ProposedNoReduction)
    }

    pub fn reduces(self) -> bool {
        matches!(self, Policy::Proposed | Policy::ProposedNoAugment)
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown policy {s:?}")))
    }
}

/// One completed task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskRecord {
    /// 1-based.
    pub index: usize,
    pub gen_slot: u64,
    pub start_slot: u64,
    pub t_lq_slots: u64,
    pub min_feasible: usize,
    pub decision: usize,
    pub lc_slots: u64,
    pub d_lq_slots: u64,
    pub evaluations: u32,
    pub device_only_eliminated: bool,
    pub cost: CostBreakdown,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Initial continuation-value model for learned policies.
    pub initial_model: Option<ContValueModel>,
}

/// Everything one run produces.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub policy: Policy,
    pub seed: u64,
    pub tasks: Vec<TaskRecord>,
    /// Cumulative training samples after each training task.
    pub training_samples: Vec<usize>,
    /// Pre-step minibatch loss of every training step.
    pub batch_losses: Vec<f64>,
    pub final_training_loss: Option<f64>,
    pub model: Option<ContValueModel>,
    pub signaling_messages: u64,
    pub slots: u64,
    /// Device-only tasks whose whole window was compared with the real queues.
    pub full_twin_checks: usize,
    /// Offloaded tasks whose pre-offload prefix was compared.
    pub prefix_twin_checks: usize,
    pub peak_twin_records: usize,
    /// Every generated task was decided and every window closed.
    pub completed: bool,
}

impl RunResult {
    /// Tasks after the training phase.
    pub fn eval_tasks(&self, train_task_count: usize) -> &[TaskRecord] {
        let from = train_task_count.min(self.tasks.len());
        &self.tasks[from..]
    }

    /// `(sum of U, sum of U^lt)` over every task.
    pub fn utility_sums(&self) -> (f64, f64) {
        self.tasks
            .iter()
            .fold((0.0, 0.0), |(u, l), t| (u + t.cost.utility, l + t.cost.lt_utility))
    }
}

/// Task on the compute unit.
struct Active {
    n: usize,
    start: u64,
    slots: Vec<u64>,
    next_layer: usize,
    min_feasible: usize,
    t_lq_slots: u64,
    d_lq_slots: u64,
    states: Vec<LayerState>,
    ctx: Option<DecisionContext>,
    fixed: Option<usize>,
}

/// Task waiting for its window to close.
struct Pending {
    n: usize,
    ready: u64,
    slots: Vec<u64>,
    decision: usize,
    states: Vec<LayerState>,
}

struct Runner<'a> {
    cfg: &'a SimConfig,
    cost: CostModel,
    policy: Policy,
    total: usize,
    trace: ArrivalTrace,
    generated: usize,
    gen_slots: Vec<u64>,
    queue: VecDeque<usize>,
    qe: f64,
    active: Option<Active>,
    tx_free_s: f64,
    offload_now: Option<(usize, f64)>,
    arrived_now: bool,
    last_started: Option<(usize, u64, u64)>,
    tasks: Vec<Option<TaskRecord>>,
    twin: TwinStore,
    history_base: u64,
    history: VecDeque<(u32, f64)>,
    pending: VecDeque<Pending>,
    trainer: Option<Trainer>,
    training_samples: Vec<usize>,
    batch_losses: Vec<f64>,
    signaling: u64,
    full_checks: usize,
    prefix_checks: usize,
}

/// Runs one policy on the trace of `cfg.rng_seed`.
pub fn simulate(cfg: &SimConfig, profile: &DnnProfile, policy: Policy, opts: RunOptions) -> Result<RunResult> {
    cfg.validate()?;
    let mut runner = Runner::new(cfg, profile, policy, opts);
    let completed = runner.run()?;
    runner.finish(completed)
}

impl<'a> Runner<'a> {
    fn new(cfg: &'a SimConfig, profile: &DnnProfile, policy: Policy, opts: RunOptions) -> Self {
        let trainer = policy.is_learned().then(|| {
            let mut t = Trainer::new(cfg.rng_seed, policy.augments());
            if let Some(m) = opts.initial_model {
                t.model = m;
            }
            t
        });
        let total = cfg.total_tasks();
        Self {
            cfg,
            cost: CostModel::new(cfg.clone(), profile.clone()),
            policy,
            total,
            trace: ArrivalTrace::new(cfg),
            generated: 0,
            gen_slots: Vec::with_capacity(total),
            queue: VecDeque::new(),
            qe: 0.0,
            active: None,
            tx_free_s: f64::NEG_INFINITY,
            offload_now: None,
            arrived_now: false,
            last_started: None,
            tasks: vec![None; total],
            twin: TwinStore::new(),
            history_base: 0,
            history: VecDeque::new(),
            pending: VecDeque::new(),
            trainer,
            training_samples: Vec::new(),
            batch_losses: Vec::new(),
            signaling: 0,
            full_checks: 0,
            prefix_checks: 0,
        }
    }

    fn invariant(&self, slot: u64, message: String) -> Error {
        Error::Invariant {
            seed: self.cfg.rng_seed,
            slot,
            message,
        }
    }

    fn done(&self) -> bool {
        self.generated == self.total && self.queue.is_empty() && self.active.is_none() && self.pending.is_empty()
    }

    /// Returns whether the run completed before the horizon.
    fn run(&mut self) -> Result<bool> {
        if self.cfg.device_task_prob <= 0.0 || self.total == 0 {
            return Ok(true);
        }
        let horizon = self.cfg.horizon_slots.unwrap_or(u64::MAX);
        let mut t = 0u64;
        while !self.done() {
            if t >= horizon {
                return Ok(false);
            }
            self.step(t)?;
            t += 1;
        }
        Ok(true)
    }

    fn step(&mut self, t: u64) -> Result<()> {
        self.trace.discard_before(t);
        let arrivals = self.trace.get(t);
        self.offload_now = None;
        self.arrived_now = arrivals.device_task && self.generated < self.total;
        if self.arrived_now {
            self.generated += 1;
            self.gen_slots.push(t);
            self.queue.push_back(self.generated);
            self.signaling += 1;
        }
        while self.pending.front().is_some_and(|p| p.ready == t) {
            let p = self.pending.pop_front().unwrap();
            self.close_window(p, t)?;
        }
        if self.pending.front().is_some_and(|p| p.ready < t) {
            return Err(self.invariant(t, "training window missed".into()));
        }
        self.compute_unit(t)?;

        let qd = self.queue.len() as u32;
        if let Some(a) = self.active.as_mut() {
            a.d_lq_slots += qd as u64;
        }
        self.twin.record(
            t,
            RawSlot {
                arrived: self.arrived_now as u32,
                background_cycles: arrivals.edge_cycles,
                offload: self.offload_now,
            },
        )?;
        if self.history.is_empty() {
            self.history_base = t;
        }
        self.history.push_back((qd, self.qe));
        let keep_from = self.twin.earliest_open().unwrap_or(t + 1);
        while self.history_base < keep_from && !self.history.is_empty() {
            self.history.pop_front();
            self.history_base += 1;
        }
        let device_in = self.offload_now.map_or(0.0, |o| o.1);
        // same association as the twin's inflow record
        self.qe = drain_edge(self.qe, self.cfg.edge_capacity_per_slot()) + (arrivals.edge_cycles + device_in);
        Ok(())
    }

    fn compute_unit(&mut self, t: u64) -> Result<()> {
        let le1 = self.cost.device_only();
        loop {
            if self.active.is_none() {
                let Some(n) = self.queue.pop_front() else {
                    return Ok(());
                };
                self.start(n, t)?;
            }
            let a = self.active.as_mut().unwrap();
            if a.slots[a.next_layer] != t {
                return Ok(());
            }
            let l = a.next_layer;
            let dt = self.cfg.slot_duration_s;
            let d_lq_s = a.d_lq_slots as f64 * dt;
            let t_eq_s = if l == le1 {
                0.0
            } else {
                self.cost.edge_queuing_delay(l, self.qe)?
            };
            a.states.push(LayerState { layer: l, d_lq_s, t_eq_s });
            let stop = if l == le1 {
                true
            } else if l < a.min_feasible {
                false
            } else if let Some(x) = a.fixed {
                l == x
            } else {
                if a.ctx.is_none() {
                    let q = self.queue.len() as u32;
                    a.ctx = Some(if self.policy.reduces() {
                        let r = reduce_with_cost(&self.cost, a.min_feasible, q, self.qe)?;
                        DecisionContext::reduced(a.n, q, le1, r)
                    } else {
                        DecisionContext::unreduced(a.n, a.min_feasible, q, le1)
                    });
                }
                let model = &self.trainer.as_ref().expect("learned policy has a trainer").model;
                let ctx = a.ctx.as_mut().unwrap();
                ctx.step(l, d_lq_s, t_eq_s, &self.cost, model)? == StepOutcome::Stop
            };
            if !stop {
                a.next_layer += 1;
                return Ok(());
            }
            let a = self.active.take().unwrap();
            self.finish_task(a, l, t)?;
        }
    }

    fn start(&mut self, n: usize, t: u64) -> Result<()> {
        let dt = self.cfg.slot_duration_s;
        let profile = &self.cost.profile;
        let gen = self.gen_slots[n - 1];
        let t_lq = t - gen;
        let expected = match self.last_started {
            None => 0,
            Some((m, prev_tlq, prev_lc)) => {
                let gap = gen - self.gen_slots[m - 1];
                (prev_tlq + prev_lc).saturating_sub(gap)
            }
        };
        if t_lq != expected {
            return Err(self.invariant(t, format!("task {n}: queuing delay {t_lq} slots, recursion gives {expected}")));
        }
        let slots = execution_slots(t, profile);
        let estimated = estimate_execution_slots(gen as f64 * dt, t_lq as f64 * dt, profile)?;
        if estimated != slots {
            return Err(self.invariant(t, format!("task {n}: twin slots {estimated:?} differ from {slots:?}")));
        }
        let min_feasible = self.cost.min_feasible_layers(t as f64 * dt, self.tx_free_s);
        let q = self.queue.len() as u32;
        self.twin.open_window(n, t, q, self.qe);
        let state = BaselineState {
            min_feasible,
            t_lq_s: t_lq as f64 * dt,
            device_queue: q,
            edge_backlog: self.qe,
        };
        let fixed = match self.policy {
            Policy::OneTimeGreedy => Some(one_time_greedy(&state, &self.cost)?.x),
            Policy::OneTimeLongTerm => Some(one_time_long_term(&state, &self.cost)?.x),
            Policy::OneTimeIdeal => {
                let rollout = self.rollout(n, t, slots.clone(), q)?;
                let realized = realized_lt_utilities(&rollout, min_feasible, &self.cost)?;
                Some(one_time_ideal(min_feasible, &realized, &self.cost)?.x)
            }
            _ => None,
        };
        self.active = Some(Active {
            n,
            start: t,
            slots,
            next_layer: 0,
            min_feasible,
            t_lq_slots: t_lq,
            d_lq_slots: 0,
            states: Vec::new(),
            ctx: None,
            fixed,
        });
        Ok(())
    }

    /// Replays the actual future inflows over the task's window, as if it ran to completion locally.
    fn rollout(&mut self, n: usize, t: u64, slots: Vec<u64>, q: u32) -> Result<TwinSnapshot> {
        let len = (slots[slots.len() - 1] - t) as usize;
        let mut recs = Vec::with_capacity(len);
        let mut admitted = self.generated;
        recs.push(SlotRecord {
            arrived: self.arrived_now as u32,
            edge_inflow: self.trace.get(t).edge_cycles + self.offload_now.map_or(0.0, |o| o.1),
        });
        for s in t + 1..t + len as u64 {
            let a = self.trace.get(s);
            let arrived = a.device_task && admitted < self.total;
            admitted += arrived as usize;
            recs.push(SlotRecord {
                arrived: arrived as u32,
                edge_inflow: a.edge_cycles,
            });
        }
        emulate_workloads(n, slots, q, self.qe, &recs, self.cfg)
    }

    fn finish_task(&mut self, a: Active, x: usize, t: u64) -> Result<()> {
        let dt = self.cfg.slot_duration_s;
        let lc = self.cost.lc_slots(x)?;
        if a.start + lc != t {
            return Err(self.invariant(t, format!("task {}: decision {x} reached at the wrong slot", a.n)));
        }
        if x < self.cost.device_only() {
            if x < a.min_feasible {
                return Err(self.invariant(t, format!("task {}: offload at {x} before {}", a.n, a.min_feasible)));
            }
            let cycles = self.cost.offload_cycles(x)?;
            self.offload_now = Some((a.n, cycles));
            self.tx_free_s = t as f64 * dt + self.cost.upload_delay(x)?;
            self.signaling += 1;
        }
        let cost = self
            .cost
            .breakdown(x, a.t_lq_slots as f64 * dt, a.d_lq_slots as f64 * dt, self.qe)?;
        let (evaluations, eliminated) = a
            .ctx
            .as_ref()
            .map_or((0, false), |c| (c.evaluations, c.device_only_eliminated));
        self.tasks[a.n - 1] = Some(TaskRecord {
            index: a.n,
            gen_slot: self.gen_slots[a.n - 1],
            start_slot: a.start,
            t_lq_slots: a.t_lq_slots,
            min_feasible: a.min_feasible,
            decision: x,
            lc_slots: lc,
            d_lq_slots: a.d_lq_slots,
            evaluations,
            device_only_eliminated: eliminated,
            cost,
        });
        self.last_started = Some((a.n, a.t_lq_slots, lc));
        let p = Pending {
            n: a.n,
            ready: *a.slots.last().unwrap(),
            slots: a.slots,
            decision: x,
            states: a.states,
        };
        if p.ready == t {
            // device-only: the window ends now
            self.close_window(p, t)
        } else {
            self.pending.push_back(p);
            Ok(())
        }
    }

    /// Step 4: snapshot, fidelity check, samples and training.
    fn close_window(&mut self, p: Pending, t: u64) -> Result<()> {
        let mut snap = self.twin.take_snapshot(p.n, p.slots.clone(), self.cfg)?;
        self.check_fidelity(&p, &snap, t)?;
        if p.n <= self.cfg.train_task_count {
            if let Some(trainer) = self.trainer.as_mut() {
                let samples = augment_from_twin(&p.states, &snap, &self.cost, &trainer.model, trainer.augment)?;
                if let Some(loss) = trainer.ingest_task(samples)? {
                    self.batch_losses.push(loss);
                }
                self.training_samples.push(trainer.buffer.len());
            }
        }
        snap.mark_extracted()?;
        prune_snapshot(&mut snap)
    }

    fn check_fidelity(&mut self, p: &Pending, snap: &TwinSnapshot, t: u64) -> Result<()> {
        let start = p.slots[0];
        let device_only = p.decision == self.cost.device_only();
        let (qd_end, qe_end) = if device_only {
            (snap.window_len(), snap.window_len())
        } else {
            let k = (p.slots[p.decision] - start) as usize;
            (k, k + 1)
        };
        let base = start
            .checked_sub(self.history_base)
            .ok_or_else(|| self.invariant(t, format!("task {}: actual history already dropped", p.n)))?
            as usize;
        for i in 0..qd_end.max(qe_end) {
            let Some(&(qd, qe)) = self.history.get(base + i) else {
                return Err(self.invariant(t, format!("task {}: actual history too short", p.n)));
            };
            if i < qd_end && snap.emu_device_queue[i] != qd {
                return Err(self.invariant(
                    start + i as u64,
                    format!("task {}: twin device queue {} vs actual {qd}", p.n, snap.emu_device_queue[i]),
                ));
            }
            if i < qe_end && snap.emu_edge_backlog[i] != qe {
                return Err(self.invariant(
                    start + i as u64,
                    format!("task {}: twin edge backlog {} vs actual {qe}", p.n, snap.emu_edge_backlog[i]),
                ));
            }
        }
        if device_only {
            self.full_checks += 1;
        } else {
            self.prefix_checks += 1;
        }
        Ok(())
    }

    fn finish(self, completed: bool) -> Result<RunResult> {
        let tasks: Vec<TaskRecord> = self.tasks.into_iter().flatten().collect();
        if completed && tasks.len() == self.total && self.cfg.device_task_prob > 0.0 {
            let (u, lt) = tasks
                .iter()
                .fold((0.0, 0.0), |(u, l), t| (u + t.cost.utility, l + t.cost.lt_utility));
            if (u - lt).abs() > 1e-6 * u.abs().max(lt.abs()).max(1.0) {
                return Err(Error::Invariant {
                    seed: self.cfg.rng_seed,
                    slot: 0,
                    message: format!("sum of utilities {u} differs from sum of long-term utilities {lt}"),
                });
            }
        }
        let final_training_loss = match &self.trainer {
            Some(tr) if !tr.buffer.is_empty() => Some(tr.full_buffer_loss()?),
            _ => None,
        };
        let last_slot = tasks.iter().map(|t| t.start_slot + t.lc_slots).max().unwrap_or(0);
        Ok(RunResult {
            policy: self.policy,
            seed: self.cfg.rng_seed,
            tasks,
            training_samples: self.training_samples,
            batch_losses: self.batch_losses,
            final_training_loss,
            model: self.trainer.map(|t| t.model),
            signaling_messages: self.signaling,
            slots: last_slot,
            full_twin_checks: self.full_checks,
            prefix_twin_checks: self.prefix_checks,
            peak_twin_records: self.twin.peak_records(),
            completed: completed && (self.generated == self.total || self.cfg.device_task_prob <= 0.0),
        })
    }
}
