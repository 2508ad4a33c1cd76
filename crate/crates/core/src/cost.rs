//! Delay, energy, accuracy and utility of one task under one decision.
//!
//! Slot-quantised quantities (gaps, on-device delays, queuing on the device)
//! are carried as integer slot counts and only turned into seconds at the
//! end, so the queuing identities below hold exactly.

use crate::config::SimConfig;
use crate::error::{Error, Result};
use crate::profile::DnnProfile;

/// Offloading decision `x` for one task together with its lower bound `x̂`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OffloadDecision {
    pub x: usize,
    pub min_feasible: usize,
}

impl OffloadDecision {
    pub fn new(x: usize, min_feasible: usize, profile: &DnnProfile) -> Result<Self> {
        let max = profile.device_only();
        if min_feasible > max || x < min_feasible || x > max {
            return Err(Error::DecisionOutOfRange {
                x,
                min: min_feasible,
                max,
            });
        }
        Ok(Self { x, min_feasible })
    }

    pub fn is_device_only(&self, profile: &DnnProfile) -> bool {
        self.x == profile.device_only()
    }
}

/// Every cost term of one task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostBreakdown {
    pub x: usize,
    pub t_lq_s: f64,
    pub t_lc_s: f64,
    pub t_up_s: f64,
    pub t_eq_s: f64,
    pub t_ec_s: f64,
    pub total_delay_s: f64,
    pub accuracy: f64,
    pub energy_j: f64,
    pub utility: f64,
    pub d_lq_s: f64,
    pub time_cost_s: f64,
    pub lt_utility: f64,
    pub u_pt: f64,
}

/// Configuration and profile bundled for cost evaluation.
#[derive(Debug, Clone)]
pub struct CostModel {
    pub cfg: SimConfig,
    pub profile: DnnProfile,
}

impl CostModel {
    pub fn new(cfg: SimConfig, profile: DnnProfile) -> Self {
        Self { cfg, profile }
    }

    pub fn device_only(&self) -> usize {
        self.profile.device_only()
    }

    fn check(&self, x: usize) -> Result<()> {
        if x > self.device_only() {
            return Err(Error::DecisionOutOfRange {
                x,
                min: 0,
                max: self.device_only(),
            });
        }
        Ok(())
    }

    /// `T^lc(x)` in slots.
    pub fn lc_slots(&self, x: usize) -> Result<u64> {
        self.check(x)?;
        Ok(self.profile.cumulative_device_slots(x))
    }

    /// `T^lc(x)` in seconds.
    pub fn on_device_inference_delay(&self, x: usize) -> Result<f64> {
        Ok(self.cfg.slots_to_s(self.lc_slots(x)?))
    }

    /// `T^up(x)`: zero for device-only.
    pub fn upload_delay(&self, x: usize) -> Result<f64> {
        self.check(x)?;
        if x == self.device_only() {
            return Ok(0.0);
        }
        Ok(self.profile.upload_bits(x) / self.cfg.uplink_rate_bps)
    }

    /// `T^eq(x)` for a task arriving at the edge when the backlog is `backlog_cycles`.
    pub fn edge_queuing_delay(&self, x: usize, backlog_cycles: f64) -> Result<f64> {
        self.check(x)?;
        if x == self.device_only() {
            return Ok(0.0);
        }
        Ok(backlog_cycles / self.cfg.edge_freq_hz)
    }

    /// `T^ec(x)`: remaining full-size layers on the edge.
    pub fn edge_inference_delay(&self, x: usize) -> Result<f64> {
        self.check(x)?;
        if x == self.device_only() {
            return Ok(0.0);
        }
        Ok((x + 1..=self.profile.num_layers()).map(|l| self.profile.edge_delay_s(l)).sum())
    }

    /// Cycles added to the edge backlog when offloading at `x`.
    pub fn offload_cycles(&self, x: usize) -> Result<f64> {
        self.check(x)?;
        if x == self.device_only() {
            return Ok(0.0);
        }
        Ok(self.profile.remaining_edge_flops(x))
    }

    pub fn accuracy(&self, x: usize) -> Result<f64> {
        self.check(x)?;
        Ok(if x == self.device_only() {
            self.cfg.acc_shallow
        } else {
            self.cfg.acc_full
        })
    }

    /// Energy of a task from its compute and upload times.
    pub fn energy(&self, t_lc_s: f64, t_ec_s: f64, t_up_s: f64) -> f64 {
        let c = &self.cfg;
        c.energy_coeff_device * c.device_freq_hz.powi(3) * t_lc_s
            + c.energy_coeff_edge * c.edge_freq_hz.powi(3) * t_ec_s
            + c.tx_power_w * t_up_s
    }

    /// `E(x)`, which depends on `x` only.
    pub fn energy_of(&self, x: usize) -> Result<f64> {
        Ok(self.energy(
            self.on_device_inference_delay(x)?,
            self.edge_inference_delay(x)?,
            self.upload_delay(x)?,
        ))
    }

    /// `-T + alpha A - beta E`.
    pub fn utility(&self, total_delay_s: f64, accuracy: f64, energy_j: f64) -> f64 {
        -total_delay_s + self.cfg.weight_acc * accuracy - self.cfg.weight_energy * energy_j
    }

    /// Deterministic part `U^pt(x) = -T^up - T^ec - beta E`.
    pub fn u_pt(&self, x: usize) -> Result<f64> {
        Ok(-self.upload_delay(x)? - self.edge_inference_delay(x)? - self.cfg.weight_energy * self.energy_of(x)?)
    }

    /// Long-term utility from the queue-dependent terms alone.
    pub fn lt_utility(&self, x: usize, d_lq_s: f64, t_eq_s: f64) -> Result<f64> {
        Ok(self.u_pt(x)? - self.on_device_inference_delay(x)? - d_lq_s - t_eq_s
            + self.cfg.weight_acc * self.accuracy(x)?)
    }

    /// Full breakdown given the task's own queuing delay `T^lq`, the queuing
    /// delay it inflicts on successors `D^lq`, and the edge backlog at its
    /// arrival slot.
    pub fn breakdown(&self, x: usize, t_lq_s: f64, d_lq_s: f64, backlog_cycles: f64) -> Result<CostBreakdown> {
        let t_lc_s = self.on_device_inference_delay(x)?;
        let t_up_s = self.upload_delay(x)?;
        let t_eq_s = self.edge_queuing_delay(x, backlog_cycles)?;
        let t_ec_s = self.edge_inference_delay(x)?;
        let accuracy = self.accuracy(x)?;
        let energy_j = self.energy(t_lc_s, t_ec_s, t_up_s);
        let total_delay_s = t_lq_s + t_lc_s + t_up_s + t_eq_s + t_ec_s;
        let time_cost_s = d_lq_s + t_lc_s + t_up_s + t_eq_s + t_ec_s;
        Ok(CostBreakdown {
            x,
            t_lq_s,
            t_lc_s,
            t_up_s,
            t_eq_s,
            t_ec_s,
            total_delay_s,
            accuracy,
            energy_j,
            utility: self.utility(total_delay_s, accuracy, energy_j),
            d_lq_s,
            time_cost_s,
            lt_utility: self.utility(time_cost_s, accuracy, energy_j),
            u_pt: self.u_pt(x)?,
        })
    }

    /// Smallest `x` whose offload instant is no earlier than the moment the
    /// transmitter frees up; `l_e + 1` when no offload point qualifies.
    ///
    /// `start_s` is the instant the task leaves the device queue.
    pub fn min_feasible_layers(&self, start_s: f64, transmitter_free_s: f64) -> usize {
        let tol = 1e-9 * self.cfg.slot_duration_s;
        (0..=self.profile.exit_index())
            .find(|&x| start_s + self.profile.device_delay_s_cumulative(x) >= transmitter_free_s - tol)
            .unwrap_or(self.device_only())
    }
}

/// One step of the on-device queuing recursion, in seconds.
pub fn on_device_queuing_delay(prev_t_lq_s: f64, prev_t_lc_s: f64, gap_s: f64) -> f64 {
    (prev_t_lq_s + prev_t_lc_s - gap_s).max(0.0)
}

/// Sliding-window long-term queuing delay: device queue lengths over the
/// `lc_slots` slots the task occupies the compute unit, times the slot length.
pub fn long_term_queuing_delay(lc_slots: u64, device_queue: &[u32], slot_s: f64) -> Result<f64> {
    let n = lc_slots as usize;
    if device_queue.len() < n {
        return Err(Error::Twin(format!(
            "queue window holds {} slots, execution needs {n}",
            device_queue.len()
        )));
    }
    Ok(long_term_queuing_slots(&device_queue[..n]) as f64 * slot_s)
}

/// Sum of queue lengths over a window, in task-slots.
pub fn long_term_queuing_slots(device_queue: &[u32]) -> u64 {
    device_queue.iter().map(|&q| q as u64).sum()
}

/// Generation slots and on-device execution lengths of a sequence of tasks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueueTrace {
    pub gen_slots: Vec<u64>,
    pub lc_slots: Vec<u64>,
}

impl QueueTrace {
    pub fn new(gen_slots: Vec<u64>, lc_slots: Vec<u64>) -> Result<Self> {
        if gen_slots.len() != lc_slots.len() {
            return Err(Error::Config("gen_slots and lc_slots differ in length".into()));
        }
        if gen_slots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("generation slots must strictly increase".into()));
        }
        Ok(Self { gen_slots, lc_slots })
    }

    pub fn len(&self) -> usize {
        self.gen_slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gen_slots.is_empty()
    }

    /// Gap between task `i` and its successor, in slots.
    pub fn gap(&self, i: usize) -> u64 {
        self.gen_slots[i + 1] - self.gen_slots[i]
    }

    /// `T^lq` of every task in slots, by the queuing recursion.
    pub fn t_lq_slots(&self) -> Vec<u64> {
        let mut out: Vec<u64> = Vec::with_capacity(self.len());
        for i in 0..self.len() {
            let v = if i == 0 {
                0
            } else {
                (out[i - 1] + self.lc_slots[i - 1]).saturating_sub(self.gap(i - 1))
            };
            out.push(v);
        }
        out
    }

    /// Queuing delay task `m` inflicts on task `n`, in slots (0-based indices).
    pub fn pairwise_slots(&self, m: usize, n: usize, t_lq: &[u64]) -> u64 {
        if m >= n {
            return 0;
        }
        let elapsed = self.gen_slots[n] - self.gen_slots[m];
        let head = t_lq[m] as i64 - elapsed as i64;
        (head.min(0) + self.lc_slots[m] as i64).max(0) as u64
    }
}

/// Pairwise queuing delay in seconds.
pub fn pairwise_queuing_delay(m: usize, n: usize, trace: &QueueTrace, t_lq: &[u64], slot_s: f64) -> f64 {
    trace.pairwise_slots(m, n, t_lq) as f64 * slot_s
}

impl DnnProfile {
    /// `sum_{l<=x} d_l^D` in seconds.
    pub fn device_delay_s_cumulative(&self, x: usize) -> f64 {
        self.cumulative_device_slots(x) as f64 * self.slot_duration_s()
    }
}
