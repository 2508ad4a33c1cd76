//! Controller-side twin of the device: decision-slot estimation and
//! counterfactual workload emulation over a task's local-execution window.

use std::collections::{BTreeMap, VecDeque};

use crate::config::SimConfig;
use crate::error::{Error, Result};
use crate::profile::DnnProfile;
use crate::sim::drain_edge;

/// `t_{n,l}` for `l = 0..=l_e+1` from the task's generation time and its own
/// queuing delay, both in seconds. Fails if a slot index is not integral.
pub fn estimate_execution_slots(gen_time_s: f64, t_lq_s: f64, profile: &DnnProfile) -> Result<Vec<u64>> {
    let dt = profile.slot_duration_s();
    (0..=profile.device_only())
        .map(|l| {
            let t = (gen_time_s + t_lq_s + profile.device_delay_s_cumulative(l)) / dt;
            let r = t.round();
            if (t - r).abs() > 1e-6 || r < 0.0 {
                return Err(Error::Twin(format!("decision slot for layer {l} is not integral: {t}")));
            }
            Ok(r as u64)
        })
        .collect()
}

/// Integer form of [`estimate_execution_slots`].
pub fn execution_slots(start_slot: u64, profile: &DnnProfile) -> Vec<u64> {
    (0..=profile.device_only())
        .map(|l| start_slot + profile.cumulative_device_slots(l))
        .collect()
}

/// What the twin learns about one slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotRecord {
    /// `I(t)`.
    pub arrived: u32,
    /// Edge inflow during slot `t` not caused by the task being emulated.
    pub edge_inflow: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SnapshotState {
    Active,
    Extracted,
    Pruned,
}

/// Emulated workloads of one task's window `[t_{n,0}, t_{n,l_e+1})`, assuming
/// the task runs to completion on the device.
#[derive(Debug, Clone, PartialEq)]
pub struct TwinSnapshot {
    pub task_index: usize,
    pub decision_slots: Vec<u64>,
    pub emu_device_queue: Vec<u32>,
    pub emu_edge_backlog: Vec<f64>,
    pub recorded_inflows: Vec<SlotRecord>,
    state: SnapshotState,
}

/// Replays the window from the actual states at `t_{n,0}` with no departures
/// and no offload of the task itself.
pub fn emulate_workloads(
    task_index: usize,
    decision_slots: Vec<u64>,
    device_queue_start: u32,
    edge_backlog_start: f64,
    recorded: &[SlotRecord],
    cfg: &SimConfig,
) -> Result<TwinSnapshot> {
    if decision_slots.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Twin(format!("task {task_index}: decision slots must strictly increase")));
    }
    let (Some(&t0), Some(&end)) = (decision_slots.first(), decision_slots.last()) else {
        return Err(Error::Twin(format!("task {task_index}: no decision slots")));
    };
    let len = (end - t0) as usize;
    if recorded.len() < len {
        return Err(Error::Twin(format!(
            "task {task_index}: inflow records cover {} of {len} window slots",
            recorded.len()
        )));
    }
    let cap = cfg.edge_capacity_per_slot();
    let mut qd = Vec::with_capacity(len);
    let mut qe = Vec::with_capacity(len);
    qd.push(device_queue_start);
    qe.push(edge_backlog_start);
    for i in 1..len {
        qd.push(qd[i - 1] + recorded[i].arrived);
        qe.push(drain_edge(qe[i - 1], cap) + recorded[i - 1].edge_inflow);
    }
    Ok(TwinSnapshot {
        task_index,
        decision_slots,
        emu_device_queue: qd,
        emu_edge_backlog: qe,
        recorded_inflows: recorded[..len].to_vec(),
        state: SnapshotState::Active,
    })
}

impl TwinSnapshot {
    pub fn start_slot(&self) -> u64 {
        self.decision_slots[0]
    }

    pub fn window_len(&self) -> usize {
        self.emu_device_queue.len()
    }

    /// Emulated `D^lq` at layer `l`, in task-slots.
    pub fn d_lq_slots(&self, l: usize) -> Result<u64> {
        self.check_live()?;
        let k = (self.decision_slots[l] - self.start_slot()) as usize;
        Ok(self.emu_device_queue[..k].iter().map(|&q| q as u64).sum())
    }

    /// Emulated backlog at `t_{n,l}`; only defined for `l <= l_e`.
    pub fn backlog_at_layer(&self, l: usize) -> Result<f64> {
        self.check_live()?;
        let k = (self.decision_slots[l] - self.start_slot()) as usize;
        self.emu_edge_backlog
            .get(k)
            .copied()
            .ok_or_else(|| Error::Twin(format!("layer {l} lies outside the window")))
    }

    fn check_live(&self) -> Result<()> {
        if self.state == SnapshotState::Pruned {
            return Err(Error::Twin(format!("snapshot of task {} already pruned", self.task_index)));
        }
        Ok(())
    }

    /// Marks the training samples of this task as taken.
    pub fn mark_extracted(&mut self) -> Result<()> {
        self.check_live()?;
        self.state = SnapshotState::Extracted;
        Ok(())
    }

    pub fn is_pruned(&self) -> bool {
        self.state == SnapshotState::Pruned
    }

    /// Approximate heap footprint in bytes.
    pub fn heap_bytes(&self) -> usize {
        self.decision_slots.capacity() * 8
            + self.emu_device_queue.capacity() * 4
            + self.emu_edge_backlog.capacity() * 8
            + self.recorded_inflows.capacity() * std::mem::size_of::<SlotRecord>()
    }
}

/// Releases the window data of a snapshot whose samples were extracted.
pub fn prune_snapshot(snapshot: &mut TwinSnapshot) -> Result<()> {
    match snapshot.state {
        SnapshotState::Active => Err(Error::Twin(format!(
            "task {}: pruning before sample extraction",
            snapshot.task_index
        ))),
        SnapshotState::Pruned => Err(Error::Twin(format!("task {}: pruned twice", snapshot.task_index))),
        SnapshotState::Extracted => {
            snapshot.emu_device_queue = Vec::new();
            snapshot.emu_edge_backlog = Vec::new();
            snapshot.recorded_inflows = Vec::new();
            snapshot.state = SnapshotState::Pruned;
            Ok(())
        }
    }
}

/// What the controller hears about one slot, before any per-task view is taken.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RawSlot {
    pub arrived: u32,
    /// `W(t)`.
    pub background_cycles: f64,
    /// `D(t)` together with the task that caused it.
    pub offload: Option<(usize, f64)>,
}

impl RawSlot {
    /// Record as seen from `task`: its own offload is left out.
    pub fn view_for(&self, task: usize) -> SlotRecord {
        let own = match self.offload {
            Some((m, c)) if m != task => c,
            _ => 0.0,
        };
        SlotRecord {
            arrived: self.arrived,
            edge_inflow: self.background_cycles + own,
        }
    }
}

/// Per-slot records kept only as long as some open window needs them.
#[derive(Debug, Clone, Default)]
pub struct TwinStore {
    base: u64,
    records: VecDeque<RawSlot>,
    open: BTreeMap<usize, (u64, u32, f64)>,
    peak_records: usize,
}

impl TwinStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends the record of slot `slot`; slots must be consecutive while a
    /// window is open. Records are dropped when no window needs them.
    pub fn record(&mut self, slot: u64, rec: RawSlot) -> Result<()> {
        if self.open.is_empty() {
            self.records.clear();
            self.base = slot + 1;
            return Ok(());
        }
        let next = self.base + self.records.len() as u64;
        if slot != next {
            return Err(Error::Twin(format!("record for slot {slot}, expected {next}")));
        }
        self.records.push_back(rec);
        self.peak_records = self.peak_records.max(self.records.len());
        Ok(())
    }

    /// Starts tracking a window at `start_slot` with the actual states there.
    pub fn open_window(&mut self, task: usize, start_slot: u64, device_queue: u32, edge_backlog: f64) {
        if self.open.is_empty() {
            self.records.clear();
            self.base = start_slot;
        }
        self.open.insert(task, (start_slot, device_queue, edge_backlog));
    }

    /// Builds the snapshot of `task` and closes its window.
    pub fn take_snapshot(&mut self, task: usize, decision_slots: Vec<u64>, cfg: &SimConfig) -> Result<TwinSnapshot> {
        let (start, qd, qe) = self
            .open
            .remove(&task)
            .ok_or_else(|| Error::Twin(format!("task {task} has no open window")))?;
        if decision_slots.first() != Some(&start) {
            return Err(Error::Twin(format!("task {task}: window start mismatch")));
        }
        let offset = start
            .checked_sub(self.base)
            .ok_or_else(|| Error::Twin(format!("task {task}: records before slot {} dropped", self.base)))?
            as usize;
        let avail: Vec<SlotRecord> = self.records.iter().skip(offset).map(|r| r.view_for(task)).collect();
        let snap = emulate_workloads(task, decision_slots, qd, qe, &avail, cfg);
        self.trim();
        snap
    }

    fn trim(&mut self) {
        let Some(keep_from) = self.earliest_open() else {
            self.base += self.records.len() as u64;
            self.records.clear();
            return;
        };
        while self.base < keep_from && !self.records.is_empty() {
            self.records.pop_front();
            self.base += 1;
        }
    }

    /// Start slot of the oldest open window.
    pub fn earliest_open(&self) -> Option<u64> {
        self.open.values().map(|w| w.0).min()
    }

    pub fn open_windows(&self) -> usize {
        self.open.len()
    }

    pub fn retained_records(&self) -> usize {
        self.records.len()
    }

    pub fn peak_records(&self) -> usize {
        self.peak_records
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SimConfig {
        SimConfig::default()
    }

    fn profile() -> DnnProfile {
        DnnProfile::default_for(&cfg())
    }

    #[test]
    fn execution_slot_examples() {
        let p = profile();
        let slots = estimate_execution_slots(1.0, 0.02, &p).unwrap();
        assert_eq!(slots[0], 102);
        assert_eq!(slots[1], 102 + p.device_slots(1));
        assert_eq!(slots, execution_slots(102, &p));
        let first = estimate_execution_slots(0.37, 0.0, &p).unwrap();
        assert_eq!(first[0], 37);
        assert!(estimate_execution_slots(1.0, 0.005, &p).is_err());
    }

    fn rec(arrived: u32, edge_inflow: f64) -> SlotRecord {
        SlotRecord { arrived, edge_inflow }
    }

    fn raw(arrived: u32, background_cycles: f64) -> RawSlot {
        RawSlot {
            arrived,
            background_cycles,
            offload: None,
        }
    }

    #[test]
    fn quiet_window_drains_edge() {
        let snap = emulate_workloads(1, vec![10, 12, 14, 15], 2, 1.2e9, &[rec(0, 0.0); 5], &cfg()).unwrap();
        assert_eq!(snap.emu_device_queue, vec![2; 5]);
        assert_eq!(snap.emu_edge_backlog, vec![1.2e9, 7e8, 2e8, 0.0, 0.0]);
    }

    #[test]
    fn one_step_edge_emulation() {
        let recs = [rec(0, 2e8), rec(1, 0.0)];
        let snap = emulate_workloads(1, vec![0, 1, 2], 0, 3e8, &recs, &cfg()).unwrap();
        assert_eq!(snap.emu_edge_backlog[1], 2e8);
        assert_eq!(snap.emu_device_queue[1], 1);
    }

    #[test]
    fn missing_records_fail() {
        let err = emulate_workloads(1, vec![0, 2, 4], 0, 0.0, &[rec(0, 0.0); 3], &cfg());
        assert!(matches!(err, Err(Error::Twin(_))));
    }

    #[test]
    fn layer_queries() {
        let recs = [rec(0, 0.0), rec(1, 0.0), rec(0, 6e8), rec(1, 0.0)];
        let snap = emulate_workloads(3, vec![5, 6, 8, 9], 1, 0.0, &recs, &cfg()).unwrap();
        assert_eq!(snap.emu_device_queue, vec![1, 2, 2, 3]);
        assert_eq!(snap.d_lq_slots(0).unwrap(), 0);
        assert_eq!(snap.d_lq_slots(1).unwrap(), 1);
        assert_eq!(snap.d_lq_slots(3).unwrap(), 8);
        // inflow in slot 7 is first visible at slot 8
        assert_eq!(snap.backlog_at_layer(1).unwrap(), 0.0);
        assert_eq!(snap.backlog_at_layer(2).unwrap(), 6e8);
    }

    #[test]
    fn prune_contract() {
        let mut snap = emulate_workloads(1, vec![0, 1, 2], 0, 0.0, &[rec(0, 0.0); 2], &cfg()).unwrap();
        assert!(prune_snapshot(&mut snap).is_err());
        snap.mark_extracted().unwrap();
        prune_snapshot(&mut snap).unwrap();
        assert!(snap.is_pruned());
        assert_eq!(snap.heap_bytes(), 3 * 8);
        assert!(prune_snapshot(&mut snap).is_err());
        assert!(snap.d_lq_slots(1).is_err());
    }

    #[test]
    fn store_keeps_only_open_windows() {
        let c = cfg();
        let mut store = TwinStore::new();
        for task in 0..50usize {
            let start = task as u64 * 10;
            store.open_window(task, start, 0, 0.0);
            for t in start..start + 10 {
                store.record(t, raw(0, 1e8)).unwrap();
            }
            let snap = store.take_snapshot(task, vec![start, start + 5, start + 10], &c).unwrap();
            assert_eq!(snap.window_len(), 10);
            assert_eq!(store.open_windows(), 0);
            assert_eq!(store.retained_records(), 0);
        }
        assert_eq!(store.peak_records(), 10);
    }

    #[test]
    fn store_rejects_gaps_and_unknown_tasks() {
        let mut store = TwinStore::new();
        store.open_window(0, 4, 0, 0.0);
        assert!(store.record(5, raw(0, 0.0)).is_err());
        store.record(4, raw(0, 0.0)).unwrap();
        assert!(store.take_snapshot(9, vec![4, 5], &cfg()).is_err());
    }

    #[test]
    fn idle_slots_are_not_kept() {
        let mut store = TwinStore::new();
        for t in 0..100 {
            store.record(t, raw(1, 0.0)).unwrap();
        }
        assert_eq!(store.retained_records(), 0);
        store.open_window(3, 100, 0, 0.0);
        store.record(100, raw(0, 0.0)).unwrap();
        assert_eq!(store.retained_records(), 1);
    }

    #[test]
    fn own_offload_is_excluded() {
        let c = cfg();
        let mut store = TwinStore::new();
        store.open_window(1, 0, 0, 0.0);
        store.open_window(2, 1, 0, 0.0);
        store.record(0, RawSlot { arrived: 0, background_cycles: 0.0, offload: None }).unwrap();
        store.record(1, RawSlot { arrived: 0, background_cycles: 1e8, offload: Some((1, 7e8)) }).unwrap();
        store.record(2, raw(0, 0.0)).unwrap();
        let own = store.take_snapshot(1, vec![0, 1, 3], &c).unwrap();
        assert_eq!(own.emu_edge_backlog, vec![0.0, 0.0, 1e8]);
        let other = store.take_snapshot(2, vec![1, 2, 3], &c).unwrap();
        assert_eq!(other.emu_edge_backlog, vec![0.0, 8e8]);
    }
}
