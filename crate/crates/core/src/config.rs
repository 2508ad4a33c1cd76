//! Simulation parameters.
//!
//! Rates are stored in SI units. The transmit power is given in dBm in
//! configuration files and converted to watts once, when the file is read.

use serde::Deserialize;

use crate::error::{Error, Result};

/// Converts a power level in dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Every knob of one simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Slot length in seconds.
    pub slot_duration_s: f64,
    /// Optional hard cap on the number of simulated slots.
    pub horizon_slots: Option<u64>,
    pub rng_seed: u64,
    /// Bernoulli probability of a device task at the start of a slot.
    pub device_task_prob: f64,
    /// Mean arrivals at the edge server from other devices, in tasks per second.
    pub edge_arrival_rate: f64,
    /// Upper bound of the uniform per-task cycle demand of background edge tasks.
    pub edge_task_cycles_max: f64,
    pub edge_freq_hz: f64,
    pub device_freq_hz: f64,
    pub uplink_rate_bps: f64,
    pub tx_power_w: f64,
    pub energy_coeff_device: f64,
    pub energy_coeff_edge: f64,
    /// Accuracy of the full-size network (edge).
    pub acc_full: f64,
    /// Accuracy of the shallow network (device exit branch).
    pub acc_shallow: f64,
    /// Weight on accuracy, seconds per unit accuracy.
    pub weight_acc: f64,
    /// Weight on energy, seconds per joule.
    pub weight_energy: f64,
    /// Number of tasks during which the continuation-value model is trained.
    pub train_task_count: usize,
    /// Number of tasks after the training phase over which metrics are averaged.
    pub eval_task_count: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            slot_duration_s: 0.01,
            horizon_slots: None,
            rng_seed: 0,
            device_task_prob: 0.01,
            edge_arrival_rate: 11.25,
            edge_task_cycles_max: 8e9,
            edge_freq_hz: 50e9,
            device_freq_hz: 1e9,
            uplink_rate_bps: 126e6,
            tx_power_w: dbm_to_watts(20.0),
            energy_coeff_device: 1e-30,
            energy_coeff_edge: 1e-30,
            acc_full: 0.9,
            acc_shallow: 0.6,
            weight_acc: 1.0,
            weight_energy: 0.2,
            train_task_count: 2000,
            eval_task_count: 8000,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("slot_duration_s", self.slot_duration_s),
            ("edge_task_cycles_max", self.edge_task_cycles_max),
            ("edge_freq_hz", self.edge_freq_hz),
            ("device_freq_hz", self.device_freq_hz),
            ("uplink_rate_bps", self.uplink_rate_bps),
            ("tx_power_w", self.tx_power_w),
            ("energy_coeff_device", self.energy_coeff_device),
            ("energy_coeff_edge", self.energy_coeff_edge),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("edge_arrival_rate", self.edge_arrival_rate),
            ("weight_acc", self.weight_acc),
            ("weight_energy", self.weight_energy),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.device_task_prob) {
            return Err(Error::Config(format!(
                "device_task_prob must lie in [0, 1], got {}",
                self.device_task_prob
            )));
        }
        for (name, v) in [("acc_full", self.acc_full), ("acc_shallow", self.acc_shallow)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if self.acc_full <= self.acc_shallow {
            return Err(Error::Config(format!(
                "acc_full ({}) must exceed acc_shallow ({})",
                self.acc_full, self.acc_shallow
            )));
        }
        Ok(())
    }

    /// Edge cycles drained per slot, `f^E * dT`.
    pub fn edge_capacity_per_slot(&self) -> f64 {
        self.edge_freq_hz * self.slot_duration_s
    }

    /// Mean background arrivals per slot.
    pub fn edge_arrivals_per_slot(&self) -> f64 {
        self.edge_arrival_rate * self.slot_duration_s
    }

    /// Device task generation rate in tasks per second.
    pub fn device_task_rate(&self) -> f64 {
        self.device_task_prob / self.slot_duration_s
    }

    /// Seconds of `slots` slots.
    pub fn slots_to_s(&self, slots: u64) -> f64 {
        slots as f64 * self.slot_duration_s
    }

    pub fn total_tasks(&self) -> usize {
        self.train_task_count + self.eval_task_count
    }
}

/// On-disk form of [`SimConfig`]. Every key is optional and falls back to the default.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfigFile {
    pub slot_duration_s: Option<f64>,
    pub horizon_slots: Option<u64>,
    pub rng_seed: Option<u64>,
    pub device_task_prob: Option<f64>,
    pub edge_arrival_rate: Option<f64>,
    pub edge_task_cycles_max: Option<f64>,
    pub edge_freq_hz: Option<f64>,
    pub device_freq_hz: Option<f64>,
    pub uplink_rate_bps: Option<f64>,
    pub tx_power_dbm: Option<f64>,
    pub energy_coeff_device: Option<f64>,
    pub energy_coeff_edge: Option<f64>,
    pub acc_full: Option<f64>,
    pub acc_shallow: Option<f64>,
    pub weight_acc: Option<f64>,
    pub weight_energy: Option<f64>,
    pub train_task_count: Option<usize>,
    pub eval_task_count: Option<usize>,
}

impl SimConfigFile {
    pub fn resolve(&self) -> SimConfig {
        let d = SimConfig::default();
        SimConfig {
            slot_duration_s: self.slot_duration_s.unwrap_or(d.slot_duration_s),
            horizon_slots: self.horizon_slots.or(d.horizon_slots),
            rng_seed: self.rng_seed.unwrap_or(d.rng_seed),
            device_task_prob: self.device_task_prob.unwrap_or(d.device_task_prob),
            edge_arrival_rate: self.edge_arrival_rate.unwrap_or(d.edge_arrival_rate),
            edge_task_cycles_max: self.edge_task_cycles_max.unwrap_or(d.edge_task_cycles_max),
            edge_freq_hz: self.edge_freq_hz.unwrap_or(d.edge_freq_hz),
            device_freq_hz: self.device_freq_hz.unwrap_or(d.device_freq_hz),
            uplink_rate_bps: self.uplink_rate_bps.unwrap_or(d.uplink_rate_bps),
            tx_power_w: self.tx_power_dbm.map(dbm_to_watts).unwrap_or(d.tx_power_w),
            energy_coeff_device: self.energy_coeff_device.unwrap_or(d.energy_coeff_device),
            energy_coeff_edge: self.energy_coeff_edge.unwrap_or(d.energy_coeff_edge),
            acc_full: self.acc_full.unwrap_or(d.acc_full),
            acc_shallow: self.acc_shallow.unwrap_or(d.acc_shallow),
            weight_acc: self.weight_acc.unwrap_or(d.weight_acc),
            weight_energy: self.weight_energy.unwrap_or(d.weight_energy),
            train_task_count: self.train_task_count.unwrap_or(d.train_task_count),
            eval_task_count: self.eval_task_count.unwrap_or(d.eval_task_count),
        }
    }
}
