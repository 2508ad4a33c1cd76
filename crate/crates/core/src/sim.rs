//! Slotted clock, arrival processes and the exact queue recursions.
//!
//! Slot `t` starts with device arrivals `I(t)` and departures `O(t)`; the
//! device queue length `Q^D(t)` is what remains after both. The edge backlog
//! `Q^E(t)` is the workload present at the start of slot `t`; workload that
//! arrives during slot `t` (`D(t)` from this device, `W(t)` from the others)
//! is first visible in `Q^E(t + 1)`.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::config::SimConfig;
use crate::error::{Error, Result};

/// Device queue state at slot `t`, with the arrival and departure counts that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeviceQueueState {
    pub slot: u64,
    pub queue_len: u32,
    pub arrived: u32,
    /// Tasks that left the queue at the start of the slot. An edge-only task
    /// passes through the compute unit without occupying it, so a second task
    /// may leave in the same slot.
    pub departed: u32,
}

impl DeviceQueueState {
    pub fn empty(slot: u64) -> Self {
        Self {
            slot,
            queue_len: 0,
            arrived: 0,
            departed: 0,
        }
    }
}

/// `Q^D(t+1) = Q^D(t) + I(t+1) - O(t+1)`.
pub fn step_device_queue(prev: &DeviceQueueState, arrived: u32, departed: u32) -> Result<DeviceQueueState> {
    let available = prev.queue_len + arrived;
    if departed > available {
        return Err(Error::QueueUnderflow {
            slot: prev.slot + 1,
            queue_len: prev.queue_len,
            arrived,
            departed,
        });
    }
    Ok(DeviceQueueState {
        slot: prev.slot + 1,
        queue_len: available - departed,
        arrived,
        departed,
    })
}

/// Edge backlog at slot `t` together with the inflows that were added to reach it
/// (those that arrived during slot `t - 1`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeQueueState {
    pub slot: u64,
    pub backlog_cycles: f64,
    pub device_inflow_cycles: f64,
    pub other_inflow_cycles: f64,
}

impl EdgeQueueState {
    pub fn empty(slot: u64) -> Self {
        Self {
            slot,
            backlog_cycles: 0.0,
            device_inflow_cycles: 0.0,
            other_inflow_cycles: 0.0,
        }
    }
}

/// `Q^E(t+1) = max(Q^E(t) - f^E dT, 0) + D(t) + W(t)`.
pub fn step_edge_queue(
    prev: &EdgeQueueState,
    device_in: f64,
    other_in: f64,
    cfg: &SimConfig,
) -> Result<EdgeQueueState> {
    if !(device_in >= 0.0 && other_in >= 0.0) {
        return Err(Error::Config(format!(
            "edge inflows must be non-negative, got D={device_in}, W={other_in}"
        )));
    }
    Ok(EdgeQueueState {
        slot: prev.slot + 1,
        backlog_cycles: drain_edge(prev.backlog_cycles, cfg.edge_capacity_per_slot()) + device_in + other_in,
        device_inflow_cycles: device_in,
        other_inflow_cycles: other_in,
    })
}

/// One slot of edge service: `max(backlog - capacity, 0)`.
#[inline]
pub fn drain_edge(backlog: f64, capacity: f64) -> f64 {
    (backlog - capacity).max(0.0)
}

/// Independent random streams derived from one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    DeviceArrivals = 1,
    EdgeArrivals = 2,
    NetworkInit = 3,
    Minibatch = 4,
}

/// Seeds the named stream of `seed`. Streams never share state, so a policy
/// that consumes one cannot shift another.
pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

pub fn draw_device_arrival<R: Rng + ?Sized>(rng: &mut R, prob: f64) -> bool {
    if prob <= 0.0 {
        false
    } else if prob >= 1.0 {
        true
    } else {
        rng.random_bool(prob)
    }
}

/// Background edge workload arriving in one slot.
#[derive(Debug, Clone)]
pub struct EdgeInflowSampler {
    poisson: Option<Poisson<f64>>,
    cycles_max: f64,
}

impl EdgeInflowSampler {
    pub fn new(cfg: &SimConfig) -> Self {
        let lambda = cfg.edge_arrivals_per_slot();
        Self {
            poisson: (lambda > 0.0).then(|| Poisson::new(lambda).expect("positive finite rate")),
            cycles_max: cfg.edge_task_cycles_max,
        }
    }

    /// Sum of `K ~ Poisson(lambda dT)` task demands, each uniform on `[0, U^max)`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let Some(poisson) = &self.poisson else {
            return 0.0;
        };
        let k = poisson.sample(rng) as u64;
        (0..k).map(|_| rng.random::<f64>() * self.cycles_max).sum()
    }
}

pub fn draw_edge_inflow<R: Rng + ?Sized>(rng: &mut R, cfg: &SimConfig) -> f64 {
    EdgeInflowSampler::new(cfg).draw(rng)
}

/// Background arrival rate (tasks per second) that produces the given edge load
/// `lambda U^max / (2 f^E)`.
pub fn edge_load_to_lambda(load: f64, cfg: &SimConfig) -> f64 {
    2.0 * cfg.edge_freq_hz * load / cfg.edge_task_cycles_max
}

pub fn lambda_to_edge_load(lambda: f64, cfg: &SimConfig) -> f64 {
    lambda * cfg.edge_task_cycles_max / (2.0 * cfg.edge_freq_hz)
}

/// Exogenous inflows of one slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotArrivals {
    pub device_task: bool,
    pub edge_cycles: f64,
}

/// Lazily generated arrival trace with look-ahead.
///
/// Values for slot `t` do not depend on how far ahead anyone has peeked.
#[derive(Debug, Clone)]
pub struct ArrivalTrace {
    device_rng: ChaCha8Rng,
    edge_rng: ChaCha8Rng,
    device_prob: f64,
    sampler: EdgeInflowSampler,
    base: u64,
    buffer: VecDeque<SlotArrivals>,
}

impl ArrivalTrace {
    pub fn new(cfg: &SimConfig) -> Self {
        Self {
            device_rng: stream_rng(cfg.rng_seed, Stream::DeviceArrivals),
            edge_rng: stream_rng(cfg.rng_seed, Stream::EdgeArrivals),
            device_prob: cfg.device_task_prob,
            sampler: EdgeInflowSampler::new(cfg),
            base: 0,
            buffer: VecDeque::new(),
        }
    }

    /// Arrivals of `slot`. Panics if the slot was already discarded.
    pub fn get(&mut self, slot: u64) -> SlotArrivals {
        assert!(slot >= self.base, "slot {slot} discarded (base {})", self.base);
        while self.base + self.buffer.len() as u64 <= slot {
            let device_task = draw_device_arrival(&mut self.device_rng, self.device_prob);
            let edge_cycles = self.sampler.draw(&mut self.edge_rng);
            self.buffer.push_back(SlotArrivals {
                device_task,
                edge_cycles,
            });
        }
        self.buffer[(slot - self.base) as usize]
    }

    /// Frees every slot before `slot`.
    pub fn discard_before(&mut self, slot: u64) {
        while self.base < slot && !self.buffer.is_empty() {
            self.buffer.pop_front();
            self.base += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SimConfig {
        SimConfig::default()
    }

    #[test]
    fn device_queue_examples() {
        let q = |n| DeviceQueueState {
            slot: 0,
            queue_len: n,
            arrived: 0,
            departed: 0,
        };
        assert_eq!(step_device_queue(&q(2), 1, 0).unwrap().queue_len, 3);
        assert_eq!(step_device_queue(&q(0), 0, 0).unwrap().queue_len, 0);
        assert_eq!(step_device_queue(&q(1), 1, 1).unwrap().queue_len, 1);
        assert!(matches!(step_device_queue(&q(0), 0, 1), Err(Error::QueueUnderflow { .. })));
    }

    #[test]
    fn edge_queue_examples() {
        let c = cfg();
        assert_eq!(c.edge_capacity_per_slot(), 5e8);
        let at = |b| EdgeQueueState {
            backlog_cycles: b,
            ..EdgeQueueState::empty(0)
        };
        assert_eq!(step_edge_queue(&at(6e8), 0.0, 2e8, &c).unwrap().backlog_cycles, 3e8);
        assert_eq!(step_edge_queue(&at(1e8), 0.0, 0.0, &c).unwrap().backlog_cycles, 0.0);
        assert_eq!(step_edge_queue(&at(0.0), 4e9, 4e9, &c).unwrap().backlog_cycles, 8e9);
        assert!(step_edge_queue(&at(0.0), -1.0, 0.0, &c).is_err());
    }

    #[test]
    fn degenerate_bernoulli() {
        let mut rng = stream_rng(7, Stream::DeviceArrivals);
        assert!((0..1000).all(|_| !draw_device_arrival(&mut rng, 0.0)));
        assert!((0..1000).all(|_| draw_device_arrival(&mut rng, 1.0)));
    }

    #[test]
    fn bernoulli_mean() {
        let mut rng = stream_rng(11, Stream::DeviceArrivals);
        let n = 100_000;
        let hits = (0..n).filter(|_| draw_device_arrival(&mut rng, 0.4)).count();
        let mean = hits as f64 / n as f64;
        assert!((mean - 0.4).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn zero_rate_edge_inflow() {
        let c = SimConfig {
            edge_arrival_rate: 0.0,
            ..cfg()
        };
        let mut rng = stream_rng(1, Stream::EdgeArrivals);
        assert!((0..100).all(|_| draw_edge_inflow(&mut rng, &c) == 0.0));
    }

    #[test]
    fn edge_inflow_mean() {
        // one background task per slot on average
        let c = SimConfig {
            edge_arrival_rate: 100.0,
            ..cfg()
        };
        assert!((c.edge_arrivals_per_slot() - 1.0).abs() < 1e-12);
        let sampler = EdgeInflowSampler::new(&c);
        let mut rng = stream_rng(3, Stream::EdgeArrivals);
        let n = 100_000;
        let mean = (0..n).map(|_| sampler.draw(&mut rng)).sum::<f64>() / n as f64;
        let expected = 1.0 * 8e9 / 2.0;
        assert!((mean - expected).abs() / expected < 0.02, "mean {mean}");
    }

    #[test]
    fn load_lambda_conversion() {
        let c = cfg();
        assert_eq!(edge_load_to_lambda(0.0, &c), 0.0);
        assert!((edge_load_to_lambda(0.9, &c) - 11.25).abs() < 1e-12);
        // per-slot normalisation agrees with the per-second load definition
        let lambda = edge_load_to_lambda(0.9, &c);
        let per_slot_load = lambda * c.slot_duration_s * c.edge_task_cycles_max / (2.0 * c.edge_capacity_per_slot());
        assert!((per_slot_load - 0.9).abs() < 1e-12);
        for load in [0.1, 0.5, 0.9, 1.3] {
            assert!((lambda_to_edge_load(edge_load_to_lambda(load, &c), &c) - load).abs() < 1e-12);
        }
    }

    #[test]
    fn trace_is_reproducible_and_peek_independent() {
        let c = SimConfig {
            device_task_prob: 0.3,
            ..cfg()
        };
        let mut a = ArrivalTrace::new(&c);
        let mut b = ArrivalTrace::new(&c);
        let peeked = b.get(500);
        let seq_a: Vec<_> = (0..600).map(|t| a.get(t)).collect();
        let seq_b: Vec<_> = (0..600).map(|t| b.get(t)).collect();
        assert_eq!(seq_a, seq_b);
        assert_eq!(seq_a[500], peeked);
        b.discard_before(300);
        assert_eq!(b.get(400), seq_a[400]);
    }

    #[test]
    fn device_and_edge_streams_are_independent() {
        let c1 = SimConfig {
            device_task_prob: 0.3,
            ..cfg()
        };
        let c2 = SimConfig {
            device_task_prob: 0.7,
            ..cfg()
        };
        let mut a = ArrivalTrace::new(&c1);
        let mut b = ArrivalTrace::new(&c2);
        for t in 0..300 {
            assert_eq!(a.get(t).edge_cycles, b.get(t).edge_cycles);
        }
    }
}
