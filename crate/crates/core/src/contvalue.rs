//! Continuation-value network `Ĉ_θ(l+1, D^lq, T^eq)`, its training data and
//! its online training loop.

use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cost::CostModel;
use crate::error::{Error, Result};
use crate::sim::{stream_rng, Stream};
use crate::twin::TwinSnapshot;

pub const INPUT_DIM: usize = 3;
pub const LAYER_DIMS: [usize; 5] = [INPUT_DIM, 200, 100, 20, 1];
pub const LEARNING_RATE: f64 = 1e-3;
pub const BATCH_SIZE: usize = 64;
const CHECKPOINT_VERSION: u32 = 1;

/// Fully connected network with rectifier hidden layers and a linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    dims: Vec<usize>,
    params: Vec<f64>,
}

/// Activations kept for the backward pass.
struct Trace {
    acts: Vec<Vec<f64>>,
}

impl Mlp {
    /// Uniform fan-in scaled weights, zero biases and a zero output layer.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2 && *dims.last().unwrap() == 1, "scalar output expected");
        let mut params = Vec::with_capacity(Self::param_count(dims));
        let last = dims.len() - 2;
        for k in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[k], dims[k + 1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push(if k == last { 0.0 } else { rng.random_range(-bound..bound) });
            }
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Self {
            dims: dims.to_vec(),
            params,
        }
    }

    fn param_count(dims: &[usize]) -> usize {
        dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn run(&self, input: &[f64], keep: bool) -> (f64, Option<Trace>) {
        let mut acts: Vec<Vec<f64>> = Vec::new();
        let mut a = input.to_vec();
        let mut off = 0;
        let n = self.dims.len() - 1;
        for k in 0..n {
            let (fi, fo) = (self.dims[k], self.dims[k + 1]);
            let w = &self.params[off..off + fi * fo];
            let b = &self.params[off + fi * fo..off + fi * fo + fo];
            off += fi * fo + fo;
            let mut z: Vec<f64> = b.to_vec();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &w[o * fi..(o + 1) * fi];
                *zo += row.iter().zip(&a).map(|(wi, ai)| wi * ai).sum::<f64>();
            }
            if k + 1 < n {
                for v in &mut z {
                    *v = v.max(0.0);
                }
            }
            if keep {
                acts.push(std::mem::replace(&mut a, z));
            } else {
                a = z;
            }
        }
        let out = a[0];
        if keep {
            acts.push(a);
        }
        (out, keep.then_some(Trace { acts }))
    }

    pub fn forward(&self, input: &[f64]) -> f64 {
        self.run(input, false).0
    }

    /// Adds `dout * d(output)/d(params)` to `grad`.
    fn backward(&self, trace: &Trace, dout: f64, grad: &mut [f64]) {
        let n = self.dims.len() - 1;
        let mut offsets = Vec::with_capacity(n);
        let mut off = 0;
        for k in 0..n {
            offsets.push(off);
            off += self.dims[k] * self.dims[k + 1] + self.dims[k + 1];
        }
        let mut delta = vec![dout];
        for k in (0..n).rev() {
            let (fi, fo) = (self.dims[k], self.dims[k + 1]);
            let off = offsets[k];
            let a_in = &trace.acts[k];
            for o in 0..fo {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let g = &mut grad[off + o * fi..off + (o + 1) * fi];
                for (gi, ai) in g.iter_mut().zip(a_in) {
                    *gi += d * ai;
                }
                grad[off + fi * fo + o] += d;
            }
            if k > 0 {
                let w = &self.params[off..off + fi * fo];
                let mut prev = vec![0.0; fi];
                for o in 0..fo {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    for (p, wi) in prev.iter_mut().zip(&w[o * fi..(o + 1) * fi]) {
                        *p += d * wi;
                    }
                }
                // rectifier derivative, read off the stored post-activation
                for (p, a) in prev.iter_mut().zip(a_in) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
    }

    /// `d(output)/d(params)` at `input`.
    pub fn param_gradient(&self, input: &[f64]) -> Vec<f64> {
        let (_, trace) = self.run(input, true);
        let mut grad = vec![0.0; self.params.len()];
        self.backward(&trace.expect("trace kept"), 1.0, &mut grad);
        grad
    }
}

/// Adaptive-moment optimiser state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Running per-feature standardisation (Welford).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub count: u64,
    pub mean: [f64; INPUT_DIM],
    pub m2: [f64; INPUT_DIM],
}

impl Default for Normalizer {
    fn default() -> Self {
        Self {
            count: 0,
            mean: [0.0; INPUT_DIM],
            m2: [0.0; INPUT_DIM],
        }
    }
}

impl Normalizer {
    pub fn update(&mut self, x: &[f64; INPUT_DIM]) {
        self.count += 1;
        let n = self.count as f64;
        for i in 0..INPUT_DIM {
            let d = x[i] - self.mean[i];
            self.mean[i] += d / n;
            self.m2[i] += d * (x[i] - self.mean[i]);
        }
    }

    pub fn apply(&self, x: &[f64; INPUT_DIM]) -> [f64; INPUT_DIM] {
        let mut out = *x;
        for i in 0..INPUT_DIM {
            let sd = if self.count >= 2 {
                (self.m2[i] / self.count as f64).sqrt()
            } else {
                1.0
            };
            let sd = if sd > 1e-9 { sd } else { 1.0 };
            out[i] = (x[i] - self.mean[i]) / sd;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleSource {
    Observed,
    TwinAugmented,
}

/// Input `(l+1, D_l^lq, T_l^eq)` with its reference continuation value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub input: [f64; INPUT_DIM],
    pub target: f64,
    pub source: SampleSource,
    /// `U^lt_{l+1}`, kept so the target can be rebuilt with newer parameters.
    pub next_lt_utility: f64,
    /// Input of `Ĉ(l+2, D_{l+1}^lq, T_{l+1}^eq)`; absent at the last step.
    pub next_input: Option<[f64; INPUT_DIM]>,
}

impl TrainingSample {
    /// Sample whose target never changes.
    pub fn fixed(input: [f64; INPUT_DIM], target: f64, source: SampleSource) -> Self {
        Self {
            input,
            target,
            source,
            next_lt_utility: target,
            next_input: None,
        }
    }

    /// Same sample with the target rebuilt from the current parameters.
    pub fn refreshed(&self, model: &ContValueModel) -> Result<Self> {
        let cont = self.next_input.map(|i| model.forward(&i)).transpose()?;
        Ok(Self {
            target: build_reference_target(self.next_lt_utility, cont),
            ..*self
        })
    }

    pub fn layer_index(&self) -> usize {
        self.input[0] as usize
    }
}

/// `max(U^lt_{l+1}, Ĉ(l+2, ...))`, or `U^lt_{l_e+1}` at the last step.
pub fn build_reference_target(next_lt_utility: f64, next_approx_cont: Option<f64>) -> f64 {
    match next_approx_cont {
        Some(c) => next_lt_utility.max(c),
        None => next_lt_utility,
    }
}

/// Queue-dependent state of a task after `layer` local layers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerState {
    pub layer: usize,
    pub d_lq_s: f64,
    pub t_eq_s: f64,
}

/// The continuation-value approximator with its optimiser and normaliser.
#[derive(Debug, Clone)]
pub struct ContValueModel {
    pub mlp: Mlp,
    pub optimizer: Adam,
    pub normalizer: Normalizer,
    losses: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    layer_dims: Vec<usize>,
    params: Vec<f64>,
    normalizer: Normalizer,
}

impl ContValueModel {
    pub fn new(seed: u64) -> Self {
        let mut rng = stream_rng(seed, Stream::NetworkInit);
        let mlp = Mlp::new(&LAYER_DIMS, &mut rng);
        let n = mlp.params().len();
        Self {
            mlp,
            optimizer: Adam::new(n, LEARNING_RATE),
            normalizer: Normalizer::default(),
            losses: Vec::new(),
        }
    }

    /// `Ĉ_θ(layer, d_lq, t_eq)`.
    pub fn forward(&self, input: &[f64; INPUT_DIM]) -> Result<f64> {
        let y = self.mlp.forward(&self.normalizer.apply(input));
        if !y.is_finite() {
            return Err(Error::Model(format!("non-finite output {y} for input {input:?}")));
        }
        Ok(y)
    }

    pub fn cont_value(&self, layer: usize, d_lq_s: f64, t_eq_s: f64) -> Result<f64> {
        self.forward(&[layer as f64, d_lq_s, t_eq_s])
    }

    /// Batch mean squared error at the current parameters.
    pub fn loss(&self, batch: &[TrainingSample]) -> Result<f64> {
        if batch.is_empty() {
            return Ok(0.0);
        }
        let mut s = 0.0;
        for smp in batch {
            let e = self.forward(&smp.input)? - smp.target;
            s += e * e;
        }
        Ok(s / batch.len() as f64)
    }

    /// One optimiser step on the batch; returns the loss before the step.
    pub fn train_step(&mut self, batch: &[TrainingSample]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Model("empty training batch".into()));
        }
        let b = batch.len() as f64;
        let mut grad = vec![0.0; self.mlp.params().len()];
        let mut loss = 0.0;
        for smp in batch {
            let x = self.normalizer.apply(&smp.input);
            let (y, trace) = self.mlp.run(&x, true);
            let e = y - smp.target;
            loss += e * e;
            self.mlp.backward(&trace.expect("trace kept"), 2.0 * e / b, &mut grad);
        }
        loss /= b;
        if !loss.is_finite() {
            return Err(Error::Model(format!(
                "non-finite training loss at step {}",
                self.optimizer.step + 1
            )));
        }
        self.optimizer.update(self.mlp.params_mut(), &grad);
        self.losses.push(loss);
        Ok(loss)
    }

    /// Pre-step batch losses of every training step so far.
    pub fn loss_history(&self) -> &[f64] {
        &self.losses
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let ck = Checkpoint {
            version: CHECKPOINT_VERSION,
            layer_dims: self.mlp.dims().to_vec(),
            params: self.mlp.params().to_vec(),
            normalizer: self.normalizer.clone(),
        };
        let text = serde_json::to_string(&ck).map_err(|e| Error::parse(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::parse(path, format!("unsupported checkpoint version {}", ck.version)));
        }
        if ck.layer_dims != LAYER_DIMS || ck.params.len() != Mlp::param_count(&ck.layer_dims) {
            return Err(Error::parse(path, "layer dimensions do not match"));
        }
        let n = ck.params.len();
        Ok(Self {
            mlp: Mlp {
                dims: ck.layer_dims,
                params: ck.params,
            },
            optimizer: Adam::new(n, LEARNING_RATE),
            normalizer: ck.normalizer,
            losses: Vec::new(),
        })
    }
}

/// Samples of one task from its per-layer states `l = 0..=l_e+1`.
///
/// A sample for step `l` is observed when the next state `l+1` was actually
/// reached before the task left the device; otherwise it comes from the twin.
/// Without augmentation only observed samples are returned.
pub fn build_task_samples(
    states: &[LayerState],
    x_n: usize,
    cost: &CostModel,
    model: &ContValueModel,
    augment: bool,
) -> Result<Vec<TrainingSample>> {
    let le = cost.profile.exit_index();
    let device_only = cost.device_only();
    if states.len() != device_only + 1 || states.iter().enumerate().any(|(i, s)| s.layer != i) {
        return Err(Error::Model(format!("need layer states 0..={device_only}")));
    }
    let mut out = Vec::with_capacity(le + 1);
    for l in 0..=le {
        let observed = x_n == device_only || l < x_n;
        if !observed && !augment {
            continue;
        }
        let next = states[l + 1];
        let next_lt = cost.lt_utility(l + 1, next.d_lq_s, next.t_eq_s)?;
        let next_input = (l < le).then(|| [(l + 2) as f64, next.d_lq_s, next.t_eq_s]);
        let cont = next_input.map(|i| model.forward(&i)).transpose()?;
        let s = states[l];
        out.push(TrainingSample {
            input: [(l + 1) as f64, s.d_lq_s, s.t_eq_s],
            target: build_reference_target(next_lt, cont),
            source: if observed {
                SampleSource::Observed
            } else {
                SampleSource::TwinAugmented
            },
            next_lt_utility: next_lt,
            next_input,
        });
    }
    Ok(out)
}

/// Completes the observed states `0..=x_n` with twin-emulated ones and builds
/// the task's samples.
pub fn augment_from_twin(
    observed: &[LayerState],
    snapshot: &TwinSnapshot,
    cost: &CostModel,
    model: &ContValueModel,
    augment: bool,
) -> Result<Vec<TrainingSample>> {
    let device_only = cost.device_only();
    if snapshot.decision_slots.len() != device_only + 1 {
        return Err(Error::Twin(format!(
            "snapshot of task {} covers {} decision slots, need {}",
            snapshot.task_index,
            snapshot.decision_slots.len(),
            device_only + 1
        )));
    }
    let window = (snapshot.decision_slots[device_only] - snapshot.start_slot()) as usize;
    if snapshot.window_len() < window {
        return Err(Error::Twin(format!(
            "snapshot of task {} ends before the device-only completion slot",
            snapshot.task_index
        )));
    }
    let x_n = observed
        .len()
        .checked_sub(1)
        .ok_or_else(|| Error::Model("no observed layer states".into()))?;
    let dt = cost.cfg.slot_duration_s;
    let mut states = observed.to_vec();
    for l in x_n + 1..=device_only {
        let d_lq_s = snapshot.d_lq_slots(l)? as f64 * dt;
        let t_eq_s = if l == device_only {
            0.0
        } else {
            cost.edge_queuing_delay(l, snapshot.backlog_at_layer(l)?)?
        };
        states.push(LayerState { layer: l, d_lq_s, t_eq_s });
    }
    build_task_samples(&states, x_n, cost, model, augment)
}

/// All samples collected during the training phase.
#[derive(Debug, Clone, Default)]
pub struct ReplayBuffer {
    samples: Vec<TrainingSample>,
}

impl ReplayBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, s: TrainingSample) {
        self.samples.push(s);
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[TrainingSample] {
        &self.samples
    }

    /// Up to `size` distinct samples drawn uniformly.
    pub fn sample_batch(&self, rng: &mut ChaCha8Rng, size: usize) -> Vec<TrainingSample> {
        if self.samples.len() <= size {
            return self.samples.clone();
        }
        index::sample(rng, self.samples.len(), size)
            .into_iter()
            .map(|i| self.samples[i])
            .collect()
    }
}

/// Online training driver: buffer, normaliser updates and one minibatch step per task.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: ContValueModel,
    pub buffer: ReplayBuffer,
    rng: ChaCha8Rng,
    pub augment: bool,
    /// Rebuild stored targets with the current parameters whenever they are used.
    pub refresh_targets: bool,
}

impl Trainer {
    pub fn new(seed: u64, augment: bool) -> Self {
        Self {
            model: ContValueModel::new(seed),
            buffer: ReplayBuffer::new(),
            rng: stream_rng(seed, Stream::Minibatch),
            augment,
            refresh_targets: true,
        }
    }

    fn prepare(&self, batch: Vec<TrainingSample>) -> Result<Vec<TrainingSample>> {
        if !self.refresh_targets {
            return Ok(batch);
        }
        batch.iter().map(|s| s.refreshed(&self.model)).collect()
    }

    /// Stores the samples of one task and takes one minibatch step.
    pub fn ingest_task(&mut self, samples: Vec<TrainingSample>) -> Result<Option<f64>> {
        for s in samples {
            self.model.normalizer.update(&s.input);
            self.buffer.push(s);
        }
        if self.buffer.is_empty() {
            return Ok(None);
        }
        let batch = self.buffer.sample_batch(&mut self.rng, BATCH_SIZE);
        let batch = self.prepare(batch)?;
        self.model.train_step(&batch).map(Some)
    }

    /// Mean squared error over the whole buffer.
    pub fn full_buffer_loss(&self) -> Result<f64> {
        let all = self.prepare(self.buffer.samples().to_vec())?;
        self.model.loss(&all)
    }
}
