//! Deep Q-learning machinery built from explicit numerics: a small
//! multilayer perceptron Q-network, a target network, uniform experience
//! replay, and an epsilon-greedy schedule.
//!
//! The action head has a fixed width of `1 + 10 * k_max` entries
//! (proceed plus ten charge amounts for each of the `k_max` nearest
//! chargers); per-state legality is handled by masking.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::math;

/// Charge amounts are multiples of 10 in [10, 100].
pub const CHARGE_LEVELS: usize = 10;

/// Flat action-head index for "proceed without charging".
pub const PROCEED_INDEX: usize = 0;

/// Head width for a given number of charger slots.
pub fn action_head_len(k_max: usize) -> usize {
    1 + CHARGE_LEVELS * k_max
}

/// Head index for charging at slot `k` (0-based nearest-charger rank)
/// by `n` percent (multiple of 10).
pub fn charge_action_index(k: usize, n_percent: u32) -> usize {
    1 + k * CHARGE_LEVELS + (n_percent as usize / 10 - 1)
}

/// Inverse of [`charge_action_index`]; `None` for the proceed action.
pub fn decode_action_index(index: usize) -> Option<(usize, u32)> {
    if index == PROCEED_INDEX {
        return None;
    }
    let i = index - 1;
    Some((i / CHARGE_LEVELS, ((i % CHARGE_LEVELS) as u32 + 1) * 10))
}

/// Boolean legality mask over the fixed action head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionMask(pub Vec<bool>);

impl ActionMask {
    pub fn none(len: usize) -> Self {
        ActionMask(vec![false; len])
    }

    pub fn any(&self) -> bool {
        self.0.iter().any(|b| *b)
    }

    pub fn legal_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| i)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// Row-major `out x in` weight matrix.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub inputs: usize,
    pub outputs: usize,
}

/// Feed-forward Q-network: rectified-linear hidden layers, linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QNetwork {
    pub layers: Vec<Layer>,
    pub init_seed: u64,
}

impl QNetwork {
    /// Xavier-uniform initialization, deterministic per seed.
    pub fn new(sizes: &[usize], seed: u64) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output layer");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        for pair in sizes.windows(2) {
            let (inputs, outputs) = (pair[0], pair[1]);
            let limit = math::sqrt(6.0 / (inputs + outputs) as f64);
            let weights = (0..inputs * outputs)
                .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * limit)
                .collect();
            layers.push(Layer { weights, biases: vec![0.0; outputs], inputs, outputs });
        }
        QNetwork { layers, init_seed: seed }
    }

    pub fn input_len(&self) -> usize {
        self.layers.first().map(|l| l.inputs).unwrap_or(0)
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().map(|l| l.outputs).unwrap_or(0)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn same_architecture(&self, other: &QNetwork) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.inputs == b.inputs && a.outputs == b.outputs)
    }

    /// Forward pass keeping post-activation values per layer for backprop.
    fn forward_trace(&self, input: &[f64]) -> Result<Vec<Vec<f64>>, CoreError> {
        if input.len() != self.input_len() {
            return Err(CoreError::DimensionMismatch {
                expected: self.input_len(),
                got: input.len(),
            });
        }
        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_vec());
        for (li, layer) in self.layers.iter().enumerate() {
            let last = activations.last().unwrap();
            let mut out = vec![0.0; layer.outputs];
            for o in 0..layer.outputs {
                let mut acc = layer.biases[o];
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (w, x) in row.iter().zip(last) {
                    acc += w * x;
                }
                // rectifier on hidden layers only
                if li + 1 < self.layers.len() {
                    acc = acc.max(0.0);
                }
                out[o] = acc;
            }
            activations.push(out);
        }
        Ok(activations)
    }
}

/// Deterministic forward pass to Q-values.
pub fn q_forward(net: &QNetwork, state: &[f64]) -> Result<Vec<f64>, CoreError> {
    Ok(net.forward_trace(state)?.pop().unwrap())
}

/// Target network: same architecture, parameters synced on demand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetNetwork {
    pub net: QNetwork,
    pub sync_counter: u64,
}

impl TargetNetwork {
    pub fn from_online(net: &QNetwork) -> Self {
        TargetNetwork { net: net.clone(), sync_counter: 0 }
    }
}

/// Copy online parameters into the target network exactly.
pub fn sync_target(net: &QNetwork, target: &mut TargetNetwork) -> Result<(), CoreError> {
    if !net.same_architecture(&target.net) {
        return Err(CoreError::ArchitectureMismatch);
    }
    target.net = net.clone();
    target.sync_counter += 1;
    Ok(())
}

/// One stored transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    pub state: Vec<f64>,
    pub action_index: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// Legality mask of the successor state, used for the target max.
    pub next_legal: ActionMask,
    pub terminal: bool,
}

/// FIFO ring buffer sampled uniformly without replacement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    pub capacity: usize,
    items: Vec<Experience>,
    next: usize,
    pub inserted: u64,
}

pub const DEFAULT_REPLAY_CAPACITY: usize = 10_000;

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer { capacity, items: Vec::new(), next: 0, inserted: 0 }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, e: Experience) {
        if self.items.len() < self.capacity {
            self.items.push(e);
        } else {
            self.items[self.next] = e;
        }
        self.next = (self.next + 1) % self.capacity;
        self.inserted += 1;
    }

    pub fn iter(&self) -> impl Iterator<Item = &Experience> {
        self.items.iter()
    }

    /// Uniform sample of `n` distinct experiences.
    pub fn sample_minibatch<R: Rng>(
        &self,
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<Experience>, CoreError> {
        if n > self.items.len() {
            return Err(CoreError::BufferTooSmall { requested: n, available: self.items.len() });
        }
        // partial Fisher-Yates over the index range
        let mut idx: Vec<usize> = (0..self.items.len()).collect();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let j = rng.random_range(i..idx.len());
            idx.swap(i, j);
            out.push(self.items[idx[i]].clone());
        }
        Ok(out)
    }
}

/// Multiplicative epsilon decay with a floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplorationSchedule {
    pub epsilon_start: f64,
    pub decay: f64,
    pub epsilon_floor: f64,
}

impl Default for ExplorationSchedule {
    fn default() -> Self {
        ExplorationSchedule { epsilon_start: 0.99, decay: 0.995, epsilon_floor: 0.05 }
    }
}

/// `max(floor, start * decay^episode)`.
pub fn epsilon_at(schedule: &ExplorationSchedule, episode: u32) -> f64 {
    let eps = schedule.epsilon_start * math::powf(schedule.decay, episode as f64);
    eps.max(schedule.epsilon_floor)
}

/// Epsilon-greedy selection over the legal subset; exploitation breaks
/// ties toward the lowest index.
pub fn select_action<R: Rng>(
    q: &[f64],
    legal: &ActionMask,
    epsilon: f64,
    rng: &mut R,
) -> Result<usize, CoreError> {
    let legal_idx: Vec<usize> = legal.legal_indices().collect();
    if legal_idx.is_empty() {
        return Err(CoreError::NoLegalAction);
    }
    if rng.random::<f64>() < epsilon {
        return Ok(legal_idx[rng.random_range(0..legal_idx.len())]);
    }
    let mut best = legal_idx[0];
    for &i in &legal_idx[1..] {
        if q[i] > q[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Zero-filled gradient buffer matching a network's layout.
struct Gradients {
    layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Gradients {
    fn zeros(net: &QNetwork) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.biases.len()]))
                .collect(),
        }
    }
}

/// Target value for one experience under the Bellman backup.
fn bellman_target(
    target: &TargetNetwork,
    e: &Experience,
    gamma: f64,
) -> Result<f64, CoreError> {
    if e.terminal {
        return Ok(e.reward);
    }
    let q_next = q_forward(&target.net, &e.next_state)?;
    let max_next = e
        .next_legal
        .legal_indices()
        .map(|i| q_next[i])
        .fold(f64::NEG_INFINITY, f64::max);
    // a successor with no legal action bootstraps like a terminal
    if max_next == f64::NEG_INFINITY {
        return Ok(e.reward);
    }
    Ok(e.reward + gamma * max_next)
}

/// One SGD step on the mean-squared Bellman error of `batch`.
///
/// Only the online parameters move; the target network is untouched.
/// Returns the pre-update loss.
pub fn train_step(
    net: &mut QNetwork,
    target: &TargetNetwork,
    batch: &[Experience],
    lr: f64,
    gamma: f64,
) -> Result<f64, CoreError> {
    if batch.is_empty() {
        return Err(CoreError::InvalidConfig(alloc::string::String::from("empty batch")));
    }
    if !net.same_architecture(&target.net) {
        return Err(CoreError::ArchitectureMismatch);
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grads = Gradients::zeros(net);
    let mut loss = 0.0;

    for e in batch {
        if e.action_index >= net.output_len() {
            return Err(CoreError::DimensionMismatch {
                expected: net.output_len(),
                got: e.action_index,
            });
        }
        let y = bellman_target(target, e, gamma)?;
        let activations = net.forward_trace(&e.state)?;
        let q = activations.last().unwrap()[e.action_index];
        let err = q - y;
        loss += err * err * scale;

        // output-layer delta is zero except at the taken action
        let mut delta = vec![0.0; net.output_len()];
        delta[e.action_index] = 2.0 * err * scale;

        for li in (0..net.layers.len()).rev() {
            let layer = &net.layers[li];
            let input = &activations[li];
            let (gw, gb) = &mut grads.layers[li];
            for o in 0..layer.outputs {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                for (g, x) in row.iter_mut().zip(input) {
                    *g += d * x;
                }
            }
            if li > 0 {
                let mut prev = vec![0.0; layer.inputs];
                for o in 0..layer.outputs {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (p, w) in prev.iter_mut().zip(row) {
                        *p += d * w;
                    }
                }
                // rectifier gate: gradient flows only through active units
                for (p, a) in prev.iter_mut().zip(&activations[li]) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
    }

    if !loss.is_finite() {
        return Err(CoreError::NonFiniteLoss);
    }
    for (layer, (gw, gb)) in net.layers.iter_mut().zip(&grads.layers) {
        for (w, g) in layer.weights.iter_mut().zip(gw) {
            *w -= lr * g;
        }
        for (b, g) in layer.biases.iter_mut().zip(gb) {
            *b -= lr * g;
        }
    }
    Ok(loss)
}

/// Learning hyperparameters for one policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub discount: f64,
    pub batch_size: usize,
    pub target_sync_period: u64,
    /// Gradient steps taken per recorded decision.
    pub train_steps_per_decision: u32,
    pub replay_capacity: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            learning_rate: 0.0001,
            discount: 0.95,
            batch_size: 32,
            target_sync_period: 200,
            train_steps_per_decision: 1,
            replay_capacity: DEFAULT_REPLAY_CAPACITY,
        }
    }
}

/// One driver group's learning state: online and target networks, replay
/// buffer, exploration schedule, and step bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub net: QNetwork,
    pub target: TargetNetwork,
    pub buffer: ReplayBuffer,
    pub schedule: ExplorationSchedule,
    pub hyper: Hyperparams,
    pub train_steps: u64,
}

impl Policy {
    pub fn new(sizes: &[usize], hyper: Hyperparams, schedule: ExplorationSchedule, seed: u64) -> Self {
        let net = QNetwork::new(sizes, seed);
        let target = TargetNetwork::from_online(&net);
        Policy {
            net,
            target,
            buffer: ReplayBuffer::new(hyper.replay_capacity),
            schedule,
            hyper,
            train_steps: 0,
        }
    }

    /// Epsilon-greedy action for `state` under `epsilon`.
    pub fn act<R: Rng>(
        &self,
        state: &[f64],
        legal: &ActionMask,
        epsilon: f64,
        rng: &mut R,
    ) -> Result<usize, CoreError> {
        let q = q_forward(&self.net, state)?;
        select_action(&q, legal, epsilon, rng)
    }

    /// Store a transition and run the configured number of gradient
    /// steps (once the buffer can fill a batch), syncing the target
    /// network on period.
    pub fn record_and_learn<R: Rng>(
        &mut self,
        e: Experience,
        rng: &mut R,
    ) -> Result<Option<f64>, CoreError> {
        self.buffer.push(e);
        if self.buffer.len() < self.hyper.batch_size {
            return Ok(None);
        }
        let mut last_loss = None;
        for _ in 0..self.hyper.train_steps_per_decision {
            let batch = self.buffer.sample_minibatch(self.hyper.batch_size, rng)?;
            let loss = train_step(
                &mut self.net,
                &self.target,
                &batch,
                self.hyper.learning_rate,
                self.hyper.discount,
            )?;
            self.train_steps += 1;
            if self.train_steps % self.hyper.target_sync_period == 0 {
                sync_target(&self.net, &mut self.target)?;
            }
            last_loss = Some(loss);
        }
        Ok(last_loss)
    }
}
