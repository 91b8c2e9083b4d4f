use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{Adam, QNetwork};
use super::replay::{ReplayBuffer, Transition};
use super::{Agent, AgentError};
use crate::env::{ActionCode, StateMatrix};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TdHyperparams {
    pub hidden: Vec<usize>,
    pub gamma: f64,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub target_sync_every: u64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_episodes: usize,
    /// Rewards are multiplied by this before entering the TD target.
    pub reward_scale: f64,
}

impl Default for TdHyperparams {
    fn default() -> Self {
        TdHyperparams {
            hidden: vec![32, 32],
            gamma: 0.99,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            batch_size: 64,
            replay_capacity: 50_000,
            target_sync_every: 500,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_episodes: 50,
            reward_scale: 1e-3,
        }
    }
}

impl TdHyperparams {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::Hyperparams(m.to_string()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size {
            return bad("need 0 < batch_size <= replay_capacity");
        }
        if self.target_sync_every == 0 {
            return bad("target_sync_every must be positive");
        }
        if !(self.learning_rate > 0.0) || !(self.reward_scale > 0.0) {
            return bad("learning_rate and reward_scale must be positive");
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_end) {
            return bad("epsilon values must lie in [0, 1]");
        }
        Ok(())
    }

    /// Linear decay from start to end over the first `epsilon_decay_episodes`.
    pub fn epsilon_at(&self, episode: usize) -> f64 {
        if self.epsilon_decay_episodes == 0 || episode >= self.epsilon_decay_episodes {
            return self.epsilon_end;
        }
        let f = episode as f64 / self.epsilon_decay_episodes as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * f
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Epsilon-greedy Q-learner with replay and a hard-synced target network.
pub struct TdAgent {
    hp: TdHyperparams,
    online: QNetwork,
    target: QNetwork,
    adam: Adam,
    buffer: ReplayBuffer,
    rng: ChaCha8Rng,
    updates: u64,
    episode: usize,
}

impl TdAgent {
    pub fn new(intersections: usize, hp: TdHyperparams, seed: u64) -> Result<Self, AgentError> {
        hp.validate()?;
        let mut sizes = vec![intersections * intersections];
        sizes.extend(&hp.hidden);
        sizes.push(3 * intersections);
        let mut rng = rng_from_seed(seed);
        let online = QNetwork::new(&sizes, &mut rng).map_err(|e| AgentError::Hyperparams(e.to_string()))?;
        Ok(Self::assemble(online, hp, rng))
    }

    fn assemble(online: QNetwork, hp: TdHyperparams, rng: ChaCha8Rng) -> Self {
        let adam = Adam::new(
            online.params().len(),
            hp.learning_rate,
            hp.adam_beta1,
            hp.adam_beta2,
            hp.adam_epsilon,
        );
        TdAgent {
            target: online.clone(),
            online,
            adam,
            buffer: ReplayBuffer::new(hp.replay_capacity),
            hp,
            rng,
            updates: 0,
            episode: 0,
        }
    }

    pub fn from_network(online: QNetwork, hp: TdHyperparams, seed: u64) -> Result<Self, AgentError> {
        hp.validate()?;
        Ok(Self::assemble(online, hp, rng_from_seed(seed)))
    }

    pub fn network(&self) -> &QNetwork {
        &self.online
    }

    pub fn network_mut(&mut self) -> &mut QNetwork {
        &mut self.online
    }

    pub fn target_network(&self) -> &QNetwork {
        &self.target
    }

    pub fn hyperparams(&self) -> &TdHyperparams {
        &self.hp
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn episode(&self) -> usize {
        self.episode
    }

    pub fn epsilon(&self) -> f64 {
        self.hp.epsilon_at(self.episode)
    }

    pub fn td_act(&mut self, state: &StateMatrix, epsilon: f64) -> Result<ActionCode, AgentError> {
        let n = self.online.output_len();
        if self.rng.gen::<f64>() < epsilon {
            return Ok(ActionCode(self.rng.gen_range(0..n)));
        }
        let q = self
            .online
            .forward(state.as_slice())
            .map_err(|e| AgentError::InputLength {
                got: state.as_slice().len(),
                expected: match e {
                    super::NetworkError::InputLength { expected, .. } => expected,
                    _ => self.online.input_len(),
                },
            })?;
        Ok(ActionCode(argmax(&q)))
    }

    pub fn push(&mut self, t: Transition) {
        self.buffer.push(t);
    }

    /// One Adam step on a uniformly sampled batch. Returns the pre-update loss.
    pub fn td_train_step(&mut self) -> Result<f64, AgentError> {
        let need = self.hp.batch_size;
        if self.buffer.len() < need {
            return Err(AgentError::InsufficientReplay {
                have: self.buffer.len(),
                need,
            });
        }
        let batch = self.buffer.sample(need, &mut self.rng);
        let (loss, grad) = self
            .online
            .td_loss_and_grad(&self.target, &batch, self.hp.gamma, self.hp.reward_scale)
            .map_err(|e| AgentError::Hyperparams(e.to_string()))?;
        self.adam.step(self.online.params_mut(), &grad);
        self.updates += 1;
        if self.updates % self.hp.target_sync_every == 0 {
            self.target = self.online.clone();
        }
        Ok(loss)
    }

    pub fn checkpoint(&self) -> TdCheckpoint {
        TdCheckpoint {
            format_version: TdCheckpoint::FORMAT_VERSION,
            kind: TdCheckpoint::KIND.to_string(),
            layer_sizes: self.online.sizes().to_vec(),
            params: self.online.params().to_vec(),
            hyperparams: self.hp.clone(),
            episodes_trained: self.episode,
            updates: self.updates,
        }
    }
}

impl Agent for TdAgent {
    fn act(&mut self, state: &StateMatrix) -> Result<ActionCode, AgentError> {
        let eps = self.epsilon();
        self.td_act(state, eps)
    }

    fn observe(&mut self, transition: Transition) {
        self.push(transition);
    }

    fn train_step(&mut self) -> Result<Option<f64>, AgentError> {
        if self.buffer.len() < self.hp.batch_size {
            return Ok(None);
        }
        self.td_train_step().map(Some)
    }

    fn end_episode(&mut self) {
        self.episode += 1;
    }
}

/// Frozen network acting greedily.
#[derive(Debug, Clone)]
pub struct GreedyPolicy {
    network: QNetwork,
}

impl GreedyPolicy {
    pub fn new(network: QNetwork) -> Self {
        GreedyPolicy { network }
    }

    pub fn network(&self) -> &QNetwork {
        &self.network
    }
}

impl Agent for GreedyPolicy {
    fn act(&mut self, state: &StateMatrix) -> Result<ActionCode, AgentError> {
        let q = self.network.forward(state.as_slice()).map_err(|_| AgentError::InputLength {
            got: state.as_slice().len(),
            expected: self.network.input_len(),
        })?;
        Ok(ActionCode(argmax(&q)))
    }
}

/// JSON checkpoint. `params` follows the network's flat layout: per layer,
/// the row-major `out x in` weights then the biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TdCheckpoint {
    pub format_version: u32,
    pub kind: String,
    pub layer_sizes: Vec<usize>,
    pub params: Vec<f64>,
    pub hyperparams: TdHyperparams,
    pub episodes_trained: usize,
    pub updates: u64,
}

impl TdCheckpoint {
    pub const FORMAT_VERSION: u32 = 1;
    pub const KIND: &'static str = "td_q_network";

    pub fn network(&self) -> Result<QNetwork, AgentError> {
        QNetwork::from_params(self.layer_sizes.clone(), self.params.clone())
            .map_err(|e| AgentError::Checkpoint(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, AgentError> {
        let ck: TdCheckpoint = serde_json::from_str(text).map_err(|e| AgentError::Checkpoint(e.to_string()))?;
        if ck.format_version != Self::FORMAT_VERSION {
            return Err(AgentError::Checkpoint(format!(
                "unsupported format_version {}",
                ck.format_version
            )));
        }
        if ck.kind != Self::KIND {
            return Err(AgentError::Checkpoint(format!("unexpected kind {:?}", ck.kind)));
        }
        ck.network()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), AgentError> {
        std::fs::write(path, self.to_json()).map_err(|e| AgentError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, AgentError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| AgentError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
