//! Signal-control policies and the episode rollout loop.

mod feedback;
mod network;
mod replay;
mod td;

pub use feedback::FeedbackAgent;
pub use network::{Adam, NetworkError, QNetwork};
pub use replay::{ReplayBuffer, Transition};
pub use td::{GreedyPolicy, TdAgent, TdCheckpoint, TdHyperparams};

use thiserror::Error;

use crate::env::{ActionCode, EnvError, StateMatrix, TscEnv};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("replay buffer holds {have} transitions, batch needs {need}")]
    InsufficientReplay { have: usize, need: usize },
    #[error("input length {got}, network expects {expected}")]
    InputLength { got: usize, expected: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("remote agent: {0}")]
    Remote(String),
    #[error("invalid hyperparameters: {0}")]
    Hyperparams(String),
}

pub trait Agent {
    fn act(&mut self, state: &StateMatrix) -> Result<ActionCode, AgentError>;

    fn observe(&mut self, _transition: Transition) {}

    /// One gradient update; `None` when the agent does not learn or has too
    /// little data yet.
    fn train_step(&mut self) -> Result<Option<f64>, AgentError> {
        Ok(None)
    }

    fn end_episode(&mut self) {}
}

/// Holds every split at its current value.
#[derive(Debug, Clone, Copy, Default)]
pub struct FixedTimeAgent;

impl Agent for FixedTimeAgent {
    fn act(&mut self, _state: &StateMatrix) -> Result<ActionCode, AgentError> {
        Ok(ActionCode::noop())
    }
}

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub rewards: Vec<f64>,
    /// Per step, raw queues in the env's in-scope link order.
    pub queues: Vec<Vec<u32>>,
    pub actions: Vec<usize>,
    pub losses: Vec<f64>,
    pub final_splits: Vec<u32>,
}

impl EpisodeTrace {
    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

/// Runs one full episode. With `learn`, transitions are fed back to the agent
/// and a training step follows every env step.
pub fn run_episode(
    env: &mut TscEnv,
    agent: &mut dyn Agent,
    seed: u64,
    learn: bool,
) -> Result<EpisodeTrace, RolloutError> {
    let mut state = env.reset(seed)?;
    let links: Vec<String> = env
        .weighted_links()
        .iter()
        .map(|&(l, _)| env.topology().link_label(l))
        .collect();
    let mut trace = EpisodeTrace {
        rewards: Vec::new(),
        queues: Vec::new(),
        actions: Vec::new(),
        losses: Vec::new(),
        final_splits: Vec::new(),
    };
    loop {
        let action = agent.act(&state)?;
        let result = env.step(action)?;
        trace.rewards.push(result.reward);
        trace
            .queues
            .push(links.iter().map(|l| result.info.queues[l]).collect());
        trace.actions.push(action.0);
        if learn {
            agent.observe(Transition {
                state: state.as_slice().to_vec(),
                action: action.0,
                reward: result.reward,
                next_state: result.state.as_slice().to_vec(),
                truncated: result.truncated,
            });
            if let Some(loss) = agent.train_step()? {
                trace.losses.push(loss);
            }
        }
        let done = result.truncated || result.terminated;
        state = result.state;
        if done {
            break;
        }
    }
    if learn {
        agent.end_episode();
    }
    trace.final_splits = env.splits();
    Ok(trace)
}
