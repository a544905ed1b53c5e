//! Learners: a DQN for discrete actions and a Gaussian actor-critic for
//! continuous actions. Both keep a slowly-moving target network that is
//! blended towards the learned one at episode boundaries.

mod actor_critic;
mod dqn;

pub use actor_critic::ActorCriticAgent;
pub use dqn::{DqnAgent, EPSILON_DECAY, EPSILON_MIN, EPSILON_START};

use rand::Rng;
use thiserror::Error;

use crate::buffers::Transition;
use crate::envs::Action;
use crate::nn::{GaussianHead, NnError};

/// Agent networks: two hidden layers of 64 relu units.
pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("transition {0} in the batch has no reward")]
    MissingReward(usize),
    #[error("action does not fit this agent: {0}")]
    BadAction(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Network(#[from] NnError),
}

/// How the target network follows the learned one at episode end.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetUpdate {
    /// `target <- tau * target + (1 - tau) * learned`
    Soft { tau: f64 },
    Hard,
}

impl TargetUpdate {
    pub fn tau(&self) -> f64 {
        match *self {
            TargetUpdate::Soft { tau } => tau,
            TargetUpdate::Hard => 0.0,
        }
    }
}

/// An action together with the distribution it was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub action: Action,
    pub q_values: Option<Vec<f64>>,
    pub policy: Option<GaussianHead>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainStats {
    /// TD loss for DQN, critic loss for actor-critic.
    pub value_loss: f64,
    pub actor_loss: Option<f64>,
}

fn rewards(batch: &[Transition]) -> Result<Vec<f64>, AgentError> {
    if batch.is_empty() {
        return Err(AgentError::EmptyBatch);
    }
    batch
        .iter()
        .enumerate()
        .map(|(i, t)| t.reward.ok_or(AgentError::MissingReward(i)))
        .collect()
}

#[derive(Debug, Clone)]
pub enum Agent {
    Dqn(DqnAgent),
    ActorCritic(ActorCriticAgent),
}

impl Agent {
    pub fn select<R: Rng + ?Sized>(&self, input: &[f64], rng: &mut R) -> Result<Selection, AgentError> {
        match self {
            Agent::Dqn(a) => {
                let q = a.q_values(input)?;
                let action = a.select_from_q(&q, rng);
                Ok(Selection {
                    action: Action::Discrete(action),
                    q_values: Some(q),
                    policy: None,
                })
            }
            Agent::ActorCritic(a) => {
                let head = a.policy(input)?;
                let (action, _) = a.sample_from(&head, rng);
                Ok(Selection {
                    action: Action::Continuous(action),
                    q_values: None,
                    policy: Some(head),
                })
            }
        }
    }

    pub fn train_step(
        &mut self,
        batch: &[Transition],
        discount: f64,
        learning_rate: f64,
    ) -> Result<TrainStats, AgentError> {
        match self {
            Agent::Dqn(a) => Ok(TrainStats {
                value_loss: a.train_step(batch, discount, learning_rate)?,
                actor_loss: None,
            }),
            Agent::ActorCritic(a) => {
                let (actor, critic) = a.train_step(batch, discount, learning_rate)?;
                Ok(TrainStats {
                    value_loss: critic,
                    actor_loss: Some(actor),
                })
            }
        }
    }

    pub fn sync_target(&mut self, update: TargetUpdate) -> Result<(), AgentError> {
        match self {
            Agent::Dqn(a) => a.sync_target(update.tau()),
            Agent::ActorCritic(a) => a.sync_target(update.tau()),
        }
    }

    /// Per-episode exploration decay; the actor-critic explores through its
    /// own Gaussian and has nothing to decay.
    pub fn decay_epsilon(&mut self) {
        if let Agent::Dqn(a) = self {
            a.decay_epsilon();
        }
    }

    pub fn epsilon(&self) -> f64 {
        match self {
            Agent::Dqn(a) => a.epsilon(),
            Agent::ActorCritic(_) => 0.0,
        }
    }
}
